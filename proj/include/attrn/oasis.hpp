// OASIS baseline: bilinear similarity q^T W r trained online with the pairwise
// hinge max(0, 1 - S(q, r+) + S(q, r-)).
#ifndef ATTRN_OASIS_HPP
#define ATTRN_OASIS_HPP

#include <filesystem>
#include <vector>

#include "attrn/container.hpp"
#include "attrn/embedkit.hpp"

namespace attrn {

/// `channels` = 1 scores channel 0 only (OASIS-1); k > 1 averages the first
/// k query and candidate channels before scoring (OASIS-k).
struct OasisModel {
  Matrix W;
  Eigen::Index channels = 1;

  bool operator==(const OasisModel& o) const {
    return channels == o.channels && W.rows() == o.W.rows() && W.cols() == o.W.cols() && W == o.W;
  }
};

OasisModel oasis_identity(Eigen::Index dim, Eigen::Index channels = 1);

double oasis_score(const OasisModel& m, const Eigen::Ref<const Vector>& q, const Eigen::Ref<const Vector>& r);

/// One online update; returns true when the hinge was active and W changed.
bool oasis_step(OasisModel& m, const Eigen::Ref<const Vector>& q, const Eigen::Ref<const Vector>& r_pos,
                const Eigen::Ref<const Vector>& r_neg, double lr);

/// Channel-averaged query / candidate vectors the model scores.
Vector oasis_query(const OasisModel& m, const EmbeddingBundle& b);
Vector oasis_candidate(const OasisModel& m, const EmbeddingBundle& b, Eigen::Index t);

/// Candidate scores and the descending-score order (ties to the lower index).
Vector oasis_scores(const OasisModel& m, const EmbeddingBundle& b);
std::vector<Eigen::Index> oasis_rank(const OasisModel& m, const EmbeddingBundle& b);

struct OasisConfig {
  int epochs = 20;
  int batch_size = 100;  // kept for parity with AttRN runs; updates are online
  double lr = 0.001;
  std::uint64_t seed = 1;
  Eigen::Index channels = 1;
};

/// W starts at the identity. Each epoch visits the episodes in a shuffled
/// order and, per episode, every (more relevant, less relevant) candidate pair
/// in shuffled order.
OasisModel oasis_train(std::span<const EmbeddingBundle> bundles, std::span<const std::vector<int>> labels,
                       const OasisConfig& config);

Container oasis_to_container(const OasisModel& m, const nlohmann::json& extra = nlohmann::json::object());
OasisModel oasis_from_container(const Container& c);

}  // namespace attrn

#endif  // ATTRN_OASIS_HPP
