// Ranking inference over a trained model: greedy decoding, beam search and an
// exhaustive enumeration used as a reference for small episodes.
//
// The attention recurrence does not depend on which candidates were picked,
// so every decoder here works on the T x T score table of one forward pass.
#ifndef ATTRN_INFER_HPP
#define ATTRN_INFER_HPP

#include <stdexcept>
#include <vector>

#include "attrn/model.hpp"

namespace attrn {

struct SizeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Ranking {
  std::vector<Eigen::Index> order;
  double log_likelihood = 0.0;
};

/// A partial ranking kept by the beam. The attention state after step t is
/// `ScoreTable::states[t - 1]` for every path, so it is not stored.
struct BeamPath {
  std::vector<Eigen::Index> prefix;
  double log_likelihood = 0.0;
  std::vector<bool> ranked;
};

inline constexpr int kDefaultBeamWidth = 3;
inline constexpr Eigen::Index kMaxExhaustiveT = 8;

/// Sum of per-step selection log-probabilities of `order` under the table.
double order_log_likelihood(const Matrix& scores, std::span<const Eigen::Index> order);

/// Argmax score per step, ties to the lowest candidate index.
Ranking rank_greedy(const Matrix& scores);
Ranking rank_greedy(const AttRNParams& p, const EmbeddingBundle& b);

/// Keeps the `width` best paths per step. Ties in log-likelihood are broken
/// by the lexicographically smaller index sequence.
Ranking rank_beam(const Matrix& scores, int width);
Ranking rank_beam(const AttRNParams& p, const EmbeddingBundle& b, int width = kDefaultBeamWidth);

/// All T! orders; throws SizeError when T > 8.
Ranking rank_exhaustive(const Matrix& scores);
Ranking rank_exhaustive(const AttRNParams& p, const EmbeddingBundle& b);

}  // namespace attrn

#endif  // ATTRN_INFER_HPP
