// Episode construction for the MNIST/CIFAR-style and 20-Newsgroups-style
// protocols, labeled item pools, and the on-disk dataset format (a JSON
// manifest next to an EMB1 file holding the item pool).
#ifndef ATTRN_PROTO_HPP
#define ATTRN_PROTO_HPP

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "attrn/container.hpp"
#include "attrn/embedkit.hpp"

namespace attrn {

/// The requested episodes cannot be drawn from the pool.
struct PoolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Labeled items with one embedding matrix per channel (row i = item i).
struct ItemPool {
  std::vector<int> labels;        // class (MNIST/CIFAR) or topic (20NG)
  std::vector<int> superclasses;  // empty unless the labels form a hierarchy
  std::vector<Matrix> channels;
  Matrix raw;  // optional raw features, one row per item
  nlohmann::json meta = nlohmann::json::object();

  Eigen::Index size() const { return static_cast<Eigen::Index>(labels.size()); }
  Eigen::Index num_channels() const { return static_cast<Eigen::Index>(channels.size()); }
  void validate() const;
};

bool operator==(const ItemPool& a, const ItemPool& b);

/// `items_per_class` items per class; channel k of item i is
/// synth_class_embedding(label, noise[k], kappa). With `superclass_of`
/// (class -> superclass) the logits of classes sharing the item's
/// superclass are raised by kappa / 2 before the softmax.
ItemPool make_synthetic_pool(Rng& rng, int num_classes, int items_per_class, std::span<const double> noise,
                             double kappa = kDefaultSharpness, std::span<const int> superclass_of = {});

Container pool_to_container(const ItemPool& pool);
ItemPool pool_from_container(const Container& c);
void save_pool(const std::filesystem::path& path, const ItemPool& pool);
ItemPool load_pool(const std::filesystem::path& path);

struct QueryEpisode {
  std::string id;
  Eigen::Index query = 0;               // item index in the pool
  std::vector<Eigen::Index> candidates;  // item indices, presentation order
  std::vector<int> labels;               // 0/1 (MNIST/CIFAR) or 0/1/2 (20NG)
  std::vector<Eigen::Index> target;      // canonical training permutation

  Eigen::Index T() const { return static_cast<Eigen::Index>(candidates.size()); }
  bool operator==(const QueryEpisode&) const = default;
};

/// Candidate indices sorted by descending label, then ascending index.
std::vector<Eigen::Index> canonical_order(std::span<const int> labels);
std::vector<int> binarize(std::span<const int> labels, int threshold);

struct Dataset {
  std::string split = "train";
  std::string protocol;
  std::uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::object();
  /// Labels >= this count as relevant for the training order and the hinge pairs.
  int train_threshold = 1;
  std::vector<QueryEpisode> episodes;
  std::shared_ptr<const ItemPool> pool;
  nlohmann::json manifest;  // run manifest of the producing command, if any

  /// Binary training labels of episode `e`.
  std::vector<int> training_labels(const QueryEpisode& e) const { return binarize(e.labels, train_threshold); }
  void validate() const;
};

bool operator==(const Dataset& a, const Dataset& b);

inline constexpr Eigen::Index kEpisodeSize = 30;

/// Per episode: a uniformly drawn query, k ~ U{k_min..k_max} same-class
/// candidates and T - k off-class candidates, all without replacement,
/// then shuffled. Also used for CIFAR-style data (a different pool).
Dataset build_mnist_style(Rng& rng, std::shared_ptr<const ItemPool> pool, std::size_t episodes,
                          Eigen::Index T = kEpisodeSize, int k_min = 1, int k_max = 9, std::string split = "train");

/// Per episode: a ~ U{3..7} same-topic candidates (label 2), b ~ U{3..7}
/// same-superclass other-topic candidates (label 1) and T - a - b
/// cross-superclass candidates (label 0). The query is never its own
/// candidate. Draws that the pool cannot satisfy are redrawn up to
/// kNewsgroupsRetries times. Training uses the topic-level order.
inline constexpr int kNewsgroupsRetries = 100;
Dataset build_newsgroups_style(Rng& rng, std::shared_ptr<const ItemPool> pool, std::size_t episodes,
                               Eigen::Index T = kEpisodeSize, std::string split = "train");

/// Bundle with the first `channels` pool channels on both sides. Channels
/// listed in `trainable` take their rows from the pool's raw features.
EmbeddingBundle episode_bundle(const ItemPool& pool, const QueryEpisode& e, Eigen::Index channels,
                               std::span<const Eigen::Index> trainable = {});

std::filesystem::path pool_path_for(const std::filesystem::path& manifest_path);

/// Writes `path` (JSON manifest) and pool_path_for(path) (EMB1 pool).
void write_dataset(const std::filesystem::path& path, const Dataset& d);
Dataset read_dataset(const std::filesystem::path& path);

/// Parses a manifest against an already loaded pool; errors carry a JSON path.
Dataset dataset_from_json(const nlohmann::json& j, std::shared_ptr<const ItemPool> pool);
nlohmann::json dataset_to_json(const Dataset& d, const std::string& pool_file);

}  // namespace attrn

#endif  // ATTRN_PROTO_HPP
