// Minibatch SGD for AttRN with validation-based epoch selection, parameter
// norm diagnostics and channel-count sweeps.
#ifndef ATTRN_TRAINER_HPP
#define ATTRN_TRAINER_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "attrn/infer.hpp"
#include "attrn/metrics.hpp"
#include "attrn/model.hpp"
#include "attrn/proto.hpp"

namespace attrn {

struct TrainConfig {
  LossKind loss = LossKind::hinge;
  int batch_size = 100;
  double lr = 0.001;
  int epochs = 20;
  int beam_width = kDefaultBeamWidth;
  std::uint64_t seed = 1;
  Pooling pooling = Pooling::mean;
  Eigen::Index channels = 0;  // first `channels` embedding channels; 0 = all
  InitScheme init = InitScheme::small_random;
  Eigen::Index decoder_dim = 32;
  Eigen::Index attention_hidden = 16;
  std::vector<Eigen::Index> trainable_channels;  // channels re-embedded by an MLP from raw features
  std::vector<Eigen::Index> embedder_hidden;     // hidden layer sizes of those MLPs
  int threads = 1;
  bool record_time = false;  // wall time in the log breaks byte-level reproducibility

  void validate() const;
  nlohmann::json to_json() const;
  /// Fields present in `j` override the ones in `base`.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
  static TrainConfig from_json(const nlohmann::json& j);
  /// Recommended defaults for mnist-style, cifar-style and newsgroups-style data.
  static TrainConfig defaults_for(std::string_view protocol);
};

/// Episodes turned into bundles once, with their labels and training targets.
struct PreparedSet {
  std::vector<std::string> ids;
  std::vector<EmbeddingBundle> bundles;
  std::vector<std::vector<int>> labels;          // graded labels as stored
  std::vector<std::vector<int>> train_labels;    // binary, at the dataset's training threshold
  std::vector<std::vector<Eigen::Index>> targets;
  int train_threshold = 1;

  std::size_t size() const { return bundles.size(); }
};

PreparedSet prepare(const Dataset& d, Eigen::Index channels = 0, std::span<const Eigen::Index> trainable = {});

using NormList = std::vector<std::pair<std::string, double>>;

/// L2 norm per group: query_attention, result_attention, decoder, W, V and
/// one entry per embedder layer ("embedder.k.l", weight and bias together).
NormList param_norms(const AttRNParams& p);
nlohmann::json norms_json(const NormList& norms);

/// {"before": [...], "after": [...], "change": [{"group", "delta", "direction"}]}
nlohmann::json norms_report(const NormList& before, const NormList& after);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // mean episode loss over the epoch
  double validation_map = 0.0;
  NormList norms;
  std::optional<double> wall_seconds;
};

struct TrainLog {
  NormList initial_norms;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 1-based; 0 when no epoch ran

  /// One JSON object per line and per epoch.
  std::string to_jsonl() const;
};

struct TrainResult {
  AttRNParams params;  // parameters after the best epoch
  TrainLog log;
  double best_validation_map = 0.0;
};

/// Fresh parameters for `config` sized from the bundles of `set`.
AttRNParams initial_params(const TrainConfig& config, const PreparedSet& set);

TrainResult train(const TrainConfig& config, const PreparedSet& train_set, const PreparedSet& validation_set,
                  AttRNParams params);

/// Beam-decoded rankings expressed as labels in ranked order.
std::vector<RankedLabels> rank_set(const AttRNParams& p, const PreparedSet& set, int beam_width, int threads = 1);

/// Mean of average precision over the set, binary labels.
double validation_map(const AttRNParams& p, const PreparedSet& set, int beam_width, int threads = 1);

struct SweepRow {
  Eigen::Index channels = 0;
  MetricReport report;
};

/// One model per (channel count, seed); the test report of each count
/// aggregates its seeds.
std::vector<SweepRow> sweep_channels(const TrainConfig& config, const Dataset& train_set,
                                     const Dataset& validation_set, const Dataset& test_set,
                                     std::span<const Eigen::Index> counts, std::span<const std::uint64_t> seeds);

std::string sweep_table(std::span<const SweepRow> rows);

/// Resolves the worker count: explicit value if > 0, else ATTRN_THREADS, else 1.
int resolve_threads(int requested);

}  // namespace attrn

#endif  // ATTRN_TRAINER_HPP
