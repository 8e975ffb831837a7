#include "attrn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

namespace attrn {

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers; fn writes to slot i.
template <typename F>
void parallel_for(std::size_t n, int threads, F&& fn) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("ATTRN_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be finite and >= 0");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (beam_width < 1) throw std::invalid_argument("beam width must be >= 1");
  if (channels < 0) throw std::invalid_argument("channel count must be >= 0");
  if (decoder_dim < 1 || attention_hidden < 1) throw std::invalid_argument("model dimensions must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"loss", loss_name(loss)},
          {"batch_size", batch_size},
          {"lr", lr},
          {"epochs", epochs},
          {"beam", beam_width},
          {"seed", seed},
          {"pooling", pooling_name(pooling)},
          {"channels", channels},
          {"init", init == InitScheme::paper_zeros ? "paper-zeros" : "small-random"},
          {"decoder_dim", decoder_dim},
          {"attention_hidden", attention_hidden},
          {"trainable_channels", trainable_channels},
          {"embedder_hidden", embedder_hidden},
          {"record_time", record_time}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  try {
    if (j.contains("loss")) c.loss = parse_loss(j["loss"].get<std::string>());
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("lr")) c.lr = j["lr"].get<double>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("beam")) c.beam_width = j["beam"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("pooling")) c.pooling = parse_pooling(j["pooling"].get<std::string>());
    if (j.contains("channels")) c.channels = j["channels"].get<Eigen::Index>();
    if (j.contains("init")) {
      const auto s = j["init"].get<std::string>();
      if (s == "paper-zeros")
        c.init = InitScheme::paper_zeros;
      else if (s == "small-random")
        c.init = InitScheme::small_random;
      else
        throw std::invalid_argument("config: unknown init scheme '" + s + "'");
    }
    if (j.contains("decoder_dim")) c.decoder_dim = j["decoder_dim"].get<Eigen::Index>();
    if (j.contains("attention_hidden")) c.attention_hidden = j["attention_hidden"].get<Eigen::Index>();
    if (j.contains("trainable_channels")) c.trainable_channels = j["trainable_channels"].get<std::vector<Eigen::Index>>();
    if (j.contains("embedder_hidden")) c.embedder_hidden = j["embedder_hidden"].get<std::vector<Eigen::Index>>();
    if (j.contains("record_time")) c.record_time = j["record_time"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return c;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::defaults_for(std::string_view protocol) {
  TrainConfig c;
  if (protocol == "cifar-style") {
    c.batch_size = 50;
    c.lr = 0.0005;
  } else if (protocol == "newsgroups-style") {
    c.batch_size = 100;
    c.lr = 0.0001;
    c.epochs = 50;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Data

PreparedSet prepare(const Dataset& d, Eigen::Index channels, std::span<const Eigen::Index> trainable) {
  d.validate();
  const auto M = channels > 0 ? channels : d.pool->num_channels();
  PreparedSet s;
  s.train_threshold = d.train_threshold;
  for (const auto& e : d.episodes) {
    s.ids.push_back(e.id);
    s.bundles.push_back(episode_bundle(*d.pool, e, M, trainable));
    s.labels.push_back(e.labels);
    s.train_labels.push_back(d.training_labels(e));
    s.targets.push_back(e.target);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Norms

NormList param_norms(const AttRNParams& p) {
  const auto sq = [](const auto& m) { return m.squaredNorm(); };
  NormList out;
  out.emplace_back("query_attention", std::sqrt(sq(p.query_attention.weight) + sq(p.query_attention.bias) +
                                                sq(p.query_attention.projection)));
  out.emplace_back("result_attention", std::sqrt(sq(p.result_attention.weight) + sq(p.result_attention.bias) +
                                                 sq(p.result_attention.projection)));
  out.emplace_back("decoder", std::sqrt(sq(p.decoder.state) + sq(p.decoder.query) + sq(p.decoder.result) +
                                        sq(p.decoder.bias)));
  out.emplace_back("W", p.W.norm());
  out.emplace_back("V", p.V.norm());
  for (std::size_t k = 0; k < p.embedders.size(); ++k)
    for (std::size_t l = 0; l < p.embedders[k].weights.size(); ++l)
      out.emplace_back("embedder." + std::to_string(k) + "." + std::to_string(l),
                       std::sqrt(sq(p.embedders[k].weights[l]) + sq(p.embedders[k].biases[l])));
  return out;
}

nlohmann::json norms_json(const NormList& norms) {
  auto j = nlohmann::json::array();
  for (const auto& [name, value] : norms) j.push_back({{"group", name}, {"l2", value}});
  return j;
}

nlohmann::json norms_report(const NormList& before, const NormList& after) {
  if (before.size() != after.size()) throw std::invalid_argument("norms_report: group lists differ");
  auto change = nlohmann::json::array();
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (before[i].first != after[i].first) throw std::invalid_argument("norms_report: group lists differ");
    const double delta = after[i].second - before[i].second;
    change.push_back({{"group", before[i].first},
                      {"delta", delta},
                      {"direction", delta > 0.0 ? "increase" : delta < 0.0 ? "decrease" : "unchanged"}});
  }
  return {{"before", norms_json(before)}, {"after", norms_json(after)}, {"change", change}};
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::json j{{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"validation_map", e.validation_map},
                     {"norms", norms_json(e.norms)},
                     {"best", e.epoch == best_epoch}};
    if (e.wall_seconds) j["wall_seconds"] = *e.wall_seconds;
    out += j.dump() + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

AttRNParams initial_params(const TrainConfig& config, const PreparedSet& set) {
  if (set.size() == 0) throw std::invalid_argument("initial_params: empty dataset");
  const auto& b = set.bundles.front();
  ModelDims dims;
  dims.M = b.M();
  dims.N = b.N();
  dims.query_dim = b.query_dim();
  dims.candidate_dim = b.candidate_dim();
  dims.decoder_dim = config.decoder_dim;
  dims.attention_hidden = config.attention_hidden;
  Rng rng = Rng(config.seed).derive("init");
  AttRNParams p = init_params(dims, config.pooling, rng, config.init);
  if (!config.trainable_channels.empty()) {
    const auto raw = b.query_raw.size();
    if (raw == 0) throw std::invalid_argument("initial_params: trainable channels need raw features");
    Rng er = Rng(config.seed).derive("embedder");
    p.embedders.resize(static_cast<std::size_t>(dims.M));
    std::vector<Eigen::Index> sizes{raw};
    sizes.insert(sizes.end(), config.embedder_hidden.begin(), config.embedder_hidden.end());
    sizes.push_back(dims.query_dim);
    for (auto k : config.trainable_channels)
      p.embedders[static_cast<std::size_t>(k)] = make_mlp(sizes, Activation::tanh, OutputMode::softmax, er, 0.1);
  }
  return p;
}

std::vector<RankedLabels> rank_set(const AttRNParams& p, const PreparedSet& set, int beam_width, int threads) {
  std::vector<RankedLabels> out(set.size());
  parallel_for(set.size(), threads, [&](std::size_t i) {
    const Ranking r = rank_beam(p, set.bundles[i], beam_width);
    out[i].query_id = set.ids[i];
    for (auto j : r.order) out[i].labels.push_back(set.labels[i][static_cast<std::size_t>(j)]);
  });
  return out;
}

double validation_map(const AttRNParams& p, const PreparedSet& set, int beam_width, int threads) {
  const auto ranked = rank_set(p, set, beam_width, threads);
  return evaluate_run(ranked, set.train_threshold).map;
}

TrainResult train(const TrainConfig& config, const PreparedSet& train_set, const PreparedSet& validation_set,
                  AttRNParams params) {
  config.validate();
  if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");
  if (validation_set.size() == 0) throw std::invalid_argument("train: empty validation set");
  params.validate();
  const int threads = resolve_threads(config.threads);

  TrainResult result;
  result.log.initial_norms = param_norms(params);
  result.params = params;
  bool have_best = false;

  Rng shuffle_rng = Rng(config.seed).derive("shuffle");
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const auto n = params.num_coefficients();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t first = 0, b = 1; first < order.size(); first += batch, ++b) {
      const auto count = std::min(batch, order.size() - first);
      std::vector<LossResult> parts(count);
      parallel_for(count, threads, [&](std::size_t i) {
        const auto e = order[first + i];
        parts[i] = episode_loss(config.loss, params, train_set.bundles[e], train_set.targets[e],
                                train_set.train_labels[e], true);
      });
      // Running mean in a fixed order: identical gradients average to
      // themselves exactly.
      Vector mean = Vector::Zero(n);
      for (std::size_t i = 0; i < count; ++i) {
        if (!std::isfinite(parts[i].loss))
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(b),
                             b);
        loss_sum += parts[i].loss;
        mean += (parts[i].grad.flatten() - mean) / static_cast<double>(i + 1);
      }
      if (!mean.allFinite())
        throw NumericError("train: non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(b),
                           b);
      if (config.lr != 0.0) params.assign(params.flatten() - config.lr * mean);
      if (!params.all_finite())
        throw NumericError("train: parameters diverged at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(b),
                           b);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.validation_map = validation_map(params, validation_set, config.beam_width, threads);
    rec.norms = param_norms(params);
    if (config.record_time)
      rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!have_best || rec.validation_map > result.best_validation_map) {
      have_best = true;
      result.best_validation_map = rec.validation_map;
      result.log.best_epoch = epoch;
      result.params = params;
    }
    result.log.epochs.push_back(std::move(rec));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Sweeps

std::vector<SweepRow> sweep_channels(const TrainConfig& config, const Dataset& train_set,
                                     const Dataset& validation_set, const Dataset& test_set,
                                     std::span<const Eigen::Index> counts, std::span<const std::uint64_t> seeds) {
  if (counts.empty() || seeds.empty()) throw std::invalid_argument("sweep_channels: empty channel or seed list");
  std::vector<SweepRow> rows;
  for (auto M : counts) {
    if (M < 1 || M > train_set.pool->num_channels())
      throw std::invalid_argument("sweep_channels: dataset has " + std::to_string(train_set.pool->num_channels()) +
                                  " channels, " + std::to_string(M) + " requested");
    TrainConfig c = config;
    c.channels = M;
    const auto tr = prepare(train_set, M, c.trainable_channels);
    const auto va = prepare(validation_set, M, c.trainable_channels);
    const auto te = prepare(test_set, M, c.trainable_channels);
    std::vector<RunMetrics> runs;
    for (auto seed : seeds) {
      c.seed = seed;
      const auto result = train(c, tr, va, initial_params(c, tr));
      runs.push_back(evaluate_run(rank_set(result.params, te, c.beam_width, resolve_threads(c.threads)),
                                  te.train_threshold));
    }
    rows.push_back(SweepRow{M, make_report("M=" + std::to_string(M), std::move(runs), te.train_threshold)});
  }
  return rows;
}

std::string sweep_table(std::span<const SweepRow> rows) {
  std::vector<MetricReport> reports;
  for (const auto& r : rows) reports.push_back(r.report);
  return report_table(reports);
}

}  // namespace attrn
