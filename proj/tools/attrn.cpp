// attrn command-line tool: generate / train / rank / eval / gradcheck / sweep / oasis.
//
// Exit codes: 0 ok, 2 usage, 3 data, 4 numeric.

#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "attrn/infer.hpp"
#include "attrn/metrics.hpp"
#include "attrn/model.hpp"
#include "attrn/oasis.hpp"
#include "attrn/proto.hpp"
#include "attrn/trainer.hpp"
#include "run_manifest.hpp"

namespace fs = std::filesystem;
using namespace attrn;
using attrn::cli::RunManifest;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) {
    std::istringstream in(item);
    T v{};
    if (!(in >> v) || !in.eof()) throw UsageError(std::string("bad ") + what + " entry '" + item + "'");
    out.push_back(v);
  }
  return out;
}

nlohmann::json read_json_file(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(ParseError::Kind::bad_manifest, e.byte, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("short write to " + path.string());
}

void add_dataset_inputs(RunManifest& m, const fs::path& manifest_path) {
  m.add_input(manifest_path);
  const auto j = read_json_file(manifest_path);
  m.add_input(manifest_path.parent_path() / j.at("pool").at("file").get<std::string>());
}

// ---------------------------------------------------------------------------
// Training flags shared by train and sweep

struct TrainFlags {
  std::string loss, pooling, init, config_file, trainable, embedder_hidden;
  int batch = 0, epochs = 0, beam = 0, threads = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  Eigen::Index channels = 0, decoder_dim = 0, attention_hidden = 0;
  bool record_time = false;
  CLI::Option *o_loss, *o_pooling, *o_init, *o_batch, *o_epochs, *o_beam, *o_lr, *o_seed, *o_channels, *o_dz, *o_hidden,
      *o_trainable, *o_embedder;

  void attach(CLI::App* app) {
    o_loss = app->add_option("--loss", loss, "softmax | hinge");
    o_batch = app->add_option("--batch", batch, "minibatch size");
    o_lr = app->add_option("--lr", lr, "learning rate");
    o_epochs = app->add_option("--epochs", epochs, "epoch count");
    o_beam = app->add_option("--beam", beam, "beam width for validation ranking");
    o_seed = app->add_option("--seed", seed, "training seed");
    o_pooling = app->add_option("--pooling", pooling, "mean | max");
    o_channels = app->add_option("--channels", channels, "use the first k embedding channels (0 = all)");
    o_init = app->add_option("--init", init, "small-random | paper-zeros");
    o_dz = app->add_option("--decoder-dim", decoder_dim, "decoder state size");
    o_hidden = app->add_option("--attention-hidden", attention_hidden, "attention hidden size");
    o_trainable = app->add_option("--trainable-channels", trainable, "comma list of channels re-embedded by an MLP");
    o_embedder = app->add_option("--embedder-hidden", embedder_hidden, "comma list of MLP hidden sizes");
    app->add_option("--config", config_file, "JSON config file (flags take precedence)");
    app->add_option("--threads", threads, "worker threads (default: ATTRN_THREADS or 1)");
    app->add_flag("--record-time", record_time, "add wall time to the training log");
  }

  // flags > config file > protocol defaults
  TrainConfig resolve(const std::string& protocol) const {
    TrainConfig c = TrainConfig::defaults_for(protocol);
    if (!config_file.empty()) c = TrainConfig::from_json(read_json_file(config_file), c);
    if (o_loss->count()) c.loss = parse_loss(loss);
    if (o_batch->count()) c.batch_size = batch;
    if (o_lr->count()) c.lr = lr;
    if (o_epochs->count()) c.epochs = epochs;
    if (o_beam->count()) c.beam_width = beam;
    if (o_seed->count()) c.seed = seed;
    if (o_pooling->count()) c.pooling = parse_pooling(pooling);
    if (o_channels->count()) c.channels = channels;
    if (o_init->count()) c = TrainConfig::from_json({{"init", init}}, c);
    if (o_dz->count()) c.decoder_dim = decoder_dim;
    if (o_hidden->count()) c.attention_hidden = attention_hidden;
    if (o_trainable->count()) c.trainable_channels = parse_list<Eigen::Index>(trainable, "channel");
    if (o_embedder->count()) c.embedder_hidden = parse_list<Eigen::Index>(embedder_hidden, "layer size");
    c.threads = threads;
    if (record_time) c.record_time = true;
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  std::string protocol, out = ".", pool, noise = "0.3,0.4,0.5,0.6,0.7";
  Eigen::Index T = kEpisodeSize;
  std::uint64_t seed = 1;
  std::size_t train = 2000, validation = 200, test = 500;
  int classes = 10, items_per_class = 200, k_min = 1, k_max = 9;
  double kappa = kDefaultSharpness;
};

int cmd_generate(const GenerateArgs& a) {
  if (a.protocol != "mnist-style" && a.protocol != "cifar-style" && a.protocol != "newsgroups-style")
    throw UsageError("unknown protocol '" + a.protocol + "'");
  RunManifest manifest;
  manifest.subcommand = "generate";
  manifest.seed = a.seed;
  manifest.config = {{"protocol", a.protocol}, {"t", a.T}, {"train", a.train}, {"validation", a.validation},
                     {"test", a.test}};

  const bool newsgroups = a.protocol == "newsgroups-style";
  const Rng root(a.seed);
  std::shared_ptr<const ItemPool> shared;
  if (!a.pool.empty()) {
    shared = std::make_shared<const ItemPool>(load_pool(a.pool));
    manifest.add_input(a.pool);
    manifest.config["pool"] = a.pool;
  } else {
    const auto noise = parse_list<double>(a.noise, "noise");
    manifest.config["synthetic"] = {{"classes", newsgroups ? 20 : a.classes}, {"items_per_class", a.items_per_class},
                                    {"noise", noise}, {"kappa", a.kappa}};
  }

  fs::create_directories(a.out);
  const std::vector<std::pair<std::string, std::size_t>> splits{
      {"train", a.train}, {"validation", a.validation}, {"test", a.test}};
  for (const auto& [split, count] : splits) {
    if (count == 0) continue;
    auto pool = shared;
    if (!pool) {
      Rng pr = root.derive("pool/" + split);
      const auto noise = parse_list<double>(a.noise, "noise");
      if (newsgroups) {
        // 20 topics grouped like the newsgroup hierarchy: 5, 4, 4, 1, 3, 3.
        const std::vector<int> super{0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 4, 4, 4, 5, 5, 5};
        pool = std::make_shared<const ItemPool>(make_synthetic_pool(pr, 20, a.items_per_class, noise, a.kappa, super));
      } else {
        pool = std::make_shared<const ItemPool>(make_synthetic_pool(pr, a.classes, a.items_per_class, noise, a.kappa));
      }
    }
    Rng er = root.derive("episodes/" + split);
    Dataset d = newsgroups ? build_newsgroups_style(er, pool, count, a.T, split)
                           : build_mnist_style(er, pool, count, a.T, a.k_min, a.k_max, split);
    d.protocol = a.protocol;
    d.manifest = manifest.to_json();
    const fs::path path = fs::path(a.out) / (split + ".json");
    write_dataset(path, d);
    std::cout << "wrote " << path.string() << " (" << d.episodes.size() << " episodes)\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// train

std::vector<Eigen::Index> trainable_of(const AttRNParams& p) {
  std::vector<Eigen::Index> out;
  for (std::size_t k = 0; k < p.embedders.size(); ++k)
    if (!p.embedders[k].empty()) out.push_back(static_cast<Eigen::Index>(k));
  return out;
}

struct TrainArgs {
  std::string train, validation, out = "model.emb", log = "train_log.jsonl", norms;
  TrainFlags flags;
};

int cmd_train(const TrainArgs& a) {
  const Dataset tr = read_dataset(a.train);
  const Dataset va = read_dataset(a.validation);
  const TrainConfig config = a.flags.resolve(tr.protocol);

  RunManifest manifest;
  manifest.subcommand = "train";
  manifest.seed = config.seed;
  manifest.config = config.to_json();
  add_dataset_inputs(manifest, a.train);
  add_dataset_inputs(manifest, a.validation);

  const auto ptr = prepare(tr, config.channels, config.trainable_channels);
  const auto pva = prepare(va, config.channels, config.trainable_channels);
  const AttRNParams init = initial_params(config, ptr);
  const TrainResult result = train(config, ptr, pva, init);

  save_params(a.out, result.params,
              {{"manifest", manifest.to_json()},
               {"loss", loss_name(config.loss)},
               {"best_epoch", result.log.best_epoch},
               {"validation_map", result.best_validation_map}});
  nlohmann::json header{{"manifest", manifest.to_json()}, {"initial_norms", norms_json(result.log.initial_norms)}};
  write_text(a.log, header.dump() + "\n" + result.log.to_jsonl());
  if (!a.norms.empty()) {
    auto report = norms_report(result.log.initial_norms, param_norms(result.params));
    report["manifest"] = manifest.to_json();
    write_text(a.norms, report.dump(1) + "\n");
  }
  std::cout << "best epoch " << result.log.best_epoch << ", validation MAP " << result.best_validation_map << "\n"
            << "wrote " << a.out << " and " << a.log << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// rank

struct RankArgs {
  std::string model, data, out = "rankings.jsonl", method = "beam";
  int beam = kDefaultBeamWidth, threads = 0;
};

int cmd_rank(const RankArgs& a) {
  if (a.beam < 1) throw UsageError("--beam must be >= 1");
  if (a.method != "beam" && a.method != "greedy" && a.method != "exhaustive")
    throw UsageError("unknown method '" + a.method + "'");
  const AttRNParams p = load_params(a.model);
  const Dataset d = read_dataset(a.data);
  RunManifest manifest;
  manifest.subcommand = "rank";
  manifest.config = {{"method", a.method}, {"beam", a.beam}};
  manifest.add_input(a.model);
  add_dataset_inputs(manifest, a.data);

  const auto set = prepare(d, p.dims.M, trainable_of(p));
  std::vector<Ranking> ranked(set.size());
  const int threads = resolve_threads(a.threads);
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  for (int w = 0; w < threads; ++w)
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = static_cast<std::size_t>(w); i < set.size(); i += static_cast<std::size_t>(threads)) {
          if (a.method == "greedy")
            ranked[i] = rank_greedy(p, set.bundles[i]);
          else if (a.method == "exhaustive")
            ranked[i] = rank_exhaustive(p, set.bundles[i]);
          else
            ranked[i] = rank_beam(p, set.bundles[i], a.beam);
        }
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::string text = nlohmann::json{{"manifest", manifest.to_json()}, {"threshold", d.train_threshold}}.dump() + "\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::vector<int> labels;
    for (auto j : ranked[i].order) labels.push_back(set.labels[i][static_cast<std::size_t>(j)]);
    text += nlohmann::json{{"query", set.ids[i]},
                           {"order", ranked[i].order},
                           {"labels", labels},
                           {"log_likelihood", ranked[i].log_likelihood}}
                .dump() +
            "\n";
  }
  write_text(a.out, text);
  std::cout << "wrote " << set.size() << " rankings to " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::vector<std::string> rankings;
  std::string out, name = "model";
  int threshold = 0;
};

struct RankingFile {
  std::vector<RankedLabels> rows;
  int threshold = 1;
};

RankingFile read_rankings(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(ParseError::Kind::io, 0, "cannot open " + path.string());
  RankingFile f;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(n);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(ParseError::Kind::bad_manifest, e.byte, where + ": " + e.what());
    }
    if (j.contains("manifest")) {
      f.threshold = j.value("threshold", 1);
      continue;
    }
    try {
      f.rows.push_back(RankedLabels{j.at("query").get<std::string>(), j.at("labels").get<std::vector<int>>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(ParseError::Kind::schema, 0, where + ": " + e.what());
    }
  }
  return f;
}

int cmd_eval(const EvalArgs& a) {
  RunManifest manifest;
  manifest.subcommand = "eval";
  std::vector<RunMetrics> runs;
  int threshold = a.threshold;
  for (const auto& path : a.rankings) {
    const auto f = read_rankings(path);
    manifest.add_input(path);
    if (a.threshold == 0) threshold = f.threshold;
    runs.push_back(evaluate_run(f.rows, threshold, &std::cerr));
  }
  manifest.config = {{"threshold", threshold}, {"name", a.name}};
  const MetricReport report = make_report(a.name, std::move(runs), threshold);
  std::cout << report.table();
  if (!a.out.empty()) {
    auto j = report.to_json();
    j["manifest"] = manifest.to_json();
    write_text(a.out, j.dump(1) + "\n");
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  std::string loss = "hinge";
  std::uint64_t seed = 1;
  int instances = 1;
  double step = 1e-5;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const LossKind kind = parse_loss(a.loss);
  if (a.instances < 1) throw UsageError("--instances must be >= 1");
  double worst = 0.0;
  for (int i = 0; i < a.instances; ++i) {
    const auto seed = a.seed + static_cast<std::uint64_t>(i);
    const auto inst = random_check_instance(kind, seed);
    const auto r = check_gradients(kind, inst, a.step);
    std::cout << "seed " << seed << ": " << inst.params.num_coefficients() << " coordinates, max relative error "
              << r.max_relative_error << "\n";
    worst = std::max(worst, r.max_relative_error);
  }
  std::cout << "max relative error: " << worst << (worst < 1e-4 ? " (ok)" : " (FAILED, tolerance 1e-4)") << "\n";
  return worst < 1e-4 ? kOk : kNumeric;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::string train, validation, test, counts = "1,2,3,4,5", seeds = "1,2,3,4,5", out;
  TrainFlags flags;
};

int cmd_sweep(const SweepArgs& a) {
  const Dataset tr = read_dataset(a.train), va = read_dataset(a.validation), te = read_dataset(a.test);
  const TrainConfig config = a.flags.resolve(tr.protocol);
  const auto counts = parse_list<Eigen::Index>(a.counts, "channel count");
  const auto seeds = parse_list<std::uint64_t>(a.seeds, "seed");
  RunManifest manifest;
  manifest.subcommand = "sweep";
  manifest.seed = config.seed;
  manifest.config = config.to_json();
  manifest.config["counts"] = counts;
  manifest.config["seeds"] = seeds;
  for (const auto& p : {a.train, a.validation, a.test}) add_dataset_inputs(manifest, p);
  const auto rows = sweep_channels(config, tr, va, te, counts, seeds);
  std::cout << sweep_table(rows);
  if (!a.out.empty()) {
    auto j = nlohmann::json::array();
    for (const auto& r : rows) j.push_back({{"channels", r.channels}, {"report", r.report.to_json()}});
    write_text(a.out, nlohmann::json{{"manifest", manifest.to_json()}, {"rows", j}}.dump(1) + "\n");
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// oasis

struct OasisArgs {
  std::string train, test, out = "oasis.emb", report, seeds, config_file;
  Eigen::Index channels = 1;
  int epochs = 20, batch = 100;
  double lr = 0.001;
  std::uint64_t seed = 1;
  CLI::Option *o_epochs = nullptr, *o_batch = nullptr, *o_lr = nullptr;
};

int cmd_oasis(const OasisArgs& a) {
  const Dataset tr = read_dataset(a.train), te = read_dataset(a.test);
  OasisConfig c;
  c.channels = a.channels;
  if (!a.config_file.empty()) {
    // Shares the AttRN config keys for batch size and learning rate.
    const TrainConfig t = TrainConfig::from_json(read_json_file(a.config_file), TrainConfig::defaults_for(tr.protocol));
    c.batch_size = t.batch_size;
    c.lr = t.lr;
    c.epochs = t.epochs;
  } else {
    const TrainConfig t = TrainConfig::defaults_for(tr.protocol);
    c.batch_size = t.batch_size;
    c.lr = t.lr;
    c.epochs = t.epochs;
  }
  if (a.o_epochs->count()) c.epochs = a.epochs;
  if (a.o_batch->count()) c.batch_size = a.batch;
  if (a.o_lr->count()) c.lr = a.lr;
  const auto seeds = a.seeds.empty() ? std::vector<std::uint64_t>{a.seed} : parse_list<std::uint64_t>(a.seeds, "seed");

  RunManifest manifest;
  manifest.subcommand = "oasis";
  manifest.seed = seeds.front();
  manifest.config = {{"channels", c.channels}, {"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr},
                     {"seeds", seeds}};
  add_dataset_inputs(manifest, a.train);
  add_dataset_inputs(manifest, a.test);

  const auto ptr = prepare(tr, c.channels), pte = prepare(te, c.channels);
  std::vector<RunMetrics> runs;
  OasisModel first;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    c.seed = seeds[s];
    const OasisModel m = oasis_train(ptr.bundles, ptr.train_labels, c);
    if (s == 0) first = m;
    std::vector<RankedLabels> ranked;
    for (std::size_t i = 0; i < pte.size(); ++i) {
      RankedLabels r{pte.ids[i], {}};
      for (auto j : oasis_rank(m, pte.bundles[i])) r.labels.push_back(pte.labels[i][static_cast<std::size_t>(j)]);
      ranked.push_back(std::move(r));
    }
    runs.push_back(evaluate_run(ranked, pte.train_threshold, &std::cerr));
  }
  write_container(a.out, oasis_to_container(first, {{"manifest", manifest.to_json()}}));
  const MetricReport report = make_report("OASIS-" + std::to_string(c.channels), std::move(runs), pte.train_threshold);
  std::cout << report.table();
  if (!a.report.empty()) {
    auto j = report.to_json();
    j["manifest"] = manifest.to_json();
    write_text(a.report, j.dump(1) + "\n");
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-based listwise ranking"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "build train/validation/test episode datasets");
  g->add_option("--protocol", gen.protocol, "mnist-style | cifar-style | newsgroups-style")->required();
  g->add_option("--t", gen.T, "candidates per episode");
  g->add_option("--seed", gen.seed, "generator seed");
  g->add_option("--out", gen.out, "output directory");
  g->add_option("--pool", gen.pool, "EMB1 item pool shared by all splits (default: synthetic pools)");
  g->add_option("--train-episodes", gen.train);
  g->add_option("--validation-episodes", gen.validation);
  g->add_option("--test-episodes", gen.test);
  g->add_option("--classes", gen.classes, "synthetic classes (mnist/cifar style)");
  g->add_option("--items-per-class", gen.items_per_class, "synthetic items per class and split");
  g->add_option("--noise", gen.noise, "comma list of per-channel logit noise");
  g->add_option("--kappa", gen.kappa, "synthetic sharpness");
  g->add_option("--k-min", gen.k_min);
  g->add_option("--k-max", gen.k_max);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train an AttRN model");
  t->add_option("--train", tr.train, "training dataset manifest")->required();
  t->add_option("--validation", tr.validation, "validation dataset manifest")->required();
  t->add_option("--out", tr.out, "checkpoint path");
  t->add_option("--log", tr.log, "JSON-lines training log");
  t->add_option("--norms", tr.norms, "write parameter norms before/after training");
  tr.flags.attach(t);

  RankArgs rk;
  auto* r = app.add_subcommand("rank", "rank every episode of a dataset");
  r->add_option("--model", rk.model)->required();
  r->add_option("--data", rk.data)->required();
  r->add_option("--out", rk.out);
  r->add_option("--beam", rk.beam, "beam width");
  r->add_option("--method", rk.method, "beam | greedy | exhaustive");
  r->add_option("--threads", rk.threads);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "MAP / NDCG report of ranking files (one file per run)");
  e->add_option("--rankings", ev.rankings)->required();
  e->add_option("--threshold", ev.threshold, "relevance threshold for MAP (default: from the ranking file)");
  e->add_option("--name", ev.name);
  e->add_option("--out", ev.out, "JSON report path");

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  c->add_option("--loss", gc.loss, "softmax | hinge");
  c->add_option("--seed", gc.seed);
  c->add_option("--instances", gc.instances, "consecutive seeds to check");
  c->add_option("--step", gc.step, "finite-difference step");

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "error rate against the number of embedding channels");
  s->add_option("--train", sw.train)->required();
  s->add_option("--validation", sw.validation)->required();
  s->add_option("--test", sw.test)->required();
  s->add_option("--counts", sw.counts, "comma list of channel counts");
  s->add_option("--seeds", sw.seeds, "comma list of seeds");
  s->add_option("--out", sw.out, "JSON output");
  sw.flags.attach(s);

  OasisArgs oa;
  auto* o = app.add_subcommand("oasis", "train and evaluate the OASIS baseline");
  o->add_option("--train", oa.train)->required();
  o->add_option("--test", oa.test)->required();
  o->add_option("--channels", oa.channels, "1 = first channel, k = average of the first k");
  oa.o_epochs = o->add_option("--epochs", oa.epochs);
  oa.o_batch = o->add_option("--batch", oa.batch);
  oa.o_lr = o->add_option("--lr", oa.lr);
  o->add_option("--seed", oa.seed);
  o->add_option("--seeds", oa.seeds, "comma list of seeds (one run each)");
  o->add_option("--config", oa.config_file);
  o->add_option("--out", oa.out, "checkpoint path");
  o->add_option("--report", oa.report, "JSON report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kUsage;
  }

  try {
    if (g->parsed()) return cmd_generate(gen);
    if (t->parsed()) return cmd_train(tr);
    if (r->parsed()) return cmd_rank(rk);
    if (e->parsed()) return cmd_eval(ev);
    if (c->parsed()) return cmd_gradcheck(gc);
    if (s->parsed()) return cmd_sweep(sw);
    if (o->parsed()) return cmd_oasis(oa);
  } catch (const UsageError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kUsage;
  } catch (const NumericError& ex) {
    std::cerr << "numeric error: " << ex.what() << "\n";
    return kNumeric;
  } catch (const ParseError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return kData;
  } catch (const PoolError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return kData;
  } catch (const UndefinedMetric& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return kData;
  } catch (const ShapeError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return kData;
  } catch (const SizeError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kUsage;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kData;
  }
  return kUsage;
}
