#include "attrn/proto.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

namespace attrn {

// ---------------------------------------------------------------------------
// Item pools

void ItemPool::validate() const {
  if (channels.empty()) throw std::invalid_argument("item pool: no embedding channel");
  if (!superclasses.empty() && superclasses.size() != labels.size())
    throw std::invalid_argument("item pool: " + std::to_string(superclasses.size()) + " superclasses for " +
                                std::to_string(labels.size()) + " items");
  for (std::size_t k = 0; k < channels.size(); ++k)
    if (channels[k].rows() != size())
      throw std::invalid_argument("item pool: channel " + std::to_string(k) + " has " +
                                  std::to_string(channels[k].rows()) + " rows for " + std::to_string(size()) +
                                  " items");
  if (raw.size() > 0 && raw.rows() != size())
    throw std::invalid_argument("item pool: raw features have " + std::to_string(raw.rows()) + " rows for " +
                                std::to_string(size()) + " items");
}

bool operator==(const ItemPool& a, const ItemPool& b) {
  if (a.labels != b.labels || a.superclasses != b.superclasses || a.channels.size() != b.channels.size() ||
      a.meta != b.meta)
    return false;
  for (std::size_t k = 0; k < a.channels.size(); ++k)
    if (a.channels[k].rows() != b.channels[k].rows() || a.channels[k].cols() != b.channels[k].cols() ||
        a.channels[k] != b.channels[k])
      return false;
  return a.raw.rows() == b.raw.rows() && a.raw.cols() == b.raw.cols() && a.raw == b.raw;
}

ItemPool make_synthetic_pool(Rng& rng, int num_classes, int items_per_class, std::span<const double> noise,
                             double kappa, std::span<const int> superclass_of) {
  if (num_classes < 2) throw std::invalid_argument("synthetic pool: need at least 2 classes");
  if (items_per_class < 1) throw std::invalid_argument("synthetic pool: need at least 1 item per class");
  if (noise.empty()) throw std::invalid_argument("synthetic pool: need at least one channel");
  if (!superclass_of.empty() && static_cast<int>(superclass_of.size()) != num_classes)
    throw std::invalid_argument("synthetic pool: superclass map has " + std::to_string(superclass_of.size()) +
                                " entries for " + std::to_string(num_classes) + " classes");
  ItemPool pool;
  const auto n = static_cast<Eigen::Index>(num_classes) * items_per_class;
  for (int c = 0; c < num_classes; ++c)
    for (int i = 0; i < items_per_class; ++i) {
      pool.labels.push_back(c);
      if (!superclass_of.empty()) pool.superclasses.push_back(superclass_of[static_cast<std::size_t>(c)]);
    }
  for (std::size_t k = 0; k < noise.size(); ++k) {
    Rng channel_rng = rng.derive(static_cast<std::uint64_t>(k));
    Matrix m(n, num_classes);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int cls = pool.labels[static_cast<std::size_t>(i)];
      if (superclass_of.empty()) {
        m.row(i) = synth_class_embedding(channel_rng, cls, num_classes, noise[k], kappa).transpose();
        continue;
      }
      Vector logits(num_classes);
      for (int c = 0; c < num_classes; ++c) logits[c] = channel_rng.normal(0.0, noise[k]);
      for (int c = 0; c < num_classes; ++c) {
        if (c == cls)
          logits[c] += kappa;
        else if (superclass_of[static_cast<std::size_t>(c)] == superclass_of[static_cast<std::size_t>(cls)])
          logits[c] += kappa / 2.0;
      }
      m.row(i) = stable_softmax(logits).transpose();
    }
    pool.channels.push_back(std::move(m));
  }
  pool.meta = {{"generator", "synthetic"},
               {"classes", num_classes},
               {"items_per_class", items_per_class},
               {"noise", std::vector<double>(noise.begin(), noise.end())},
               {"kappa", kappa},
               {"seed", rng.seed()}};
  return pool;
}

Container pool_to_container(const ItemPool& pool) {
  pool.validate();
  Container c;
  c.meta["kind"] = "item-pool";
  c.meta["labels"] = pool.labels;
  c.meta["superclasses"] = pool.superclasses;
  c.meta["channels"] = pool.channels.size();
  c.meta["pool"] = pool.meta;
  for (std::size_t k = 0; k < pool.channels.size(); ++k) c.add("channel." + std::to_string(k), pool.channels[k]);
  if (pool.raw.size() > 0) c.add("raw", pool.raw);
  return c;
}

ItemPool pool_from_container(const Container& c) {
  using K = ParseError::Kind;
  ItemPool pool;
  std::size_t channels = 0;
  try {
    if (c.meta.at("kind").get<std::string>() != "item-pool")
      throw ParseError(K::schema, 0, "$.kind: expected \"item-pool\"");
    pool.labels = c.meta.at("labels").get<std::vector<int>>();
    pool.superclasses = c.meta.value("superclasses", std::vector<int>{});
    channels = c.meta.at("channels").get<std::size_t>();
    pool.meta = c.meta.value("pool", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(K::schema, 0, std::string("item pool manifest: ") + e.what());
  }
  for (std::size_t k = 0; k < channels; ++k) pool.channels.push_back(c.at("channel." + std::to_string(k)));
  if (const Tensor* raw = c.find("raw")) pool.raw = raw->data;
  try {
    pool.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(K::dimension_mismatch, 0, e.what());
  }
  return pool;
}

void save_pool(const std::filesystem::path& path, const ItemPool& pool) {
  write_container(path, pool_to_container(pool));
}

ItemPool load_pool(const std::filesystem::path& path) { return pool_from_container(read_container(path)); }

// ---------------------------------------------------------------------------
// Episodes

std::vector<Eigen::Index> canonical_order(std::span<const int> labels) {
  std::vector<Eigen::Index> order(labels.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return labels[static_cast<std::size_t>(a)] > labels[static_cast<std::size_t>(b)];
  });
  return order;
}

std::vector<int> binarize(std::span<const int> labels, int threshold) {
  std::vector<int> out(labels.size());
  std::transform(labels.begin(), labels.end(), out.begin(), [&](int l) { return l >= threshold ? 1 : 0; });
  return out;
}

void Dataset::validate() const {
  if (!pool) throw std::invalid_argument("dataset '" + split + "': no item pool");
  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& e = episodes[i];
    const std::string where = "dataset '" + split + "' episode " + e.id + ": ";
    if (!seen.emplace(e.id, i).second) throw std::invalid_argument(where + "duplicate id");
    if (e.T() < 2) throw std::invalid_argument(where + "fewer than 2 candidates");
    if (e.labels.size() != e.candidates.size())
      throw std::invalid_argument(where + std::to_string(e.labels.size()) + " labels for " +
                                  std::to_string(e.candidates.size()) + " candidates");
    for (int l : e.labels)
      if (l < 0 || l > 2) throw std::invalid_argument(where + "label " + std::to_string(l) + " outside {0, 1, 2}");
    if (std::none_of(e.labels.begin(), e.labels.end(), [](int l) { return l > 0; }))
      throw std::invalid_argument(where + "no relevant candidate");
    if (e.query < 0 || e.query >= pool->size()) throw std::invalid_argument(where + "query item out of range");
    for (auto c : e.candidates)
      if (c < 0 || c >= pool->size()) throw std::invalid_argument(where + "candidate item out of range");
    if (e.target != canonical_order(training_labels(e)))
      throw std::invalid_argument(where + "target is not the canonical order");
  }
}

bool operator==(const Dataset& a, const Dataset& b) {
  const bool pools = (a.pool == b.pool) || (a.pool && b.pool && *a.pool == *b.pool);
  return pools && a.split == b.split && a.protocol == b.protocol && a.seed == b.seed && a.params == b.params &&
         a.train_threshold == b.train_threshold && a.episodes == b.episodes && a.manifest == b.manifest;
}

namespace {

// `count` distinct entries of `from`, uniformly, in draw order.
std::vector<Eigen::Index> sample(Rng& rng, std::vector<Eigen::Index> from, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(from.size()) - 1));
    std::swap(from[i], from[j]);
  }
  from.resize(count);
  return from;
}

std::string episode_id(const std::string& split, std::size_t i) {
  std::ostringstream out;
  out << split << "-" << std::setw(6) << std::setfill('0') << i;
  return out.str();
}

QueryEpisode assemble(Rng& rng, std::string id, Eigen::Index query,
                      std::vector<std::pair<Eigen::Index, int>> picked, int train_threshold) {
  rng.shuffle(picked);
  QueryEpisode e;
  e.id = std::move(id);
  e.query = query;
  for (const auto& [item, label] : picked) {
    e.candidates.push_back(item);
    e.labels.push_back(label);
  }
  e.target = canonical_order(binarize(e.labels, train_threshold));
  return e;
}

std::string class_counts(const std::map<int, std::vector<Eigen::Index>>& by_class) {
  std::string s;
  for (const auto& [c, items] : by_class) s += (s.empty() ? "" : ", ") + std::to_string(c) + ":" + std::to_string(items.size());
  return "{" + s + "}";
}

}  // namespace

Dataset build_mnist_style(Rng& rng, std::shared_ptr<const ItemPool> pool, std::size_t episodes, Eigen::Index T,
                          int k_min, int k_max, std::string split) {
  if (!pool) throw std::invalid_argument("build_mnist_style: no pool");
  pool->validate();
  if (T < 2) throw std::invalid_argument("build_mnist_style: T must be >= 2");
  if (k_min < 1 || k_max < k_min || k_max >= T)
    throw std::invalid_argument("build_mnist_style: need 1 <= k_min <= k_max < T");
  std::map<int, std::vector<Eigen::Index>> by_class;
  for (Eigen::Index i = 0; i < pool->size(); ++i) by_class[pool->labels[static_cast<std::size_t>(i)]].push_back(i);
  for (const auto& [c, items] : by_class) {
    const auto same = static_cast<Eigen::Index>(items.size()) - 1;
    const auto other = pool->size() - static_cast<Eigen::Index>(items.size());
    if (same < k_max || other < T - k_min)
      throw PoolError("pool too small for T = " + std::to_string(T) + ", k <= " + std::to_string(k_max) +
                      ": class " + std::to_string(c) + " offers " + std::to_string(same) + " same-class and " +
                      std::to_string(other) + " off-class candidates; class counts " + class_counts(by_class));
  }

  Dataset d;
  d.split = split;
  d.protocol = "mnist-style";
  d.seed = rng.seed();
  d.params = {{"T", T}, {"k_min", k_min}, {"k_max", k_max}, {"episodes", episodes}};
  d.train_threshold = 1;
  d.pool = pool;
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    const auto query = static_cast<Eigen::Index>(rng.uniform_int(0, pool->size() - 1));
    const int cls = pool->labels[static_cast<std::size_t>(query)];
    const auto k = static_cast<std::size_t>(rng.uniform_int(k_min, k_max));
    std::vector<Eigen::Index> same, other;
    for (Eigen::Index i = 0; i < pool->size(); ++i) {
      if (i == query) continue;
      (pool->labels[static_cast<std::size_t>(i)] == cls ? same : other).push_back(i);
    }
    std::vector<std::pair<Eigen::Index, int>> picked;
    for (auto i : sample(rng, std::move(same), k)) picked.emplace_back(i, 1);
    for (auto i : sample(rng, std::move(other), static_cast<std::size_t>(T) - k)) picked.emplace_back(i, 0);
    d.episodes.push_back(assemble(rng, episode_id(split, ep), query, std::move(picked), d.train_threshold));
  }
  return d;
}

Dataset build_newsgroups_style(Rng& rng, std::shared_ptr<const ItemPool> pool, std::size_t episodes, Eigen::Index T,
                               std::string split) {
  if (!pool) throw std::invalid_argument("build_newsgroups_style: no pool");
  pool->validate();
  if (pool->superclasses.empty()) throw PoolError("build_newsgroups_style: pool has no superclass labels");
  if (T < 7) throw std::invalid_argument("build_newsgroups_style: T must be >= 7");

  Dataset d;
  d.split = split;
  d.protocol = "newsgroups-style";
  d.seed = rng.seed();
  d.params = {{"T", T}, {"topic_min", 3}, {"topic_max", 7}, {"super_min", 3}, {"super_max", 7},
              {"episodes", episodes}, {"retries", kNewsgroupsRetries}};
  d.train_threshold = 2;
  d.pool = pool;
  const auto& topic = pool->labels;
  const auto& super = pool->superclasses;
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    bool done = false;
    for (int attempt = 0; attempt < kNewsgroupsRetries && !done; ++attempt) {
      const auto query = static_cast<Eigen::Index>(rng.uniform_int(0, pool->size() - 1));
      const auto q = static_cast<std::size_t>(query);
      const auto a = static_cast<std::size_t>(rng.uniform_int(3, 7));
      const auto b = static_cast<std::size_t>(rng.uniform_int(3, 7));
      if (static_cast<Eigen::Index>(a + b) > T) continue;
      const auto rest = static_cast<std::size_t>(T) - a - b;
      std::vector<Eigen::Index> same_topic, same_super, cross;
      for (Eigen::Index i = 0; i < pool->size(); ++i) {
        const auto u = static_cast<std::size_t>(i);
        if (i == query) continue;
        if (topic[u] == topic[q])
          same_topic.push_back(i);
        else if (super[u] == super[q])
          same_super.push_back(i);
        else
          cross.push_back(i);
      }
      if (same_topic.size() < a || same_super.size() < b || cross.size() < rest) continue;
      std::vector<std::pair<Eigen::Index, int>> picked;
      for (auto i : sample(rng, std::move(same_topic), a)) picked.emplace_back(i, 2);
      for (auto i : sample(rng, std::move(same_super), b)) picked.emplace_back(i, 1);
      for (auto i : sample(rng, std::move(cross), rest)) picked.emplace_back(i, 0);
      d.episodes.push_back(assemble(rng, episode_id(split, ep), query, std::move(picked), d.train_threshold));
      done = true;
    }
    if (!done)
      throw PoolError("build_newsgroups_style: episode " + std::to_string(ep) + " not satisfiable after " +
                      std::to_string(kNewsgroupsRetries) + " draws; pool of " + std::to_string(pool->size()) +
                      " items is too small");
  }
  return d;
}

EmbeddingBundle episode_bundle(const ItemPool& pool, const QueryEpisode& e, Eigen::Index channels,
                               std::span<const Eigen::Index> trainable) {
  if (channels < 1 || channels > pool.num_channels())
    throw std::invalid_argument("episode_bundle: " + std::to_string(channels) + " channels requested, pool has " +
                                std::to_string(pool.num_channels()));
  const auto dim = pool.channels[0].cols();
  for (Eigen::Index k = 1; k < channels; ++k)
    if (pool.channels[static_cast<std::size_t>(k)].cols() != dim)
      throw ShapeError("episode_bundle: channel dimensions differ (" + std::to_string(dim) + " vs " +
                       std::to_string(pool.channels[static_cast<std::size_t>(k)].cols()) + ")");
  const auto T = e.T();
  Matrix query(channels, dim);
  Matrix cands(T * channels, dim);
  for (Eigen::Index k = 0; k < channels; ++k) {
    const Matrix& src = pool.channels[static_cast<std::size_t>(k)];
    query.row(k) = src.row(e.query);
    for (Eigen::Index t = 0; t < T; ++t) cands.row(t * channels + k) = src.row(e.candidates[static_cast<std::size_t>(t)]);
  }
  EmbeddingBundle b = make_bundle(std::move(query), std::move(cands), channels);
  if (trainable.empty()) return b;
  if (pool.raw.size() == 0) throw std::invalid_argument("episode_bundle: trainable channel without raw features");
  for (auto k : trainable) {
    if (k < 0 || k >= channels) throw std::invalid_argument("episode_bundle: trainable channel out of range");
    b.query_frozen[static_cast<std::size_t>(k)] = false;
    b.candidate_frozen[static_cast<std::size_t>(k)] = false;
  }
  b.query_raw = pool.raw.row(e.query).transpose();
  b.candidate_raw.resize(T, pool.raw.cols());
  for (Eigen::Index t = 0; t < T; ++t) b.candidate_raw.row(t) = pool.raw.row(e.candidates[static_cast<std::size_t>(t)]);
  return b;
}

// ---------------------------------------------------------------------------
// Files

std::filesystem::path pool_path_for(const std::filesystem::path& manifest_path) {
  auto p = manifest_path;
  p.replace_extension(".emb");
  return p;
}

nlohmann::json dataset_to_json(const Dataset& d, const std::string& pool_file) {
  nlohmann::json j;
  j["format"] = "attrn-dataset";
  j["version"] = 1;
  j["split"] = d.split;
  j["protocol"] = d.protocol;
  j["seed"] = d.seed;
  j["params"] = d.params;
  j["train_threshold"] = d.train_threshold;
  j["pool"] = {{"file", pool_file}, {"items", d.pool ? d.pool->size() : 0}};
  auto eps = nlohmann::json::array();
  for (const auto& e : d.episodes)
    eps.push_back({{"id", e.id}, {"query", e.query}, {"candidates", e.candidates}, {"labels", e.labels},
                   {"target", e.target}});
  j["episodes"] = std::move(eps);
  if (!d.manifest.is_null()) j["manifest"] = d.manifest;
  return j;
}

namespace {

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
  throw ParseError(ParseError::Kind::schema, 0, path + ": " + what);
}

const nlohmann::json& field(const nlohmann::json& j, const std::string& path, const char* key) {
  if (!j.is_object()) schema_error(path, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) schema_error(path + "." + key, "missing");
  return *it;
}

template <typename T>
T get(const nlohmann::json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    schema_error(path, e.what());
  }
}

}  // namespace

Dataset dataset_from_json(const nlohmann::json& j, std::shared_ptr<const ItemPool> pool) {
  Dataset d;
  if (get<std::string>(field(j, "$", "format"), "$.format") != "attrn-dataset")
    schema_error("$.format", "expected \"attrn-dataset\"");
  if (get<int>(field(j, "$", "version"), "$.version") != 1) schema_error("$.version", "unsupported version");
  d.split = get<std::string>(field(j, "$", "split"), "$.split");
  d.protocol = get<std::string>(field(j, "$", "protocol"), "$.protocol");
  d.seed = get<std::uint64_t>(field(j, "$", "seed"), "$.seed");
  d.params = field(j, "$", "params");
  d.train_threshold = get<int>(field(j, "$", "train_threshold"), "$.train_threshold");
  if (j.contains("manifest")) d.manifest = j["manifest"];
  const auto& eps = field(j, "$", "episodes");
  if (!eps.is_array()) schema_error("$.episodes", "expected an array");
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const std::string at = "$.episodes[" + std::to_string(i) + "]";
    QueryEpisode e;
    e.id = get<std::string>(field(eps[i], at, "id"), at + ".id");
    e.query = get<Eigen::Index>(field(eps[i], at, "query"), at + ".query");
    e.candidates = get<std::vector<Eigen::Index>>(field(eps[i], at, "candidates"), at + ".candidates");
    e.labels = get<std::vector<int>>(field(eps[i], at, "labels"), at + ".labels");
    e.target = get<std::vector<Eigen::Index>>(field(eps[i], at, "target"), at + ".target");
    if (e.labels.size() != e.candidates.size())
      schema_error(at + ".labels", std::to_string(e.labels.size()) + " labels for " +
                                       std::to_string(e.candidates.size()) + " candidates");
    d.episodes.push_back(std::move(e));
  }
  const auto items = get<Eigen::Index>(field(field(j, "$", "pool"), "$.pool", "items"), "$.pool.items");
  d.pool = std::move(pool);
  if (d.pool && d.pool->size() != items)
    schema_error("$.pool.items", "manifest declares " + std::to_string(items) + " items, pool file holds " +
                                     std::to_string(d.pool->size()));
  try {
    d.validate();
  } catch (const std::invalid_argument& e) {
    schema_error("$.episodes", e.what());
  }
  return d;
}

void write_dataset(const std::filesystem::path& path, const Dataset& d) {
  d.validate();
  const auto pool_file = pool_path_for(path);
  save_pool(pool_file, *d.pool);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << dataset_to_json(d, pool_file.filename().string()).dump(1) << "\n";
  if (!out) throw std::runtime_error("short write to " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(ParseError::Kind::bad_manifest, e.byte, path.string() + ": " + e.what());
  }
  const auto file = get<std::string>(field(field(j, "$", "pool"), "$.pool", "file"), "$.pool.file");
  auto pool = std::make_shared<const ItemPool>(load_pool(path.parent_path() / file));
  return dataset_from_json(j, std::move(pool));
}

}  // namespace attrn
