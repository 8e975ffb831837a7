#include "attrn/embedkit.hpp"

#include <cmath>

namespace attrn {

bool EmbeddingBundle::has_trainable_channel() const {
  for (bool f : query_frozen)
    if (!f) return true;
  for (bool f : candidate_frozen)
    if (!f) return true;
  return false;
}

void EmbeddingBundle::validate() const {
  if (query.rows() < 1) throw std::invalid_argument("bundle: need at least one query channel (M >= 1)");
  if (channels < 1) throw std::invalid_argument("bundle: need at least one candidate channel (N >= 1)");
  if (candidates.rows() % channels != 0)
    throw std::invalid_argument("bundle: candidate rows " + std::to_string(candidates.rows()) +
                                " not a multiple of N = " + std::to_string(channels));
  if (T() < 2) throw std::invalid_argument("bundle: need at least two candidates (T >= 2)");
  if (query.cols() < 1 || candidates.cols() < 1)
    throw std::invalid_argument("bundle: embedding dimensions must be positive");
  if (static_cast<Eigen::Index>(query_frozen.size()) != M())
    throw std::invalid_argument("bundle: query_frozen has " + std::to_string(query_frozen.size()) +
                                " flags for M = " + std::to_string(M()));
  if (static_cast<Eigen::Index>(candidate_frozen.size()) != N())
    throw std::invalid_argument("bundle: candidate_frozen has " + std::to_string(candidate_frozen.size()) +
                                " flags for N = " + std::to_string(N()));
  if (!query.allFinite() || !candidates.allFinite())
    throw std::invalid_argument("bundle: non-finite embedding entries");
  if (has_trainable_channel()) {
    if (query_raw.size() == 0 || candidate_raw.rows() != T() || candidate_raw.cols() != query_raw.size())
      throw std::invalid_argument("bundle: trainable channels need raw features for the query and all T candidates");
  }
}

EmbeddingBundle make_bundle(Matrix query, Matrix candidates, Eigen::Index channels) {
  EmbeddingBundle b;
  b.query = std::move(query);
  b.candidates = std::move(candidates);
  b.channels = channels;
  b.query_frozen.assign(static_cast<std::size_t>(b.query.rows()), true);
  b.candidate_frozen.assign(static_cast<std::size_t>(channels), true);
  b.validate();
  return b;
}

bool operator==(const EmbeddingBundle& a, const EmbeddingBundle& b) {
  return a.channels == b.channels && a.query_frozen == b.query_frozen &&
         a.candidate_frozen == b.candidate_frozen && a.query.rows() == b.query.rows() &&
         a.query.cols() == b.query.cols() && a.query == b.query &&
         a.candidates.rows() == b.candidates.rows() && a.candidates.cols() == b.candidates.cols() &&
         a.candidates == b.candidates && a.query_raw.size() == b.query_raw.size() &&
         a.query_raw == b.query_raw && a.candidate_raw.rows() == b.candidate_raw.rows() &&
         a.candidate_raw.cols() == b.candidate_raw.cols() && a.candidate_raw == b.candidate_raw;
}

// ---------------------------------------------------------------------------

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "?";
}

Activation parse_activation(std::string_view s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

namespace {

// Derivative expressed through the activation output y.
Vector activation_slope(Activation a, const Vector& y) {
  switch (a) {
    case Activation::tanh: return (1.0 - y.array().square()).matrix();
    case Activation::relu: return (y.array() > 0.0).cast<double>().matrix();
    case Activation::sigmoid: return (y.array() * (1.0 - y.array())).matrix();
    case Activation::identity: return Vector::Ones(y.size());
  }
  return Vector::Ones(y.size());
}

}  // namespace

void MlpEmbedder::validate() const {
  if (weights.empty()) throw std::invalid_argument("mlp: no layers");
  if (weights.size() != biases.size()) throw std::invalid_argument("mlp: weight/bias count mismatch");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (biases[l].size() != weights[l].rows())
      throw ShapeError("mlp layer " + std::to_string(l) + ": weight " +
                       shape_string(weights[l].rows(), weights[l].cols()) + " vs bias " +
                       shape_string(biases[l].size(), 1));
    if (l > 0 && weights[l].cols() != weights[l - 1].rows())
      throw ShapeError("mlp layer " + std::to_string(l) + ": input " + std::to_string(weights[l].cols()) +
                       " does not chain with previous output " + std::to_string(weights[l - 1].rows()));
  }
}

MlpEmbedder make_mlp(std::span<const Eigen::Index> layer_sizes, Activation act, OutputMode mode,
                     Rng& rng, double scale) {
  if (layer_sizes.size() < 2) throw std::invalid_argument("make_mlp: need input and output sizes");
  MlpEmbedder e;
  e.activation = act;
  e.output = mode;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    Matrix w(layer_sizes[l + 1], layer_sizes[l]);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-scale, scale);
    e.weights.push_back(std::move(w));
    e.biases.push_back(Vector::Zero(layer_sizes[l + 1]));
  }
  return e;
}

Vector mlp_forward(const MlpEmbedder& e, const Eigen::Ref<const Vector>& x0, MlpCache& cache) {
  if (e.empty()) throw std::invalid_argument("mlp_forward: empty embedder");
  if (x0.size() != e.input_dim())
    throw ShapeError("mlp_forward: input " + shape_string(x0.size(), 1) + " vs first layer " +
                     shape_string(e.weights[0].rows(), e.weights[0].cols()));
  return mlp_forward_generic<double>(e.weights, e.biases, e.activation, e.output, x0, &cache.layers);
}

Vector mlp_forward(const MlpEmbedder& e, const Eigen::Ref<const Vector>& x0) {
  MlpCache cache;
  return mlp_forward(e, x0, cache);
}

void mlp_backward(const MlpEmbedder& e, const MlpCache& cache, const Eigen::Ref<const Vector>& grad_out,
                  MlpEmbedder& grad) {
  const std::size_t L = e.weights.size();
  Vector g = grad_out;
  for (std::size_t l = L; l-- > 0;) {
    const Vector& y = cache.layers[l + 1];
    Vector dpre = (l + 1 == L && e.output == OutputMode::softmax)
                      ? softmax_backward(y, g)
                      : Vector(activation_slope(e.activation, y).cwiseProduct(g));
    grad.weights[l].noalias() += dpre * cache.layers[l].transpose();
    grad.biases[l] += dpre;
    if (l > 0) g = e.weights[l].transpose() * dpre;
  }
}

// ---------------------------------------------------------------------------

Vector synth_class_embedding(Rng& rng, int cls, int num_classes, double noise, double kappa) {
  if (num_classes < 2) throw std::invalid_argument("synth: need at least 2 classes, got " + std::to_string(num_classes));
  if (cls < 0 || cls >= num_classes)
    throw std::invalid_argument("synth: class " + std::to_string(cls) + " outside [0, " +
                                std::to_string(num_classes) + ")");
  if (noise < 0.0) throw std::invalid_argument("synth: negative noise");
  Vector logits(num_classes);
  for (int c = 0; c < num_classes; ++c) logits[c] = rng.normal(0.0, noise);
  if (std::isinf(kappa)) {
    Vector out = Vector::Zero(num_classes);
    out[cls] = 1.0;
    return out;
  }
  logits[cls] += kappa;
  return stable_softmax(logits);
}

EmbeddingBundle synth_class_bundle(Rng& rng, int query_class, std::span<const int> candidate_classes,
                                   int num_classes, std::span<const double> query_noise,
                                   std::span<const double> candidate_noise, double kappa) {
  if (num_classes < 2) throw std::invalid_argument("synth: need at least 2 classes, got " + std::to_string(num_classes));
  const auto M = static_cast<Eigen::Index>(query_noise.size());
  const auto N = static_cast<Eigen::Index>(candidate_noise.size());
  const auto T = static_cast<Eigen::Index>(candidate_classes.size());
  if (M < 1 || N < 1) throw std::invalid_argument("synth: need at least one channel per side");
  Matrix query(M, num_classes);
  for (Eigen::Index m = 0; m < M; ++m)
    query.row(m) = synth_class_embedding(rng, query_class, num_classes, query_noise[m], kappa).transpose();
  Matrix cands(T * N, num_classes);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index n = 0; n < N; ++n)
      cands.row(t * N + n) =
          synth_class_embedding(rng, candidate_classes[t], num_classes, candidate_noise[n], kappa).transpose();
  return make_bundle(std::move(query), std::move(cands), N);
}

// ---------------------------------------------------------------------------

nlohmann::json append_bundle(Container& c, const EmbeddingBundle& b, DType dtype, const std::string& prefix) {
  b.validate();
  nlohmann::json d = {{"M", b.M()},
                      {"N", b.N()},
                      {"T", b.T()},
                      {"d_q", b.query_dim()},
                      {"d_r", b.candidate_dim()},
                      {"query_frozen", b.query_frozen},
                      {"candidate_frozen", b.candidate_frozen},
                      {"raw_dim", b.query_raw.size()}};
  c.add(prefix + "query", b.query, dtype);
  c.add(prefix + "candidates", b.candidates, dtype);
  if (b.query_raw.size() > 0) {
    c.add(prefix + "query_raw", Matrix(b.query_raw.transpose()), dtype);
    c.add(prefix + "candidate_raw", b.candidate_raw, dtype);
  }
  return d;
}

EmbeddingBundle extract_bundle(const Container& c, const nlohmann::json& d, const std::string& prefix) {
  using K = ParseError::Kind;
  EmbeddingBundle b;
  Eigen::Index M = 0, N = 0, T = 0, dq = 0, dr = 0, raw = 0;
  try {
    M = d.at("M").get<Eigen::Index>();
    N = d.at("N").get<Eigen::Index>();
    T = d.at("T").get<Eigen::Index>();
    dq = d.at("d_q").get<Eigen::Index>();
    dr = d.at("d_r").get<Eigen::Index>();
    raw = d.value("raw_dim", Eigen::Index{0});
    b.query_frozen = d.at("query_frozen").get<std::vector<bool>>();
    b.candidate_frozen = d.at("candidate_frozen").get<std::vector<bool>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(K::schema, 0, std::string("bundle descriptor: ") + e.what());
  }
  const auto check = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) -> const Matrix& {
    const Matrix& m = c.at(prefix + name);
    if (m.rows() != rows || m.cols() != cols)
      throw ParseError(K::dimension_mismatch, 0,
                       "tensor '" + prefix + name + "' is " + shape_string(m.rows(), m.cols()) +
                           " but descriptor declares " + shape_string(rows, cols));
    return m;
  };
  b.query = check("query", M, dq);
  b.candidates = check("candidates", T * N, dr);
  b.channels = N;
  if (raw > 0) {
    b.query_raw = check("query_raw", 1, raw).row(0).transpose();
    b.candidate_raw = check("candidate_raw", T, raw);
  }
  try {
    b.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(K::dimension_mismatch, 0, e.what());
  }
  return b;
}

void save_bundle(const std::filesystem::path& path, const EmbeddingBundle& b, DType dtype) {
  Container c;
  c.meta["kind"] = "embedding-bundle";
  c.meta["bundle"] = append_bundle(c, b, dtype);
  write_container(path, c);
}

EmbeddingBundle load_bundle(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (!c.meta.contains("bundle"))
    throw ParseError(ParseError::Kind::schema, 9, path.string() + ": manifest has no 'bundle' descriptor");
  return extract_bundle(c, c.meta["bundle"]);
}

}  // namespace attrn
