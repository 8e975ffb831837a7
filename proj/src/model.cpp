#include "attrn/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace attrn {

std::string_view pooling_name(Pooling p) { return p == Pooling::mean ? "mean" : "max"; }

Pooling parse_pooling(std::string_view s) {
  if (s == "mean") return Pooling::mean;
  if (s == "max") return Pooling::max;
  throw std::invalid_argument("unknown pooling '" + std::string(s) + "' (expected mean|max)");
}

std::string_view loss_name(LossKind l) { return l == LossKind::softmax ? "softmax" : "hinge"; }

LossKind parse_loss(std::string_view s) {
  if (s == "softmax" || s == "sm") return LossKind::softmax;
  if (s == "hinge" || s == "hl") return LossKind::hinge;
  throw std::invalid_argument("unknown loss '" + std::string(s) + "' (expected softmax|hinge)");
}

// ---------------------------------------------------------------------------
// Parameter container plumbing

Eigen::Index AttRNParams::num_coefficients() const {
  Eigen::Index n = 0;
  for_each_tensor([&](const std::string&, Eigen::Map<const Vector> v) { n += v.size(); });
  return n;
}

Vector AttRNParams::flatten() const {
  Vector out(num_coefficients());
  Eigen::Index at = 0;
  for_each_tensor([&](const std::string&, Eigen::Map<const Vector> v) {
    out.segment(at, v.size()) = v;
    at += v.size();
  });
  return out;
}

void AttRNParams::assign(const Vector& flat) {
  if (flat.size() != num_coefficients())
    throw ShapeError("AttRNParams::assign: " + std::to_string(flat.size()) + " values for " +
                     std::to_string(num_coefficients()) + " coefficients");
  Eigen::Index at = 0;
  for_each_tensor([&](const std::string&, Eigen::Map<Vector> v) {
    v = flat.segment(at, v.size());
    at += v.size();
  });
}

AttRNParams AttRNParams::zeros_like() const {
  AttRNParams z = *this;
  z.for_each_tensor([](const std::string&, Eigen::Map<Vector> v) { v.setZero(); });
  return z;
}

void AttRNParams::add_scaled(const AttRNParams& other, double factor) {
  std::vector<Eigen::Map<const Vector>> src;
  other.for_each_tensor([&](const std::string&, Eigen::Map<const Vector> v) { src.push_back(v); });
  std::size_t i = 0;
  for_each_tensor([&](const std::string& name, Eigen::Map<Vector> v) {
    if (i >= src.size() || src[i].size() != v.size())
      throw ShapeError("add_scaled: tensor '" + name + "' shape mismatch");
    v += factor * src[i++];
  });
  if (i != src.size()) throw ShapeError("add_scaled: tensor count mismatch");
}

void AttRNParams::scale(double factor) {
  for_each_tensor([&](const std::string&, Eigen::Map<Vector> v) { v *= factor; });
}

bool AttRNParams::all_finite() const {
  bool ok = true;
  for_each_tensor([&](const std::string&, Eigen::Map<const Vector> v) { ok = ok && v.allFinite(); });
  return ok;
}

namespace {

void expect_shape(const std::string& name, Eigen::Index rows, Eigen::Index cols, Eigen::Index want_rows,
                  Eigen::Index want_cols) {
  if (rows != want_rows || cols != want_cols)
    throw ShapeError(name + ": " + shape_string(rows, cols) + " expected " + shape_string(want_rows, want_cols));
}

}  // namespace

void AttRNParams::validate() const {
  const auto& d = dims;
  if (d.M < 1 || d.N < 1 || d.query_dim < 1 || d.candidate_dim < 1 || d.decoder_dim < 1 || d.attention_hidden < 1)
    throw std::invalid_argument("AttRNParams: all dimensions must be positive");
  const auto H = d.attention_hidden;
  expect_shape("query_attention.weight", query_attention.weight.rows(), query_attention.weight.cols(), H,
               d.query_attention_input());
  expect_shape("query_attention.bias", query_attention.bias.size(), 1, H, 1);
  expect_shape("query_attention.projection", query_attention.projection.size(), 1, H, 1);
  expect_shape("result_attention.weight", result_attention.weight.rows(), result_attention.weight.cols(), H,
               d.result_attention_input());
  expect_shape("result_attention.bias", result_attention.bias.size(), 1, H, 1);
  expect_shape("result_attention.projection", result_attention.projection.size(), 1, H, 1);
  expect_shape("decoder.state", decoder.state.rows(), decoder.state.cols(), d.decoder_dim, d.decoder_dim);
  expect_shape("decoder.query", decoder.query.rows(), decoder.query.cols(), d.decoder_dim, d.query_dim);
  expect_shape("decoder.result", decoder.result.rows(), decoder.result.cols(), d.decoder_dim, d.candidate_dim);
  expect_shape("decoder.bias", decoder.bias.size(), 1, d.decoder_dim, 1);
  expect_shape("W", W.rows(), W.cols(), d.candidate_dim, d.query_dim);
  expect_shape("V", V.rows(), V.cols(), d.candidate_dim, d.decoder_dim);
  for (std::size_t k = 0; k < embedders.size(); ++k) {
    if (embedders[k].empty()) continue;
    embedders[k].validate();
    if (k >= static_cast<std::size_t>(std::max(d.M, d.N)))
      throw std::invalid_argument("embedder " + std::to_string(k) + " has no matching channel");
  }
  if (!all_finite()) throw std::invalid_argument("AttRNParams: non-finite entries");
}

bool operator==(const AttRNParams& a, const AttRNParams& b) {
  if (!(a.dims == b.dims) || a.pooling != b.pooling || a.embedders.size() != b.embedders.size()) return false;
  for (std::size_t k = 0; k < a.embedders.size(); ++k) {
    if (a.embedders[k].weights.size() != b.embedders[k].weights.size() ||
        a.embedders[k].activation != b.embedders[k].activation || a.embedders[k].output != b.embedders[k].output)
      return false;
  }
  if (a.num_coefficients() != b.num_coefficients()) return false;
  return a.flatten() == b.flatten();
}

AttRNParams init_params(const ModelDims& dims, Pooling pooling, Rng& rng, InitScheme scheme) {
  if (scheme == InitScheme::paper_zeros && dims.candidate_dim != dims.query_dim)
    throw std::invalid_argument("init_params: identity W under paper-zeros needs d_r == d_q (got " +
                                std::to_string(dims.candidate_dim) + " vs " + std::to_string(dims.query_dim) + ")");
  AttRNParams p;
  p.dims = dims;
  p.pooling = pooling;
  const auto H = dims.attention_hidden;
  p.query_attention = {Matrix::Zero(H, dims.query_attention_input()), Vector::Zero(H), Vector::Zero(H)};
  p.result_attention = {Matrix::Zero(H, dims.result_attention_input()), Vector::Zero(H), Vector::Zero(H)};
  p.decoder = {Matrix::Zero(dims.decoder_dim, dims.decoder_dim), Matrix::Zero(dims.decoder_dim, dims.query_dim),
               Matrix::Zero(dims.decoder_dim, dims.candidate_dim), Vector::Zero(dims.decoder_dim)};
  p.W = Matrix::Zero(dims.candidate_dim, dims.query_dim);
  p.V = Matrix::Zero(dims.candidate_dim, dims.decoder_dim);
  p.validate();
  if (scheme == InitScheme::small_random) {
    p.for_each_tensor([&](const std::string&, Eigen::Map<Vector> v) {
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-0.05, 0.05);
    });
  }
  p.W.setIdentity();
  return p;
}

void check_compatible(const AttRNParams& p, const EmbeddingBundle& b) {
  b.validate();
  const auto& d = p.dims;
  if (b.M() != d.M || b.N() != d.N || b.query_dim() != d.query_dim || b.candidate_dim() != d.candidate_dim)
    throw ShapeError("bundle (M=" + std::to_string(b.M()) + ", N=" + std::to_string(b.N()) +
                     ", d_q=" + std::to_string(b.query_dim()) + ", d_r=" + std::to_string(b.candidate_dim()) +
                     ") does not match model (M=" + std::to_string(d.M) + ", N=" + std::to_string(d.N) +
                     ", d_q=" + std::to_string(d.query_dim) + ", d_r=" + std::to_string(d.candidate_dim) + ")");
  const auto need = [&](std::size_t k, Eigen::Index out_dim) {
    if (k >= p.embedders.size() || p.embedders[k].empty())
      throw std::invalid_argument("channel " + std::to_string(k) + " is trainable but the model has no embedder for it");
    if (p.embedders[k].input_dim() != b.query_raw.size() || p.embedders[k].output_dim() != out_dim)
      throw ShapeError("embedder " + std::to_string(k) + " maps " + std::to_string(p.embedders[k].input_dim()) +
                       " -> " + std::to_string(p.embedders[k].output_dim()) + " but bundle needs " +
                       std::to_string(b.query_raw.size()) + " -> " + std::to_string(out_dim));
  };
  for (Eigen::Index m = 0; m < b.M(); ++m)
    if (!b.query_frozen[static_cast<std::size_t>(m)]) need(static_cast<std::size_t>(m), d.query_dim);
  for (Eigen::Index n = 0; n < b.N(); ++n)
    if (!b.candidate_frozen[static_cast<std::size_t>(n)]) need(static_cast<std::size_t>(n), d.candidate_dim);
}

AttentionState initial_state(const AttRNParams& p) {
  const auto& d = p.dims;
  AttentionState s;
  s.t = 0;
  s.alpha = Vector::Constant(d.M, 1.0 / static_cast<double>(d.M));
  s.beta = Vector::Constant(d.N, 1.0 / static_cast<double>(d.N));
  s.z = Vector::Zero(d.decoder_dim);
  s.c = Vector::Zero(d.query_dim);
  s.d_bar = Vector::Zero(d.candidate_dim);
  return s;
}

// ---------------------------------------------------------------------------
// Scalar-generic forward machinery

namespace {

// Parameters converted to the working scalar.
template <typename S>
struct Weights {
  struct Embedder {
    std::vector<MatrixT<S>> weights;
    std::vector<VectorT<S>> biases;
    Activation activation = Activation::tanh;
    OutputMode output = OutputMode::softmax;
  };

  ModelDims dims;
  Pooling pooling = Pooling::mean;
  MatrixT<S> query_weight, result_weight;
  VectorT<S> query_bias, query_projection, result_bias, result_projection;
  MatrixT<S> dec_state, dec_query, dec_result;
  VectorT<S> dec_bias;
  MatrixT<S> W, V;
  std::vector<Embedder> embedders;
};

template <typename S>
Weights<S> weights_as(const AttRNParams& p) {
  Weights<S> w;
  w.dims = p.dims;
  w.pooling = p.pooling;
  w.query_weight = p.query_attention.weight.cast<S>();
  w.query_bias = p.query_attention.bias.cast<S>();
  w.query_projection = p.query_attention.projection.cast<S>();
  w.result_weight = p.result_attention.weight.cast<S>();
  w.result_bias = p.result_attention.bias.cast<S>();
  w.result_projection = p.result_attention.projection.cast<S>();
  w.dec_state = p.decoder.state.cast<S>();
  w.dec_query = p.decoder.query.cast<S>();
  w.dec_result = p.decoder.result.cast<S>();
  w.dec_bias = p.decoder.bias.cast<S>();
  w.W = p.W.cast<S>();
  w.V = p.V.cast<S>();
  for (const auto& e : p.embedders) {
    typename Weights<S>::Embedder c;
    c.activation = e.activation;
    c.output = e.output;
    for (const auto& m : e.weights) c.weights.push_back(m.cast<S>());
    for (const auto& v : e.biases) c.biases.push_back(v.cast<S>());
    w.embedders.push_back(std::move(c));
  }
  return w;
}

// Episode embeddings in the working scalar; row t*N + n of `candidates` is r_tn.
template <typename S>
struct Grid {
  MatrixT<S> query;
  MatrixT<S> candidates;
  Eigen::Index N = 1;
  Eigen::Index T() const { return candidates.rows() / N; }
};

template <typename S>
using ChannelView = Eigen::Map<const MatrixT<S>, 0, Eigen::OuterStride<>>;
template <typename S>
using MutableChannelView = Eigen::Map<MatrixT<S>, 0, Eigen::OuterStride<>>;

template <typename S>
ChannelView<S> channel_view(const MatrixT<S>& cands, Eigen::Index N, Eigen::Index n) {
  const auto dr = cands.cols();
  return ChannelView<S>(cands.data() + n * dr, cands.rows() / N, dr, Eigen::OuterStride<>(N * dr));
}

template <typename S>
MutableChannelView<S> channel_view(MatrixT<S>& cands, Eigen::Index N, Eigen::Index n) {
  const auto dr = cands.cols();
  return MutableChannelView<S>(cands.data() + n * dr, cands.rows() / N, dr, Eigen::OuterStride<>(N * dr));
}

// Runs the embedders of trainable channels; `caches` (double only) keeps the
// layer activations for backpropagation.
template <typename S>
Grid<S> make_grid(const Weights<S>& w, const EmbeddingBundle& b, std::vector<std::vector<VectorT<S>>>* query_caches,
                  std::vector<std::vector<VectorT<S>>>* candidate_caches) {
  Grid<S> g{b.query.cast<S>(), b.candidates.cast<S>(), b.N()};
  if (!b.has_trainable_channel()) return g;
  const VectorT<S> qraw = b.query_raw.cast<S>();
  const MatrixT<S> craw = b.candidate_raw.cast<S>();
  if (query_caches) query_caches->assign(static_cast<std::size_t>(b.M()), {});
  if (candidate_caches) candidate_caches->assign(static_cast<std::size_t>(b.T() * b.N()), {});
  for (Eigen::Index m = 0; m < b.M(); ++m) {
    if (b.query_frozen[static_cast<std::size_t>(m)]) continue;
    const auto& e = w.embedders[static_cast<std::size_t>(m)];
    g.query.row(m) = mlp_forward_generic<S>(e.weights, e.biases, e.activation, e.output, qraw,
                                            query_caches ? &(*query_caches)[static_cast<std::size_t>(m)] : nullptr)
                         .transpose();
  }
  for (Eigen::Index n = 0; n < b.N(); ++n) {
    if (b.candidate_frozen[static_cast<std::size_t>(n)]) continue;
    const auto& e = w.embedders[static_cast<std::size_t>(n)];
    for (Eigen::Index t = 0; t < b.T(); ++t) {
      const auto row = t * b.N() + n;
      g.candidates.row(row) =
          mlp_forward_generic<S>(e.weights, e.biases, e.activation, e.output, VectorT<S>(craw.row(t).transpose()),
                                 candidate_caches ? &(*candidate_caches)[static_cast<std::size_t>(row)] : nullptr)
              .transpose();
    }
  }
  return g;
}

// Column-wise max with the first (lowest-row) maximizer recorded.
template <typename Derived>
VectorT<typename Derived::Scalar> column_max(const Eigen::MatrixBase<Derived>& m, std::vector<Eigen::Index>& arg) {
  VectorT<typename Derived::Scalar> out(m.cols());
  arg.assign(static_cast<std::size_t>(m.cols()), 0);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < m.rows(); ++i)
      if (m(i, j) > m(best, j)) best = i;
    out[j] = m(best, j);
    arg[static_cast<std::size_t>(j)] = best;
  }
  return out;
}

template <typename S>
BasicPooled<S> pool_grid(const Grid<S>& b, Pooling mode) {
  BasicPooled<S> out;
  const auto N = b.N, T = b.T(), dr = b.candidates.cols();
  out.h.resize(N, dr);
  if (mode == Pooling::mean) {
    out.g = b.candidates.colwise().sum().transpose() / static_cast<S>(T * N);
    for (Eigen::Index n = 0; n < N; ++n)
      out.h.row(n) = channel_view(b.candidates, N, n).colwise().sum() / static_cast<S>(T);
    out.query = b.query.colwise().sum().transpose() / static_cast<S>(b.query.rows());
  } else {
    out.g = column_max(b.candidates, out.g_arg);
    out.h_arg.resize(static_cast<std::size_t>(N * dr));
    std::vector<Eigen::Index> arg;
    for (Eigen::Index n = 0; n < N; ++n) {
      out.h.row(n) = column_max(channel_view(b.candidates, N, n), arg).transpose();
      std::copy(arg.begin(), arg.end(), out.h_arg.begin() + n * dr);
    }
    out.query = column_max(b.query, out.q_arg);
  }
  return out;
}

template <typename S>
struct Sorted {
  VectorT<S> values;
  std::vector<Eigen::Index> order;  // values[j] = source[order[j]]
};

template <typename S>
Sorted<S> sort_descending(const VectorT<S>& v) {
  Sorted<S> s;
  s.order.resize(static_cast<std::size_t>(v.size()));
  std::iota(s.order.begin(), s.order.end(), Eigen::Index{0});
  std::stable_sort(s.order.begin(), s.order.end(), [&](Eigen::Index a, Eigen::Index b) { return v[a] > v[b]; });
  s.values.resize(v.size());
  for (Eigen::Index j = 0; j < v.size(); ++j) s.values[j] = v[s.order[static_cast<std::size_t>(j)]];
  return s;
}

// Column offsets inside the attention weight matrices.
struct QueryAttentionLayout {
  Eigen::Index z, q, g, own, other;
  explicit QueryAttentionLayout(const ModelDims& d)
      : z(0), q(d.decoder_dim), g(q + d.query_dim), own(g + d.candidate_dim), other(own + 1) {}
};
struct ResultAttentionLayout {
  Eigen::Index z, q, h, own, other;
  explicit ResultAttentionLayout(const ModelDims& d)
      : z(0), q(d.decoder_dim), h(q + d.query_dim), own(h + d.candidate_dim), other(own + 1) {}
};

template <typename S>
struct StepCache {
  VectorT<S> z_prev, alpha_prev, beta_prev;
  Sorted<S> alpha_sorted, beta_sorted;
  MatrixT<S> query_hidden;   // H x M, tanh activations
  MatrixT<S> result_hidden;  // H x N
  VectorT<S> alpha, beta, c, d_bar, z, y;
  MatrixT<S> contexts;  // T x d_r, row j = d_{t,j}
  VectorT<S> scores;    // T
};

template <typename S>
void step_forward(const Weights<S>& w, const Grid<S>& b, const BasicPooled<S>& pooled, const VectorT<S>& z_prev,
                  const VectorT<S>& alpha_prev, const VectorT<S>& beta_prev, StepCache<S>& s) {
  const auto& d = w.dims;
  const auto M = d.M, N = d.N;
  s.z_prev = z_prev;
  s.alpha_prev = alpha_prev;
  s.beta_prev = beta_prev;
  s.alpha_sorted = sort_descending<S>(alpha_prev);
  s.beta_sorted = sort_descending<S>(beta_prev);

  {
    const QueryAttentionLayout at(d);
    const MatrixT<S>& we = w.query_weight;
    const VectorT<S> common = we.middleCols(at.z, d.decoder_dim) * z_prev +
                              we.middleCols(at.g, d.candidate_dim) * pooled.g +
                              we.middleCols(at.other, N) * s.beta_sorted.values + w.query_bias;
    MatrixT<S> pre = we.middleCols(at.q, d.query_dim) * b.query.transpose();
    pre.noalias() += we.col(at.own) * alpha_prev.transpose();
    pre.colwise() += common;
    s.query_hidden = pre.array().tanh().matrix();
  }
  {
    const ResultAttentionLayout at(d);
    const MatrixT<S>& wf = w.result_weight;
    const VectorT<S> common = wf.middleCols(at.z, d.decoder_dim) * z_prev +
                              wf.middleCols(at.q, d.query_dim) * pooled.query +
                              wf.middleCols(at.other, M) * s.alpha_sorted.values + w.result_bias;
    MatrixT<S> pre = wf.middleCols(at.h, d.candidate_dim) * pooled.h.transpose();
    pre.noalias() += wf.col(at.own) * beta_prev.transpose();
    pre.colwise() += common;
    s.result_hidden = pre.array().tanh().matrix();
  }
  const VectorT<S> e = s.query_hidden.transpose() * w.query_projection;
  const VectorT<S> f = s.result_hidden.transpose() * w.result_projection;
  s.alpha = stable_softmax(e);
  s.beta = stable_softmax(f);
  s.c = b.query.transpose() * s.alpha;
  s.d_bar = pooled.h.transpose() * s.beta;
  s.z = (w.dec_state * z_prev + w.dec_query * s.c + w.dec_result * s.d_bar + w.dec_bias).array().tanh().matrix();
  s.y = w.W * s.c + w.V * s.z;
  s.contexts = s.beta[0] * channel_view(b.candidates, N, 0);
  for (Eigen::Index n = 1; n < N; ++n) s.contexts += s.beta[n] * channel_view(b.candidates, N, n);
  s.scores = s.contexts * s.y;
}

template <typename S>
std::vector<StepCache<S>> run_steps(const Weights<S>& w, const Grid<S>& b, const BasicPooled<S>& pooled) {
  const auto T = b.T();
  const auto& d = w.dims;
  std::vector<StepCache<S>> steps(static_cast<std::size_t>(T));
  const VectorT<S> z0 = VectorT<S>::Zero(d.decoder_dim);
  const VectorT<S> alpha0 = VectorT<S>::Constant(d.M, S(1) / static_cast<S>(d.M));
  const VectorT<S> beta0 = VectorT<S>::Constant(d.N, S(1) / static_cast<S>(d.N));
  const VectorT<S>* z = &z0;
  const VectorT<S>* alpha = &alpha0;
  const VectorT<S>* beta = &beta0;
  for (Eigen::Index t = 0; t < T; ++t) {
    auto& s = steps[static_cast<std::size_t>(t)];
    step_forward(w, b, pooled, *z, *alpha, *beta, s);
    z = &s.z;
    alpha = &s.alpha;
    beta = &s.beta;
  }
  return steps;
}

AttentionState state_of(const StepCache<double>& s, Eigen::Index t) {
  return AttentionState{t, s.alpha, s.beta, s.z, s.c, s.d_bar};
}

// Loss over the step score vectors under teacher forcing. When `dscores` is
// non-null it receives dL/ds (T x T; ranked candidates stay 0).
template <typename S>
S softmax_loss(const std::vector<StepCache<S>>& steps, std::span<const Eigen::Index> target, Matrix* dscores) {
  using std::exp;
  using std::log;
  const auto T = static_cast<Eigen::Index>(steps.size());
  S loss = 0;
  std::vector<bool> ranked(static_cast<std::size_t>(T), false);
  for (Eigen::Index t = 0; t < T; ++t) {
    const VectorT<S>& s = steps[static_cast<std::size_t>(t)].scores;
    const auto chosen = target[static_cast<std::size_t>(t)];
    S peak = -std::numeric_limits<S>::infinity();
    for (Eigen::Index j = 0; j < T; ++j)
      if (!ranked[static_cast<std::size_t>(j)]) peak = std::max(peak, s[j]);
    S total = 0;
    for (Eigen::Index j = 0; j < T; ++j)
      if (!ranked[static_cast<std::size_t>(j)]) total += exp(s[j] - peak);
    const S log_z = peak + log(total);
    const S step_loss = log_z - s[chosen];
    if (!std::isfinite(static_cast<double>(step_loss)))
      throw NumericError("nll_loss: non-finite loss at step " + std::to_string(t + 1), static_cast<std::size_t>(t + 1));
    loss += step_loss;
    if (dscores) {
      for (Eigen::Index j = 0; j < T; ++j)
        if (!ranked[static_cast<std::size_t>(j)]) (*dscores)(t, j) = static_cast<double>(exp(s[j] - log_z));
      (*dscores)(t, chosen) -= 1.0;
    }
    ranked[static_cast<std::size_t>(chosen)] = true;
  }
  return loss;
}

template <typename S>
S hinge_loss_of(const std::vector<StepCache<S>>& steps, std::span<const Eigen::Index> target,
                std::span<const int> relevance, Matrix* dscores) {
  const auto T = static_cast<Eigen::Index>(steps.size());
  S loss = 0;
  std::vector<bool> ranked(static_cast<std::size_t>(T), false);
  for (Eigen::Index t = 0; t < T; ++t) {
    const VectorT<S>& s = steps[static_cast<std::size_t>(t)].scores;
    const auto chosen = target[static_cast<std::size_t>(t)];
    ranked[static_cast<std::size_t>(chosen)] = true;
    const int top = relevance[static_cast<std::size_t>(chosen)];
    for (Eigen::Index j = 0; j < T; ++j) {
      if (ranked[static_cast<std::size_t>(j)] || relevance[static_cast<std::size_t>(j)] >= top) continue;
      const S margin = S(1) - s[chosen] + s[j];
      if (!std::isfinite(static_cast<double>(margin)))
        throw NumericError("hinge_loss: non-finite score at step " + std::to_string(t + 1),
                           static_cast<std::size_t>(t + 1));
      if (margin > S(0)) {
        loss += margin;
        if (dscores) {
          (*dscores)(t, chosen) -= 1.0;
          (*dscores)(t, j) += 1.0;
        }
      }
    }
  }
  return loss;
}

void check_loss_inputs(LossKind kind, const AttRNParams& p, const EmbeddingBundle& b,
                       std::span<const Eigen::Index> target, std::span<const int> relevance) {
  check_compatible(p, b);
  validate_permutation(target, b.T());
  if (kind == LossKind::hinge && static_cast<Eigen::Index>(relevance.size()) != b.T())
    throw std::invalid_argument("hinge_loss: " + std::to_string(relevance.size()) + " relevance labels for T = " +
                                std::to_string(b.T()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Public recurrence pieces

Pooled pool(const EmbeddingBundle& b, Pooling mode) {
  return pool_grid(Grid<double>{b.query, b.candidates, b.N()}, mode);
}

Vector pool_g(const EmbeddingBundle& b, Pooling mode) {
  b.validate();
  return pool(b, mode).g;
}

Vector pool_h(const EmbeddingBundle& b, Eigen::Index n, Pooling mode) {
  b.validate();
  if (n < 0 || n >= b.N())
    throw std::out_of_range("pool_h: channel " + std::to_string(n) + " outside [0, " + std::to_string(b.N()) + ")");
  return pool(b, mode).h.row(n).transpose();
}

AttentionOutput attention_step(const AttRNParams& p, const EmbeddingBundle& b, const Pooled& pooled,
                               const AttentionState& prev) {
  const auto& d = p.dims;
  if (prev.alpha.size() != d.M || prev.beta.size() != d.N || prev.z.size() != d.decoder_dim)
    throw ShapeError("attention_step: previous state does not match model dimensions");
  StepCache<double> s;
  step_forward(weights_as<double>(p), Grid<double>{b.query, b.candidates, b.N()}, pooled, prev.z, prev.alpha,
               prev.beta, s);
  return AttentionOutput{s.alpha, s.beta, s.c, s.d_bar};
}

AttentionOutput attention_step(const AttRNParams& p, const EmbeddingBundle& b, const AttentionState& prev) {
  check_compatible(p, b);
  return attention_step(p, b, pool(b, p.pooling), prev);
}

Vector decoder_step(const AttRNParams& p, const Eigen::Ref<const Vector>& prev_z, const Eigen::Ref<const Vector>& c,
                    const Eigen::Ref<const Vector>& d_bar) {
  const auto& d = p.dims;
  if (prev_z.size() != d.decoder_dim || c.size() != d.query_dim || d_bar.size() != d.candidate_dim)
    throw ShapeError("decoder_step: z " + shape_string(prev_z.size(), 1) + ", c " + shape_string(c.size(), 1) +
                     ", d_bar " + shape_string(d_bar.size(), 1) + " vs model (d_z=" + std::to_string(d.decoder_dim) +
                     ", d_q=" + std::to_string(d.query_dim) + ", d_r=" + std::to_string(d.candidate_dim) + ")");
  return (p.decoder.state * prev_z + p.decoder.query * c + p.decoder.result * d_bar + p.decoder.bias)
      .array()
      .tanh()
      .matrix();
}

CandidateScores score_candidates(const AttRNParams& p, const EmbeddingBundle& b, const AttentionState& state,
                                 std::span<const Eigen::Index> unranked) {
  if (unranked.empty()) throw std::invalid_argument("score_candidates: empty unranked set");
  const auto T = b.T();
  std::vector<bool> seen(static_cast<std::size_t>(T), false);
  for (auto j : unranked) {
    if (j < 0 || j >= T) throw std::invalid_argument("score_candidates: candidate " + std::to_string(j) + " out of range");
    if (seen[static_cast<std::size_t>(j)])
      throw std::invalid_argument("score_candidates: candidate " + std::to_string(j) + " listed twice");
    seen[static_cast<std::size_t>(j)] = true;
  }
  if (state.beta.size() != b.N() || state.c.size() != p.dims.query_dim || state.z.size() != p.dims.decoder_dim)
    throw ShapeError("score_candidates: state does not match model dimensions");
  const Vector y = p.W * state.c + p.V * state.z;
  CandidateScores out;
  out.candidates.assign(unranked.begin(), unranked.end());
  out.scores.resize(static_cast<Eigen::Index>(unranked.size()));
  for (std::size_t i = 0; i < unranked.size(); ++i) {
    Vector ctx = Vector::Zero(b.candidate_dim());
    for (Eigen::Index n = 0; n < b.N(); ++n) ctx += state.beta[n] * b.r(unranked[i], n);
    out.scores[static_cast<Eigen::Index>(i)] = ctx.dot(y);
  }
  out.probabilities = stable_softmax(out.scores);
  out.log_probabilities = log_softmax(out.scores);
  return out;
}

// ---------------------------------------------------------------------------
// Episodes

void validate_permutation(std::span<const Eigen::Index> order, Eigen::Index T) {
  if (static_cast<Eigen::Index>(order.size()) != T)
    throw std::invalid_argument("target order has " + std::to_string(order.size()) + " entries for T = " +
                                std::to_string(T));
  std::vector<bool> seen(static_cast<std::size_t>(T), false);
  for (auto j : order) {
    if (j < 0 || j >= T || seen[static_cast<std::size_t>(j)])
      throw std::invalid_argument("target order is not a permutation of 0.." + std::to_string(T - 1));
    seen[static_cast<std::size_t>(j)] = true;
  }
}

double selection_log_prob(const Eigen::Ref<const Vector>& row, const std::vector<bool>& ranked, Eigen::Index chosen) {
  double peak = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < row.size(); ++j)
    if (!ranked[static_cast<std::size_t>(j)]) peak = std::max(peak, row[j]);
  double total = 0.0;
  for (Eigen::Index j = 0; j < row.size(); ++j)
    if (!ranked[static_cast<std::size_t>(j)]) total += std::exp(row[j] - peak);
  return row[chosen] - peak - std::log(total);
}

EmbeddingBundle materialize(const AttRNParams& p, const EmbeddingBundle& b) {
  check_compatible(p, b);
  if (!b.has_trainable_channel()) return b;
  const Grid<double> g = make_grid<double>(weights_as<double>(p), b, nullptr, nullptr);
  EmbeddingBundle out = b;
  out.query = g.query;
  out.candidates = g.candidates;
  return out;
}

ScoreTable score_table(const AttRNParams& p, const EmbeddingBundle& b) {
  check_compatible(p, b);
  const Weights<double> w = weights_as<double>(p);
  const Grid<double> grid = make_grid<double>(w, b, nullptr, nullptr);
  const auto steps = run_steps(w, grid, pool_grid(grid, p.pooling));
  ScoreTable out;
  out.scores.resize(b.T(), b.T());
  for (std::size_t t = 0; t < steps.size(); ++t) {
    out.states.push_back(state_of(steps[t], static_cast<Eigen::Index>(t) + 1));
    out.scores.row(static_cast<Eigen::Index>(t)) = steps[t].scores.transpose();
  }
  return out;
}

RankingTrace forward_episode(const AttRNParams& p, const EmbeddingBundle& b,
                             const std::optional<std::vector<Eigen::Index>>& target_order) {
  const auto T = b.T();
  if (target_order) validate_permutation(*target_order, T);
  const ScoreTable table = score_table(p, b);
  RankingTrace trace;
  std::vector<bool> ranked(static_cast<std::size_t>(T), false);
  for (Eigen::Index t = 0; t < T; ++t) {
    RankingStep step;
    step.state = table.states[static_cast<std::size_t>(t)];
    std::vector<Eigen::Index> unranked;
    for (Eigen::Index j = 0; j < T; ++j)
      if (!ranked[static_cast<std::size_t>(j)]) unranked.push_back(j);
    step.scores.candidates = unranked;
    step.scores.scores.resize(static_cast<Eigen::Index>(unranked.size()));
    for (std::size_t i = 0; i < unranked.size(); ++i)
      step.scores.scores[static_cast<Eigen::Index>(i)] = table.scores(t, unranked[i]);
    step.scores.probabilities = stable_softmax(step.scores.scores);
    step.scores.log_probabilities = log_softmax(step.scores.scores);
    if (target_order) {
      step.chosen = (*target_order)[static_cast<std::size_t>(t)];
    } else {
      Eigen::Index best = 0;  // first maximizer = lowest candidate index
      for (Eigen::Index i = 1; i < step.scores.scores.size(); ++i)
        if (step.scores.scores[i] > step.scores.scores[best]) best = i;
      step.chosen = unranked[static_cast<std::size_t>(best)];
    }
    step.log_probability = selection_log_prob(table.scores.row(t).transpose(), ranked, step.chosen);
    ranked[static_cast<std::size_t>(step.chosen)] = true;
    trace.order.push_back(step.chosen);
    trace.log_likelihood += step.log_probability;
    trace.steps.push_back(std::move(step));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Losses and backpropagation

namespace {

// Reverse pass through the whole recurrence. Embedding gradients are only
// accumulated when `dquery` / `dcands` are given.
void backpropagate(const AttRNParams& p, const Grid<double>& b, const Pooled& pooled,
                   const std::vector<StepCache<double>>& steps, const Matrix& dscores, AttRNParams& g, Matrix* dquery,
                   Matrix* dcands) {
  const auto& d = p.dims;
  const auto M = d.M, N = d.N, T = b.T();
  const QueryAttentionLayout qa(d);
  const ResultAttentionLayout ra(d);
  const Matrix& we = p.query_attention.weight;
  const Matrix& wf = p.result_attention.weight;

  Vector dz_next = Vector::Zero(d.decoder_dim);
  Vector dalpha_next = Vector::Zero(M);
  Vector dbeta_next = Vector::Zero(N);
  Vector dg = Vector::Zero(d.candidate_dim);
  Matrix dh = Matrix::Zero(N, d.candidate_dim);
  Vector dqpool = Vector::Zero(d.query_dim);

  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const StepCache<double>& s = steps[static_cast<std::size_t>(t)];
    const Vector ds = dscores.row(t).transpose();

    // Scoring: s = contexts * y with y = W c + V z and contexts = sum_n beta_n R_n.
    const Vector dy = s.contexts.transpose() * ds;
    Vector dbeta = dbeta_next;
    for (Eigen::Index n = 0; n < N; ++n) {
      dbeta[n] += ds.dot(channel_view(b.candidates, N, n) * s.y);
      if (dcands) channel_view(*dcands, N, n).noalias() += s.beta[n] * (ds * s.y.transpose());
    }
    g.W.noalias() += dy * s.c.transpose();
    g.V.noalias() += dy * s.z.transpose();
    Vector dc = p.W.transpose() * dy;
    const Vector dz = p.V.transpose() * dy + dz_next;

    // Decoder.
    const Vector dpre = dz.cwiseProduct((1.0 - s.z.array().square()).matrix());
    g.decoder.state.noalias() += dpre * s.z_prev.transpose();
    g.decoder.query.noalias() += dpre * s.c.transpose();
    g.decoder.result.noalias() += dpre * s.d_bar.transpose();
    g.decoder.bias += dpre;
    Vector dz_prev = p.decoder.state.transpose() * dpre;
    dc.noalias() += p.decoder.query.transpose() * dpre;
    const Vector ddbar = p.decoder.result.transpose() * dpre;

    // Contexts c = Q^T alpha, dbar = H^T beta.
    const Vector dalpha = dalpha_next + b.query * dc;
    if (dquery) dquery->noalias() += s.alpha * dc.transpose();
    dbeta.noalias() += pooled.h * ddbar;
    dh.noalias() += s.beta * ddbar.transpose();

    const Vector de = softmax_backward(s.alpha, dalpha);
    const Vector df = softmax_backward(s.beta, dbeta);

    Vector dalpha_prev = Vector::Zero(M);
    Vector dbeta_prev = Vector::Zero(N);

    {  // Query attention.
      g.query_attention.projection.noalias() += s.query_hidden * de;
      const Matrix dpre_e =
          ((p.query_attention.projection * de.transpose()).array() * (1.0 - s.query_hidden.array().square()))
              .matrix();  // H x M
      const Vector dcommon = dpre_e.rowwise().sum();
      Matrix& gw = g.query_attention.weight;
      gw.middleCols(qa.z, d.decoder_dim).noalias() += dcommon * s.z_prev.transpose();
      gw.middleCols(qa.g, d.candidate_dim).noalias() += dcommon * pooled.g.transpose();
      gw.middleCols(qa.other, N).noalias() += dcommon * s.beta_sorted.values.transpose();
      gw.middleCols(qa.q, d.query_dim).noalias() += dpre_e * b.query;
      gw.col(qa.own).noalias() += dpre_e * s.alpha_prev;
      g.query_attention.bias += dcommon;

      dz_prev.noalias() += we.middleCols(qa.z, d.decoder_dim).transpose() * dcommon;
      dg.noalias() += we.middleCols(qa.g, d.candidate_dim).transpose() * dcommon;
      const Vector dsorted = we.middleCols(qa.other, N).transpose() * dcommon;
      for (Eigen::Index j = 0; j < N; ++j) dbeta_prev[s.beta_sorted.order[static_cast<std::size_t>(j)]] += dsorted[j];
      dalpha_prev.noalias() += dpre_e.transpose() * we.col(qa.own);
      if (dquery) dquery->noalias() += dpre_e.transpose() * we.middleCols(qa.q, d.query_dim);
    }
    {  // Result attention.
      g.result_attention.projection.noalias() += s.result_hidden * df;
      const Matrix dpre_f =
          ((p.result_attention.projection * df.transpose()).array() * (1.0 - s.result_hidden.array().square()))
              .matrix();  // H x N
      const Vector dcommon = dpre_f.rowwise().sum();
      Matrix& gw = g.result_attention.weight;
      gw.middleCols(ra.z, d.decoder_dim).noalias() += dcommon * s.z_prev.transpose();
      gw.middleCols(ra.q, d.query_dim).noalias() += dcommon * pooled.query.transpose();
      gw.middleCols(ra.other, M).noalias() += dcommon * s.alpha_sorted.values.transpose();
      gw.middleCols(ra.h, d.candidate_dim).noalias() += dpre_f * pooled.h;
      gw.col(ra.own).noalias() += dpre_f * s.beta_prev;
      g.result_attention.bias += dcommon;

      dz_prev.noalias() += wf.middleCols(ra.z, d.decoder_dim).transpose() * dcommon;
      dqpool.noalias() += wf.middleCols(ra.q, d.query_dim).transpose() * dcommon;
      const Vector dsorted = wf.middleCols(ra.other, M).transpose() * dcommon;
      for (Eigen::Index j = 0; j < M; ++j)
        dalpha_prev[s.alpha_sorted.order[static_cast<std::size_t>(j)]] += dsorted[j];
      dbeta_prev.noalias() += dpre_f.transpose() * wf.col(ra.own);
      dh.noalias() += dpre_f.transpose() * wf.middleCols(ra.h, d.candidate_dim);
    }

    dz_next = std::move(dz_prev);
    dalpha_next = std::move(dalpha_prev);
    dbeta_next = std::move(dbeta_prev);
  }

  if (!dcands) return;
  // Pooling back to the embeddings.
  const auto dr = d.candidate_dim;
  if (p.pooling == Pooling::mean) {
    dcands->rowwise() += dg.transpose() / static_cast<double>(T * N);
    for (Eigen::Index n = 0; n < N; ++n) channel_view(*dcands, N, n).rowwise() += dh.row(n) / static_cast<double>(T);
    dquery->rowwise() += dqpool.transpose() / static_cast<double>(M);
  } else {
    for (Eigen::Index j = 0; j < dr; ++j) (*dcands)(pooled.g_arg[static_cast<std::size_t>(j)], j) += dg[j];
    for (Eigen::Index n = 0; n < N; ++n)
      for (Eigen::Index j = 0; j < dr; ++j)
        (*dcands)(pooled.h_arg[static_cast<std::size_t>(n * dr + j)] * N + n, j) += dh(n, j);
    for (Eigen::Index j = 0; j < d.query_dim; ++j) (*dquery)(pooled.q_arg[static_cast<std::size_t>(j)], j) += dqpool[j];
  }
}

LossResult run_loss(LossKind kind, const AttRNParams& p, const EmbeddingBundle& input,
                    std::span<const Eigen::Index> target, std::span<const int> relevance, bool with_grad) {
  check_loss_inputs(kind, p, input, target, relevance);
  const Weights<double> w = weights_as<double>(p);
  const bool trainable = input.has_trainable_channel();
  std::vector<std::vector<Vector>> query_caches, candidate_caches;
  const Grid<double> grid = make_grid<double>(w, input, trainable && with_grad ? &query_caches : nullptr,
                                              trainable && with_grad ? &candidate_caches : nullptr);
  const Pooled pooled = pool_grid(grid, p.pooling);
  const auto steps = run_steps(w, grid, pooled);

  LossResult result;
  Matrix dscores;
  if (with_grad) dscores = Matrix::Zero(grid.T(), grid.T());
  result.loss = kind == LossKind::softmax ? softmax_loss<double>(steps, target, with_grad ? &dscores : nullptr)
                                          : hinge_loss_of<double>(steps, target, relevance, with_grad ? &dscores : nullptr);
  if (!with_grad) return result;

  result.grad = p.zeros_like();
  if (!trainable) {
    backpropagate(p, grid, pooled, steps, dscores, result.grad, nullptr, nullptr);
    return result;
  }
  Matrix dquery = Matrix::Zero(grid.query.rows(), grid.query.cols());
  Matrix dcands = Matrix::Zero(grid.candidates.rows(), grid.candidates.cols());
  backpropagate(p, grid, pooled, steps, dscores, result.grad, &dquery, &dcands);
  for (Eigen::Index m = 0; m < input.M(); ++m) {
    if (input.query_frozen[static_cast<std::size_t>(m)]) continue;
    const auto k = static_cast<std::size_t>(m);
    mlp_backward(p.embedders[k], MlpCache{query_caches[k]}, dquery.row(m).transpose(), result.grad.embedders[k]);
  }
  for (Eigen::Index n = 0; n < input.N(); ++n) {
    if (input.candidate_frozen[static_cast<std::size_t>(n)]) continue;
    const auto k = static_cast<std::size_t>(n);
    for (Eigen::Index t = 0; t < input.T(); ++t) {
      const auto row = static_cast<std::size_t>(t * input.N() + n);
      mlp_backward(p.embedders[k], MlpCache{candidate_caches[row]}, dcands.row(static_cast<Eigen::Index>(row)).transpose(),
                   result.grad.embedders[k]);
    }
  }
  return result;
}

}  // namespace

LossResult nll_loss(const AttRNParams& p, const EmbeddingBundle& b, std::span<const Eigen::Index> target_order,
                    bool with_grad) {
  return run_loss(LossKind::softmax, p, b, target_order, {}, with_grad);
}

LossResult hinge_loss(const AttRNParams& p, const EmbeddingBundle& b, std::span<const Eigen::Index> target_order,
                      std::span<const int> relevance, bool with_grad) {
  return run_loss(LossKind::hinge, p, b, target_order, relevance, with_grad);
}

LossResult episode_loss(LossKind kind, const AttRNParams& p, const EmbeddingBundle& b,
                        std::span<const Eigen::Index> target_order, std::span<const int> relevance, bool with_grad) {
  return run_loss(kind, p, b, target_order, relevance, with_grad);
}

template <typename Scalar>
Scalar episode_loss_value(LossKind kind, const AttRNParams& p, const EmbeddingBundle& b,
                          std::span<const Eigen::Index> target, std::span<const int> relevance) {
  check_loss_inputs(kind, p, b, target, relevance);
  const Weights<Scalar> w = weights_as<Scalar>(p);
  const Grid<Scalar> grid = make_grid<Scalar>(w, b, nullptr, nullptr);
  const auto steps = run_steps(w, grid, pool_grid(grid, p.pooling));
  return kind == LossKind::softmax ? softmax_loss<Scalar>(steps, target, nullptr)
                                   : hinge_loss_of<Scalar>(steps, target, relevance, nullptr);
}

template double episode_loss_value<double>(LossKind, const AttRNParams&, const EmbeddingBundle&,
                                           std::span<const Eigen::Index>, std::span<const int>);
template long double episode_loss_value<long double>(LossKind, const AttRNParams&, const EmbeddingBundle&,
                                                     std::span<const Eigen::Index>, std::span<const int>);

double min_hinge_distance(const AttRNParams& p, const EmbeddingBundle& b, std::span<const Eigen::Index> target,
                          std::span<const int> relevance) {
  validate_permutation(target, b.T());
  const ScoreTable table = score_table(p, b);
  const auto T = b.T();
  double best = std::numeric_limits<double>::infinity();
  std::vector<bool> ranked(static_cast<std::size_t>(T), false);
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto chosen = target[static_cast<std::size_t>(t)];
    ranked[static_cast<std::size_t>(chosen)] = true;
    for (Eigen::Index j = 0; j < T; ++j) {
      if (ranked[static_cast<std::size_t>(j)] ||
          relevance[static_cast<std::size_t>(j)] >= relevance[static_cast<std::size_t>(chosen)])
        continue;
      best = std::min(best, std::abs(1.0 - table.scores(t, chosen) + table.scores(t, j)));
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Gradient verification

GradientCheckInstance random_check_instance(LossKind kind, std::uint64_t seed) {
  Rng root(seed);
  for (int draw = 1;; ++draw) {
    Rng rng = root.derive(static_cast<std::uint64_t>(draw));
    ModelDims d;
    d.M = 3;
    d.N = 2;
    d.query_dim = 4;
    d.candidate_dim = 6;
    d.decoder_dim = 5;
    d.attention_hidden = 7;
    const Eigen::Index T = 5;
    GradientCheckInstance inst;
    inst.draws = draw;
    inst.params = init_params(d, rng.uniform(0.0, 1.0) < 0.5 ? Pooling::mean : Pooling::max, rng,
                              InitScheme::small_random);
    inst.params.for_each_tensor([&](const std::string&, Eigen::Map<Vector> v) {
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-0.5, 0.5);
    });
    Matrix q(d.M, d.query_dim), r(T * d.N, d.candidate_dim);
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = rng.uniform(-1.0, 1.0);
    for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = rng.uniform(-1.0, 1.0);
    inst.bundle = make_bundle(std::move(q), std::move(r), d.N);
    inst.relevance.resize(static_cast<std::size_t>(T));
    for (auto& l : inst.relevance) l = static_cast<int>(rng.uniform_int(0, 2));
    inst.relevance[static_cast<std::size_t>(rng.uniform_int(0, T - 1))] = 2;
    inst.target.resize(static_cast<std::size_t>(T));
    std::iota(inst.target.begin(), inst.target.end(), Eigen::Index{0});
    std::stable_sort(inst.target.begin(), inst.target.end(), [&](Eigen::Index a, Eigen::Index b) {
      return inst.relevance[static_cast<std::size_t>(a)] > inst.relevance[static_cast<std::size_t>(b)];
    });
    if (kind == LossKind::hinge && min_hinge_distance(inst.params, inst.bundle, inst.target, inst.relevance) < 1e-6)
      continue;
    return inst;
  }
}

GradCheckResult check_gradients(LossKind kind, const GradientCheckInstance& inst, double step) {
  const LossResult analytic = episode_loss(kind, inst.params, inst.bundle, inst.target, inst.relevance, true);
  AttRNParams probe = inst.params;
  const auto f = [&](const Vector& x) {
    probe.assign(x);
    return episode_loss_value<long double>(kind, probe, inst.bundle, inst.target, inst.relevance);
  };
  return grad_check_detailed(f, inst.params.flatten(), analytic.grad.flatten(), step);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

template <typename F>
void for_each_shaped(const AttRNParams& p, F&& f) {
  const auto vec = [&](const std::string& n, const Vector& v) { f(n, Matrix(v.transpose())); };
  f("query_attention.weight", p.query_attention.weight);
  vec("query_attention.bias", p.query_attention.bias);
  vec("query_attention.projection", p.query_attention.projection);
  f("result_attention.weight", p.result_attention.weight);
  vec("result_attention.bias", p.result_attention.bias);
  vec("result_attention.projection", p.result_attention.projection);
  f("decoder.state", p.decoder.state);
  f("decoder.query", p.decoder.query);
  f("decoder.result", p.decoder.result);
  vec("decoder.bias", p.decoder.bias);
  f("W", p.W);
  f("V", p.V);
  for (std::size_t k = 0; k < p.embedders.size(); ++k)
    for (std::size_t l = 0; l < p.embedders[k].weights.size(); ++l) {
      const std::string base = "embedder." + std::to_string(k);
      f(base + ".weight." + std::to_string(l), p.embedders[k].weights[l]);
      vec(base + ".bias." + std::to_string(l), p.embedders[k].biases[l]);
    }
}

}  // namespace

Container params_to_container(const AttRNParams& p, const nlohmann::json& extra) {
  p.validate();
  Container c;
  c.meta = extra.is_object() ? extra : nlohmann::json::object();
  c.meta["kind"] = "attrn-params";
  const auto& d = p.dims;
  c.meta["dims"] = {{"M", d.M},
                    {"N", d.N},
                    {"d_q", d.query_dim},
                    {"d_r", d.candidate_dim},
                    {"d_z", d.decoder_dim},
                    {"attention_hidden", d.attention_hidden}};
  c.meta["pooling"] = pooling_name(p.pooling);
  nlohmann::json emb = nlohmann::json::array();
  for (const auto& e : p.embedders) {
    if (e.empty()) {
      emb.push_back(nullptr);
      continue;
    }
    std::vector<Eigen::Index> sizes{e.input_dim()};
    for (const auto& w : e.weights) sizes.push_back(w.rows());
    emb.push_back({{"layers", sizes},
                   {"activation", activation_name(e.activation)},
                   {"output", e.output == OutputMode::softmax ? "softmax" : "last_hidden"}});
  }
  c.meta["embedders"] = emb;
  for_each_shaped(p, [&](const std::string& name, const Matrix& m) { c.add(name, m); });
  return c;
}

AttRNParams params_from_container(const Container& c) {
  using K = ParseError::Kind;
  AttRNParams p;
  try {
    if (c.meta.at("kind").get<std::string>() != "attrn-params")
      throw ParseError(K::schema, 0, "checkpoint: /kind is not 'attrn-params'");
    const auto& d = c.meta.at("dims");
    p.dims.M = d.at("M").get<Eigen::Index>();
    p.dims.N = d.at("N").get<Eigen::Index>();
    p.dims.query_dim = d.at("d_q").get<Eigen::Index>();
    p.dims.candidate_dim = d.at("d_r").get<Eigen::Index>();
    p.dims.decoder_dim = d.at("d_z").get<Eigen::Index>();
    p.dims.attention_hidden = d.at("attention_hidden").get<Eigen::Index>();
    p.pooling = parse_pooling(c.meta.at("pooling").get<std::string>());
    for (const auto& e : c.meta.value("embedders", nlohmann::json::array())) {
      MlpEmbedder emb;
      if (!e.is_null()) {
        const auto sizes = e.at("layers").get<std::vector<Eigen::Index>>();
        emb.activation = parse_activation(e.at("activation").get<std::string>());
        emb.output = e.at("output").get<std::string>() == "softmax" ? OutputMode::softmax : OutputMode::last_hidden;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
          emb.weights.push_back(Matrix::Zero(sizes[l + 1], sizes[l]));
          emb.biases.push_back(Vector::Zero(sizes[l + 1]));
        }
      }
      p.embedders.push_back(std::move(emb));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(K::schema, 0, std::string("checkpoint manifest: ") + e.what());
  }
  Rng unused(0);
  AttRNParams shaped = init_params(p.dims, p.pooling, unused, InitScheme::small_random);
  shaped.embedders = std::move(p.embedders);
  p = std::move(shaped);
  p.for_each_tensor([&](const std::string& name, Eigen::Map<Vector> v) {
    const Matrix& m = c.at(name);
    if (m.size() != v.size())
      throw ParseError(K::dimension_mismatch, 0,
                       "checkpoint tensor '" + name + "' has " + std::to_string(m.size()) + " values, expected " +
                           std::to_string(v.size()));
    v = Eigen::Map<const Vector>(m.data(), m.size());
  });
  p.validate();
  return p;
}

void save_params(const std::filesystem::path& path, const AttRNParams& p, const nlohmann::json& extra) {
  write_container(path, params_to_container(p, extra));
}

AttRNParams load_params(const std::filesystem::path& path) { return params_from_container(read_container(path)); }

}  // namespace attrn
