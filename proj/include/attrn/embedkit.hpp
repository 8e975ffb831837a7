// Embedding bundles, their EMB1 persistence, the synthetic class-softmax
// generator and the feedforward embedder used for jointly trained channels.
#ifndef ATTRN_EMBEDKIT_HPP
#define ATTRN_EMBEDKIT_HPP

#include <filesystem>
#include <limits>
#include <vector>

#include "attrn/container.hpp"
#include "attrn/numkit.hpp"

namespace attrn {

/// Embeddings for one episode: M query channels and a T x N grid of candidate
/// channels. Row m of `query` is q_m; row t*N + n of `candidates` is r_tn.
///
/// A channel whose frozen flag is false is produced by an MlpEmbedder held in
/// the model parameters; its rows are recomputed from `query_raw` /
/// `candidate_raw` (one raw feature row per item) before every forward pass.
struct EmbeddingBundle {
  Matrix query;       // M x d_q
  Matrix candidates;  // (T*N) x d_r
  Eigen::Index channels = 1;  // N
  std::vector<bool> query_frozen;      // size M
  std::vector<bool> candidate_frozen;  // size N
  Vector query_raw;                    // empty unless some channel is trainable
  Matrix candidate_raw;                // T x d_in, or empty

  Eigen::Index M() const { return query.rows(); }
  Eigen::Index N() const { return channels; }
  Eigen::Index T() const { return channels > 0 ? candidates.rows() / channels : 0; }
  Eigen::Index query_dim() const { return query.cols(); }
  Eigen::Index candidate_dim() const { return candidates.cols(); }

  auto q(Eigen::Index m) const { return query.row(m).transpose(); }
  auto r(Eigen::Index t, Eigen::Index n) const { return candidates.row(t * channels + n).transpose(); }
  auto r(Eigen::Index t, Eigen::Index n) { return candidates.row(t * channels + n).transpose(); }

  bool has_trainable_channel() const;

  /// Throws std::invalid_argument naming the violated invariant.
  void validate() const;
};

/// Builds a bundle with every channel frozen.
EmbeddingBundle make_bundle(Matrix query, Matrix candidates, Eigen::Index channels);

bool operator==(const EmbeddingBundle& a, const EmbeddingBundle& b);

// ---------------------------------------------------------------------------
// Feedforward embedder

enum class Activation { tanh, relu, sigmoid, identity };
enum class OutputMode { softmax, last_hidden };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view s);

struct MlpEmbedder {
  std::vector<Matrix> weights;  // weights[l] is d_{l+1} x d_l
  std::vector<Vector> biases;
  Activation activation = Activation::tanh;
  OutputMode output = OutputMode::softmax;

  bool empty() const { return weights.empty(); }
  Eigen::Index input_dim() const { return weights.empty() ? 0 : weights.front().cols(); }
  Eigen::Index output_dim() const { return weights.empty() ? 0 : weights.back().rows(); }
  void validate() const;
};

/// Layer sizes {d_0, ..., d_{L+1}}; weights ~ U(-scale, scale), zero biases.
MlpEmbedder make_mlp(std::span<const Eigen::Index> layer_sizes, Activation act, OutputMode mode,
                     Rng& rng, double scale);

/// Per-layer activations kept for the backward pass; layers.front() is x0.
struct MlpCache {
  std::vector<Vector> layers;
};

template <typename Scalar>
VectorT<Scalar> activate(Activation a, const VectorT<Scalar>& x) {
  switch (a) {
    case Activation::tanh: return x.array().tanh().matrix();
    case Activation::relu: return x.array().max(Scalar(0)).matrix();
    case Activation::sigmoid: return (Scalar(1) / (Scalar(1) + (-x.array()).exp())).matrix();
    case Activation::identity: return x;
  }
  return x;
}

/// Forward pass over explicit layer lists, generic in the scalar type. When
/// `layers` is non-null it receives x0 followed by every layer output.
template <typename Scalar>
VectorT<Scalar> mlp_forward_generic(std::span<const MatrixT<Scalar>> weights, std::span<const VectorT<Scalar>> biases,
                                    Activation act, OutputMode mode, const VectorT<Scalar>& x0,
                                    std::vector<VectorT<Scalar>>* layers = nullptr) {
  VectorT<Scalar> x = x0;
  if (layers) {
    layers->clear();
    layers->push_back(x);
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    VectorT<Scalar> pre = weights[l] * x + biases[l];
    x = (l + 1 == weights.size() && mode == OutputMode::softmax) ? stable_softmax(pre) : activate<Scalar>(act, pre);
    if (layers) layers->push_back(x);
  }
  return x;
}

Vector mlp_forward(const MlpEmbedder& e, const Eigen::Ref<const Vector>& x0);
Vector mlp_forward(const MlpEmbedder& e, const Eigen::Ref<const Vector>& x0, MlpCache& cache);

/// Accumulates dL/dW_l, dL/db_l into `grad` (shaped like `e`) given dL/dy.
void mlp_backward(const MlpEmbedder& e, const MlpCache& cache, const Eigen::Ref<const Vector>& grad_out,
                  MlpEmbedder& grad);

// ---------------------------------------------------------------------------
// Synthetic class-softmax embeddings

inline constexpr double kDefaultSharpness = 5.0;

/// softmax(kappa * one_hot(cls) + N(0, noise^2) per logit). kappa = +inf gives
/// the exact one-hot of the noisy argmax (which is `cls` itself).
Vector synth_class_embedding(Rng& rng, int cls, int num_classes, double noise,
                             double kappa = kDefaultSharpness);

/// Query channel m uses query_noise[m]; candidate channel n uses candidate_noise[n].
EmbeddingBundle synth_class_bundle(Rng& rng, int query_class, std::span<const int> candidate_classes,
                                   int num_classes, std::span<const double> query_noise,
                                   std::span<const double> candidate_noise,
                                   double kappa = kDefaultSharpness);

// ---------------------------------------------------------------------------
// Persistence

/// Appends the bundle's tensors under `prefix` and returns the JSON descriptor
/// (counts, dimensions, frozen flags) needed to read them back.
nlohmann::json append_bundle(Container& c, const EmbeddingBundle& b, DType dtype = DType::f64,
                             const std::string& prefix = "");
EmbeddingBundle extract_bundle(const Container& c, const nlohmann::json& descriptor,
                               const std::string& prefix = "");

void save_bundle(const std::filesystem::path& path, const EmbeddingBundle& b, DType dtype = DType::f64);
EmbeddingBundle load_bundle(const std::filesystem::path& path);

}  // namespace attrn

#endif  // ATTRN_EMBEDKIT_HPP
