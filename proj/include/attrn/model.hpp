// Attention-based ranking network: parameters, the double-attention /
// decoder recurrence, bilinear listwise scoring, and both training losses
// with hand-derived gradients.
//
// Per step t = 1..T, starting from z_0 = 0, alpha_0 = 1/M, beta_0 = 1/N:
//
//   e_tm  = u_e . tanh(W_e [z_{t-1}; q_m; g; alpha_{t-1,m}; sort(beta_{t-1})] + b_e)
//   f_tn  = u_f . tanh(W_f [z_{t-1}; pool(q); h_n; beta_{t-1,n}; sort(alpha_{t-1})] + b_f)
//   alpha_t = softmax(e_t),   beta_t = softmax(f_t)
//   c_t     = sum_m alpha_tm q_m,   dbar_t = sum_n beta_tn h_n
//   z_t     = tanh(A z_{t-1} + B c_t + D dbar_t + b_z)
//   d_{t,j} = sum_n beta_tn r_jn
//   s_{t,j} = d_{t,j}^T W c_t + d_{t,j}^T V z_t
//
// sort() orders a probability vector descending (ties by index), which makes
// the query side equivariant under channel relabeling. The selection
// distribution at step t is a softmax over the still-unranked candidates.
#ifndef ATTRN_MODEL_HPP
#define ATTRN_MODEL_HPP

#include <optional>
#include <string>
#include <vector>

#include "attrn/embedkit.hpp"
#include "attrn/numkit.hpp"

namespace attrn {

enum class Pooling { mean, max };
enum class LossKind { softmax, hinge };
enum class InitScheme { paper_zeros, small_random };

std::string_view pooling_name(Pooling p);
Pooling parse_pooling(std::string_view s);
std::string_view loss_name(LossKind l);
LossKind parse_loss(std::string_view s);

struct ModelDims {
  Eigen::Index M = 1;  // query channels
  Eigen::Index N = 1;  // candidate channels
  Eigen::Index query_dim = 1;
  Eigen::Index candidate_dim = 1;
  Eigen::Index decoder_dim = 32;
  Eigen::Index attention_hidden = 16;

  Eigen::Index query_attention_input() const { return decoder_dim + query_dim + candidate_dim + 1 + N; }
  Eigen::Index result_attention_input() const { return decoder_dim + query_dim + candidate_dim + 1 + M; }
  bool operator==(const ModelDims&) const = default;
};

/// One tanh layer followed by a bias-free scalar projection.
struct AttentionLayer {
  Matrix weight;      // hidden x input
  Vector bias;        // hidden
  Vector projection;  // hidden
};

struct DecoderLayer {
  Matrix state;    // A: d_z x d_z
  Matrix query;    // B: d_z x d_q
  Matrix result;   // D: d_z x d_r
  Vector bias;     // d_z
};

struct AttRNParams {
  ModelDims dims;
  Pooling pooling = Pooling::mean;
  AttentionLayer query_attention;   // produces e_t
  AttentionLayer result_attention;  // produces f_t
  DecoderLayer decoder;
  Matrix W;  // d_r x d_q
  Matrix V;  // d_r x d_z
  /// embedders[k], when non-empty, produces query channel k and candidate
  /// channel k for bundles that mark channel k as trainable.
  std::vector<MlpEmbedder> embedders;

  /// Visits every trainable tensor as a flat view, in a fixed order, with a
  /// stable name ("W", "decoder.state", "embedder.0.weight.1", ...).
  template <typename F>
  void for_each_tensor(F&& f);
  template <typename F>
  void for_each_tensor(F&& f) const;

  Eigen::Index num_coefficients() const;
  Vector flatten() const;
  void assign(const Vector& flat);

  /// Same shapes, all zeros.
  AttRNParams zeros_like() const;
  /// this += scale * other (shapes must match)
  void add_scaled(const AttRNParams& other, double scale);
  void scale(double factor);

  void validate() const;
  bool all_finite() const;
};

bool operator==(const AttRNParams& a, const AttRNParams& b);

/// paper_zeros: W = I, everything else 0 (requires d_r = d_q).
/// small_random: W = I (rectangular identity when d_r != d_q), every other
/// tensor ~ U(-0.05, 0.05) drawn from `rng`.
AttRNParams init_params(const ModelDims& dims, Pooling pooling, Rng& rng, InitScheme scheme);

/// Checks the bundle against the parameter dimensions and embedders.
void check_compatible(const AttRNParams& p, const EmbeddingBundle& b);

// ---------------------------------------------------------------------------
// Recurrence pieces

struct AttentionState {
  Eigen::Index t = 0;
  Vector alpha;  // M
  Vector beta;   // N
  Vector z;      // d_z
  Vector c;      // d_q
  Vector d_bar;  // d_r
};

AttentionState initial_state(const AttRNParams& p);

/// Pooled summaries of the candidate grid (g, h_n) and of the query channels.
template <typename Scalar>
struct BasicPooled {
  VectorT<Scalar> g;      // d_r
  MatrixT<Scalar> h;      // N x d_r, row n = h_n
  VectorT<Scalar> query;  // d_q
  std::vector<Eigen::Index> g_arg;  // max mode: flat candidate row chosen per coordinate
  std::vector<Eigen::Index> h_arg;  // max mode: N*d_r entries, candidate index t
  std::vector<Eigen::Index> q_arg;  // max mode: query channel per coordinate
};
using Pooled = BasicPooled<double>;

Pooled pool(const EmbeddingBundle& b, Pooling mode);
Vector pool_g(const EmbeddingBundle& b, Pooling mode);
Vector pool_h(const EmbeddingBundle& b, Eigen::Index n, Pooling mode);

struct AttentionOutput {
  Vector alpha, beta, c, d_bar;
};

AttentionOutput attention_step(const AttRNParams& p, const EmbeddingBundle& b, const AttentionState& prev);
AttentionOutput attention_step(const AttRNParams& p, const EmbeddingBundle& b, const Pooled& pooled,
                               const AttentionState& prev);

Vector decoder_step(const AttRNParams& p, const Eigen::Ref<const Vector>& prev_z,
                    const Eigen::Ref<const Vector>& c, const Eigen::Ref<const Vector>& d_bar);

/// Scores of the unranked candidates (in the order given) and their
/// selection probabilities.
struct CandidateScores {
  std::vector<Eigen::Index> candidates;
  Vector scores;
  Vector probabilities;
  Vector log_probabilities;
};

CandidateScores score_candidates(const AttRNParams& p, const EmbeddingBundle& b, const AttentionState& state,
                                 std::span<const Eigen::Index> unranked);

// ---------------------------------------------------------------------------
// Whole episodes

struct RankingStep {
  AttentionState state;
  CandidateScores scores;
  Eigen::Index chosen = -1;
  double log_probability = 0.0;
};

struct RankingTrace {
  std::vector<RankingStep> steps;
  std::vector<Eigen::Index> order;
  double log_likelihood = 0.0;
};

/// Runs the T-step recurrence. With a target order the selections follow it
/// (teacher forcing); without one each step takes the highest score, ties to
/// the lowest candidate index.
RankingTrace forward_episode(const AttRNParams& p, const EmbeddingBundle& b,
                             const std::optional<std::vector<Eigen::Index>>& target_order = std::nullopt);

/// Attention states for steps 1..T (they do not depend on the selections) and
/// the full T x T score table: row t-1 holds s_{t, j} for every candidate j.
struct ScoreTable {
  std::vector<AttentionState> states;
  Matrix scores;
};

ScoreTable score_table(const AttRNParams& p, const EmbeddingBundle& b);

/// log P(chosen | ranked-so-far) from one row of the score table.
double selection_log_prob(const Eigen::Ref<const Vector>& row, const std::vector<bool>& ranked, Eigen::Index chosen);

// ---------------------------------------------------------------------------
// Losses

struct LossResult {
  double loss = 0.0;
  AttRNParams grad;  // populated only when gradients were requested
};

/// -sum_t log P(target_t | target_1..target_{t-1}).
LossResult nll_loss(const AttRNParams& p, const EmbeddingBundle& b, std::span<const Eigen::Index> target_order,
                    bool with_grad = true);

/// sum_t sum_{j unranked, rel(target_t) > rel(j)} max(0, 1 - s_{t,target_t} + s_{t,j}).
LossResult hinge_loss(const AttRNParams& p, const EmbeddingBundle& b, std::span<const Eigen::Index> target_order,
                      std::span<const int> relevance, bool with_grad = true);

LossResult episode_loss(LossKind kind, const AttRNParams& p, const EmbeddingBundle& b,
                        std::span<const Eigen::Index> target_order, std::span<const int> relevance,
                        bool with_grad = true);

/// Loss value only, with the whole forward pass carried out in `Scalar`.
/// Instantiated for double and long double; the wide variant serves as a
/// low-roundoff oracle for finite-difference checks.
template <typename Scalar>
Scalar episode_loss_value(LossKind kind, const AttRNParams& p, const EmbeddingBundle& b,
                          std::span<const Eigen::Index> target_order, std::span<const int> relevance);

/// Smallest |1 - s_{t,target} + s_{t,j}| over counted hinge pairs.
double min_hinge_distance(const AttRNParams& p, const EmbeddingBundle& b, std::span<const Eigen::Index> target_order,
                          std::span<const int> relevance);

/// Re-embeds trainable channels through the parameter embedders. Bundles with
/// only frozen channels are returned unchanged.
EmbeddingBundle materialize(const AttRNParams& p, const EmbeddingBundle& b);

void validate_permutation(std::span<const Eigen::Index> order, Eigen::Index T);

// ---------------------------------------------------------------------------
// Gradient verification

/// A random small episode (M = 3, N = 2, T = 5, all dimensions <= 8) with
/// parameters ~ U(-0.5, 0.5). For the hinge loss the draw is repeated until
/// every counted margin is at least 1e-6 away from the kink.
struct GradientCheckInstance {
  AttRNParams params;
  EmbeddingBundle bundle;
  std::vector<Eigen::Index> target;
  std::vector<int> relevance;
  int draws = 1;
};

GradientCheckInstance random_check_instance(LossKind kind, std::uint64_t seed);

/// Analytic gradient against central differences of the loss evaluated in
/// long double.
GradCheckResult check_gradients(LossKind kind, const GradientCheckInstance& inst, double step = 1e-5);

// ---------------------------------------------------------------------------
// Checkpoints (EMB1 container, one tensor per parameter)

Container params_to_container(const AttRNParams& p, const nlohmann::json& extra = nlohmann::json::object());
AttRNParams params_from_container(const Container& c);
void save_params(const std::filesystem::path& path, const AttRNParams& p,
                 const nlohmann::json& extra = nlohmann::json::object());
AttRNParams load_params(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

template <typename F>
void AttRNParams::for_each_tensor(F&& f) {
  const auto vec = [&](const std::string& name, Vector& v) { f(name, Eigen::Map<Vector>(v.data(), v.size())); };
  const auto mat = [&](const std::string& name, Matrix& m) { f(name, Eigen::Map<Vector>(m.data(), m.size())); };
  mat("query_attention.weight", query_attention.weight);
  vec("query_attention.bias", query_attention.bias);
  vec("query_attention.projection", query_attention.projection);
  mat("result_attention.weight", result_attention.weight);
  vec("result_attention.bias", result_attention.bias);
  vec("result_attention.projection", result_attention.projection);
  mat("decoder.state", decoder.state);
  mat("decoder.query", decoder.query);
  mat("decoder.result", decoder.result);
  vec("decoder.bias", decoder.bias);
  mat("W", W);
  mat("V", V);
  for (std::size_t k = 0; k < embedders.size(); ++k) {
    for (std::size_t l = 0; l < embedders[k].weights.size(); ++l) {
      const std::string base = "embedder." + std::to_string(k);
      mat(base + ".weight." + std::to_string(l), embedders[k].weights[l]);
      vec(base + ".bias." + std::to_string(l), embedders[k].biases[l]);
    }
  }
}

template <typename F>
void AttRNParams::for_each_tensor(F&& f) const {
  const_cast<AttRNParams*>(this)->for_each_tensor(
      [&](const std::string& name, Eigen::Map<Vector> v) { f(name, Eigen::Map<const Vector>(v.data(), v.size())); });
}

}  // namespace attrn

#endif  // ATTRN_MODEL_HPP
