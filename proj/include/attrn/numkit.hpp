// Dense numerical substrate shared by every model module: Eigen aliases,
// activations, seeded randomness and a central-difference gradient checker.
#ifndef ATTRN_NUMKIT_HPP
#define ATTRN_NUMKIT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

namespace attrn {

template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Vector = VectorT<double>;
using Matrix = MatrixT<double>;

// ---------------------------------------------------------------------------
// Errors

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A non-finite value showed up; `where` is the coordinate/step that produced it.
struct NumericError : std::runtime_error {
  NumericError(const std::string& what, std::size_t where)
      : std::runtime_error(what), index(where) {}
  std::size_t index;
};

std::string shape_string(Eigen::Index rows, Eigen::Index cols);

template <typename A, typename B>
void require_same_size(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b,
                       std::string_view what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": " + shape_string(a.rows(), a.cols()) + " vs " +
                     shape_string(b.rows(), b.cols()));
  }
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

// ---------------------------------------------------------------------------
// Activations

/// Softmax with max-subtraction. Throws on empty input.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> stable_softmax(
    const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  if (v.size() == 0) throw std::invalid_argument("stable_softmax: empty input");
  const Scalar peak = v.maxCoeff();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out = (v.array() - peak).exp().matrix();
  out /= out.sum();
  return out;
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> log_softmax(
    const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  if (v.size() == 0) throw std::invalid_argument("log_softmax: empty input");
  const Scalar peak = v.maxCoeff();
  const Scalar lse = peak + std::log((v.array() - peak).exp().sum());
  return (v.array() - lse).matrix();
}

/// Backward pass of softmax: given p = softmax(x) and dL/dp, returns dL/dx.
template <typename P, typename G>
Eigen::Matrix<typename P::Scalar, Eigen::Dynamic, 1> softmax_backward(
    const Eigen::MatrixBase<P>& p, const Eigen::MatrixBase<G>& grad_p) {
  return (p.array() * (grad_p.array() - p.dot(grad_p))).matrix();
}

/// tanh(weight * x + bias)
template <typename DX, typename DW, typename DB>
Eigen::Matrix<typename DX::Scalar, Eigen::Dynamic, 1> tanh_affine(
    const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DW>& weight,
    const Eigen::MatrixBase<DB>& bias) {
  if (weight.cols() != x.size()) {
    throw ShapeError("tanh_affine: weight " + shape_string(weight.rows(), weight.cols()) +
                     " vs x " + shape_string(x.size(), 1));
  }
  if (bias.size() != weight.rows()) {
    throw ShapeError("tanh_affine: weight " + shape_string(weight.rows(), weight.cols()) +
                     " vs bias " + shape_string(bias.size(), 1));
  }
  return (weight * x + bias).array().tanh().matrix();
}

// ---------------------------------------------------------------------------
// Randomness

/// Deterministic generator. The engine is std::mt19937_64 seeded through one
/// splitmix64 round; child streams are derived with `derive`, which mixes the
/// parent seed with a purpose tag (FNV-1a of the tag) through splitmix64.
/// Streams are bit-reproducible on one standard library; the distribution
/// objects are libstdc++'s, so other platforms agree only statistically.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  Rng derive(std::string_view purpose) const;
  Rng derive(std::uint64_t index) const;

  double uniform(double lo, double hi);
  double normal(double mean, double stddev);
  /// Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  template <typename T>
  void shuffle(std::span<T> values) {
    // Fisher-Yates with our own integer draws so the order does not depend on
    // std::shuffle's unspecified algorithm.
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(values[i - 1], values[j]);
    }
  }
  template <typename T>
  void shuffle(std::vector<T>& values) {
    shuffle(std::span<T>(values));
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

// ---------------------------------------------------------------------------
// Gradient checking

using ScalarFunction = std::function<double(const Vector&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  Eigen::Index worst_index = -1;
  Vector finite_difference;
};

/// Central differences against an analytic gradient. Relative error per
/// coordinate is |fd - an| / max(1e-8, |fd| + |an|).
///
/// `f` may return a wider type than double (e.g. long double); the difference
/// quotient is then formed in that type, which keeps roundoff in f out of the
/// comparison for coordinates with very small gradients.
template <typename F>
GradCheckResult grad_check_detailed(F&& f, const Vector& p, const Vector& analytic_grad, double step) {
  using R = std::decay_t<decltype(f(p))>;
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  require_same_size(p, analytic_grad, "grad_check");

  GradCheckResult result;
  result.finite_difference.resize(p.size());
  Vector probe = p;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    probe[i] = p[i] + step;
    const R up = f(probe);
    const double hi = probe[i];
    probe[i] = p[i] - step;
    const R down = f(probe);
    const double lo = probe[i];
    probe[i] = p[i];
    if (!std::isfinite(static_cast<double>(up)) || !std::isfinite(static_cast<double>(down))) {
      throw NumericError("grad_check: non-finite evaluation at coordinate " + std::to_string(i),
                         static_cast<std::size_t>(i));
    }
    // hi - lo is the step actually taken after rounding p +- step.
    const double fd = static_cast<double>((up - down) / static_cast<R>(hi - lo));
    result.finite_difference[i] = fd;
    const double an = analytic_grad[i];
    const double rel = std::abs(fd - an) / std::max(1e-8, std::abs(fd) + std::abs(an));
    if (result.worst_index < 0 || rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_index = i;
    }
  }
  return result;
}

template <typename F>
double grad_check(F&& f, const Vector& p, const Vector& analytic_grad, double step) {
  return grad_check_detailed(std::forward<F>(f), p, analytic_grad, step).max_relative_error;
}

}  // namespace attrn

#endif  // ATTRN_NUMKIT_HPP
