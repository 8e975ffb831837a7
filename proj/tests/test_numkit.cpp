#include <gtest/gtest.h>

#include "attrn/model.hpp"
#include "attrn/numkit.hpp"
#include "oracles.hpp"

using namespace attrn;

TEST(StableSoftmax, SymmetricPair) {
  const Vector p = stable_softmax(Vector::Zero(2));
  EXPECT_EQ(p[0], 0.5);
  EXPECT_EQ(p[1], 0.5);
}

TEST(StableSoftmax, ConstantInputIsUniform) {
  for (double c : {-700.0, 0.0, 3.5, 800.0}) {
    const Vector p = stable_softmax(Vector::Constant(3, c));
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], 1.0 / 3.0, 1e-15);
  }
}

TEST(StableSoftmax, OneTwoThree) {
  const Vector v{{1.0, 2.0, 3.0}};
  const Vector p = stable_softmax(v);
  const auto ref = oracle::softmax({1.0, 2.0, 3.0});
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], ref[static_cast<std::size_t>(i)], 1e-15);
  EXPECT_NEAR(p[0], 0.09003, 1e-5);
  EXPECT_NEAR(p[1], 0.24473, 1e-5);
  EXPECT_NEAR(p[2], 0.66524, 1e-5);
}

TEST(StableSoftmax, EmptyInputThrows) { EXPECT_THROW(stable_softmax(Vector(0)), std::invalid_argument); }

TEST(StableSoftmax, SumsToOneOnWideInputs) {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    Vector v(1 + rng.uniform_int(0, 20));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-50.0, 50.0);
    const Vector p = stable_softmax(v);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_TRUE((p.array() >= 0.0).all());
    Eigen::Index a, b;
    v.maxCoeff(&a);
    p.maxCoeff(&b);
    EXPECT_EQ(a, b);
  }
}

TEST(StableSoftmax, ShiftInvariance) {
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    Vector v(5);
    for (Eigen::Index i = 0; i < 5; ++i) v[i] = rng.uniform(-10.0, 10.0);
    const double c = rng.uniform(-100.0, 100.0);
    const Vector shifted = (v.array() + c).matrix();
    EXPECT_LT((stable_softmax(v) - stable_softmax(shifted)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(TanhAffine, ZeroWeightGivesTanhBias) {
  const Vector b{{0.3, -1.2}};
  const Vector y = tanh_affine(Vector{{5.0, -7.0, 2.0}}, Matrix::Zero(2, 3), b);
  EXPECT_DOUBLE_EQ(y[0], std::tanh(0.3));
  EXPECT_DOUBLE_EQ(y[1], std::tanh(-1.2));
}

TEST(TanhAffine, IdentityAtZero) {
  const Vector y = tanh_affine(Vector::Zero(2), Matrix::Identity(2, 2), Vector::Zero(2));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
}

TEST(TanhAffine, ScalarCase) {
  const Matrix w{{1.0, 1.0}};
  const Vector y = tanh_affine(Vector{{0.5, 0.5}}, w, Vector::Zero(1));
  EXPECT_NEAR(y[0], 0.76159, 1e-5);
  EXPECT_DOUBLE_EQ(y[0], std::tanh(1.0));
}

TEST(TanhAffine, ShapeErrorNamesOperands) {
  try {
    tanh_affine(Vector::Zero(3), Matrix::Zero(2, 2), Vector::Zero(2));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("weight (2x2)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("x (3x1)"), std::string::npos) << msg;
  }
  try {
    tanh_affine(Vector::Zero(2), Matrix::Zero(2, 2), Vector::Zero(3));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("bias (3x1)"), std::string::npos);
  }
}

// L(W, b) = u . tanh(W x + b); dL/dW = ((1 - y^2) * u) x^T.
TEST(TanhAffine, GradientMatchesCentralDifferences) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index rows = 1 + rng.uniform_int(0, 3), cols = 1 + rng.uniform_int(0, 3);
    Matrix w(rows, cols);
    Vector x(cols), b(rows), u(rows);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1, 1);
    for (Eigen::Index i = 0; i < cols; ++i) x[i] = rng.uniform(-1, 1);
    for (Eigen::Index i = 0; i < rows; ++i) b[i] = rng.uniform(-1, 1), u[i] = rng.uniform(-1, 1);
    const Vector y = tanh_affine(x, w, b);
    const Vector dpre = u.cwiseProduct((1.0 - y.array().square()).matrix());
    const Matrix gw = dpre * x.transpose();
    Vector flat(w.size() + b.size());
    flat << Eigen::Map<const Vector>(w.data(), w.size()), b;
    Vector analytic(flat.size());
    analytic << Eigen::Map<const Vector>(gw.data(), gw.size()), dpre;
    const auto f = [&](const Vector& p) {
      const Matrix wp = Eigen::Map<const Matrix>(p.data(), rows, cols);
      return u.dot(tanh_affine(x, wp, p.tail(rows)));
    };
    EXPECT_LT(grad_check(f, flat, analytic, 1e-5), 1e-6);
  }
}

TEST(GradCheck, QuadraticIsExact) {
  const auto f = [](const Vector& p) { return p.dot(p); };
  EXPECT_LT(grad_check(f, Vector{{3.0}}, Vector{{6.0}}, 1e-5), 1e-9);
}

TEST(GradCheck, LinearIsExact) {
  Rng rng(3);
  Vector p(6);
  for (Eigen::Index i = 0; i < 6; ++i) p[i] = rng.uniform(-5, 5);
  const auto f = [](const Vector& x) { return x.sum(); };
  EXPECT_LT(grad_check(f, p, Vector::Ones(6), 1e-5), 1e-10);
}

TEST(GradCheck, NonFiniteEvaluationReportsCoordinate) {
  const auto f = [](const Vector& x) { return x[2] > 1.0 ? std::numeric_limits<double>::infinity() : x.sum(); };
  try {
    grad_check(f, Vector{{0.0, 0.0, 1.0}}, Vector::Ones(3), 1e-3);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.index, 2u);
  }
}

TEST(GradCheck, RejectsNonPositiveStep) {
  const auto f = [](const Vector& x) { return x.sum(); };
  EXPECT_THROW(grad_check(f, Vector::Ones(2), Vector::Ones(2), 0.0), std::invalid_argument);
}

TEST(GradCheck, AttRNHingeEpisode) {
  const auto inst = random_check_instance(LossKind::hinge, 5);
  EXPECT_LE(inst.bundle.query_dim(), 8);
  EXPECT_LE(inst.params.dims.decoder_dim, 8);
  EXPECT_LT(check_gradients(LossKind::hinge, inst, 1e-5).max_relative_error, 1e-4);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.uniform(0, 1), b.uniform(0, 1));
}

TEST(Rng, DerivedStreamsDifferByPurpose) {
  const Rng root(42);
  Rng a = root.derive("shuffle"), b = root.derive("init"), c = root.derive("shuffle");
  EXPECT_NE(a.seed(), b.seed());
  EXPECT_EQ(a.seed(), c.seed());
  EXPECT_NE(root.derive(std::uint64_t{1}).seed(), root.derive(std::uint64_t{2}).seed());
  EXPECT_EQ(a.uniform(0, 1), c.uniform(0, 1));
}

TEST(Rng, UniformIntInclusiveRange) {
  Rng rng(9);
  std::vector<int> seen(4, 0);
  for (int i = 0; i < 4000; ++i) ++seen[static_cast<std::size_t>(rng.uniform_int(0, 3))];
  for (int s : seen) EXPECT_GT(s, 800);
  EXPECT_THROW(rng.uniform_int(2, 1), std::invalid_argument);
}

TEST(Rng, ShuffleIsDeterministicPermutation) {
  std::vector<int> a(20), b(20);
  std::iota(a.begin(), a.end(), 0);
  b = a;
  Rng r1(5), r2(5);
  r1.shuffle(a);
  r2.shuffle(b);
  EXPECT_EQ(a, b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
}

TEST(Rng, ZeroSdNormalReturnsMean) {
  Rng rng(1);
  EXPECT_EQ(rng.normal(2.5, 0.0), 2.5);
}
