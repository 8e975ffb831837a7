#include <gtest/gtest.h>

#include <filesystem>

#include "attrn/model.hpp"
#include "oracles.hpp"

using namespace attrn;

namespace {

ModelDims dims(Eigen::Index M, Eigen::Index N, Eigen::Index dq, Eigen::Index dr, Eigen::Index dz = 4, Eigen::Index hidden = 3) {
  ModelDims d;
  d.M = M;
  d.N = N;
  d.query_dim = dq;
  d.candidate_dim = dr;
  d.decoder_dim = dz;
  d.attention_hidden = hidden;
  return d;
}

AttRNParams random_params(const ModelDims& d, std::uint64_t seed, double scale = 0.5, Pooling pool = Pooling::mean) {
  Rng rng(seed);
  AttRNParams p = init_params(d, pool, rng, InitScheme::small_random);
  p.for_each_tensor([&](const std::string&, Eigen::Map<Vector> v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-scale, scale);
  });
  return p;
}

EmbeddingBundle random_bundle(const ModelDims& d, Eigen::Index T, std::uint64_t seed) {
  Rng rng(seed);
  Matrix q(d.M, d.query_dim), r(T * d.N, d.candidate_dim);
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = rng.uniform(-1, 1);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = rng.uniform(-1, 1);
  return make_bundle(q, r, d.N);
}

std::vector<Eigen::Index> identity_order(Eigen::Index T) {
  std::vector<Eigen::Index> o(static_cast<std::size_t>(T));
  std::iota(o.begin(), o.end(), Eigen::Index{0});
  return o;
}

AttentionState state_from(const oracle::Step& s, Eigen::Index t) {
  AttentionState st;
  st.t = t;
  st.alpha = Eigen::Map<const Vector>(s.alpha.data(), static_cast<Eigen::Index>(s.alpha.size()));
  st.beta = Eigen::Map<const Vector>(s.beta.data(), static_cast<Eigen::Index>(s.beta.size()));
  st.z = Eigen::Map<const Vector>(s.z.data(), static_cast<Eigen::Index>(s.z.size()));
  st.c = Eigen::Map<const Vector>(s.c.data(), static_cast<Eigen::Index>(s.c.size()));
  st.d_bar = Eigen::Map<const Vector>(s.d_bar.data(), static_cast<Eigen::Index>(s.d_bar.size()));
  return st;
}

void expect_near(const Vector& a, const oracle::Vec& b, double tol) {
  ASSERT_EQ(static_cast<std::size_t>(a.size()), b.size());
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(a[static_cast<Eigen::Index>(i)], b[i], tol) << "entry " << i;
}

}  // namespace

// --- init -------------------------------------------------------------------

TEST(Init, PaperZeros) {
  Rng rng(1);
  const AttRNParams p = init_params(dims(2, 3, 10, 10), Pooling::mean, rng, InitScheme::paper_zeros);
  EXPECT_EQ(p.W, Matrix::Identity(10, 10));
  EXPECT_TRUE(p.query_attention.projection.isZero(0));
  EXPECT_TRUE(p.result_attention.projection.isZero(0));
  EXPECT_TRUE(p.query_attention.weight.isZero(0));
  EXPECT_TRUE(p.decoder.state.isZero(0));
  EXPECT_TRUE(p.V.isZero(0));
}

TEST(Init, PaperZerosNeedsSquareW) {
  Rng rng(1);
  EXPECT_THROW(init_params(dims(1, 1, 3, 4), Pooling::mean, rng, InitScheme::paper_zeros), std::invalid_argument);
}

TEST(Init, SmallRandomIsSeeded) {
  Rng a(5), b(5), c(6);
  const auto d = dims(2, 2, 3, 4);
  const auto pa = init_params(d, Pooling::mean, a, InitScheme::small_random);
  EXPECT_EQ(pa, init_params(d, Pooling::mean, b, InitScheme::small_random));
  EXPECT_FALSE(pa == init_params(d, Pooling::mean, c, InitScheme::small_random));
  EXPECT_EQ(pa.W, Matrix::Identity(4, 3));
  EXPECT_LE(pa.decoder.state.cwiseAbs().maxCoeff(), 0.05);
  EXPECT_GT(pa.query_attention.weight.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Init, PaperZerosAttentionStaysUniform) {
  Rng rng(1);
  const auto d = dims(3, 2, 4, 4);
  const auto p = init_params(d, Pooling::mean, rng, InitScheme::paper_zeros);
  const auto trace = forward_episode(p, random_bundle(d, 6, 2));
  for (const auto& step : trace.steps) {
    for (Eigen::Index m = 0; m < 3; ++m) EXPECT_EQ(step.state.alpha[m], 1.0 / 3.0);
    for (Eigen::Index n = 0; n < 2; ++n) EXPECT_EQ(step.state.beta[n], 0.5);
  }
}

// --- attention_step ---------------------------------------------------------

TEST(AttentionStep, ZeroWeightsGiveUniformAndMeanQuery) {
  Rng rng(1);
  const auto d = dims(3, 2, 4, 5);
  AttRNParams p = random_params(d, 3);
  p.query_attention.weight.setZero();
  p.query_attention.bias.setZero();
  p.result_attention.projection.setZero();
  const auto b = random_bundle(d, 4, 4);
  const auto out = attention_step(p, b, initial_state(p));
  for (Eigen::Index m = 0; m < 3; ++m) EXPECT_NEAR(out.alpha[m], 1.0 / 3.0, 1e-15);
  for (Eigen::Index n = 0; n < 2; ++n) EXPECT_NEAR(out.beta[n], 0.5, 1e-15);
  const Vector mean = b.query.colwise().mean().transpose();
  EXPECT_LT((out.c - mean).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(AttentionStep, SaturatedAlphaPicksOneChannelExactly) {
  const auto d = dims(3, 1, 2, 2, 2, 1);
  Rng rng(1);
  AttRNParams p = init_params(d, Pooling::mean, rng, InitScheme::paper_zeros);
  // Hidden unit reads coordinate 0 of q_m (input layout: z, q_m, ...).
  p.query_attention.weight(0, d.decoder_dim) = 10.0;
  p.query_attention.projection[0] = 1000.0;
  const Matrix q{{-1.0, 0.3}, {1.0, 0.7}, {-1.0, -0.2}};
  const auto b = make_bundle(q, Matrix::Ones(2, 2), 1);
  const auto out = attention_step(p, b, initial_state(p));
  EXPECT_EQ(out.alpha[1], 1.0);
  EXPECT_LT(out.alpha[0], 1e-300);  // vectorized exp bottoms out at a subnormal, not 0
  EXPECT_EQ(out.c[0], q(1, 0));
  EXPECT_EQ(out.c[1], q(1, 1));
}

TEST(AttentionStep, MatchesScalarOracle) {
  const auto d = dims(2, 2, 2, 2, 3, 3);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto p = random_params(d, seed);
    const auto b = random_bundle(d, 3, seed + 100);
    const auto pooled = oracle::pool(b, p.pooling);
    const auto prev = initial_state(p);
    const auto ref = oracle::step(p, b, pooled, oracle::vec(prev.z), oracle::vec(prev.alpha), oracle::vec(prev.beta));
    const auto out = attention_step(p, b, prev);
    expect_near(out.alpha, ref.alpha, 1e-12);
    expect_near(out.beta, ref.beta, 1e-12);
    expect_near(out.c, ref.c, 1e-12);
    expect_near(out.d_bar, ref.d_bar, 1e-12);
    // and from a non-initial state
    const auto ref2 = oracle::step(p, b, pooled, ref.z, ref.alpha, ref.beta);
    const auto out2 = attention_step(p, b, state_from(ref, 1));
    expect_near(out2.alpha, ref2.alpha, 1e-12);
    expect_near(out2.beta, ref2.beta, 1e-12);
  }
}

TEST(AttentionStep, ShapeMismatch) {
  const auto p = random_params(dims(2, 2, 2, 2), 1);
  EXPECT_THROW(attention_step(p, random_bundle(dims(2, 2, 3, 2), 3, 1), initial_state(p)), ShapeError);
}

// --- pooling ----------------------------------------------------------------

TEST(Pool, ConstantInput) {
  const Vector v{{0.25, -0.5, 2.0}};
  Matrix r(6, 3);
  for (int i = 0; i < 6; ++i) r.row(i) = v.transpose();
  const auto b = make_bundle(Matrix::Ones(1, 3), r, 2);
  for (auto mode : {Pooling::mean, Pooling::max}) {
    EXPECT_EQ(pool_g(b, mode), v);
    EXPECT_EQ(pool_h(b, 0, mode), v);
    EXPECT_EQ(pool_h(b, 1, mode), v);
  }
}

TEST(Pool, TwoVectors) {
  const auto b = make_bundle(Matrix::Ones(1, 2), Matrix{{1.0, 0.0}, {0.0, 1.0}}, 1);
  EXPECT_EQ(pool_h(b, 0, Pooling::mean), (Vector{{0.5, 0.5}}));
  EXPECT_EQ(pool_h(b, 0, Pooling::max), (Vector{{1.0, 1.0}}));
}

TEST(Pool, MeanMatchesFlatSummation) {
  const auto d = dims(2, 3, 4, 5);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto b = random_bundle(d, 7, seed);
    Vector flat = Vector::Zero(5);
    for (Eigen::Index i = 0; i < b.candidates.rows(); ++i) flat += b.candidates.row(i).transpose();
    flat /= static_cast<double>(b.candidates.rows());
    EXPECT_LT((pool_g(b, Pooling::mean) - flat).cwiseAbs().maxCoeff(), 1e-12);
    const auto ref = oracle::pool(b, Pooling::max);
    expect_near(pool_g(b, Pooling::max), ref.g, 0.0);
    for (Eigen::Index n = 0; n < 3; ++n) expect_near(pool_h(b, n, Pooling::max), ref.h[static_cast<std::size_t>(n)], 0.0);
  }
}

// --- decoder_step -----------------------------------------------------------

TEST(Decoder, ZeroWeights) {
  auto p = random_params(dims(1, 1, 3, 3, 3), 2);
  p.decoder.state.setZero();
  p.decoder.query.setZero();
  p.decoder.result.setZero();
  const Vector z = decoder_step(p, Vector::Ones(3), Vector::Ones(3), Vector::Ones(3));
  for (int i = 0; i < 3; ++i) EXPECT_EQ(z[i], std::tanh(p.decoder.bias[i]));
  p.decoder.bias.setZero();
  EXPECT_TRUE(decoder_step(p, Vector::Ones(3), Vector::Ones(3), Vector::Ones(3)).isZero(0));
}

TEST(Decoder, MatchesScalarOracle) {
  const auto d = dims(1, 1, 3, 3, 3);
  const auto p = random_params(d, 7, 1.0);
  Rng rng(8);
  oracle::Vec z(3), c(3), db(3);
  for (int i = 0; i < 3; ++i) z[i] = rng.uniform(-1, 1), c[i] = rng.uniform(-1, 1), db[i] = rng.uniform(-1, 1);
  const auto A = oracle::matvec(p.decoder.state, z), B = oracle::matvec(p.decoder.query, c), D = oracle::matvec(p.decoder.result, db);
  oracle::Vec ref;
  for (int i = 0; i < 3; ++i) ref.push_back(std::tanh(A[i] + B[i] + D[i] + p.decoder.bias[i]));
  const auto map = [](const oracle::Vec& v) { return Vector(Eigen::Map<const Vector>(v.data(), 3)); };
  expect_near(decoder_step(p, map(z), map(c), map(db)), ref, 1e-14);
}

TEST(Decoder, ShapeMismatch) {
  const auto p = random_params(dims(1, 1, 3, 3, 3), 2);
  EXPECT_THROW(decoder_step(p, Vector::Ones(2), Vector::Ones(3), Vector::Ones(3)), ShapeError);
}

// --- score_candidates -------------------------------------------------------

TEST(Score, IdentityBilinearCase) {
  const auto d = dims(1, 2, 3, 3, 2);
  auto p = random_params(d, 3);
  p.W = Matrix::Identity(3, 3);
  p.V.setZero();
  const Vector c{{0.5, -1.0, 2.0}};
  Matrix r = Matrix::Zero(4, 3);
  r.row(0) = c.transpose();  // candidate 0, channel 0
  r.row(2) = Vector{{1.0, 1.0, 1.0}}.transpose();
  const auto b = make_bundle(Matrix::Ones(1, 3), r, 2);
  AttentionState s = initial_state(p);
  s.beta = Vector{{1.0, 0.0}};
  s.c = c;
  s.z = Vector::Ones(2);
  const std::vector<Eigen::Index> unranked = {0, 1};
  const auto out = score_candidates(p, b, s, unranked);
  EXPECT_EQ(out.scores[0], c.squaredNorm());
  EXPECT_EQ(out.scores[1], c.sum());
}

TEST(Score, ZeroStateReducesToBilinear) {
  const auto d = dims(2, 2, 3, 4, 5);
  const auto p = random_params(d, 4);
  const auto b = random_bundle(d, 3, 5);
  AttentionState s = initial_state(p);
  s.c = Vector{{0.2, -0.4, 0.9}};
  s.beta = Vector{{0.3, 0.7}};
  const std::vector<Eigen::Index> unranked = {2, 0};
  const auto out = score_candidates(p, b, s, unranked);
  for (int k = 0; k < 2; ++k) {
    const auto t = unranked[static_cast<std::size_t>(k)];
    const Vector dvec = 0.3 * b.r(t, 0) + 0.7 * b.r(t, 1);
    EXPECT_NEAR(out.scores[k], dvec.dot(p.W * s.c), 1e-14);
  }
}

TEST(Score, TwoCandidatesMatchOracle) {
  const auto d = dims(1, 2, 2, 2, 2);
  const auto p = random_params(d, 9, 1.0);
  const auto b = random_bundle(d, 2, 10);
  Rng rng(11);
  AttentionState s = initial_state(p);
  s.beta = Vector{{0.35, 0.65}};
  s.c = Vector{{rng.uniform(-1, 1), rng.uniform(-1, 1)}};
  s.z = Vector{{rng.uniform(-1, 1), rng.uniform(-1, 1)}};
  oracle::Vec scores;
  for (Eigen::Index t = 0; t < 2; ++t) {
    oracle::Vec dv(2, 0.0);
    for (Eigen::Index n = 0; n < 2; ++n)
      for (Eigen::Index j = 0; j < 2; ++j) dv[static_cast<std::size_t>(j)] += s.beta[n] * b.r(t, n)[j];
    scores.push_back(oracle::dot(dv, oracle::matvec(p.W, oracle::vec(s.c))) + oracle::dot(dv, oracle::matvec(p.V, oracle::vec(s.z))));
  }
  const std::vector<Eigen::Index> unranked = {0, 1};
  const auto out = score_candidates(p, b, s, unranked);
  expect_near(out.scores, scores, 1e-14);
  expect_near(out.probabilities, oracle::softmax(scores), 1e-14);
}

TEST(Score, EmptyUnrankedSetRejected) {
  const auto d = dims(1, 1, 2, 2, 2);
  const auto p = random_params(d, 1);
  EXPECT_THROW(score_candidates(p, random_bundle(d, 2, 1), initial_state(p), {}), std::invalid_argument);
}

// --- forward_episode --------------------------------------------------------

TEST(Forward, LastPickIsForced) {
  const auto d = dims(2, 2, 3, 3);
  const auto p = random_params(d, 1);
  const auto trace = forward_episode(p, random_bundle(d, 2, 2), std::vector<Eigen::Index>{1, 0});
  ASSERT_EQ(trace.steps.size(), 2u);
  ASSERT_EQ(trace.steps[1].scores.probabilities.size(), 1);
  EXPECT_EQ(trace.steps[1].scores.probabilities[0], 1.0);
  EXPECT_EQ(trace.steps[1].log_probability, 0.0);
}

TEST(Forward, TeacherForcedLogProbsMatchOracle) {
  const auto d = dims(3, 2, 3, 4, 4, 3);
  const std::vector<Eigen::Index> target = {2, 0, 1};
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto p = random_params(d, seed, 0.8);
    const auto b = random_bundle(d, 3, seed * 7);
    const auto ref = oracle::run(p, b);
    const auto trace = forward_episode(p, b, target);
    std::vector<bool> ranked(3, false);
    double total = 0.0;
    for (std::size_t t = 0; t < 3; ++t) {
      const double lp = oracle::log_prob(ref[t].scores, ranked, static_cast<std::size_t>(target[t]));
      EXPECT_NEAR(trace.steps[t].log_probability, lp, 1e-12);
      ranked[static_cast<std::size_t>(target[t])] = true;
      total += lp;
    }
    EXPECT_NEAR(trace.log_likelihood, total, 1e-12);
    EXPECT_EQ(trace.order, target);
  }
}

TEST(Forward, FreeRunningTakesArgmaxLowestIndexOnTies) {
  const auto d = dims(1, 1, 2, 2, 2);
  Rng rng(1);
  const auto p = init_params(d, Pooling::mean, rng, InitScheme::paper_zeros);
  const auto b = make_bundle(Matrix{{1.0, 0.0}}, Matrix{{0.0, 1.0}, {1.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}}, 1);
  EXPECT_EQ(forward_episode(p, b).order, (std::vector<Eigen::Index>{1, 3, 0, 2}));
}

TEST(Forward, InvalidPermutation) {
  const auto d = dims(1, 1, 2, 2, 2);
  const auto p = random_params(d, 1);
  const auto b = random_bundle(d, 3, 1);
  EXPECT_THROW(forward_episode(p, b, std::vector<Eigen::Index>{0, 0, 1}), std::invalid_argument);
  EXPECT_THROW(forward_episode(p, b, std::vector<Eigen::Index>{0, 1}), std::invalid_argument);
  EXPECT_THROW(forward_episode(p, b, std::vector<Eigen::Index>{0, 1, 3}), std::invalid_argument);
}

TEST(Forward, ScoreTableMatchesTrace) {
  const auto d = dims(2, 3, 3, 3);
  const auto p = random_params(d, 4);
  const auto b = random_bundle(d, 5, 4);
  const auto table = score_table(p, b);
  const auto trace = forward_episode(p, b, std::vector<Eigen::Index>{4, 2, 0, 1, 3});
  for (std::size_t t = 0; t < 5; ++t) {
    const auto& s = trace.steps[t].scores;
    for (Eigen::Index k = 0; k < s.scores.size(); ++k)
      EXPECT_EQ(s.scores[k], table.scores(static_cast<Eigen::Index>(t), s.candidates[static_cast<std::size_t>(k)]));
  }
}

// --- losses -----------------------------------------------------------------

TEST(Nll, TwoCandidatesOnlyFirstStepCounts) {
  const auto d = dims(2, 2, 3, 3);
  const auto p = random_params(d, 3);
  const auto b = random_bundle(d, 2, 3);
  const std::vector<Eigen::Index> target = {1, 0};
  const auto ref = oracle::run(p, b);
  const double step1 = -oracle::log_prob(ref[0].scores, {false, false}, 1);
  EXPECT_NEAR(nll_loss(p, b, target, false).loss, step1, 1e-12);
}

TEST(Nll, UniformSelectionGivesLogFactorial) {
  const auto d = dims(2, 2, 3, 3);
  Rng rng(1);
  const auto p = init_params(d, Pooling::mean, rng, InitScheme::paper_zeros);
  Matrix r(12, 3);
  for (int i = 0; i < 12; ++i) r.row(i) = Vector{{0.2, 0.5, -0.1}}.transpose();
  const auto b = make_bundle(Matrix::Ones(2, 3), r, 2);
  const auto loss = nll_loss(p, b, identity_order(6), false).loss;
  EXPECT_NEAR(loss, std::lgamma(7.0), 1e-12);
}

TEST(Nll, MatchesOracle) {
  const auto d = dims(3, 2, 4, 3, 5, 4);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto p = random_params(d, seed, 0.7, seed % 2 ? Pooling::mean : Pooling::max);
    const auto b = random_bundle(d, 5, seed + 50);
    const std::vector<Eigen::Index> target = {3, 1, 4, 0, 2};
    EXPECT_NEAR(nll_loss(p, b, target, false).loss, oracle::nll(oracle::run(p, b), target), 1e-11);
  }
}

// Adding v to every candidate embedding shifts step t's scores by v . (W c_t + V z_t)
// when g and h_n do not feed the attention or the decoder.
TEST(Nll, ShiftInvariance) {
  const auto d = dims(2, 2, 3, 3, 4, 3);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto p = random_params(d, seed, 0.8);
    p.query_attention.weight.middleCols(d.decoder_dim + d.query_dim, d.candidate_dim).setZero();
    p.result_attention.weight.middleCols(d.decoder_dim + d.query_dim, d.candidate_dim).setZero();
    p.decoder.result.setZero();
    auto b = random_bundle(d, 5, seed);
    const std::vector<Eigen::Index> target = {2, 4, 0, 3, 1};
    const double base = nll_loss(p, b, target, false).loss;
    const auto table = score_table(p, b).scores;
    Rng rng(seed);
    const Vector v{{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)}};
    for (Eigen::Index i = 0; i < b.candidates.rows(); ++i) b.candidates.row(i) += v.transpose();
    const auto shifted = score_table(p, b).scores;
    const Vector delta = (shifted - table).col(0);
    for (Eigen::Index j = 1; j < 5; ++j) EXPECT_LT(((shifted - table).col(j) - delta).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GT(delta.cwiseAbs().maxCoeff(), 1e-3);
    EXPECT_NEAR(nll_loss(p, b, target, false).loss, base, 1e-10);
  }
}

TEST(Nll, NonFiniteScoresRaiseNumericError) {
  const auto d = dims(1, 1, 2, 2, 2);
  auto p = random_params(d, 1);
  p.W *= 1e308;
  const auto b = make_bundle(Matrix{{1e10, 1e10}}, Matrix{{1e10, 1e10}, {-1e10, 1e10}}, 1);
  EXPECT_THROW(nll_loss(p, b, identity_order(2)), NumericError);
}

TEST(Hinge, SatisfiedMarginsGiveZero) {
  const auto d = dims(1, 1, 2, 2, 2);
  Rng rng(1);
  const auto p = init_params(d, Pooling::mean, rng, InitScheme::paper_zeros);
  const auto b = make_bundle(Matrix{{2.0, 0.0}}, Matrix{{0.0, 2.0}, {2.0, 0.0}, {0.0, 2.0}, {2.0, 0.0}}, 1);
  const std::vector<int> rel = {0, 1, 0, 1};
  const std::vector<Eigen::Index> target = {1, 3, 0, 2};
  const auto res = hinge_loss(p, b, target, rel);
  EXPECT_EQ(res.loss, 0.0);
  EXPECT_EQ(res.grad.flatten().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Hinge, EqualScoresCountStrictPairs) {
  const auto d = dims(2, 2, 3, 3);
  Rng rng(1);
  const auto p = init_params(d, Pooling::mean, rng, InitScheme::paper_zeros);
  Matrix r(12, 3);
  for (int i = 0; i < 12; ++i) r.row(i) = Vector{{0.3, 0.1, 0.2}}.transpose();
  const auto b = make_bundle(Matrix::Ones(2, 3), r, 2);
  const std::vector<int> rel = {2, 0, 1, 0, 2, 1};
  const std::vector<Eigen::Index> target = {0, 4, 2, 5, 1, 3};
  // pairs: each 2 beats four lower labels (8), each 1 beats two zeros (4)
  EXPECT_EQ(hinge_loss(p, b, target, rel, false).loss, 12.0);
}

TEST(Hinge, MatchesOracle) {
  const auto d = dims(3, 2, 4, 3, 5, 4);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto p = random_params(d, seed, 0.7);
    const auto b = random_bundle(d, 5, seed + 60);
    const std::vector<int> rel = {1, 0, 2, 0, 1};
    const std::vector<Eigen::Index> target = {2, 0, 4, 1, 3};
    EXPECT_NEAR(hinge_loss(p, b, target, rel, false).loss, oracle::hinge(oracle::run(p, b), target, rel), 1e-11);
  }
}

TEST(Hinge, KinkSubgradientIsZero) {
  // One pair with margin exactly at the kink: s_pos - s_neg = 1.
  const auto d = dims(1, 1, 1, 1, 1, 1);
  Rng rng(1);
  const auto p = init_params(d, Pooling::mean, rng, InitScheme::paper_zeros);
  const auto b = make_bundle(Matrix{{1.0}}, Matrix{{1.0}, {0.0}}, 1);
  const std::vector<int> rel = {1, 0};
  const auto res = hinge_loss(p, b, std::vector<Eigen::Index>{0, 1}, rel);
  EXPECT_EQ(res.loss, 0.0);
  EXPECT_EQ(res.grad.flatten().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Gradients, BothLossesMatchFiniteDifferences) {
  for (auto kind : {LossKind::softmax, LossKind::hinge})
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto inst = random_check_instance(kind, seed);
      EXPECT_EQ(inst.bundle.M(), 3);
      EXPECT_EQ(inst.bundle.N(), 2);
      EXPECT_EQ(inst.bundle.T(), 5);
      EXPECT_LT(check_gradients(kind, inst).max_relative_error, 1e-4) << loss_name(kind) << " seed " << seed;
    }
}

TEST(Gradients, HingeInstancesAvoidTheKink) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto inst = random_check_instance(LossKind::hinge, seed);
    EXPECT_GE(min_hinge_distance(inst.params, inst.bundle, inst.target, inst.relevance), 1e-6);
  }
}

TEST(Gradients, TrainableEmbedderChannel) {
  for (auto kind : {LossKind::softmax, LossKind::hinge}) {
    GradientCheckInstance inst = random_check_instance(kind, 3);
    const auto d = dims(2, 2, 4, 4, 3, 3);
    inst.params = random_params(d, 17, 0.5);
    Rng rng(18);
    const std::vector<Eigen::Index> sizes = {3, 5, 4};
    inst.params.embedders = {make_mlp(sizes, Activation::tanh, OutputMode::softmax, rng, 1.0), MlpEmbedder{}};
    const Eigen::Index T = 4;
    inst.bundle = random_bundle(d, T, 19);
    inst.bundle.query_frozen = {false, true};
    inst.bundle.candidate_frozen = {false, true};
    inst.bundle.query_raw = Vector{{0.3, -0.7, 0.9}};
    inst.bundle.candidate_raw.resize(T, 3);
    for (Eigen::Index i = 0; i < inst.bundle.candidate_raw.size(); ++i) inst.bundle.candidate_raw.data()[i] = rng.uniform(-1, 1);
    inst.relevance = {1, 0, 1, 0};
    inst.target = {0, 2, 1, 3};
    if (kind == LossKind::hinge) ASSERT_GE(min_hinge_distance(inst.params, inst.bundle, inst.target, inst.relevance), 1e-6);
    const auto res = episode_loss(kind, inst.params, inst.bundle, inst.target, inst.relevance);
    EXPECT_GT(res.grad.embedders[0].weights[0].cwiseAbs().maxCoeff(), 0.0);
    EXPECT_LT(check_gradients(kind, inst).max_relative_error, 1e-4);
    // materialize replaces exactly the trainable channel
    const auto m = materialize(inst.params, inst.bundle);
    EXPECT_EQ(m.query.row(1), inst.bundle.query.row(1));
    EXPECT_LT((m.query.row(0).transpose() - mlp_forward(inst.params.embedders[0], inst.bundle.query_raw)).cwiseAbs().maxCoeff(), 1e-15);
  }
}

// --- invariants -------------------------------------------------------------

TEST(Invariants, AttentionWeightsAreDistributions) {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto d = dims(1 + seed % 4, 1 + seed % 3, 3, 4, 4, 3);
    const auto p = random_params(d, seed, 2.0, seed % 2 ? Pooling::mean : Pooling::max);
    for (const auto& s : score_table(p, random_bundle(d, 2 + seed % 5, seed)).states) {
      EXPECT_NEAR(s.alpha.sum(), 1.0, 1e-12);
      EXPECT_NEAR(s.beta.sum(), 1.0, 1e-12);
      EXPECT_GE(s.alpha.minCoeff(), 0.0);
      EXPECT_GE(s.beta.minCoeff(), 0.0);
    }
  }
}

TEST(Invariants, QueryChannelPermutationEquivariance) {
  const auto d = dims(4, 2, 3, 3, 4, 3);
  const std::vector<Eigen::Index> perm = {2, 0, 3, 1};
  const std::vector<Eigen::Index> target = {1, 3, 0, 2};
  const std::vector<int> rel = {1, 2, 0, 1};
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto p = random_params(d, seed, 1.0, seed % 2 ? Pooling::mean : Pooling::max);
    const auto b = random_bundle(d, 4, seed);
    auto pb = b;
    for (Eigen::Index m = 0; m < 4; ++m) pb.query.row(m) = b.query.row(perm[static_cast<std::size_t>(m)]);
    const auto ta = score_table(p, b), tb = score_table(p, pb);
    EXPECT_LT((ta.scores - tb.scores).cwiseAbs().maxCoeff(), 1e-12);
    for (std::size_t t = 0; t < ta.states.size(); ++t) {
      for (Eigen::Index m = 0; m < 4; ++m) EXPECT_NEAR(tb.states[t].alpha[m], ta.states[t].alpha[perm[static_cast<std::size_t>(m)]], 1e-12);
      EXPECT_LT((ta.states[t].c - tb.states[t].c).cwiseAbs().maxCoeff(), 1e-12);
    }
    for (auto kind : {LossKind::softmax, LossKind::hinge})
      EXPECT_NEAR(episode_loss(kind, p, b, target, rel, false).loss, episode_loss(kind, p, pb, target, rel, false).loss, 1e-12);
  }
}

TEST(Invariants, CandidatePermutationEquivariance) {
  const auto d = dims(2, 3, 3, 3, 4, 3);
  const std::vector<Eigen::Index> perm = {4, 2, 0, 1, 3};  // new t holds old perm[t]
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto p = random_params(d, seed, 1.0);
    const auto b = random_bundle(d, 5, seed);
    auto pb = b;
    for (Eigen::Index t = 0; t < 5; ++t)
      for (Eigen::Index n = 0; n < 3; ++n) pb.r(t, n) = b.r(perm[static_cast<std::size_t>(t)], n);
    const std::vector<Eigen::Index> all = {0, 1, 2, 3, 4};
    const auto sa = score_table(p, b), sb = score_table(p, pb);
    const auto pa = score_candidates(p, b, sa.states[0], all).probabilities;
    const auto pp = score_candidates(p, pb, sb.states[0], all).probabilities;
    for (Eigen::Index t = 0; t < 5; ++t) EXPECT_NEAR(pp[t], pa[perm[static_cast<std::size_t>(t)]], 1e-12);
    const std::vector<int> labels = {1, 0, 0, 1, 0};
    std::vector<int> plabels(5);
    for (std::size_t t = 0; t < 5; ++t) plabels[t] = labels[static_cast<std::size_t>(perm[t])];
    const auto ga = forward_episode(p, b).order, gb = forward_episode(p, pb).order;
    for (std::size_t t = 0; t < 5; ++t) {
      EXPECT_EQ(perm[static_cast<std::size_t>(gb[t])], ga[t]);
      EXPECT_EQ(plabels[static_cast<std::size_t>(gb[t])], labels[static_cast<std::size_t>(ga[t])]);
    }
  }
}

TEST(Invariants, OneHotBetaWithoutVIsBilinear) {
  const auto d = dims(2, 3, 3, 4, 6, 3);
  auto p = random_params(d, 2);
  p.V.setZero();
  const auto b = random_bundle(d, 4, 3);
  AttentionState s = initial_state(p);
  s.beta = Vector{{0.0, 1.0, 0.0}};
  s.c = Vector{{0.4, -0.2, 0.8}};
  s.z = Vector::Constant(6, 0.9);
  const std::vector<Eigen::Index> unranked = {0, 1, 2, 3};
  const auto out = score_candidates(p, b, s, unranked);
  for (Eigen::Index t = 0; t < 4; ++t) EXPECT_NEAR(out.scores[t], b.r(t, 1).dot(p.W * s.c), 1e-14);
}

// --- checkpoints ------------------------------------------------------------

TEST(Checkpoint, RoundTrip) {
  auto p = random_params(dims(2, 3, 4, 5), 8, 0.5, Pooling::max);
  Rng rng(1);
  const std::vector<Eigen::Index> sizes = {3, 4};
  p.embedders = {MlpEmbedder{}, make_mlp(sizes, Activation::relu, OutputMode::last_hidden, rng, 0.3)};
  const auto path = std::filesystem::temp_directory_path() / "attrn_model_ckpt.emb";
  save_params(path, p, {{"loss", "hinge"}});
  const auto back = load_params(path);
  EXPECT_EQ(back, p);
  EXPECT_EQ(back.pooling, Pooling::max);
  EXPECT_EQ(read_container(path).meta["loss"], "hinge");
  std::filesystem::remove(path);
}

TEST(Params, FlattenAssignRoundTrip) {
  auto p = random_params(dims(2, 2, 3, 3), 5);
  const Vector flat = p.flatten();
  EXPECT_EQ(flat.size(), p.num_coefficients());
  auto q = p.zeros_like();
  q.assign(flat);
  EXPECT_EQ(q, p);
  q.add_scaled(p, -1.0);
  EXPECT_EQ(q.flatten().cwiseAbs().maxCoeff(), 0.0);
}
