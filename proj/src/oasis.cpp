#include "attrn/oasis.hpp"

#include <algorithm>
#include <numeric>

namespace attrn {

OasisModel oasis_identity(Eigen::Index dim, Eigen::Index channels) {
  if (dim < 1 || channels < 1) throw std::invalid_argument("oasis_identity: dim and channels must be positive");
  return OasisModel{Matrix::Identity(dim, dim), channels};
}

double oasis_score(const OasisModel& m, const Eigen::Ref<const Vector>& q, const Eigen::Ref<const Vector>& r) {
  if (q.size() != m.W.rows() || r.size() != m.W.cols())
    throw ShapeError("oasis_score: W " + shape_string(m.W.rows(), m.W.cols()) + ", q " + shape_string(q.size(), 1) +
                     ", r " + shape_string(r.size(), 1));
  return q.dot(m.W * r);
}

bool oasis_step(OasisModel& m, const Eigen::Ref<const Vector>& q, const Eigen::Ref<const Vector>& r_pos,
                const Eigen::Ref<const Vector>& r_neg, double lr) {
  const double loss = 1.0 - oasis_score(m, q, r_pos) + oasis_score(m, q, r_neg);
  if (loss <= 0.0) return false;
  m.W.noalias() += lr * q * (r_pos - r_neg).transpose();
  return true;
}

Vector oasis_query(const OasisModel& m, const EmbeddingBundle& b) {
  if (b.M() < m.channels)
    throw std::invalid_argument("oasis: model averages " + std::to_string(m.channels) + " channels, bundle has " +
                                std::to_string(b.M()));
  return b.query.topRows(m.channels).colwise().mean().transpose();
}

Vector oasis_candidate(const OasisModel& m, const EmbeddingBundle& b, Eigen::Index t) {
  if (b.N() < m.channels)
    throw std::invalid_argument("oasis: model averages " + std::to_string(m.channels) + " channels, bundle has " +
                                std::to_string(b.N()));
  return b.candidates.middleRows(t * b.N(), m.channels).colwise().mean().transpose();
}

Vector oasis_scores(const OasisModel& m, const EmbeddingBundle& b) {
  const Vector q = oasis_query(m, b);
  Vector s(b.T());
  for (Eigen::Index t = 0; t < b.T(); ++t) s[t] = oasis_score(m, q, oasis_candidate(m, b, t));
  return s;
}

std::vector<Eigen::Index> oasis_rank(const OasisModel& m, const EmbeddingBundle& b) {
  const Vector s = oasis_scores(m, b);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(b.T()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return s[x] > s[y]; });
  return order;
}

OasisModel oasis_train(std::span<const EmbeddingBundle> bundles, std::span<const std::vector<int>> labels,
                       const OasisConfig& config) {
  if (bundles.empty()) throw std::invalid_argument("oasis_train: no episodes");
  if (bundles.size() != labels.size())
    throw std::invalid_argument("oasis_train: " + std::to_string(labels.size()) + " label lists for " +
                                std::to_string(bundles.size()) + " episodes");
  if (config.epochs < 0) throw std::invalid_argument("oasis_train: negative epoch count");
  if (!(config.lr > 0.0)) throw std::invalid_argument("oasis_train: learning rate must be positive");
  const auto dim = bundles.front().query_dim();
  if (bundles.front().candidate_dim() != dim) throw ShapeError("oasis_train: query and candidate dimensions differ");
  OasisModel m = oasis_identity(dim, config.channels);

  Rng rng = Rng(config.seed).derive("oasis");
  std::vector<std::size_t> episodes(bundles.size());
  std::iota(episodes.begin(), episodes.end(), std::size_t{0});
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(episodes);
    for (auto e : episodes) {
      const auto& b = bundles[e];
      const auto& rel = labels[e];
      if (static_cast<Eigen::Index>(rel.size()) != b.T())
        throw std::invalid_argument("oasis_train: label count does not match T");
      const Vector q = oasis_query(m, b);
      std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
      for (Eigen::Index i = 0; i < b.T(); ++i)
        for (Eigen::Index j = 0; j < b.T(); ++j)
          if (rel[static_cast<std::size_t>(i)] > rel[static_cast<std::size_t>(j)]) pairs.emplace_back(i, j);
      rng.shuffle(pairs);
      for (const auto& [pos, neg] : pairs) oasis_step(m, q, oasis_candidate(m, b, pos), oasis_candidate(m, b, neg), config.lr);
    }
  }
  if (!m.W.allFinite()) throw NumericError("oasis_train: W diverged", 0);
  return m;
}

Container oasis_to_container(const OasisModel& m, const nlohmann::json& extra) {
  Container c;
  c.meta = extra;
  c.meta["kind"] = "oasis";
  c.meta["channels"] = m.channels;
  c.add("W", m.W);
  return c;
}

OasisModel oasis_from_container(const Container& c) {
  if (c.meta.value("kind", "") != "oasis")
    throw ParseError(ParseError::Kind::schema, 0, "$.kind: expected \"oasis\"");
  OasisModel m;
  m.W = c.at("W");
  m.channels = c.meta.value("channels", Eigen::Index{1});
  if (m.W.rows() != m.W.cols())
    throw ParseError(ParseError::Kind::dimension_mismatch, 0, "oasis: W is not square");
  return m;
}

}  // namespace attrn
