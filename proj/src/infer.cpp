#include "attrn/infer.hpp"

#include <algorithm>
#include <numeric>

namespace attrn {

namespace {

void require_square(const Matrix& scores) {
  if (scores.rows() != scores.cols() || scores.rows() < 1)
    throw ShapeError("score table must be T x T, got " + shape_string(scores.rows(), scores.cols()));
}

// Higher log-likelihood first, then the lexicographically smaller prefix.
bool better(double la, const std::vector<Eigen::Index>& a, double lb, const std::vector<Eigen::Index>& b) {
  if (la != lb) return la > lb;
  return a < b;
}

}  // namespace

double order_log_likelihood(const Matrix& scores, std::span<const Eigen::Index> order) {
  require_square(scores);
  validate_permutation(order, scores.rows());
  std::vector<bool> ranked(static_cast<std::size_t>(scores.rows()), false);
  double total = 0.0;
  for (Eigen::Index t = 0; t < scores.rows(); ++t) {
    const auto chosen = order[static_cast<std::size_t>(t)];
    total += selection_log_prob(scores.row(t).transpose(), ranked, chosen);
    ranked[static_cast<std::size_t>(chosen)] = true;
  }
  return total;
}

Ranking rank_greedy(const Matrix& scores) {
  require_square(scores);
  const auto T = scores.rows();
  Ranking out;
  std::vector<bool> ranked(static_cast<std::size_t>(T), false);
  for (Eigen::Index t = 0; t < T; ++t) {
    Eigen::Index best = -1;
    for (Eigen::Index j = 0; j < T; ++j) {
      if (ranked[static_cast<std::size_t>(j)]) continue;
      if (best < 0 || scores(t, j) > scores(t, best)) best = j;
    }
    out.log_likelihood += selection_log_prob(scores.row(t).transpose(), ranked, best);
    ranked[static_cast<std::size_t>(best)] = true;
    out.order.push_back(best);
  }
  return out;
}

Ranking rank_greedy(const AttRNParams& p, const EmbeddingBundle& b) { return rank_greedy(score_table(p, b).scores); }

Ranking rank_beam(const Matrix& scores, int width) {
  require_square(scores);
  if (width < 1) throw std::invalid_argument("rank_beam: width must be >= 1, got " + std::to_string(width));
  const auto T = scores.rows();
  std::vector<BeamPath> beam(1);
  beam[0].ranked.assign(static_cast<std::size_t>(T), false);

  for (Eigen::Index t = 0; t < T; ++t) {
    std::vector<BeamPath> next;
    for (const auto& path : beam) {
      for (Eigen::Index j = 0; j < T; ++j) {
        if (path.ranked[static_cast<std::size_t>(j)]) continue;
        BeamPath grown = path;
        grown.log_likelihood += selection_log_prob(scores.row(t).transpose(), path.ranked, j);
        grown.prefix.push_back(j);
        grown.ranked[static_cast<std::size_t>(j)] = true;
        next.push_back(std::move(grown));
      }
    }
    const auto keep = std::min(next.size(), static_cast<std::size_t>(width));
    std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(keep), next.end(),
                      [](const BeamPath& a, const BeamPath& b) {
                        return better(a.log_likelihood, a.prefix, b.log_likelihood, b.prefix);
                      });
    next.resize(keep);
    beam = std::move(next);
  }
  return Ranking{beam.front().prefix, beam.front().log_likelihood};
}

Ranking rank_beam(const AttRNParams& p, const EmbeddingBundle& b, int width) {
  return rank_beam(score_table(p, b).scores, width);
}

Ranking rank_exhaustive(const Matrix& scores) {
  require_square(scores);
  const auto T = scores.rows();
  if (T > kMaxExhaustiveT)
    throw SizeError("rank_exhaustive: T = " + std::to_string(T) + " exceeds the limit of " +
                    std::to_string(kMaxExhaustiveT));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(T));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Ranking best;
  bool have = false;
  // next_permutation visits orders lexicographically, so a strict improvement
  // test keeps the smallest sequence among equal log-likelihoods.
  do {
    std::vector<bool> ranked(static_cast<std::size_t>(T), false);
    double ll = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
      const auto j = order[static_cast<std::size_t>(t)];
      ll += selection_log_prob(scores.row(t).transpose(), ranked, j);
      ranked[static_cast<std::size_t>(j)] = true;
    }
    if (!have || ll > best.log_likelihood) {
      best = Ranking{order, ll};
      have = true;
    }
  } while (std::next_permutation(order.begin(), order.end()));
  return best;
}

Ranking rank_exhaustive(const AttRNParams& p, const EmbeddingBundle& b) {
  if (b.T() > kMaxExhaustiveT)
    throw SizeError("rank_exhaustive: T = " + std::to_string(b.T()) + " exceeds the limit of " +
                    std::to_string(kMaxExhaustiveT));
  return rank_exhaustive(score_table(p, b).scores);
}

}  // namespace attrn
