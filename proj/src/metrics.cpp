#include "attrn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>

namespace attrn {

double average_precision(std::span<const int> ranked_labels, int threshold) {
  std::size_t hits = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < ranked_labels.size(); ++i) {
    if (ranked_labels[i] < threshold) continue;
    ++hits;
    total += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  if (hits == 0) throw UndefinedMetric("average_precision: no relevant candidate");
  return total / static_cast<double>(hits);
}

namespace {

double dcg(std::span<const int> labels, std::size_t cutoff) {
  double total = 0.0;
  for (std::size_t i = 0; i < std::min(cutoff, labels.size()); ++i)
    total += (std::exp2(static_cast<double>(labels[i])) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
  return total;
}

}  // namespace

double ndcg_p(std::span<const int> ranked_labels, int p) {
  if (p < 1) throw std::invalid_argument("ndcg_p: cutoff must be >= 1");
  std::vector<int> ideal(ranked_labels.begin(), ranked_labels.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  if (ideal.empty() || ideal.front() <= 0) throw UndefinedMetric("ndcg_p: no relevant candidate");
  const auto cut = static_cast<std::size_t>(p);
  return dcg(ranked_labels, cut) / dcg(ideal, cut);
}

RunStats aggregate_runs(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("aggregate_runs: no runs");
  RunStats s;
  s.runs = values.size();
  // Welford updates keep identical runs at exactly zero spread.
  double ss = 0.0, k = 0.0;
  for (double v : values) {
    const double delta = v - s.mean;
    s.mean += delta / ++k;
    ss += delta * (v - s.mean);
  }
  if (values.size() >= 2) s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return s;
}

RunMetrics evaluate_run(std::span<const RankedLabels> rankings, int threshold, std::ostream* warn) {
  RunMetrics run;
  for (const auto& r : rankings) {
    const bool any = std::any_of(r.labels.begin(), r.labels.end(), [&](int l) { return l >= threshold; });
    if (!any) {
      ++run.skipped;
      if (warn) *warn << "warning: query " << r.query_id << " has no relevant candidate; skipped\n";
      continue;
    }
    QueryMetrics q{r.query_id, average_precision(r.labels, threshold), ndcg_p(r.labels, 3), ndcg_p(r.labels, 5)};
    run.map += q.ap;
    run.ndcg3 += q.ndcg3;
    run.ndcg5 += q.ndcg5;
    run.queries.push_back(std::move(q));
  }
  if (run.queries.empty()) throw UndefinedMetric("evaluate_run: no query with a relevant candidate");
  const auto n = static_cast<double>(run.queries.size());
  run.map /= n;
  run.ndcg3 /= n;
  run.ndcg5 /= n;
  return run;
}

MetricReport make_report(std::string name, std::vector<RunMetrics> runs, int threshold) {
  MetricReport r;
  r.name = std::move(name);
  r.threshold = threshold;
  std::vector<double> map, n3, n5;
  for (const auto& run : runs) {
    map.push_back(run.map);
    n3.push_back(run.ndcg3);
    n5.push_back(run.ndcg5);
  }
  r.map = aggregate_runs(map);
  r.ndcg3 = aggregate_runs(n3);
  r.ndcg5 = aggregate_runs(n5);
  r.runs = std::move(runs);
  return r;
}

namespace {

nlohmann::json stats_json(const RunStats& s) {
  nlohmann::json j{{"mean", s.mean}, {"error", 1.0 - s.mean}, {"runs", s.runs}};
  j["sd"] = s.sd ? nlohmann::json(*s.sd) : nlohmann::json(nullptr);
  return j;
}

std::string percent(const RunStats& s) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << 100.0 * (1.0 - s.mean);
  if (s.sd) out << " +- " << std::setprecision(2) << 100.0 * *s.sd;
  return out.str();
}

}  // namespace

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["threshold"] = threshold;
  j["map"] = stats_json(map);
  j["ndcg3"] = stats_json(ndcg3);
  j["ndcg5"] = stats_json(ndcg5);
  auto runs_json = nlohmann::json::array();
  for (const auto& run : runs) {
    auto queries = nlohmann::json::array();
    for (const auto& q : run.queries)
      queries.push_back({{"query", q.query_id}, {"ap", q.ap}, {"ndcg3", q.ndcg3}, {"ndcg5", q.ndcg5}});
    runs_json.push_back({{"map", run.map},
                         {"ndcg3", run.ndcg3},
                         {"ndcg5", run.ndcg5},
                         {"skipped", run.skipped},
                         {"queries", queries}});
  }
  j["runs"] = runs_json;
  return j;
}

std::string report_table(std::span<const MetricReport> reports) {
  std::size_t width = 6;
  for (const auto& r : reports) width = std::max(width, r.name.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width)) << "method" << "  " << std::setw(16) << "MAP err %"
      << std::setw(16) << "NDCG3 err %" << "NDCG5 err %\n";
  for (const auto& r : reports)
    out << std::setw(static_cast<int>(width)) << r.name << "  " << std::setw(16) << percent(r.map) << std::setw(16)
        << percent(r.ndcg3) << percent(r.ndcg5) << "\n";
  return out.str();
}

std::string MetricReport::table() const { return report_table(std::span<const MetricReport>(this, 1)); }

}  // namespace attrn
