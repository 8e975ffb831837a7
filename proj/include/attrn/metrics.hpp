// Average precision, NDCG_p and multi-run aggregation. Reports use the
// error-rate convention (one minus the metric).
#ifndef ATTRN_METRICS_HPP
#define ATTRN_METRICS_HPP

#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace attrn {

struct UndefinedMetric : std::domain_error {
  using std::domain_error::domain_error;
};

/// Labels in ranked order; a label counts as relevant when >= `threshold`.
double average_precision(std::span<const int> ranked_labels, int threshold = 1);

/// Graded gain 2^rel - 1, discount log2(i + 1), normalized by the ideal
/// (descending-label) order. Cutoffs beyond the list length use the list.
double ndcg_p(std::span<const int> ranked_labels, int p);

struct RunStats {
  double mean = 0.0;
  std::optional<double> sd;  // sample sd; absent for a single run
  std::size_t runs = 0;
};

/// Sample mean and (n - 1)-denominator standard deviation.
RunStats aggregate_runs(std::span<const double> values);

struct QueryMetrics {
  std::string query_id;
  double ap = 0.0;
  double ndcg3 = 0.0;
  double ndcg5 = 0.0;
};

struct RankedLabels {
  std::string query_id;
  std::vector<int> labels;  // in ranked order
};

struct RunMetrics {
  std::vector<QueryMetrics> queries;
  double map = 0.0;
  double ndcg3 = 0.0;
  double ndcg5 = 0.0;
  std::size_t skipped = 0;  // queries with no relevant candidate
};

/// MAP binarizes labels at `threshold`; NDCG uses the graded labels. Queries
/// without a relevant candidate are skipped with a warning on `warn`.
RunMetrics evaluate_run(std::span<const RankedLabels> rankings, int threshold = 1, std::ostream* warn = nullptr);

struct MetricReport {
  std::string name;
  int threshold = 1;
  std::vector<RunMetrics> runs;
  RunStats map, ndcg3, ndcg5;

  nlohmann::json to_json() const;
  /// Aligned table of error rates in percent: MAP, NDCG_3, NDCG_5.
  std::string table() const;
};

MetricReport make_report(std::string name, std::vector<RunMetrics> runs, int threshold = 1);

/// Error-rate table over several reports, one row each.
std::string report_table(std::span<const MetricReport> reports);

}  // namespace attrn

#endif  // ATTRN_METRICS_HPP
