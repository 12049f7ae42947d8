#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aeval/dataset.hpp"
#include "aeval/llm_gateway.hpp"

namespace aeval {

// nullopt is the undefined-metric marker (e.g. a constant score vector). It
// is never silently reported as 0.
using MetricValue = std::optional<double>;

/// Kendall's tau-b with tie correction, O(n log n). Throws ValidationError on
/// length mismatch, n < 2, or non-finite input.
MetricValue kendall_tau(std::span<const double> xs, std::span<const double> ys);

/// Pearson correlation of average-rank vectors. Errors as kendall_tau.
MetricValue spearman_rho(std::span<const double> xs, std::span<const double> ys);

/// 1-based ranks; tied values share the mean of the positions they span.
std::vector<double> average_ranks(std::span<const double> values);

enum class Grouping { per_question, global };

std::string_view to_string(Grouping grouping);
Grouping parse_grouping(std::string_view name);

/// Fraction of gold-distinct record pairs (within each question, or across
/// all records) whose predicted order has the same sign. A predicted tie on
/// distinct gold counts as a disagreement. Failure-marked predictions are
/// skipped. Undefined when no pair is eligible.
MetricValue pairwise_accuracy(std::span<const ScoredPrediction> preds,
                              std::span<const EvaluationRecord> records, Grouping grouping);

struct MetricReport {
  TaskId task_id = TaskId::dialogue;
  std::size_t n_records = 0;   // predictions attempted
  std::size_t n_failures = 0;  // excluded parse failures
  MetricValue accuracy;
  MetricValue kendall_tau;
  MetricValue spearman_rho;
};

/// Throws ValidationError on an empty prediction set, an unknown or
/// unlabeled record, or a prediction for another task.
MetricReport metric_report(TaskId task_id, std::span<const ScoredPrediction> preds,
                           const RecordSet& records, Grouping grouping = Grouping::per_question);

enum class SelectionMetric { accuracy, kendall, spearman, mean_of_three };

std::string_view to_string(SelectionMetric metric);
SelectionMetric parse_selection_metric(std::string_view name);

/// mean_of_three is undefined if any component is.
MetricValue selection_value(const MetricReport& report, SelectionMetric metric);

/// True when `a` ranks strictly above `b`; undefined ranks below any value.
bool metric_better(const MetricValue& a, const MetricValue& b);

/// Four decimals ("0.7008"); "/" for undefined.
std::string format_metric(const MetricValue& value);

/// "Acc. Ken. Spear." cells separated by `sep`.
std::string report_row(const MetricReport& report, std::string_view sep = " | ");

}  // namespace aeval
