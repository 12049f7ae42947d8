#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "aeval/metrics.hpp"
#include "aeval/pipeline.hpp"

namespace aeval {

struct OverallMetrics {
  MetricValue accuracy;
  MetricValue kendall_tau;
  MetricValue spearman_rho;
};

/// Unweighted mean over the four subtasks. A subtask without a report, or
/// with that metric undefined, contributes 0; the overall value is undefined
/// only when no subtask defines it.
OverallMetrics overall_metrics(const std::map<TaskId, MetricReport>& reports);

/// "Overall Acc." ... "Non-factoid QA Spear.", 15 names.
std::vector<std::string> report_columns();

/// Overall then the four subtasks in canonical order, three metrics each.
/// Missing values render as "/".
std::vector<std::string> report_cells(const std::map<TaskId, MetricReport>& reports);

using ReportRow = std::pair<std::string, std::map<TaskId, MetricReport>>;

/// Markdown table, one row per method.
std::string format_report_table(const std::vector<ReportRow>& rows);

std::map<TaskId, MetricReport> task_reports(const RunArtifact& artifact);

/// Table for one run plus per-task failure tallies and warnings.
std::string emit_report(const RunArtifact& artifact);

}  // namespace aeval
