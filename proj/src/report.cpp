#include "aeval/report.hpp"

#include <sstream>

namespace aeval {

namespace {

MetricValue mean_over_tasks(const std::map<TaskId, MetricReport>& reports,
                            MetricValue MetricReport::*field) {
  double sum = 0.0;
  bool any = false;
  for (TaskId t : kAllTasks) {
    auto it = reports.find(t);
    if (it == reports.end() || !(it->second.*field)) continue;
    sum += *(it->second.*field);
    any = true;
  }
  if (!any) return std::nullopt;
  return sum / static_cast<double>(kAllTasks.size());
}

}  // namespace

OverallMetrics overall_metrics(const std::map<TaskId, MetricReport>& reports) {
  return {mean_over_tasks(reports, &MetricReport::accuracy),
          mean_over_tasks(reports, &MetricReport::kendall_tau),
          mean_over_tasks(reports, &MetricReport::spearman_rho)};
}

std::vector<std::string> report_columns() {
  std::vector<std::string> names;
  auto add = [&](const std::string& group) {
    names.push_back(group + " Acc.");
    names.push_back(group + " Ken.");
    names.push_back(group + " Spear.");
  };
  add("Overall");
  for (TaskId t : kAllTasks) add(std::string(default_display_name(t)));
  return names;
}

std::vector<std::string> report_cells(const std::map<TaskId, MetricReport>& reports) {
  std::vector<std::string> cells;
  const OverallMetrics overall = overall_metrics(reports);
  cells.push_back(format_metric(overall.accuracy));
  cells.push_back(format_metric(overall.kendall_tau));
  cells.push_back(format_metric(overall.spearman_rho));
  for (TaskId t : kAllTasks) {
    auto it = reports.find(t);
    if (it == reports.end()) {
      cells.insert(cells.end(), 3, "/");
      continue;
    }
    cells.push_back(format_metric(it->second.accuracy));
    cells.push_back(format_metric(it->second.kendall_tau));
    cells.push_back(format_metric(it->second.spearman_rho));
  }
  return cells;
}

std::string format_report_table(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << "| Method |";
  for (const auto& c : report_columns()) out << ' ' << c << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < report_columns().size(); ++i) out << "---|";
  out << '\n';
  for (const auto& [method, reports] : rows) {
    out << "| " << method << " |";
    for (const auto& cell : report_cells(reports)) out << ' ' << cell << " |";
    out << '\n';
  }
  return out.str();
}

std::map<TaskId, MetricReport> task_reports(const RunArtifact& artifact) {
  std::map<TaskId, MetricReport> reports;
  for (const auto& t : artifact.tasks) {
    if (t.report) reports.emplace(t.task_id, *t.report);
  }
  return reports;
}

std::string emit_report(const RunArtifact& artifact) {
  std::ostringstream out;
  out << format_report_table({{artifact.run_id, task_reports(artifact)}});
  out << '\n';
  for (const auto& t : artifact.tasks) {
    out << "- " << to_string(t.task_id) << ": ";
    if (!t.complete) {
      out << "incomplete (" << t.error << ")";
    } else {
      out << t.strategy << " via " << t.backend_id << ", prompt v" << t.instruction_version
          << ", " << t.n_predictions << " predictions, " << t.n_failures << " parse failures";
    }
    out << '\n';
    for (const auto& w : t.warnings) out << "  - warning: " << w << '\n';
  }
  if (artifact.partial()) out << "\nRun is partial: at least one task did not complete.\n";
  return out.str();
}

}  // namespace aeval
