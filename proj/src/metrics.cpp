#include "aeval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <unordered_map>

#include "aeval/error.hpp"

namespace aeval {
namespace {

void check_pair(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw ValidationError("correlation inputs differ in length (" + std::to_string(xs.size()) +
                          " vs " + std::to_string(ys.size()) + ")");
  }
  if (xs.size() < 2) throw ValidationError("correlation needs at least 2 observations");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) {
      throw ValidationError("correlation input has a non-finite value at index " +
                            std::to_string(i));
    }
  }
}

bool constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

// Sum over runs of equal adjacent values of t(t-1)/2.
template <typename Eq>
std::int64_t tied_pairs(const std::vector<std::size_t>& order, Eq eq) {
  std::int64_t total = 0;
  std::size_t run = 1;
  for (std::size_t i = 1; i <= order.size(); ++i) {
    if (i < order.size() && eq(order[i - 1], order[i])) {
      ++run;
    } else {
      total += static_cast<std::int64_t>(run) * static_cast<std::int64_t>(run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

// Stable merge sort of `idx` by ys, returning the number of inversions.
std::int64_t merge_count(std::vector<std::size_t>& idx, std::vector<std::size_t>& buf,
                         std::span<const double> ys, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = merge_count(idx, buf, ys, lo, mid) + merge_count(idx, buf, ys, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (ys[idx[j]] < ys[idx[i]]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buf[k++] = idx[j++];
    } else {
      buf[k++] = idx[i++];
    }
  }
  while (i < mid) buf[k++] = idx[i++];
  while (j < hi) buf[k++] = idx[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo),
            buf.begin() + static_cast<std::ptrdiff_t>(hi),
            idx.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace

MetricValue kendall_tau(std::span<const double> xs, std::span<const double> ys) {
  check_pair(xs, ys);
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return xs[a] != xs[b] ? xs[a] < xs[b] : ys[a] < ys[b];
  });

  const auto n0 = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  const std::int64_t ties_x = tied_pairs(order, [&](auto a, auto b) { return xs[a] == xs[b]; });
  const std::int64_t ties_xy = tied_pairs(
      order, [&](auto a, auto b) { return xs[a] == xs[b] && ys[a] == ys[b]; });

  std::vector<std::size_t> buf(n);
  const std::int64_t discordant = merge_count(order, buf, ys, 0, n);
  const std::int64_t ties_y = tied_pairs(order, [&](auto a, auto b) { return ys[a] == ys[b]; });

  const std::int64_t denom_x = n0 - ties_x;
  const std::int64_t denom_y = n0 - ties_y;
  if (denom_x == 0 || denom_y == 0) return std::nullopt;
  const std::int64_t numerator = n0 - ties_x - ties_y + ties_xy - 2 * discordant;
  return static_cast<double>(numerator) /
         std::sqrt(static_cast<double>(denom_x) * static_cast<double>(denom_y));
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // Positions i..j-1 (0-based) share rank mean((i+1)..j).
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

MetricValue spearman_rho(std::span<const double> xs, std::span<const double> ys) {
  check_pair(xs, ys);
  if (constant(xs) || constant(ys)) return std::nullopt;
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double n = static_cast<double>(rx.size());
  // Average ranks always have mean (n+1)/2.
  const double mean = 0.5 * (n + 1.0);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean;
    const double dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return sxy / std::sqrt(sxx * syy);
}

std::string_view to_string(Grouping g) { return g == Grouping::global ? "global" : "per_question"; }

Grouping parse_grouping(std::string_view name) {
  if (name == "per_question") return Grouping::per_question;
  if (name == "global") return Grouping::global;
  throw ValidationError("unknown grouping '" + std::string(name) + "'");
}

MetricValue pairwise_accuracy(std::span<const ScoredPrediction> preds,
                              std::span<const EvaluationRecord> records, Grouping grouping) {
  std::unordered_map<std::string_view, const EvaluationRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.record_id, &r);

  struct Item {
    int gold;
    int pred;
  };
  std::map<std::string_view, std::vector<Item>> groups;
  for (const auto& p : preds) {
    auto it = by_id.find(p.record_id);
    if (it == by_id.end()) {
      throw ValidationError("prediction for unknown record '" + p.record_id + "'");
    }
    const EvaluationRecord& r = *it->second;
    if (!r.human_score) {
      throw ValidationError("accuracy needs labels; record '" + r.record_id + "' is unlabeled");
    }
    if (p.failed()) continue;
    const std::string_view key =
        grouping == Grouping::per_question ? std::string_view(r.question_id) : std::string_view();
    groups[key].push_back({*r.human_score, *p.predicted_score});
  }

  std::size_t eligible = 0, agree = 0;
  for (const auto& [key, items] : groups) {
    for (std::size_t a = 0; a < items.size(); ++a) {
      for (std::size_t b = a + 1; b < items.size(); ++b) {
        const int gold = items[a].gold - items[b].gold;
        if (gold == 0) continue;
        ++eligible;
        const int pred = items[a].pred - items[b].pred;
        if ((gold > 0 && pred > 0) || (gold < 0 && pred < 0)) ++agree;
      }
    }
  }
  if (eligible == 0) return std::nullopt;
  return static_cast<double>(agree) / static_cast<double>(eligible);
}

MetricReport metric_report(TaskId task_id, std::span<const ScoredPrediction> preds,
                           const RecordSet& records, Grouping grouping) {
  if (preds.empty()) throw ValidationError("metric report needs at least one prediction");
  MetricReport report;
  report.task_id = task_id;
  report.n_records = preds.size();

  std::vector<ScoredPrediction> scored;
  std::vector<EvaluationRecord> matched;
  std::vector<double> predicted, gold;
  for (const auto& p : preds) {
    const EvaluationRecord* r = records.find(p.record_id);
    if (r == nullptr) throw ValidationError("prediction for unknown record '" + p.record_id + "'");
    if (r->task_id != task_id) {
      throw ValidationError("record '" + r->record_id + "' is not in task '" +
                            std::string(to_string(task_id)) + "'");
    }
    if (!r->human_score) {
      throw ValidationError("metrics need labels; record '" + r->record_id + "' is unlabeled");
    }
    if (p.failed()) {
      ++report.n_failures;
      continue;
    }
    scored.push_back(p);
    matched.push_back(*r);
    predicted.push_back(*p.predicted_score);
    gold.push_back(*r->human_score);
  }

  report.accuracy = pairwise_accuracy(scored, matched, grouping);
  if (scored.size() >= 2) {
    report.kendall_tau = kendall_tau(predicted, gold);
    report.spearman_rho = spearman_rho(predicted, gold);
  }
  return report;
}

std::string_view to_string(SelectionMetric m) {
  switch (m) {
    case SelectionMetric::accuracy: return "accuracy";
    case SelectionMetric::kendall: return "kendall";
    case SelectionMetric::spearman: return "spearman";
    case SelectionMetric::mean_of_three: return "mean_of_three";
  }
  return "";
}

SelectionMetric parse_selection_metric(std::string_view name) {
  for (auto m : {SelectionMetric::accuracy, SelectionMetric::kendall, SelectionMetric::spearman,
                 SelectionMetric::mean_of_three}) {
    if (to_string(m) == name) return m;
  }
  throw ValidationError("unknown selection metric '" + std::string(name) + "'");
}

MetricValue selection_value(const MetricReport& r, SelectionMetric m) {
  switch (m) {
    case SelectionMetric::accuracy: return r.accuracy;
    case SelectionMetric::kendall: return r.kendall_tau;
    case SelectionMetric::spearman: return r.spearman_rho;
    case SelectionMetric::mean_of_three:
      if (!r.accuracy || !r.kendall_tau || !r.spearman_rho) return std::nullopt;
      return (*r.accuracy + *r.kendall_tau + *r.spearman_rho) / 3.0;
  }
  return std::nullopt;
}

bool metric_better(const MetricValue& a, const MetricValue& b) {
  if (!a) return false;
  if (!b) return true;
  return *a > *b;
}

std::string format_metric(const MetricValue& value) {
  if (!value) return "/";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *value);
  return buf;
}

std::string report_row(const MetricReport& r, std::string_view sep) {
  std::string out = format_metric(r.accuracy);
  out += sep;
  out += format_metric(r.kendall_tau);
  out += sep;
  out += format_metric(r.spearman_rho);
  return out;
}

}  // namespace aeval
