#include "aeval/collaboration.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "aeval/error.hpp"
#include "aeval/parallel.hpp"

namespace aeval {

BestLLMSelection select_best_llm(const TaskSpec& task, std::span<ChatBackend* const> backends,
                                 const RecordSet& train, std::string_view instruction,
                                 const SelectionOptions& options) {
  if (backends.empty()) throw ValidationError("select_best_llm needs at least one backend");
  require_labeled(train, "select_best_llm");
  const RecordSet records = train.filter_task(task.task_id);
  if (records.empty()) throw ValidationError("select_best_llm: no train records for task");

  BestLLMSelection sel;
  sel.task_id = task.task_id;
  sel.instruction_version = options.instruction_version;
  sel.selection_metric = options.metric;

  std::vector<ChatBackend*> ordered(backends.begin(), backends.end());
  std::sort(ordered.begin(), ordered.end(),
            [](const ChatBackend* a, const ChatBackend* b) { return a->id() < b->id(); });

  MetricValue best;
  for (ChatBackend* backend : ordered) {
    auto preds = score_records(*backend, instruction, records.records(), options.instruction_version);
    const bool all_failed =
        std::all_of(preds.begin(), preds.end(), [](const auto& p) { return p.failed(); });
    if (all_failed) {
      sel.disqualified[backend->id()] = "every prediction failed to parse";
      spdlog::warn("select_best_llm: backend {} disqualified (all parses failed)", backend->id());
      continue;
    }
    MetricReport report = metric_report(task.task_id, preds, records, options.grouping);
    const MetricValue value = selection_value(report, options.metric);
    // Iteration is in id order, so strict improvement keeps the smallest id on ties.
    if (sel.chosen_backend_id.empty() || metric_better(value, best)) {
      sel.chosen_backend_id = backend->id();
      best = value;
    }
    sel.per_backend_reports.emplace(backend->id(), std::move(report));
  }
  if (sel.chosen_backend_id.empty()) {
    throw Error("select_best_llm: every backend was disqualified");
  }
  return sel;
}

ScoredPrediction predict_with_best(const BestLLMSelection& selection,
                                   std::span<ChatBackend* const> backends,
                                   const EvaluationRecord& record, std::string_view instruction,
                                   std::span<const EvaluationRecord> icl_examples) {
  if (record.task_id != selection.task_id) {
    throw ValidationError("record '" + record.record_id + "' is in task '" +
                          std::string(to_string(record.task_id)) + "', selection is for '" +
                          std::string(to_string(selection.task_id)) + "'");
  }
  for (ChatBackend* b : backends) {
    if (b->id() == selection.chosen_backend_id) {
      return score_record(*b, instruction, record, icl_examples, selection.instruction_version);
    }
  }
  throw ConfigError("chosen backend '" + selection.chosen_backend_id + "' is not configured");
}

std::string build_integration_prompt(std::string_view instruction, const EvaluationRecord& record,
                                     std::span<const ScoredPrediction> members) {
  std::string out;
  out += instruction;
  out += "\n\nSeveral judges have already evaluated the answer below. Weigh their scores and "
         "reasons and decide a single final quality score.\n\n";
  out += "### Evaluate\nQuestion: " + record.question + "\nAnswer: " + record.answer + "\n\n";
  for (std::size_t i = 0; i < members.size(); ++i) {
    out += "### Judge " + std::to_string(i + 1) + "\n";
    out += "Score: " + std::to_string(members[i].predicted_score.value_or(0)) + "\n";
    out += "Reason: " + members[i].reason + "\n\n";
  }
  const bool unanimous = std::all_of(members.begin(), members.end(), [&](const auto& m) {
    return m.predicted_score == members.front().predicted_score;
  });
  if (unanimous && !members.empty()) {
    out += "All judges agree. Your final score must be " +
           std::to_string(*members.front().predicted_score) + ".\n\n";
  }
  out += "Respond with exactly two lines and nothing else:\n"
         "SCORE: <an integer from 1 to 5>\n"
         "REASON: <a one-sentence justification>";
  return out;
}

VoteOutcome vote_integrate(const EvaluationRecord& record, std::span<ChatBackend* const> members,
                           ChatBackend& integrator, std::string_view instruction,
                           std::span<const EvaluationRecord> icl_examples,
                           int instruction_version) {
  if (members.size() < 2) {
    return VoteFallback{record.record_id, {}, "voting needs at least two member backends"};
  }
  std::vector<ScoredPrediction> all(members.size());
  parallel_for(members.size(), members.size(), [&](std::size_t i) {
    all[i] = score_record(*members[i], instruction, record, icl_examples, instruction_version);
  });
  std::vector<ScoredPrediction> surviving;
  for (auto& p : all) {
    if (!p.failed()) surviving.push_back(std::move(p));
  }
  if (surviving.size() < 2) {
    spdlog::warn("vote_integrate: record {} has {} parseable member(s); falling back",
                 record.record_id, surviving.size());
    return VoteFallback{record.record_id, std::move(surviving),
                        "fewer than two members produced a parseable score"};
  }

  CompletionRequest request;
  request.prompt = build_integration_prompt(instruction, record, surviving);
  request.purpose = RequestPurpose::integrate;
  request.record_id = record.record_id;
  for (const auto& m : surviving) request.member_scores.push_back(*m.predicted_score);

  std::string raw = integrator.complete(request);
  auto parsed = try_parse_score(raw);
  if (!parsed) {
    request.prompt += "\n\n";
    request.prompt += strict_format_directive();
    request.reprompt = 1;
    raw = integrator.complete(request);
    parsed = try_parse_score(raw);
  }
  if (!parsed) {
    throw IntegrationError("integrator '" + integrator.id() + "' gave no parseable score for '" +
                           record.record_id + "'");
  }
  VoteBundle bundle;
  bundle.record_id = record.record_id;
  bundle.member_predictions = std::move(surviving);
  bundle.integrator_backend_id = integrator.id();
  bundle.final_score = parsed->score;
  bundle.final_reason = parsed->reason;
  bundle.raw_response = std::move(raw);
  return bundle;
}

ScoredPrediction to_prediction(const VoteBundle& bundle, int instruction_version) {
  ScoredPrediction p;
  p.record_id = bundle.record_id;
  p.backend_id = "vote:" + bundle.integrator_backend_id;
  p.instruction_version = instruction_version;
  p.predicted_score = bundle.final_score;
  p.reason = bundle.final_reason;
  p.raw_response = bundle.raw_response;
  if (!bundle.member_predictions.empty()) {
    p.icl_example_ids = bundle.member_predictions.front().icl_example_ids;
  }
  return p;
}

}  // namespace aeval
