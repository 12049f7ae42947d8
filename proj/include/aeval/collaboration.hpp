#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "aeval/dataset.hpp"
#include "aeval/llm_gateway.hpp"
#include "aeval/metrics.hpp"

namespace aeval {

struct BestLLMSelection {
  TaskId task_id = TaskId::dialogue;
  int instruction_version = 0;
  std::string chosen_backend_id;
  SelectionMetric selection_metric = SelectionMetric::mean_of_three;
  std::map<std::string, MetricReport> per_backend_reports;
  std::map<std::string, std::string> disqualified;  // backend_id -> reason
};

struct SelectionOptions {
  SelectionMetric metric = SelectionMetric::mean_of_three;
  Grouping grouping = Grouping::per_question;
  int instruction_version = 0;
};

/// Scores every train record with every backend and keeps the argmax of the
/// selection metric. Ties go to the lexicographically smallest backend_id.
/// A backend whose predictions all fail to parse is disqualified; when every
/// backend is, throws Error.
BestLLMSelection select_best_llm(const TaskSpec& task, std::span<ChatBackend* const> backends,
                                 const RecordSet& train, std::string_view instruction,
                                 const SelectionOptions& options = {});

/// Scores with the chosen backend. `backends` must contain it.
ScoredPrediction predict_with_best(const BestLLMSelection& selection,
                                   std::span<ChatBackend* const> backends,
                                   const EvaluationRecord& record, std::string_view instruction,
                                   std::span<const EvaluationRecord> icl_examples);

struct VoteBundle {
  std::string record_id;
  std::vector<ScoredPrediction> member_predictions;
  std::string integrator_backend_id;
  int final_score = 0;
  std::string final_reason;
  std::string raw_response;
};

/// Fewer than two members produced a parseable score.
struct VoteFallback {
  std::string record_id;
  std::vector<ScoredPrediction> surviving;
  std::string reason;
};

using VoteOutcome = std::variant<VoteBundle, VoteFallback>;

/// Judges listed as "Judge 1..N" with score and reason, the target pair,
/// and a SCORE/REASON directive. When all judges agree the prompt pins the
/// answer to that score.
std::string build_integration_prompt(std::string_view instruction, const EvaluationRecord& record,
                                     std::span<const ScoredPrediction> members);

/// Members score concurrently, then the integrator merges their verdicts.
/// Throws IntegrationError if the integrator stays unparseable after one
/// reprompt.
VoteOutcome vote_integrate(const EvaluationRecord& record, std::span<ChatBackend* const> members,
                           ChatBackend& integrator, std::string_view instruction,
                           std::span<const EvaluationRecord> icl_examples = {},
                           int instruction_version = 0);

/// Prediction view of a bundle, attributed to "vote:<integrator>".
ScoredPrediction to_prediction(const VoteBundle& bundle, int instruction_version);

}  // namespace aeval
