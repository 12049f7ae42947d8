#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aeval/dataset.hpp"
#include "aeval/llm_gateway.hpp"
#include "aeval/metrics.hpp"

namespace aeval {

struct PromptVersion {
  int index = 0;
  std::string text;
  std::optional<int> parent;
  std::optional<MetricReport> validation_report;
  std::vector<std::string> sample_record_ids;
  bool valid = true;
  std::string note;  // why an invalid version was abandoned
};

struct PromptLineage {
  TaskId task_id = TaskId::dialogue;
  std::vector<PromptVersion> versions;
  int best_version = 0;

  const PromptVersion& best() const { return versions.at(static_cast<std::size_t>(best_version)); }
};

struct FeedbackSample {
  EvaluationRecord record;
  ScoredPrediction prediction;
};

struct OptimizerConfig {
  int samples_per_iteration = 8;  // M
  int max_iterations = 5;         // L
  int patience = 2;
  std::uint64_t seed = 0;
  SelectionMetric metric = SelectionMetric::mean_of_three;
  Grouping grouping = Grouping::per_question;
};

/// Throws ValidationError on no samples, an unlabeled sample, or a failed
/// prediction.
std::string build_meta_prompt(const PromptVersion& current,
                              std::span<const FeedbackSample> samples);

/// Trimmed text between the first <INSTRUCTION>/</INSTRUCTION> pair. Throws
/// ExtractionError when the markers are missing or the content is empty.
std::string extract_instruction(std::string_view raw);

/// Sample -> predict -> meta-prompt -> new instruction, for up to
/// max_iterations rounds, validating every version on `validation`. Stops
/// after `patience` rounds without a strict improvement of the best
/// validation metric. best_version ties go to the lowest index.
PromptLineage optimize(const TaskSpec& task, std::string_view initial, const RecordSet& train,
                       const RecordSet& validation, ChatBackend& scorer, ChatBackend& optimizer,
                       const OptimizerConfig& config);

}  // namespace aeval
