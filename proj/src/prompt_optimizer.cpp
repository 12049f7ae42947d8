#include "aeval/prompt_optimizer.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "aeval/error.hpp"
#include "aeval/rng.hpp"

namespace aeval {
namespace {

constexpr std::string_view kOpen = "<INSTRUCTION>";
constexpr std::string_view kClose = "</INSTRUCTION>";

constexpr std::string_view kExtractionReprompt =
    "Your reply did not contain a non-empty instruction between <INSTRUCTION> and "
    "</INSTRUCTION>. Reply again with only the improved instruction wrapped in those markers.";

MetricReport validate(const TaskSpec& task, ChatBackend& scorer, const std::string& text,
                      const RecordSet& validation, int version, Grouping grouping) {
  auto preds = score_records(scorer, text, validation.records(), version);
  return metric_report(task.task_id, preds, validation, grouping);
}

}  // namespace

std::string build_meta_prompt(const PromptVersion& current,
                              std::span<const FeedbackSample> samples) {
  if (samples.empty()) throw ValidationError("meta-prompt needs at least one feedback sample");
  for (const auto& s : samples) {
    if (!s.record.human_score) {
      throw ValidationError("feedback sample '" + s.record.record_id + "' is unlabeled");
    }
    if (s.prediction.failed()) {
      throw ValidationError("feedback sample '" + s.record.record_id + "' has no predicted score");
    }
  }

  std::string out =
      "You are improving the instruction given to an automatic judge that rates answers on a "
      "1-5 scale. Below is the current instruction, followed by examples it was applied to, each "
      "with the judge's predicted score and the score assigned by human annotators.\n\n"
      "### Current instruction\n";
  out += current.text;
  out += "\n\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    out += "### Sample " + std::to_string(i + 1) + "\n";
    out += "Question: " + s.record.question + "\n";
    out += "Answer: " + s.record.answer + "\n";
    out += "Predicted score: " + std::to_string(*s.prediction.predicted_score) + "\n";
    out += "Human score: " + std::to_string(*s.record.human_score) + "\n\n";
  }
  out += "Write an improved evaluation instruction that would make the judge's predicted scores "
         "agree more closely with the human scores. Keep what works, fix the systematic "
         "discrepancies you observe, and keep the 1-5 scale.\n"
         "Emit the new instruction between <INSTRUCTION> and </INSTRUCTION>.";
  return out;
}

std::string extract_instruction(std::string_view raw) {
  const auto open = raw.find(kOpen);
  if (open == std::string_view::npos) throw ExtractionError("no <INSTRUCTION> marker in reply");
  const auto body = open + kOpen.size();
  const auto close = raw.find(kClose, body);
  if (close == std::string_view::npos) throw ExtractionError("no </INSTRUCTION> marker in reply");
  std::string_view content = raw.substr(body, close - body);
  const auto b = content.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) throw ExtractionError("empty instruction between markers");
  const auto e = content.find_last_not_of(" \t\r\n");
  return std::string(content.substr(b, e - b + 1));
}

PromptLineage optimize(const TaskSpec& task, std::string_view initial, const RecordSet& train,
                       const RecordSet& validation, ChatBackend& scorer, ChatBackend& optimizer,
                       const OptimizerConfig& config) {
  if (initial.empty()) throw ValidationError("initial instruction is empty");
  if (config.samples_per_iteration <= 0) throw ValidationError("samples_per_iteration must be > 0");
  if (config.max_iterations < 0 || config.patience <= 0) {
    throw ValidationError("max_iterations must be >= 0 and patience > 0");
  }
  require_labeled(train, "optimize (train)");
  require_labeled(validation, "optimize (validation)");
  if (validation.empty()) throw ValidationError("optimize needs a non-empty validation set");
  for (const auto& r : validation) {
    if (train.find(r.record_id) != nullptr) {
      throw ValidationError("train and validation share record '" + r.record_id + "'");
    }
  }

  PromptLineage lineage;
  lineage.task_id = task.task_id;

  PromptVersion v0;
  v0.index = 0;
  v0.text = std::string(initial);
  v0.validation_report = validate(task, scorer, v0.text, validation, 0, config.grouping);
  lineage.versions.push_back(std::move(v0));

  MetricValue best = selection_value(*lineage.versions[0].validation_report, config.metric);
  int stale = 0;

  for (int l = 1; l <= config.max_iterations && !train.empty(); ++l) {
    const PromptVersion& current = lineage.versions.back();

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(l)));
    rng.shuffle(order);
    order.resize(std::min<std::size_t>(order.size(),
                                       static_cast<std::size_t>(config.samples_per_iteration)));

    std::vector<EvaluationRecord> sample;
    for (std::size_t i : order) sample.push_back(train[i]);
    auto preds = score_records(scorer, current.text, sample, current.index);

    PromptVersion next;
    next.index = l;
    next.parent = l - 1;
    for (const auto& r : sample) next.sample_record_ids.push_back(r.record_id);

    std::vector<FeedbackSample> feedback;
    for (std::size_t i = 0; i < sample.size(); ++i) {
      if (!preds[i].failed()) feedback.push_back({sample[i], preds[i]});
    }

    std::optional<std::string> text;
    if (feedback.empty()) {
      next.note = "every sampled prediction failed to parse";
    } else {
      CompletionRequest request;
      request.prompt = build_meta_prompt(current, feedback);
      request.purpose = RequestPurpose::optimize_instruction;
      request.current_instruction = current.text;
      for (int attempt = 0; attempt < 2 && !text; ++attempt) {
        if (attempt == 1) {
          request.prompt += "\n\n";
          request.prompt += kExtractionReprompt;
          request.reprompt = 1;
        }
        try {
          text = extract_instruction(optimizer.complete(request));
        } catch (const ExtractionError& e) {
          next.note = e.what();
        }
      }
    }

    if (text) {
      next.text = std::move(*text);
      next.note.clear();
      next.validation_report = validate(task, scorer, next.text, validation, l, config.grouping);
    } else {
      spdlog::warn("optimize {}: iteration {} abandoned: {}", to_string(task.task_id), l, next.note);
      next.valid = false;
      next.text = current.text;
    }

    bool improved = false;
    if (next.validation_report) {
      const MetricValue value = selection_value(*next.validation_report, config.metric);
      if (metric_better(value, best)) {
        best = value;
        lineage.best_version = l;
        improved = true;
      }
    }
    lineage.versions.push_back(std::move(next));
    stale = improved ? 0 : stale + 1;
    if (stale >= config.patience) {
      spdlog::info("optimize {}: early stop after {} stale iteration(s)", to_string(task.task_id),
                   stale);
      break;
    }
  }
  return lineage;
}

}  // namespace aeval
