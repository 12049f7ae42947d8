#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aeval/config.hpp"
#include "aeval/dataset.hpp"
#include "aeval/embedding.hpp"
#include "aeval/llm_gateway.hpp"
#include "aeval/metrics.hpp"

namespace aeval {

// Live backends and providers for one run. Tests build their own to count
// requests or script replies.
struct Runtime {
  std::vector<std::unique_ptr<ChatBackend>> backends;  // sorted by backend_id
  std::vector<std::unique_ptr<EmbeddingProvider>> providers;

  ChatBackend& backend(std::string_view id) const;
  EmbeddingProvider& provider(std::string_view id) const;
  std::vector<ChatBackend*> backend_ptrs() const;
};

/// Backends and providers from the config. Gold-fixture mocks get the
/// dataset's human scores; with config.cache, responses and embeddings are
/// memoised under artifact_dir/cache.
Runtime make_runtime(const RunConfig& config, const RecordSet& dataset);

struct TaskOutcome {
  TaskId task_id = TaskId::dialogue;
  bool complete = false;
  std::string error;  // set when the task aborted
  std::string strategy;  // strategy actually used
  std::string backend_id;  // chosen backend, or "vote:<integrator>"
  int instruction_version = 0;
  std::optional<MetricReport> report;
  std::size_t n_predictions = 0;
  std::size_t n_failures = 0;
  std::vector<std::string> warnings;
};

struct RunArtifact {
  std::string run_id;
  std::filesystem::path run_dir;
  nlohmann::json config_snapshot;
  std::vector<TaskOutcome> tasks;  // config task order

  bool partial() const;
};

/// "run-" + 12 hex digits of the snapshot hash, unless config.run_id is set.
std::string derive_run_id(const RunConfig& config);

/// Loads the dataset, validates, builds the runtime and runs every task.
RunArtifact run_pipeline(const RunConfig& config);

/// Per task: split, optimize the instruction (validated on test), select the
/// best backend or set up voting, rank contributions and train the retriever
/// on train, then score the evaluation split with four diversity-integrated
/// examples. Each stage result is persisted under
/// artifact_dir/run_id/tasks/<task>/ and reused when present, so a rerun
/// resumes without repeating finished stages. A task that throws is recorded
/// as incomplete and the remaining tasks still run.
RunArtifact run_pipeline(const RunConfig& config, const RecordSet& dataset, Runtime& runtime);

/// Reads a previously written run directory.
RunArtifact load_run_artifact(const std::filesystem::path& run_dir);

nlohmann::json to_json(const TaskOutcome& outcome);
TaskOutcome task_outcome_from_json(const nlohmann::json& j);

}  // namespace aeval
