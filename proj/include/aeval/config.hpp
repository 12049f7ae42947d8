#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aeval/collaboration.hpp"
#include "aeval/dataset.hpp"
#include "aeval/embedding.hpp"
#include "aeval/icl_retriever.hpp"
#include "aeval/llm_gateway.hpp"
#include "aeval/prompt_optimizer.hpp"

namespace aeval {

enum class Strategy { best_llm, voting };

std::string_view to_string(Strategy strategy);
Strategy parse_strategy(std::string_view name);

struct TaskRunSpec {
  TaskSpec spec;
  Strategy strategy = Strategy::best_llm;
};

struct OptimizerSettings {
  bool enabled = true;
  OptimizerConfig config;
  std::string backend_id;       // scorer; empty means the first backend
  std::string meta_backend_id;  // instruction writer; empty means backend_id
};

struct RetrieverSettings {
  std::string provider_id;  // empty means the first provider
  std::string backend_id;   // contribution-ranking judge; empty means the selected backend
  TrainerConfig trainer;
  std::size_t max_queries = 0;     // 0 = every train record
  std::size_t max_candidates = 0;  // 0 = every other train record
  std::size_t examples = 4;
};

struct RunConfig {
  std::string run_id;  // empty: derived from the config content
  std::uint64_t seed = 0;
  std::vector<TaskRunSpec> tasks;
  std::vector<BackendConfig> backends;
  std::vector<ProviderConfig> providers;
  SplitFractions fractions;
  std::uint64_t split_seed = 0;
  OptimizerSettings optimizer;
  SelectionOptions selection;
  std::string integrator_backend_id;  // empty means the first backend
  RetrieverSettings retriever;
  std::string evaluation_split = "final";  // "final" or "test"
  std::filesystem::path dataset;
  std::filesystem::path artifact_dir = "runs";
  bool cache = true;
  // Mock backends listed here get a fixture built from the dataset's gold
  // scores (a perfect judge, for pipeline checks).
  std::vector<std::string> gold_fixture_backends;
};

/// Relative paths resolve against `base_dir`. Throws ConfigError.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical snapshot; parse_run_config(to_json(c)) reproduces c.
nlohmann::json run_config_to_json(const RunConfig& config);

/// Referenced ids resolve, ids are unique, tasks are valid. Performs no
/// LLM calls and touches no files.
void validate_run_config(const RunConfig& config);

/// --seed: replaces the run seed and every derived seed.
void apply_seed_override(RunConfig& config, std::uint64_t seed);

BackendConfig parse_backend_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ProviderConfig parse_provider_config(const nlohmann::json& j);

}  // namespace aeval
