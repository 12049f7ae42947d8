#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "aeval/collaboration.hpp"
#include "aeval/dataset.hpp"
#include "aeval/icl_retriever.hpp"
#include "aeval/llm_gateway.hpp"
#include "aeval/metrics.hpp"
#include "aeval/prompt_optimizer.hpp"

// JSON forms of every persisted artifact. Optional values map to null.
namespace aeval {

using Json = nlohmann::json;

void to_json(Json& j, const ScoredPrediction& p);
void from_json(const Json& j, ScoredPrediction& p);

void to_json(Json& j, const MetricReport& r);
void from_json(const Json& j, MetricReport& r);

void to_json(Json& j, const BestLLMSelection& s);
void from_json(const Json& j, BestLLMSelection& s);

void to_json(Json& j, const VoteBundle& b);

void to_json(Json& j, const PromptVersion& v);
void from_json(const Json& j, PromptVersion& v);
void to_json(Json& j, const PromptLineage& l);
void from_json(const Json& j, PromptLineage& l);

void to_json(Json& j, const RankedExampleList& l);
void from_json(const Json& j, RankedExampleList& l);

void to_json(Json& j, const RetrieverHead& h);
void from_json(const Json& j, RetrieverHead& h);

void to_json(Json& j, const DiversityResult& r);

// File helpers. Writers create parent directories and write atomically
// (temp file + rename) so an interrupted run never leaves a torn artifact.
Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& value);
void write_text_file(const std::filesystem::path& path, const std::string& text);

std::vector<ScoredPrediction> read_predictions(const std::filesystem::path& path);
void write_predictions(const std::filesystem::path& path, const std::vector<ScoredPrediction>& preds);

std::vector<RankedExampleList> read_ranked_lists(const std::filesystem::path& path);
void write_ranked_lists(const std::filesystem::path& path,
                        const std::vector<RankedExampleList>& lists);

}  // namespace aeval
