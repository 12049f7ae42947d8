#include "aeval/dataset.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <set>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "aeval/error.hpp"
#include "aeval/rng.hpp"

namespace aeval {

using nlohmann::json;

std::string_view to_string(TaskId task) {
  switch (task) {
    case TaskId::dialogue: return "dialogue";
    case TaskId::text_expansion: return "text_expansion";
    case TaskId::summary: return "summary";
    case TaskId::non_factoid_qa: return "non_factoid_qa";
  }
  return "unknown";
}

TaskId parse_task_id(std::string_view name) {
  for (TaskId t : kAllTasks) {
    if (to_string(t) == name) return t;
  }
  throw ValidationError("unknown task id '" + std::string(name) + "'");
}

std::string_view default_display_name(TaskId task) {
  switch (task) {
    case TaskId::dialogue: return "Dialogue";
    case TaskId::text_expansion: return "Text Expansion";
    case TaskId::summary: return "Summary";
    case TaskId::non_factoid_qa: return "Non-factoid QA";
  }
  return "";
}

std::string_view default_instruction(TaskId task) {
  switch (task) {
    case TaskId::dialogue:
      return "You are an expert judge of conversational responses. Rate how well the response "
             "continues the dialogue on a scale of 1 (very poor) to 5 (excellent). Consider "
             "relevance to the context, coherence, helpfulness, and naturalness.";
    case TaskId::text_expansion:
      return "You are an expert judge of writing quality. The question gives a short text or "
             "prompt and the answer expands it. Rate the expansion from 1 (very poor) to 5 "
             "(excellent), considering faithfulness to the source, fluency, richness of detail, "
             "and logical flow.";
    case TaskId::summary:
      return "You are an expert judge of summaries. The question contains a source document "
             "and the answer is a summary of it. Rate the summary from 1 (very poor) to 5 "
             "(excellent), considering coverage of key information, factual consistency with "
             "the source, conciseness, and readability.";
    case TaskId::non_factoid_qa:
      return "You are an expert judge of open-ended answers. Rate how well the answer "
             "addresses the question from 1 (very poor) to 5 (excellent), considering "
             "correctness, completeness, depth of explanation, and clarity.";
  }
  return "";
}

void validate_task_specs(std::span<const TaskSpec> tasks) {
  std::set<TaskId> seen;
  for (const auto& t : tasks) {
    if (!seen.insert(t.task_id).second) {
      throw ValidationError("duplicate task id '" + std::string(to_string(t.task_id)) + "'");
    }
    if (t.initial_instruction.empty()) {
      throw ValidationError("task '" + std::string(to_string(t.task_id)) +
                            "' has an empty initial instruction");
    }
  }
}

int EvaluationRecord::gold() const {
  if (!human_score) throw ValidationError("record '" + record_id + "' has no human_score");
  return *human_score;
}

RecordSet::RecordSet(std::vector<EvaluationRecord> records, Provenance provenance)
    : records_(std::move(records)), provenance_(std::move(provenance)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!index_.emplace(records_[i].record_id, i).second) {
      throw ValidationError("duplicate record_id '" + records_[i].record_id + "'");
    }
  }
}

const EvaluationRecord* RecordSet::find(std::string_view record_id) const {
  auto it = index_.find(record_id);
  return it == index_.end() ? nullptr : &records_[it->second];
}

RecordSet RecordSet::filter_task(TaskId task) const {
  std::vector<EvaluationRecord> out;
  for (const auto& r : records_) {
    if (r.task_id == task) out.push_back(r);
  }
  return RecordSet(std::move(out), provenance_);
}

RecordSet RecordSet::without(std::string_view record_id) const {
  std::vector<EvaluationRecord> out;
  out.reserve(records_.size());
  for (const auto& r : records_) {
    if (r.record_id != record_id) out.push_back(r);
  }
  return RecordSet(std::move(out), provenance_);
}

namespace {

std::string required_string(const json& obj, const char* field) {
  auto it = obj.find(field);
  if (it == obj.end()) throw ValidationError(std::string("missing field '") + field + "'");
  if (!it->is_string()) throw ValidationError(std::string("field '") + field + "' must be a string");
  return it->get<std::string>();
}

std::string utc_now_iso8601() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

EvaluationRecord parse_record_line(std::string_view line) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON: ") + e.what());
  }
  if (!obj.is_object()) throw ValidationError("line is not a JSON object");

  EvaluationRecord r;
  r.task_id = parse_task_id(required_string(obj, "task"));
  r.question_id = required_string(obj, "question_id");
  r.record_id = required_string(obj, "record_id");
  r.question = required_string(obj, "question");
  r.answer = required_string(obj, "answer");
  if (r.record_id.empty()) throw ValidationError("record_id is empty");
  if (r.question.empty()) throw ValidationError("question is empty");
  if (r.answer.empty()) throw ValidationError("answer is empty");

  if (auto it = obj.find("human_score"); it != obj.end() && !it->is_null()) {
    if (!it->is_number_integer()) {
      throw ValidationError("human_score must be an integer in [1,5]");
    }
    const auto score = it->get<std::int64_t>();
    if (score < 1 || score > 5) {
      throw ValidationError("human_score " + std::to_string(score) + " outside [1,5]");
    }
    r.human_score = static_cast<int>(score);
  }
  return r;
}

LoadResult load_records(const std::filesystem::path& path, std::optional<TaskId> task_filter) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read dataset file '" + path.string() + "'");

  LoadResult result;
  std::vector<EvaluationRecord> records;
  std::map<std::string, std::size_t> first_seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    EvaluationRecord r;
    try {
      r = parse_record_line(line);
    } catch (const ValidationError& e) {
      result.rejected.push_back({line_no, e.what()});
      spdlog::warn("{}:{}: rejected: {}", path.string(), line_no, e.what());
      continue;
    }
    if (auto [it, fresh] = first_seen.emplace(r.record_id, line_no); !fresh) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                            ": duplicate record_id '" + r.record_id + "' (first at line " +
                            std::to_string(it->second) + ")");
    }
    if (task_filter && r.task_id != *task_filter) continue;
    records.push_back(std::move(r));
  }
  if (in.bad()) throw IoError("read error on '" + path.string() + "'");

  result.records = RecordSet(std::move(records), Provenance{path.string(), utc_now_iso8601()});
  return result;
}

std::string serialize_record(const EvaluationRecord& r) {
  json obj = {{"task", to_string(r.task_id)},
              {"question_id", r.question_id},
              {"record_id", r.record_id},
              {"question", r.question},
              {"answer", r.answer}};
  if (r.human_score) obj["human_score"] = *r.human_score;
  return obj.dump();
}

void write_records(const std::filesystem::path& path, const RecordSet& set) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (const auto& r : set) out << serialize_record(r) << '\n';
}

RecordSplit split_records(const RecordSet& set, const SplitFractions& f, std::uint64_t seed) {
  if (f.train < 0 || f.test < 0 || f.final < 0) {
    throw ValidationError("split fractions must be non-negative");
  }
  if (std::abs(f.train + f.test + f.final - 1.0) > 1e-9) {
    throw ValidationError("split fractions must sum to 1");
  }
  std::vector<std::size_t> order(set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  const auto n = static_cast<double>(set.size());
  // The epsilon keeps e.g. 0.2*700 = 139.99999999999997 from flooring to 139.
  const auto n_train = static_cast<std::size_t>(std::floor(n * f.train + 1e-9));
  const auto n_test =
      std::min(set.size() - n_train, static_cast<std::size_t>(std::floor(n * f.test + 1e-9)));

  std::vector<EvaluationRecord> parts[3];
  for (std::size_t k = 0; k < order.size(); ++k) {
    const int bucket = k < n_train ? 0 : (k < n_train + n_test ? 1 : 2);
    parts[bucket].push_back(set[order[k]]);
  }
  const auto& p = set.provenance();
  return {RecordSet(std::move(parts[0]), p), RecordSet(std::move(parts[1]), p),
          RecordSet(std::move(parts[2]), p)};
}

RecordSplit split_per_task(const RecordSet& set, const SplitFractions& fractions,
                           std::uint64_t seed) {
  std::vector<EvaluationRecord> parts[3];
  for (std::size_t t = 0; t < kAllTasks.size(); ++t) {
    const RecordSet subset = set.filter_task(kAllTasks[t]);
    if (subset.empty()) continue;
    RecordSplit s = split_records(subset, fractions, mix_seed(seed, t));
    for (const auto& r : s.train) parts[0].push_back(r);
    for (const auto& r : s.test) parts[1].push_back(r);
    for (const auto& r : s.final) parts[2].push_back(r);
  }
  const auto& p = set.provenance();
  return {RecordSet(std::move(parts[0]), p), RecordSet(std::move(parts[1]), p),
          RecordSet(std::move(parts[2]), p)};
}

std::map<std::string, std::vector<EvaluationRecord>> group_by_question(const RecordSet& set) {
  std::map<std::string, std::vector<EvaluationRecord>> groups;
  for (const auto& r : set) groups[r.question_id].push_back(r);
  return groups;
}

void require_labeled(const RecordSet& set, std::string_view context) {
  for (const auto& r : set) {
    if (!r.labeled()) {
      throw ValidationError(std::string(context) + ": record '" + r.record_id +
                            "' has no human_score");
    }
  }
}

}  // namespace aeval
