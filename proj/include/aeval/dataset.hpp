#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aeval {

enum class TaskId { dialogue, text_expansion, summary, non_factoid_qa };

inline constexpr std::array<TaskId, 4> kAllTasks = {TaskId::dialogue, TaskId::text_expansion,
                                                    TaskId::summary, TaskId::non_factoid_qa};

std::string_view to_string(TaskId task);
/// Throws ValidationError on an unknown name.
TaskId parse_task_id(std::string_view name);
std::string_view default_display_name(TaskId task);
/// Shipped starting instruction for each subtask.
std::string_view default_instruction(TaskId task);

struct TaskSpec {
  TaskId task_id;
  std::string display_name;
  std::string initial_instruction;
};

/// Throws ValidationError when task ids repeat or an instruction is empty.
void validate_task_specs(std::span<const TaskSpec> tasks);

struct EvaluationRecord {
  std::string record_id;
  TaskId task_id = TaskId::dialogue;
  std::string question_id;
  std::string question;
  std::string answer;
  std::optional<int> human_score;  // absent for unlabeled final-phase records

  bool labeled() const { return human_score.has_value(); }
  int gold() const;  // throws ValidationError when unlabeled
};

struct Provenance {
  std::string source_path;
  std::string loaded_at;  // ISO-8601 UTC
};

// Immutable after construction; copies share nothing mutable, so a const
// RecordSet is safe to read from many threads.
class RecordSet {
 public:
  RecordSet() = default;
  explicit RecordSet(std::vector<EvaluationRecord> records, Provenance provenance = {});

  const std::vector<EvaluationRecord>& records() const { return records_; }
  const Provenance& provenance() const { return provenance_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }
  const EvaluationRecord& operator[](std::size_t i) const { return records_[i]; }

  /// nullptr when absent.
  const EvaluationRecord* find(std::string_view record_id) const;
  RecordSet filter_task(TaskId task) const;
  /// Every record except `record_id`.
  RecordSet without(std::string_view record_id) const;

 private:
  std::vector<EvaluationRecord> records_;
  std::map<std::string, std::size_t, std::less<>> index_;
  Provenance provenance_;
};

struct LineDiagnostic {
  std::size_t line;  // 1-based
  std::string message;
};

struct LoadResult {
  RecordSet records;
  std::vector<LineDiagnostic> rejected;
};

/// Parse one dataset line. Throws ValidationError describing the problem.
EvaluationRecord parse_record_line(std::string_view line);

/// Read a JSONL dataset file. Invalid lines are reported in `rejected` and
/// skipped; an unreadable file throws IoError and a duplicate record_id
/// throws ValidationError.
LoadResult load_records(const std::filesystem::path& path,
                        std::optional<TaskId> task_filter = std::nullopt);

std::string serialize_record(const EvaluationRecord& record);
void write_records(const std::filesystem::path& path, const RecordSet& set);

struct SplitFractions {
  double train = 0.2;
  double test = 0.2;
  double final = 0.6;
};

struct RecordSplit {
  RecordSet train;
  RecordSet test;
  RecordSet final;
};

/// Seeded shuffle, then floor(n*train) / floor(n*test) records to the first
/// two splits and the remainder to final.
RecordSplit split_records(const RecordSet& set, const SplitFractions& fractions,
                          std::uint64_t seed);

/// split_records applied to each subtask independently; outputs keep the
/// canonical task order.
RecordSplit split_per_task(const RecordSet& set, const SplitFractions& fractions,
                           std::uint64_t seed);

std::map<std::string, std::vector<EvaluationRecord>> group_by_question(const RecordSet& set);

/// Throws ValidationError naming the first unlabeled record.
void require_labeled(const RecordSet& set, std::string_view context);

}  // namespace aeval
