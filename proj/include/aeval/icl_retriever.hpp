#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aeval/dataset.hpp"
#include "aeval/embedding.hpp"
#include "aeval/llm_gateway.hpp"

namespace aeval {

using Matrix = Eigen::MatrixXd;

enum class LossForm {
  logistic,         // w * log(1 + exp(s_worse - s_better))
  literal_clamped,  // w * log(max(eps, 1 + exp(s_worse) - exp(s_better)))
};

inline constexpr double kLiteralLossEpsilon = 1e-12;

std::string_view to_string(LossForm form);
LossForm parse_loss_form(std::string_view name);

struct TrainingMeta {
  std::uint64_t seed = 0;
  int steps = 0;
  double learning_rate = 0.0;
  double momentum = 0.0;
  int batch_size = 0;
  LossForm form = LossForm::logistic;
  std::size_t n_pairs = 0;
  double final_loss = 0.0;  // mean weighted loss per training pair
};

/// Shared linear projection W (d_out x d) applied to both towers.
struct RetrieverHead {
  Matrix weights;
  TrainingMeta meta;

  std::size_t input_dim() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(weights.rows()); }

  static RetrieverHead identity(std::size_t d);
  static RetrieverHead zeros(std::size_t d_out, std::size_t d);
  /// Entries N(0, 1/d) drawn from Rng(seed).
  static RetrieverHead random(std::size_t d_out, std::size_t d, std::uint64_t seed);
};

/// Throws ValidationError if d_out > d or any weight is non-finite.
void validate_head(const RetrieverHead& head);

/// (W u)^T (W v). Throws ValidationError on a dimension mismatch.
double head_similarity(const RetrieverHead& head, const Vector& u, const Vector& v);

// ---------------------------------------------------------------------------
// Contribution ranking from evaluation feedback

struct RankedEntry {
  std::string candidate_record_id;
  int abs_error = 0;  // |predicted - human| for the query, in [0,4]
  int rank = 0;       // 1-based
  int raw_pred = 0;
};

struct RankedExampleList {
  std::string query_record_id;
  TaskId task_id = TaskId::dialogue;
  std::vector<RankedEntry> entries;
  std::size_t dropped = 0;  // candidates whose scoring call failed to parse
};

/// Sorts by (abs_error, candidate_record_id) and assigns 1-based ranks.
void assign_ranks(std::vector<RankedEntry>& entries);

/// One single-example scoring call per candidate; a smaller |pred - gold|
/// ranks the candidate higher. The query itself is skipped if present.
/// Throws ValidationError on unlabeled or cross-task input and Error when
/// every candidate fails to parse.
RankedExampleList contribution_rank(const TaskSpec& task, const EvaluationRecord& query,
                                    const RecordSet& candidates, ChatBackend& backend,
                                    std::string_view instruction, int instruction_version = 0);

// ---------------------------------------------------------------------------
// Pairwise training signal

/// max(0, 1/rank_better - 1/rank_worse). Throws ValidationError on rank < 1.
double pair_weight(int rank_better, int rank_worse);

struct PairSample {
  std::string query_id;
  std::string better_id;
  std::string worse_id;
  double weight = 0.0;
};

/// Every ordered pair within each list; zero-weight pairs are dropped.
std::vector<PairSample> build_pairs(std::span<const RankedExampleList> lists);

struct PairExample {
  Vector query;
  Vector better;
  Vector worse;
  double weight = 0.0;
};

/// Throws NumericError naming the first pair whose term is non-finite.
double listwise_loss(const RetrieverHead& head, std::span<const PairExample> batch, LossForm form);

/// Analytic d(listwise_loss)/dW, same shape as W.
Matrix loss_gradient(const RetrieverHead& head, std::span<const PairExample> batch, LossForm form);

struct TrainerConfig {
  int steps = 300;
  double learning_rate = 1e-2;
  int batch_size = 64;
  std::uint64_t seed = 0;
  std::size_t d_out = 0;  // 0 means d
  LossForm form = LossForm::logistic;
  double momentum = 0.0;
};

/// Seeded mini-batch gradient descent on the mean batch loss, starting from
/// RetrieverHead::random(d_out, d, seed). Throws TrainingError when no list
/// yields a positive-weight pair.
RetrieverHead train_retriever(std::span<const RankedExampleList> lists,
                              const std::map<std::string, Vector>& embeddings,
                              const TrainerConfig& config);

/// Embeds every record named in `lists` as instruction ⊕ (q, a), then trains.
RetrieverHead train_retriever(std::span<const RankedExampleList> lists,
                              EmbeddingProvider& provider, std::string_view instruction,
                              const RecordSet& records, const TrainerConfig& config);

// ---------------------------------------------------------------------------
// Retrieval

enum class ScoreBucket { high, low };  // {4,5} and {1,2,3}

bool in_bucket(int score, ScoreBucket bucket);
std::string_view to_string(ScoreBucket bucket);

struct RetrievedExample {
  EvaluationRecord record;
  double similarity = 0.0;
};

/// A labeled pool together with its frozen embeddings, computed once.
class EmbeddedPool {
 public:
  EmbeddedPool(EmbeddingProvider& provider, std::string_view instruction, RecordSet pool);
  EmbeddedPool(RecordSet pool, std::vector<Vector> vectors);

  const RecordSet& records() const { return records_; }
  const Vector& vector(std::size_t i) const { return vectors_[i]; }
  std::size_t size() const { return records_.size(); }

 private:
  RecordSet records_;
  std::vector<Vector> vectors_;
};

/// Pool ranked by raw inner product, filtered to `bucket`, top-k, ties by
/// record_id. `exclude_id` (the query) never appears.
std::vector<RetrievedExample> semantic_retrieve(const Vector& query, std::string_view exclude_id,
                                                const EmbeddedPool& pool, std::size_t k,
                                                std::optional<ScoreBucket> bucket);
std::vector<RetrievedExample> semantic_retrieve(EmbeddingProvider& provider,
                                                std::string_view instruction,
                                                const EvaluationRecord& query,
                                                const RecordSet& pool, std::size_t k,
                                                std::optional<ScoreBucket> bucket = std::nullopt);

/// As semantic_retrieve, ranked by head_similarity.
std::vector<RetrievedExample> retriever_retrieve(const RetrieverHead& head, const Vector& query,
                                                 std::string_view exclude_id,
                                                 const EmbeddedPool& pool, std::size_t k,
                                                 std::optional<ScoreBucket> bucket);
std::vector<RetrievedExample> retriever_retrieve(const RetrieverHead& head,
                                                 EmbeddingProvider& provider,
                                                 std::string_view instruction,
                                                 const EvaluationRecord& query,
                                                 const RecordSet& pool, std::size_t k,
                                                 std::optional<ScoreBucket> bucket = std::nullopt);

enum class DiversitySlot { semantic_high, semantic_low, retriever_high, retriever_low };

inline constexpr std::array<DiversitySlot, 4> kDiversitySlots = {
    DiversitySlot::semantic_high, DiversitySlot::semantic_low, DiversitySlot::retriever_high,
    DiversitySlot::retriever_low};

std::string_view to_string(DiversitySlot slot);
ScoreBucket slot_bucket(DiversitySlot slot);

struct DiversityPick {
  DiversitySlot slot;
  RetrievedExample example;
};

struct DiversityResult {
  std::vector<DiversityPick> picks;  // slot order, at most 4
  std::vector<std::string> warnings;

  std::vector<EvaluationRecord> examples() const;
};

/// Semantic/high, semantic/low, retriever/high, retriever/low. A candidate
/// already taken by an earlier slot is replaced by that slot's next-ranked
/// candidate; a slot with nothing left is skipped with a warning. Throws
/// ValidationError on an empty pool.
DiversityResult diversity_integrate(const RetrieverHead& head, const Vector& query,
                                    std::string_view exclude_id, const EmbeddedPool& pool);
DiversityResult diversity_integrate(const RetrieverHead& head, EmbeddingProvider& provider,
                                    std::string_view instruction, const EvaluationRecord& query,
                                    const RecordSet& pool);

}  // namespace aeval
