#include "aeval/icl_retriever.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "aeval/error.hpp"
#include "aeval/parallel.hpp"
#include "aeval/rng.hpp"

namespace aeval {

std::string_view to_string(LossForm form) {
  return form == LossForm::literal_clamped ? "literal_clamped" : "logistic";
}

LossForm parse_loss_form(std::string_view name) {
  if (name == "logistic") return LossForm::logistic;
  if (name == "literal_clamped") return LossForm::literal_clamped;
  throw ConfigError("unknown loss form '" + std::string(name) + "'");
}

RetrieverHead RetrieverHead::identity(std::size_t d) {
  RetrieverHead h;
  h.weights = Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  return h;
}

RetrieverHead RetrieverHead::zeros(std::size_t d_out, std::size_t d) {
  RetrieverHead h;
  h.weights = Matrix::Zero(static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(d));
  return h;
}

RetrieverHead RetrieverHead::random(std::size_t d_out, std::size_t d, std::uint64_t seed) {
  RetrieverHead h = zeros(d_out, d);
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (Eigen::Index r = 0; r < h.weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < h.weights.cols(); ++c) h.weights(r, c) = scale * rng.normal();
  }
  h.meta.seed = seed;
  return h;
}

void validate_head(const RetrieverHead& head) {
  if (head.weights.rows() == 0 || head.weights.cols() == 0) {
    throw ValidationError("retriever head has an empty weight matrix");
  }
  if (head.weights.rows() > head.weights.cols()) {
    throw ValidationError("retriever head d_out exceeds input dimension");
  }
  if (!head.weights.allFinite()) throw ValidationError("retriever head has non-finite weights");
}

double head_similarity(const RetrieverHead& head, const Vector& u, const Vector& v) {
  if (u.size() != head.weights.cols() || v.size() != head.weights.cols()) {
    throw ValidationError("head_similarity: vector length does not match head input dimension " +
                          std::to_string(head.weights.cols()));
  }
  return (head.weights * u).dot(head.weights * v);
}

// ---------------------------------------------------------------------------

void assign_ranks(std::vector<RankedEntry>& entries) {
  std::sort(entries.begin(), entries.end(), [](const RankedEntry& a, const RankedEntry& b) {
    if (a.abs_error != b.abs_error) return a.abs_error < b.abs_error;
    return a.candidate_record_id < b.candidate_record_id;
  });
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i].rank = static_cast<int>(i) + 1;
}

RankedExampleList contribution_rank(const TaskSpec& task, const EvaluationRecord& query,
                                    const RecordSet& candidates, ChatBackend& backend,
                                    std::string_view instruction, int instruction_version) {
  if (query.task_id != task.task_id) {
    throw ValidationError("contribution_rank: query '" + query.record_id + "' is not in task '" +
                          std::string(to_string(task.task_id)) + "'");
  }
  const int gold = query.gold();
  require_labeled(candidates, "contribution_rank");

  std::vector<const EvaluationRecord*> pool;
  for (const auto& c : candidates) {
    if (c.record_id == query.record_id) continue;
    if (c.task_id != task.task_id) {
      throw ValidationError("contribution_rank: candidate '" + c.record_id +
                            "' belongs to another task");
    }
    pool.push_back(&c);
  }
  if (pool.empty()) throw ValidationError("contribution_rank: no candidates besides the query");

  std::vector<ScoredPrediction> preds(pool.size());
  parallel_for(pool.size(), static_cast<std::size_t>(backend.config().max_in_flight),
               [&](std::size_t i) {
                 preds[i] = score_record(backend, instruction, query, std::span(pool[i], 1),
                                         instruction_version);
               });

  RankedExampleList list;
  list.query_record_id = query.record_id;
  list.task_id = task.task_id;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (preds[i].failed()) {
      ++list.dropped;
      continue;
    }
    const int pred = *preds[i].predicted_score;
    list.entries.push_back({pool[i]->record_id, std::abs(pred - gold), 0, pred});
  }
  if (list.entries.empty()) {
    throw Error("contribution_rank: every candidate failed to parse for query '" +
                query.record_id + "'");
  }
  if (list.dropped > 0) {
    spdlog::warn("contribution_rank: query {} dropped {} candidate(s)", query.record_id,
                 list.dropped);
  }
  assign_ranks(list.entries);
  return list;
}

// ---------------------------------------------------------------------------

double pair_weight(int rank_better, int rank_worse) {
  if (rank_better < 1 || rank_worse < 1) throw ValidationError("pair_weight: ranks must be >= 1");
  return std::max(0.0, 1.0 / rank_better - 1.0 / rank_worse);
}

std::vector<PairSample> build_pairs(std::span<const RankedExampleList> lists) {
  std::vector<PairSample> pairs;
  for (const auto& list : lists) {
    const auto& e = list.entries;
    for (std::size_t i = 0; i < e.size(); ++i) {
      for (std::size_t j = 0; j < e.size(); ++j) {
        if (i == j) continue;
        const double w = pair_weight(e[i].rank, e[j].rank);
        if (w > 0.0) {
          pairs.push_back({list.query_record_id, e[i].candidate_record_id,
                           e[j].candidate_record_id, w});
        }
      }
    }
  }
  return pairs;
}

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Shared by the public loss/gradient and the trainer. `get(i)` yields
// (query, better, worse, weight) for pair i.
template <typename Get>
double loss_impl(const Matrix& W, std::size_t n, Get get, LossForm form, Matrix* grad) {
  if (grad != nullptr) *grad = Matrix::Zero(W.rows(), W.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& [q, b, w, weight] = get(i);
    if (weight < 0.0 || !std::isfinite(weight)) {
      throw NumericError("pair " + std::to_string(i) + ": weight must be finite and >= 0", i);
    }
    if (weight == 0.0) continue;
    if (q.size() != W.cols() || b.size() != W.cols() || w.size() != W.cols()) {
      throw ValidationError("pair " + std::to_string(i) + ": vector length mismatch");
    }
    const Vector wq = W * q;
    const Vector wb = W * b;
    const Vector ww = W * w;
    const double s_better = wq.dot(wb);
    const double s_worse = wq.dot(ww);

    double term = 0.0, c_better = 0.0, c_worse = 0.0;
    if (form == LossForm::logistic) {
      const double x = s_worse - s_better;
      term = weight * softplus(x);
      const double g = weight * sigmoid(x);
      c_better = -g;
      c_worse = g;
    } else {
      const double e_better = std::exp(s_better);
      const double e_worse = std::exp(s_worse);
      const double arg = 1.0 + e_worse - e_better;
      if (!std::isfinite(e_better) || !std::isfinite(e_worse) || !std::isfinite(arg)) {
        throw NumericError("pair " + std::to_string(i) + ": exponential overflow in literal loss",
                           i);
      }
      if (arg > kLiteralLossEpsilon) {
        term = weight * std::log(arg);
        c_better = -weight * e_better / arg;
        c_worse = weight * e_worse / arg;
      } else {
        term = weight * std::log(kLiteralLossEpsilon);
      }
    }
    if (!std::isfinite(term) || !std::isfinite(s_better) || !std::isfinite(s_worse)) {
      throw NumericError("pair " + std::to_string(i) + ": non-finite loss term", i);
    }
    total += term;
    if (grad != nullptr && (c_better != 0.0 || c_worse != 0.0)) {
      // d s(q,c)/dW = (Wq) c^T + (Wc) q^T
      *grad += wq * (c_better * b + c_worse * w).transpose();
      *grad += (c_better * wb + c_worse * ww) * q.transpose();
    }
  }
  return total;
}

struct PairRef {
  const Vector& q;
  const Vector& b;
  const Vector& w;
  double weight;
};

}  // namespace

double listwise_loss(const RetrieverHead& head, std::span<const PairExample> batch, LossForm form) {
  return loss_impl(
      head.weights, batch.size(),
      [&](std::size_t i) { return PairRef{batch[i].query, batch[i].better, batch[i].worse, batch[i].weight}; },
      form, nullptr);
}

Matrix loss_gradient(const RetrieverHead& head, std::span<const PairExample> batch, LossForm form) {
  Matrix grad;
  loss_impl(
      head.weights, batch.size(),
      [&](std::size_t i) { return PairRef{batch[i].query, batch[i].better, batch[i].worse, batch[i].weight}; },
      form, &grad);
  return grad;
}

RetrieverHead train_retriever(std::span<const RankedExampleList> lists,
                              const std::map<std::string, Vector>& embeddings,
                              const TrainerConfig& config) {
  if (config.steps < 0 || config.batch_size <= 0 || !(config.learning_rate > 0.0)) {
    throw ValidationError("trainer needs steps >= 0, batch_size > 0, learning_rate > 0");
  }
  const bool usable = std::any_of(lists.begin(), lists.end(),
                                  [](const auto& l) { return l.entries.size() >= 2; });
  if (!usable) throw TrainingError("training needs at least one ranked list with >= 2 entries");

  const std::vector<PairSample> samples = build_pairs(lists);
  if (samples.empty()) throw TrainingError("degenerate ranking signal: no positive-weight pair");

  auto lookup = [&](const std::string& id) -> const Vector& {
    auto it = embeddings.find(id);
    if (it == embeddings.end()) throw ValidationError("no embedding for record '" + id + "'");
    return it->second;
  };
  std::vector<std::array<const Vector*, 3>> refs;
  refs.reserve(samples.size());
  for (const auto& s : samples) {
    refs.push_back({&lookup(s.query_id), &lookup(s.better_id), &lookup(s.worse_id)});
  }
  const auto d = static_cast<std::size_t>(refs.front()[0]->size());
  const std::size_t d_out = config.d_out == 0 ? d : config.d_out;
  if (d_out > d) throw ValidationError("trainer d_out exceeds embedding dimension");

  RetrieverHead head = RetrieverHead::random(d_out, d, config.seed);
  Matrix velocity = Matrix::Zero(head.weights.rows(), head.weights.cols());

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(config.seed, 0x7E7));
  std::size_t cursor = order.size();
  std::vector<std::size_t> batch;
  const auto batch_size = static_cast<std::size_t>(config.batch_size);

  for (int step = 0; step < config.steps; ++step) {
    batch.clear();
    while (batch.size() < std::min(batch_size, order.size())) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    Matrix grad;
    loss_impl(
        head.weights, batch.size(),
        [&](std::size_t i) {
          const auto& r = refs[batch[i]];
          return PairRef{*r[0], *r[1], *r[2], samples[batch[i]].weight};
        },
        config.form, &grad);
    grad /= static_cast<double>(batch.size());
    velocity = config.momentum * velocity - config.learning_rate * grad;
    head.weights += velocity;
    if (!head.weights.allFinite()) {
      throw TrainingError("training diverged at step " + std::to_string(step) +
                          "; lower the learning rate");
    }
  }

  const double total = loss_impl(
      head.weights, samples.size(),
      [&](std::size_t i) { return PairRef{*refs[i][0], *refs[i][1], *refs[i][2], samples[i].weight}; },
      config.form, nullptr);

  head.meta.seed = config.seed;
  head.meta.steps = config.steps;
  head.meta.learning_rate = config.learning_rate;
  head.meta.momentum = config.momentum;
  head.meta.batch_size = config.batch_size;
  head.meta.form = config.form;
  head.meta.n_pairs = samples.size();
  head.meta.final_loss = total / static_cast<double>(samples.size());
  return head;
}

RetrieverHead train_retriever(std::span<const RankedExampleList> lists,
                              EmbeddingProvider& provider, std::string_view instruction,
                              const RecordSet& records, const TrainerConfig& config) {
  std::map<std::string, Vector> embeddings;
  auto add = [&](const std::string& id) {
    if (embeddings.count(id) != 0) return;
    const EvaluationRecord* r = records.find(id);
    if (r == nullptr) throw ValidationError("ranked list names unknown record '" + id + "'");
    embeddings.emplace(id, embed(provider, instruction, r->question, r->answer));
  };
  for (const auto& l : lists) {
    add(l.query_record_id);
    for (const auto& e : l.entries) add(e.candidate_record_id);
  }
  return train_retriever(lists, embeddings, config);
}

// ---------------------------------------------------------------------------

bool in_bucket(int score, ScoreBucket bucket) {
  return bucket == ScoreBucket::high ? (score >= 4 && score <= 5) : (score >= 1 && score <= 3);
}

std::string_view to_string(ScoreBucket bucket) {
  return bucket == ScoreBucket::high ? "high" : "low";
}

EmbeddedPool::EmbeddedPool(EmbeddingProvider& provider, std::string_view instruction, RecordSet pool)
    : records_(std::move(pool)) {
  require_labeled(records_, "retrieval pool");
  vectors_.reserve(records_.size());
  for (const auto& r : records_) vectors_.push_back(embed(provider, instruction, r.question, r.answer));
}

EmbeddedPool::EmbeddedPool(RecordSet pool, std::vector<Vector> vectors)
    : records_(std::move(pool)), vectors_(std::move(vectors)) {
  require_labeled(records_, "retrieval pool");
  if (vectors_.size() != records_.size()) {
    throw ValidationError("embedded pool: one vector per record required");
  }
}

namespace {

template <typename Sim>
std::vector<RetrievedExample> rank_pool(const EmbeddedPool& pool, std::string_view exclude_id,
                                        std::size_t k, std::optional<ScoreBucket> bucket, Sim sim,
                                        std::string_view label) {
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& r = pool.records()[i];
    if (r.record_id == exclude_id) continue;
    if (bucket && !in_bucket(*r.human_score, *bucket)) continue;
    scored.emplace_back(sim(pool.vector(i)), i);
  }
  if (scored.empty()) {
    spdlog::warn("{}: no candidates{}{}", label, bucket ? " in bucket " : "",
                 bucket ? to_string(*bucket) : "");
    return {};
  }
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return pool.records()[a.second].record_id < pool.records()[b.second].record_id;
  });
  if (scored.size() > k) scored.resize(k);
  std::vector<RetrievedExample> out;
  out.reserve(scored.size());
  for (const auto& [s, i] : scored) out.push_back({pool.records()[i], s});
  return out;
}

}  // namespace

std::vector<RetrievedExample> semantic_retrieve(const Vector& query, std::string_view exclude_id,
                                                const EmbeddedPool& pool, std::size_t k,
                                                std::optional<ScoreBucket> bucket) {
  return rank_pool(pool, exclude_id, k, bucket, [&](const Vector& v) { return query.dot(v); },
                   "semantic_retrieve");
}

std::vector<RetrievedExample> semantic_retrieve(EmbeddingProvider& provider,
                                                std::string_view instruction,
                                                const EvaluationRecord& query,
                                                const RecordSet& pool, std::size_t k,
                                                std::optional<ScoreBucket> bucket) {
  const EmbeddedPool embedded(provider, instruction, pool);
  const Vector q = embed(provider, instruction, query.question, query.answer);
  return semantic_retrieve(q, query.record_id, embedded, k, bucket);
}

std::vector<RetrievedExample> retriever_retrieve(const RetrieverHead& head, const Vector& query,
                                                 std::string_view exclude_id,
                                                 const EmbeddedPool& pool, std::size_t k,
                                                 std::optional<ScoreBucket> bucket) {
  if (query.size() != head.weights.cols()) {
    throw ValidationError("retriever_retrieve: query length does not match head input dimension");
  }
  return rank_pool(pool, exclude_id, k, bucket,
                   [&](const Vector& v) { return head_similarity(head, query, v); },
                   "retriever_retrieve");
}

std::vector<RetrievedExample> retriever_retrieve(const RetrieverHead& head,
                                                 EmbeddingProvider& provider,
                                                 std::string_view instruction,
                                                 const EvaluationRecord& query,
                                                 const RecordSet& pool, std::size_t k,
                                                 std::optional<ScoreBucket> bucket) {
  const EmbeddedPool embedded(provider, instruction, pool);
  const Vector q = embed(provider, instruction, query.question, query.answer);
  return retriever_retrieve(head, q, query.record_id, embedded, k, bucket);
}

std::string_view to_string(DiversitySlot slot) {
  switch (slot) {
    case DiversitySlot::semantic_high: return "semantic_high";
    case DiversitySlot::semantic_low: return "semantic_low";
    case DiversitySlot::retriever_high: return "retriever_high";
    case DiversitySlot::retriever_low: return "retriever_low";
  }
  return "";
}

ScoreBucket slot_bucket(DiversitySlot slot) {
  return slot == DiversitySlot::semantic_high || slot == DiversitySlot::retriever_high
             ? ScoreBucket::high
             : ScoreBucket::low;
}

std::vector<EvaluationRecord> DiversityResult::examples() const {
  std::vector<EvaluationRecord> out;
  out.reserve(picks.size());
  for (const auto& p : picks) out.push_back(p.example.record);
  return out;
}

DiversityResult diversity_integrate(const RetrieverHead& head, const Vector& query,
                                    std::string_view exclude_id, const EmbeddedPool& pool) {
  if (pool.size() == 0) throw ValidationError("diversity_integrate: empty pool");
  DiversityResult result;
  std::set<std::string> taken;
  for (DiversitySlot slot : kDiversitySlots) {
    const bool semantic =
        slot == DiversitySlot::semantic_high || slot == DiversitySlot::semantic_low;
    const ScoreBucket bucket = slot_bucket(slot);
    const auto ranked = semantic
                            ? semantic_retrieve(query, exclude_id, pool, pool.size(), bucket)
                            : retriever_retrieve(head, query, exclude_id, pool, pool.size(), bucket);
    auto it = std::find_if(ranked.begin(), ranked.end(), [&](const RetrievedExample& e) {
      return taken.count(e.record.record_id) == 0;
    });
    if (it == ranked.end()) {
      result.warnings.push_back("slot " + std::string(to_string(slot)) + " left empty");
      continue;
    }
    taken.insert(it->record.record_id);
    result.picks.push_back({slot, *it});
  }
  for (const auto& w : result.warnings) spdlog::warn("diversity_integrate: {}", w);
  return result;
}

DiversityResult diversity_integrate(const RetrieverHead& head, EmbeddingProvider& provider,
                                    std::string_view instruction, const EvaluationRecord& query,
                                    const RecordSet& pool) {
  if (pool.empty()) throw ValidationError("diversity_integrate: empty pool");
  const EmbeddedPool embedded(provider, instruction, pool);
  const Vector q = embed(provider, instruction, query.question, query.answer);
  return diversity_integrate(head, q, query.record_id, embedded);
}

}  // namespace aeval
