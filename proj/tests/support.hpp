// Fixtures and brute-force reference implementations shared by the unit
// tests and the acceptance binary. Oracles follow the textbook definitions
// directly and deliberately share no code with the library.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "aeval/config.hpp"
#include "aeval/dataset.hpp"
#include "aeval/hashing.hpp"
#include "aeval/icl_retriever.hpp"
#include "aeval/llm_gateway.hpp"
#include "aeval/rng.hpp"

namespace aeval::testing {

inline EvaluationRecord make_record(std::string id, TaskId task, std::string question_id,
                                    std::optional<int> score, std::string answer = {}) {
  EvaluationRecord r;
  r.record_id = id;
  r.task_id = task;
  r.question_id = question_id;
  r.question = "Question " + question_id;
  r.answer = answer.empty() ? "Answer text for " + id : answer;
  r.human_score = score;
  return r;
}

inline BackendConfig mock_config(std::string id, std::map<std::string, int> fixture = {}) {
  BackendConfig c;
  c.backend_id = std::move(id);
  c.kind = BackendKind::mock;
  if (!fixture.empty()) {
    c.mock.mode = MockMode::fixture;
    c.mock.fixture = std::move(fixture);
  }
  return c;
}

inline ScoredPrediction make_prediction(std::string id, std::optional<int> score) {
  ScoredPrediction p;
  p.record_id = std::move(id);
  p.backend_id = "test";
  p.predicted_score = score;
  return p;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("aeval-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Metric oracles

inline int sign(double v) { return (v > 0) - (v < 0); }

/// tau-b by pair enumeration: (C - D) / sqrt((n0 - n1)(n0 - n2)).
inline std::optional<double> kendall_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  long long concordance = 0, ties_x = 0, ties_y = 0, n0 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      ++n0;
      concordance += sign(x[i] - x[j]) * sign(y[i] - y[j]);
      ties_x += x[i] == x[j];
      ties_y += y[i] == y[j];
    }
  }
  const double denom = static_cast<double>(n0 - ties_x) * static_cast<double>(n0 - ties_y);
  if (denom <= 0) return std::nullopt;
  return static_cast<double>(concordance) / std::sqrt(denom);
}

/// Average rank by counting: 1 + #smaller + (#equal - 1) / 2.
inline std::vector<double> rank_oracle(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double u : v) {
      less += u < v[i];
      equal += u == v[i];
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

inline std::optional<double> pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

inline std::optional<double> spearman_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson_oracle(rank_oracle(x), rank_oracle(y));
}

/// Enumerates every unordered record pair of the input list.
inline std::optional<double> pairwise_accuracy_oracle(const std::vector<std::optional<int>>& pred,
                                                      const std::vector<int>& gold,
                                                      const std::vector<std::string>& question,
                                                      bool per_question) {
  int eligible = 0, correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (std::size_t j = i + 1; j < gold.size(); ++j) {
      if (!pred[i] || !pred[j]) continue;
      if (per_question && question[i] != question[j]) continue;
      if (gold[i] == gold[j]) continue;
      ++eligible;
      correct += sign(*pred[i] - *pred[j]) == sign(gold[i] - gold[j]);
    }
  }
  if (eligible == 0) return std::nullopt;
  return static_cast<double>(correct) / eligible;
}

// ---------------------------------------------------------------------------
// Retriever oracles

/// (Wq)·(Wc) by explicit loops.
inline double similarity_oracle(const Matrix& W, const Vector& q, const Vector& c) {
  double s = 0;
  for (Eigen::Index r = 0; r < W.rows(); ++r) {
    double a = 0, b = 0;
    for (Eigen::Index k = 0; k < W.cols(); ++k) {
      a += W(r, k) * q(k);
      b += W(r, k) * c(k);
    }
    s += a * b;
  }
  return s;
}

/// Central finite differences of the summed loss, entry by entry.
inline Matrix finite_difference_gradient(const RetrieverHead& head, const std::vector<PairExample>& batch,
                                         LossForm form, double h) {
  Matrix g(head.weights.rows(), head.weights.cols());
  RetrieverHead probe = head;
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      const double w0 = head.weights(r, c);
      probe.weights(r, c) = w0 + h;
      const double up = listwise_loss(probe, batch, form);
      probe.weights(r, c) = w0 - h;
      const double down = listwise_loss(probe, batch, form);
      probe.weights(r, c) = w0;
      g(r, c) = (up - down) / (2 * h);
    }
  }
  return g;
}

/// max over entries of |a - b| / max(|a|, |b|, floor).
inline double max_relative_error(const Matrix& a, const Matrix& b, double floor) {
  double worst = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
  }
  return worst;
}

inline Vector random_vector(Rng& rng, std::size_t d, double lo = -1, double hi = 1) {
  Vector v(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.uniform(lo, hi);
  return v;
}

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

/// Slot assignment by enumerating every injective choice of (slot1..slot4),
/// each either a bucket-eligible pool member or empty, and keeping the
/// lexicographically best tuple of per-slot ranks (empty ranks last).
/// Returns the chosen record ids per slot, "" for an empty slot.
inline std::vector<std::string> diversity_oracle(const RetrieverHead& head, const Vector& query,
                                                 const std::string& exclude_id,
                                                 const std::vector<EvaluationRecord>& pool,
                                                 const std::vector<Vector>& vectors) {
  const std::size_t n = pool.size();
  const std::size_t none = n;
  // rank[s][i]: position of candidate i in slot s's ordering, or -1.
  std::vector<std::vector<long>> rank(4, std::vector<long>(n, -1));
  for (int s = 0; s < 4; ++s) {
    const bool semantic = s < 2;
    const bool high = s % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (pool[i].record_id == exclude_id) continue;
      const int g = *pool[i].human_score;
      if (high != (g >= 4)) continue;
      auto sim = [&](std::size_t k) {
        return semantic ? query.dot(vectors[k]) : similarity_oracle(head.weights, query, vectors[k]);
      };
      long better = 0;
      for (std::size_t k = 0; k < n; ++k) {
        if (k == i || pool[k].record_id == exclude_id) continue;
        const int gk = *pool[k].human_score;
        if (high != (gk >= 4)) continue;
        const double a = sim(k), b = sim(i);
        if (a > b || (a == b && pool[k].record_id < pool[i].record_id)) ++better;
      }
      rank[s][i] = better;
    }
  }
  std::vector<long> best_key(4, 0);
  std::vector<std::size_t> best_pick(4, none);
  bool have = false;
  for (std::size_t a = 0; a <= n; ++a) {
    for (std::size_t b = 0; b <= n; ++b) {
      for (std::size_t c = 0; c <= n; ++c) {
        for (std::size_t d = 0; d <= n; ++d) {
          const std::size_t pick[4] = {a, b, c, d};
          std::vector<long> key(4);
          bool ok = true;
          std::set<std::size_t> used;
          for (int s = 0; s < 4 && ok; ++s) {
            if (pick[s] == none) {
              key[s] = static_cast<long>(n) + 1;
              continue;
            }
            if (rank[s][pick[s]] < 0 || !used.insert(pick[s]).second) ok = false;
            else key[s] = rank[s][pick[s]];
          }
          if (!ok) continue;
          if (!have || key < best_key) {
            have = true;
            best_key = key;
            best_pick.assign(pick, pick + 4);
          }
        }
      }
    }
  }
  std::vector<std::string> ids;
  for (std::size_t p : best_pick) ids.push_back(p == none ? "" : pool[p].record_id);
  return ids;
}

// ---------------------------------------------------------------------------
// Best-LLM selection fixtures

/// Twenty labeled records: ten questions with two answers of distinct gold.
inline std::vector<EvaluationRecord> selection_records(TaskId task = TaskId::dialogue) {
  std::vector<EvaluationRecord> v;
  for (int q = 0; q < 10; ++q) {
    const int hi = 3 + q % 3;  // 3..5
    const int lo = hi - 1 - q % 2;
    const std::string qid = "sq" + std::to_string(q);
    v.push_back(make_record(qid + "-a", task, qid, hi));
    v.push_back(make_record(qid + "-b", task, qid, lo));
  }
  return v;
}

/// Orders the first `correct` questions like gold and swaps the rest, so
/// per-question pairwise accuracy is exactly correct / 10.
inline std::map<std::string, int> fixture_with_correct(const std::vector<EvaluationRecord>& records,
                                                       int correct) {
  std::map<std::string, int> f;
  for (std::size_t i = 0; i + 1 < records.size(); i += 2) {
    const auto& a = records[i];
    const auto& b = records[i + 1];
    const bool right = static_cast<int>(i / 2) < correct;
    f[a.record_id] = right ? *a.human_score : *b.human_score;
    f[b.record_id] = right ? *b.human_score : *a.human_score;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Scripted optimizer pair

inline std::size_t count_rules(const std::string& text) {
  std::size_t n = 0;
  for (auto at = text.find("RULE "); at != std::string::npos; at = text.find("RULE ", at + 1)) ++n;
  return n;
}

/// Score mock: a record agrees with gold once the instruction holds more
/// rules than its hash bucket (0..4); otherwise it gets the mirrored score
/// 6 - gold. Accuracy therefore rises as rules accumulate.
inline MockBackend::Responder rule_following_scorer(std::map<std::string, int> gold) {
  return [gold = std::move(gold)](const CompletionRequest& r) {
    const int g = gold.at(r.record_id);
    const std::size_t bucket = keyed_hash64("bucket", r.record_id) % 5;
    const int score = count_rules(r.prompt) > bucket ? g : 6 - g;
    return MockBackend::format_reply(score, "scripted");
  };
}

/// Meta mock that appends one more rule to the current instruction.
inline MockBackend::Responder rule_appending_meta() {
  return [](const CompletionRequest& r) {
    const std::size_t n = count_rules(r.current_instruction) + 1;
    return "<INSTRUCTION>" + r.current_instruction + "\nRULE " + std::to_string(n) +
           ": weigh how directly the answer addresses the question.</INSTRUCTION>";
  };
}

// ---------------------------------------------------------------------------
// Planted linear ranking model

struct PlantedQuery {
  std::string id;
  Vector query;
  std::vector<std::string> candidate_ids;
  std::vector<double> planted;  // planted similarity per candidate
};

struct PlantedData {
  Matrix truth;  // d_true x d
  std::map<std::string, Vector> embeddings;
  std::vector<PlantedQuery> queries;
};

/// Every query gets its own pool of random candidates; the ranking of a pool
/// is the order of (W* q)·(W* c).
inline PlantedData make_planted(std::uint64_t seed, std::size_t n_queries, std::size_t pool_size,
                                std::size_t d, std::size_t d_true) {
  Rng rng(seed);
  PlantedData data;
  data.truth = Matrix(static_cast<Eigen::Index>(d_true), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < data.truth.size(); ++i) data.truth.data()[i] = rng.normal();
  auto gaussian = [&] {
    Vector v(static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
    return v;
  };
  for (std::size_t qi = 0; qi < n_queries; ++qi) {
    PlantedQuery q;
    q.id = "q" + std::to_string(qi);
    q.query = gaussian();
    data.embeddings[q.id] = q.query;
    for (std::size_t ci = 0; ci < pool_size; ++ci) {
      const std::string id = q.id + "-c" + std::to_string(ci);
      const Vector c = gaussian();
      data.embeddings[id] = c;
      q.candidate_ids.push_back(id);
      q.planted.push_back(similarity_oracle(data.truth, q.query, c));
    }
    data.queries.push_back(std::move(q));
  }
  return data;
}

/// Ranked list of a planted query: rank 1 = highest planted similarity.
inline RankedExampleList planted_list(const PlantedQuery& q) {
  std::vector<std::size_t> order(q.candidate_ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return q.planted[a] > q.planted[b];
  });
  RankedExampleList list;
  list.query_record_id = q.id;
  for (std::size_t r = 0; r < order.size(); ++r) {
    RankedEntry e;
    e.candidate_record_id = q.candidate_ids[order[r]];
    e.rank = static_cast<int>(r) + 1;
    e.abs_error = 0;
    list.entries.push_back(e);
  }
  return list;
}

// ---------------------------------------------------------------------------
// Run fixtures

inline std::filesystem::path source_path(const std::string& rel) {
  return std::filesystem::path(AEVAL_SOURCE_DIR) / rel;
}

/// The shipped mock config with its artifacts redirected to `artifact_dir`.
inline RunConfig mock_run_config(const std::filesystem::path& artifact_dir) {
  RunConfig c = load_run_config(source_path("configs/mock_run.json"));
  c.artifact_dir = artifact_dir;
  return c;
}

/// Relative path -> contents of every regular file under `dir`.
inline std::map<std::string, std::string> snapshot_files(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out[std::filesystem::relative(e.path(), dir).generic_string()] = ss.str();
  }
  return out;
}

}  // namespace aeval::testing
