// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. An optional argument names the aeval executable;
// when given, the determinism check drives the CLI instead of the library.

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <regex>
#include <sstream>

#include <spdlog/spdlog.h>

#include "aeval/collaboration.hpp"
#include "aeval/metrics.hpp"
#include "aeval/pipeline.hpp"
#include "aeval/prompt_optimizer.hpp"
#include "aeval/report.hpp"
#include "aeval/serialization.hpp"
#include "support.hpp"

using namespace aeval;
using namespace aeval::testing;
namespace fs = std::filesystem;

namespace {

struct Failure {
  std::string what;
};

void check(bool ok, const std::string& what) {
  if (!ok) throw Failure{what};
}

std::string fixed4(double v) {
  std::ostringstream s;
  s.precision(4);
  s << std::fixed << v;
  return s.str();
}

bool same(const MetricValue& a, const std::optional<double>& b, double tol) {
  if (a.has_value() != b.has_value()) return false;
  return !a || std::abs(*a - *b) <= tol;
}

// ---------------------------------------------------------------------------
// 1. Metric oracle suite

std::string metric_oracles() {
  std::size_t cases = 0;
  auto check_pair = [&](const std::vector<double>& x, const std::vector<double>& y) {
    check(same(kendall_tau(x, y), kendall_oracle(x, y), 1e-12), "kendall_tau differs from oracle");
    check(same(spearman_rho(x, y), spearman_oracle(x, y), 1e-12), "spearman_rho differs from oracle");
    ++cases;
  };

  // Predictions in 1..5 against every gold vector; question ids alternate
  // so per-question grouping is exercised alongside global.
  auto check_accuracy = [&](const std::vector<std::optional<int>>& p, const std::vector<int>& g,
                            const std::vector<std::string>& q, const std::vector<EvaluationRecord>& recs,
                            std::vector<ScoredPrediction>& preds) {
    for (std::size_t i = 0; i < p.size(); ++i) preds[i].predicted_score = p[i];
    for (bool per_q : {true, false}) {
      const auto got = pairwise_accuracy(preds, recs, per_q ? Grouping::per_question : Grouping::global);
      const auto want = pairwise_accuracy_oracle(p, g, q, per_q);
      check(got.has_value() == want.has_value() && (!want || *got == *want),
            "pairwise_accuracy differs from oracle");
    }
  };

  auto make_fixture = [](const std::vector<int>& g, const std::vector<std::string>& q,
                         std::vector<EvaluationRecord>& recs, std::vector<ScoredPrediction>& preds) {
    recs.clear();
    preds.clear();
    for (std::size_t i = 0; i < g.size(); ++i) {
      recs.push_back(make_record("r" + std::to_string(i), TaskId::dialogue, q[i], g[i]));
      preds.push_back(make_prediction("r" + std::to_string(i), 1));
    }
  };

  for (std::size_t n = 2; n <= 5; ++n) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= 5;
    std::vector<std::string> q(n);
    for (std::size_t i = 0; i < n; ++i) q[i] = "q" + std::to_string(i % 2);
    std::vector<double> x(n), y(n);
    std::vector<int> g(n);
    std::vector<std::optional<int>> p(n);
    std::vector<EvaluationRecord> recs;
    std::vector<ScoredPrediction> preds;
    for (std::size_t a = 0; a < total; ++a) {
      for (std::size_t i = 0, c = a; i < n; ++i, c /= 5) {
        x[i] = static_cast<double>(1 + c % 5);
        g[i] = static_cast<int>(1 + c % 5);
      }
      make_fixture(g, q, recs, preds);
      for (std::size_t b = 0; b < total; ++b) {
        for (std::size_t i = 0, c = b; i < n; ++i, c /= 5) {
          y[i] = static_cast<double>(1 + c % 5);
          p[i].emplace(static_cast<int>(1 + c % 5));
        }
        check_pair(x, y);
        check_accuracy(p, g, q, recs, preds);
      }
    }
  }

  for (std::size_t n = 6; n <= 8; ++n) {
    for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
      Rng rng(mix_seed(seed, n));
      std::vector<double> x(n), y(n);
      std::vector<int> g(n);
      std::vector<std::optional<int>> p(n);
      std::vector<std::string> q(n);
      for (std::size_t i = 0; i < n; ++i) {
        g[i] = static_cast<int>(1 + rng.below(5));
        x[i] = g[i];
        y[i] = static_cast<double>(1 + rng.below(5));
        if (rng.below(8) != 0) p[i] = static_cast<int>(y[i]);
        q[i] = "q" + std::to_string(rng.below(3));
      }
      check_pair(x, y);
      std::vector<EvaluationRecord> recs;
      std::vector<ScoredPrediction> preds;
      make_fixture(g, q, recs, preds);
      check_accuracy(p, g, q, recs, preds);
    }
  }
  return std::to_string(cases) + " vector pairs";
}

// ---------------------------------------------------------------------------
// 2. Pair weight closed form

std::string pair_weight_table() {
  for (int a = 1; a <= 10; ++a) {
    for (int b = 1; b <= 10; ++b) {
      const double want = std::max(0.0, 1.0 / a - 1.0 / b);
      check(pair_weight(a, b) == want, "pair_weight(" + std::to_string(a) + "," + std::to_string(b) + ")");
    }
  }
  return "100 rank pairs";
}

// ---------------------------------------------------------------------------
// 3. Gradient check

std::string gradient_check() {
  double worst = 0.0;
  int instances = 0;
  for (LossForm form : {LossForm::logistic, LossForm::literal_clamped}) {
    Rng rng(form == LossForm::logistic ? 101 : 202);
    for (int t = 0; t < 200; ++t) {
      const std::size_t d = 1 + rng.below(8);
      const std::size_t d_out = 1 + rng.below(std::min<std::size_t>(d, 4));
      RetrieverHead head;
      std::vector<PairExample> batch;
      // The literal form has a kink where its argument meets the clamp;
      // instances near it are redrawn.
      for (;;) {
        head.weights = random_matrix(rng, d_out, d, -0.5, 0.5);
        batch.clear();
        const std::size_t n = 1 + rng.below(6);
        bool near_kink = false;
        for (std::size_t i = 0; i < n; ++i) {
          PairExample p{random_vector(rng, d), random_vector(rng, d), random_vector(rng, d),
                        rng.uniform(0.0, 1.0)};
          const double arg = 1.0 + std::exp(similarity_oracle(head.weights, p.query, p.worse)) -
                             std::exp(similarity_oracle(head.weights, p.query, p.better));
          near_kink = near_kink || arg < 1e-3;
          batch.push_back(std::move(p));
        }
        if (form == LossForm::logistic || !near_kink) break;
      }
      const Matrix analytic = loss_gradient(head, batch, form);
      const Matrix numeric = finite_difference_gradient(head, batch, form, 1e-6);
      worst = std::max(worst, max_relative_error(analytic, numeric, 1e-4));
      ++instances;
    }
  }
  std::ostringstream s;
  s << instances << " instances, max rel. error " << std::scientific << worst;
  check(worst < 1e-5, s.str());
  return s.str();
}

// ---------------------------------------------------------------------------
// 4. Ranking recovery

double held_out_tau(const RetrieverHead& head, const PlantedData& data, std::size_t from) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t qi = from; qi < data.queries.size(); ++qi) {
    const PlantedQuery& q = data.queries[qi];
    std::vector<double> got;
    for (const auto& id : q.candidate_ids) got.push_back(head_similarity(head, q.query, data.embeddings.at(id)));
    const MetricValue tau = kendall_tau(got, q.planted);
    check(tau.has_value(), "held-out tau undefined");
    sum += *tau;
    ++n;
  }
  return sum / static_cast<double>(n);
}

std::string ranking_recovery() {
  const std::size_t n_train = 30;
  const PlantedData data = make_planted(1, 40, 64, 16, 2);
  std::vector<RankedExampleList> lists;
  for (std::size_t qi = 0; qi < n_train; ++qi) lists.push_back(planted_list(data.queries[qi]));

  TrainerConfig cfg;
  cfg.d_out = 4;
  cfg.steps = 10000;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 128;
  cfg.momentum = 0.9;
  cfg.seed = 1;
  cfg.form = LossForm::logistic;
  const RetrieverHead trained = train_retriever(lists, data.embeddings, cfg);
  const RetrieverHead untrained = RetrieverHead::random(cfg.d_out, 16, cfg.seed);

  const double t_trained = held_out_tau(trained, data, n_train);
  const double t_untrained = held_out_tau(untrained, data, n_train);
  const std::string detail = "held-out tau trained " + fixed4(t_trained) + ", untrained " + fixed4(t_untrained);
  check(t_trained >= 0.9, detail);
  check(std::abs(t_untrained) < 0.3, detail);
  return detail;
}

// ---------------------------------------------------------------------------
// 5. Diversity integration

void check_invariants(const DiversityResult& r, const std::string& exclude) {
  check(r.picks.size() <= 4, "more than four examples");
  std::set<std::string> seen;
  for (const auto& p : r.picks) {
    const auto& rec = p.example.record;
    check(seen.insert(rec.record_id).second, "duplicate example " + rec.record_id);
    check(in_bucket(*rec.human_score, slot_bucket(p.slot)), "example outside its slot's bucket");
    check(rec.record_id != exclude, "query returned as its own example");
  }
}

std::string diversity() {
  Rng rng(55);
  int pools = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.below(9), d = 2 + rng.below(4);
    std::vector<EvaluationRecord> recs;
    std::vector<Vector> vecs;
    for (std::size_t i = 0; i < n; ++i) {
      recs.push_back(make_record("p" + std::to_string(i), TaskId::summary, "q", 1 + static_cast<int>(rng.below(5))));
      vecs.push_back(random_vector(rng, d));
    }
    RetrieverHead head;
    head.weights = random_matrix(rng, 1 + rng.below(d), d, -1, 1);
    const Vector q = random_vector(rng, d);
    const EmbeddedPool pool(RecordSet(recs), vecs);
    const DiversityResult r = diversity_integrate(head, q, "", pool);
    check_invariants(r, "");
    std::vector<std::string> got(4);
    for (const auto& p : r.picks) got[static_cast<std::size_t>(p.slot)] = p.example.record.record_id;
    check(got == diversity_oracle(head, q, "", recs, vecs), "slot assignment differs from oracle");
    ++pools;
  }

  // Crafted: identical vectors everywhere, a single-bucket pool, the query
  // inside the pool, and a pool whose best candidates collide across slots.
  auto crafted = [&](std::vector<int> golds, std::vector<Vector> vecs, const std::string& exclude) {
    std::vector<EvaluationRecord> recs;
    for (std::size_t i = 0; i < golds.size(); ++i) {
      recs.push_back(make_record("c" + std::to_string(i), TaskId::summary, "q", golds[i]));
    }
    const Vector q = Vector::Ones(vecs[0].size());
    const RetrieverHead head = RetrieverHead::identity(static_cast<std::size_t>(q.size()));
    const DiversityResult r = diversity_integrate(head, q, exclude, EmbeddedPool(RecordSet(recs), vecs));
    check_invariants(r, exclude);
    std::vector<std::string> got(4);
    for (const auto& p : r.picks) got[static_cast<std::size_t>(p.slot)] = p.example.record.record_id;
    check(got == diversity_oracle(head, q, exclude, recs, vecs), "crafted pool differs from oracle");
    ++pools;
    return r;
  };
  crafted({5, 1, 4, 2, 3, 5}, std::vector<Vector>(6, Vector::Ones(3)), "");
  check(crafted({5, 4, 5}, {Vector::Ones(2), Vector::Zero(2), -Vector::Ones(2)}, "").picks.size() == 2,
        "single-bucket pool should fill two slots");
  crafted({5, 1, 4, 2}, {Vector::Ones(2), Vector::Ones(2), Vector::Zero(2), Vector::Zero(2)}, "c0");
  check(crafted({4, 2}, {Vector::Ones(2), Vector::Ones(2)}, "").picks.size() == 2, "two-record pool");
  return std::to_string(pools) + " pools";
}

// ---------------------------------------------------------------------------
// 6. Prompt optimization loop

std::string prompt_loop() {
  const TaskSpec task{TaskId::summary, "Summary", "Rate the summary from 1 to 5."};
  std::vector<EvaluationRecord> train, val;
  std::map<std::string, int> gold;
  for (int q = 0; q < 8; ++q) {
    for (int a = 0; a < 3; ++a) {
      const std::string id = "q" + std::to_string(q) + "a" + std::to_string(a);
      gold[id] = 1 + (q + 2 * a) % 5;
      (q < 4 ? train : val).push_back(make_record(id, TaskId::summary, "q" + std::to_string(q), gold[id]));
    }
  }
  OptimizerConfig cfg;
  cfg.samples_per_iteration = 4;
  cfg.max_iterations = 5;
  cfg.patience = 5;
  cfg.metric = SelectionMetric::accuracy;
  MockBackend scorer(mock_config("scorer"), rule_following_scorer(gold));
  MockBackend meta(mock_config("meta"), rule_appending_meta());
  const PromptLineage lin = optimize(task, task.initial_instruction, RecordSet(train), RecordSet(val), scorer, meta, cfg);
  check(lin.versions.size() == 6, "expected five iterations");

  MetricValue best;
  std::vector<std::string> curve;
  int improvements = 0;
  for (const auto& v : lin.versions) {
    const MetricValue acc = v.validation_report ? v.validation_report->accuracy : std::nullopt;
    if (metric_better(acc, best)) {
      if (v.index > 0) ++improvements;
      best = acc;
    }
    check(best.has_value(), "version 0 has no validation accuracy");
    if (!curve.empty()) check(std::stod(curve.back()) <= *best, "best-so-far decreased");
    curve.push_back(fixed4(*best));
  }
  check(improvements >= 1, "no strict improvement");

  const int patience = 2;
  cfg.patience = patience;
  MockBackend plain(mock_config("scorer"));
  MockBackend echo(mock_config("meta"));
  const PromptLineage flat = optimize(task, task.initial_instruction, RecordSet(train), RecordSet(val), plain, echo, cfg);
  const auto iterations = static_cast<int>(flat.versions.size()) - 1;
  check(iterations <= patience, "constant meta ran " + std::to_string(iterations) + " iterations");

  std::string joined;
  for (const auto& c : curve) joined += (joined.empty() ? "" : " ") + c;
  return "best-so-far " + joined + "; constant meta stopped after " + std::to_string(iterations);
}

// ---------------------------------------------------------------------------
// 7. Best-LLM selection

std::string selection() {
  const TaskSpec task{TaskId::dialogue, "Dialogue", "Rate the reply."};
  const auto recs = selection_records();
  SelectionOptions opts;
  opts.metric = SelectionMetric::accuracy;

  MockBackend a(mock_config("b-060", fixture_with_correct(recs, 6)));
  MockBackend b(mock_config("a-030", fixture_with_correct(recs, 3)));
  MockBackend c(mock_config("c-090", fixture_with_correct(recs, 9)));
  const auto sel = select_best_llm(task, std::vector<ChatBackend*>{&a, &b, &c}, RecordSet(recs), task.initial_instruction, opts);
  check(sel.chosen_backend_id == "c-090", "picked " + sel.chosen_backend_id);
  const std::map<std::string, double> want = {{"a-030", 0.3}, {"b-060", 0.6}, {"c-090", 0.9}};
  for (const auto& [id, acc] : want) {
    check(std::abs(*sel.per_backend_reports.at(id).accuracy - acc) < 1e-12, "accuracy of " + id);
  }

  MockBackend z(mock_config("zeta", fixture_with_correct(recs, 9)));
  MockBackend y(mock_config("alpha", fixture_with_correct(recs, 9)));
  const auto tie = select_best_llm(task, std::vector<ChatBackend*>{&z, &y, &a}, RecordSet(recs), task.initial_instruction, opts);
  check(tie.chosen_backend_id == "alpha", "tie picked " + tie.chosen_backend_id);
  return "accuracies 0.9/0.6/0.3 -> c-090; tie zeta/alpha -> alpha";
}

// ---------------------------------------------------------------------------
// 8. End-to-end determinism

std::string shell_quote(const std::string& s) { return "'" + s + "'"; }

std::string determinism(const std::string& cli) {
  TempDir dir("acceptance");
  RunConfig config = mock_run_config(dir.path() / "runs");
  const fs::path config_path = dir.path() / "config.json";
  write_json_file(config_path, run_config_to_json(config));

  auto run_once = [&]() -> fs::path {
    if (cli.empty()) return run_pipeline(config).run_dir;
    const std::string cmd = shell_quote(cli) + " --config " + shell_quote(config_path.string()) + " run > " +
                            shell_quote((dir.path() / "cli.log").string()) + " 2>&1";
    check(std::system(cmd.c_str()) == 0, "aeval run failed");
    return config.artifact_dir / derive_run_id(config);
  };

  const fs::path first_dir = run_once();
  const auto first = snapshot_files(first_dir);
  check(!first.empty(), "run produced no files");
  fs::remove_all(config.artifact_dir);
  const fs::path second_dir = run_once();
  check(second_dir == first_dir, "run directory changed");
  const auto second = snapshot_files(second_dir);
  check(first == second, "artifacts differ between runs");

  const RunArtifact artifact = load_run_artifact(second_dir);
  check(!artifact.partial(), "run is partial");
  const auto cells = report_cells(task_reports(artifact));
  check(cells.size() == 15 && report_columns().size() == 15, "report row is not 15 cells");
  const std::regex cell(R"(^(-?\d\.\d{4}|/)$)");
  for (const auto& c : cells) check(std::regex_match(c, cell), "malformed cell '" + c + "'");
  return std::to_string(first.size()) + " files identical" + (cli.empty() ? "" : " via CLI") +
         "; overall " + cells[0] + " | " + cells[1] + " | " + cells[2];
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::err);
  const std::string cli = argc > 1 ? argv[1] : "";

  struct Criterion {
    const char* name;
    double budget_seconds;
    std::function<std::string()> run;
  };
  const std::vector<Criterion> criteria = {
      {"metric oracle suite", 30, metric_oracles},
      {"pair weight closed form", 0, pair_weight_table},
      {"gradient check", 60, gradient_check},
      {"ranking recovery", 120, ranking_recovery},
      {"diversity integration", 0, diversity},
      {"prompt optimization loop", 0, prompt_loop},
      {"best-LLM selection", 0, selection},
      {"end-to-end determinism", 0, [&] { return determinism(cli); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& c = criteria[i];
    const auto start = std::chrono::steady_clock::now();
    bool ok = true;
    std::string detail;
    try {
      detail = c.run();
    } catch (const Failure& f) {
      ok = false;
      detail = f.what;
    } catch (const std::exception& e) {
      ok = false;
      detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (ok && c.budget_seconds > 0 && secs > c.budget_seconds) {
      ok = false;
      detail += "; over the " + fixed4(c.budget_seconds) + " s budget";
    }
    if (!ok) ++failed;
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << i + 1 << " " << c.name << " (" << fixed4(secs) << " s): " << detail
              << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
