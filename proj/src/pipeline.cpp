#include "aeval/pipeline.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "aeval/collaboration.hpp"
#include "aeval/error.hpp"
#include "aeval/hashing.hpp"
#include "aeval/icl_retriever.hpp"
#include "aeval/prompt_optimizer.hpp"
#include "aeval/rng.hpp"
#include "aeval/serialization.hpp"

namespace aeval {

namespace fs = std::filesystem;
using nlohmann::json;

ChatBackend& Runtime::backend(std::string_view id) const {
  for (const auto& b : backends) {
    if (b->id() == id) return *b;
  }
  throw ConfigError("unknown backend '" + std::string(id) + "'");
}

EmbeddingProvider& Runtime::provider(std::string_view id) const {
  for (const auto& p : providers) {
    if (p->id() == id) return *p;
  }
  throw ConfigError("unknown embedding provider '" + std::string(id) + "'");
}

std::vector<ChatBackend*> Runtime::backend_ptrs() const {
  std::vector<ChatBackend*> out;
  for (const auto& b : backends) out.push_back(b.get());
  return out;
}

Runtime make_runtime(const RunConfig& config, const RecordSet& dataset) {
  Runtime rt;
  std::shared_ptr<ResponseCache> cache;
  const fs::path cache_dir = config.artifact_dir / "cache";
  if (config.cache) {
    fs::create_directories(cache_dir);
    cache = std::make_shared<ResponseCache>((cache_dir / "responses.jsonl").string());
  }
  for (BackendConfig b : config.backends) {
    if (std::find(config.gold_fixture_backends.begin(), config.gold_fixture_backends.end(),
                  b.backend_id) != config.gold_fixture_backends.end()) {
      b.mock.mode = MockMode::fixture;
      for (const auto& r : dataset) {
        if (r.labeled()) b.mock.fixture[r.record_id] = *r.human_score;
      }
    }
    auto backend = make_backend(b);
    if (cache) backend->attach_cache(cache);
    rt.backends.push_back(std::move(backend));
  }
  std::sort(rt.backends.begin(), rt.backends.end(),
            [](const auto& a, const auto& b) { return a->id() < b->id(); });
  for (const auto& p : config.providers) {
    std::shared_ptr<EmbeddingProvider> inner = make_provider(p);
    if (config.cache) {
      const std::string path = (cache_dir / ("embeddings-" + p.provider_id + ".jsonl")).string();
      rt.providers.push_back(std::make_unique<CachedEmbeddingProvider>(inner, path));
    } else {
      rt.providers.push_back(std::make_unique<CachedEmbeddingProvider>(inner));
    }
  }
  return rt;
}

bool RunArtifact::partial() const {
  return std::any_of(tasks.begin(), tasks.end(), [](const TaskOutcome& t) { return !t.complete; });
}

std::string derive_run_id(const RunConfig& config) {
  if (!config.run_id.empty()) return config.run_id;
  json snapshot = run_config_to_json(config);
  snapshot["run_id"] = "";
  return "run-" + sha256_hex(snapshot.dump()).substr(0, 12);
}

json to_json(const TaskOutcome& o) {
  return json{{"task", to_string(o.task_id)},
              {"complete", o.complete},
              {"error", o.error},
              {"strategy", o.strategy},
              {"backend_id", o.backend_id},
              {"instruction_version", o.instruction_version},
              {"report", o.report ? json(*o.report) : json(nullptr)},
              {"n_predictions", o.n_predictions},
              {"n_failures", o.n_failures},
              {"warnings", o.warnings}};
}

TaskOutcome task_outcome_from_json(const json& j) {
  TaskOutcome o;
  o.task_id = parse_task_id(j.at("task").get<std::string>());
  o.complete = j.at("complete").get<bool>();
  o.error = j.value("error", "");
  o.strategy = j.value("strategy", "");
  o.backend_id = j.value("backend_id", "");
  o.instruction_version = j.value("instruction_version", 0);
  if (j.contains("report") && !j.at("report").is_null()) o.report = j.at("report").get<MetricReport>();
  o.n_predictions = j.value("n_predictions", std::size_t{0});
  o.n_failures = j.value("n_failures", std::size_t{0});
  o.warnings = j.value("warnings", std::vector<std::string>{});
  return o;
}

namespace {

std::size_t task_index(TaskId t) {
  return static_cast<std::size_t>(std::find(kAllTasks.begin(), kAllTasks.end(), t) - kAllTasks.begin());
}

json id_list(const RecordSet& set) {
  json ids = json::array();
  for (const auto& r : set) ids.push_back(r.record_id);
  return ids;
}

RecordSet subset(const RecordSet& all, const json& ids, const char* split) {
  std::vector<EvaluationRecord> out;
  for (const auto& id : ids) {
    const auto* r = all.find(id.get<std::string>());
    if (!r) {
      throw ValidationError(std::string("persisted ") + split + " split names unknown record '" +
                            id.get<std::string>() + "'");
    }
    out.push_back(*r);
  }
  return RecordSet(std::move(out));
}

/// Seeded subsample of at most `limit` records, in original order.
RecordSet sample(const RecordSet& set, std::size_t limit, std::uint64_t seed) {
  if (limit == 0 || limit >= set.size()) return set;
  std::vector<std::size_t> idx(set.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  std::vector<EvaluationRecord> out;
  for (std::size_t i : idx) out.push_back(set[i]);
  return RecordSet(std::move(out));
}

class TaskRunner {
 public:
  TaskRunner(const RunConfig& config, const TaskRunSpec& spec, const RecordSet& records,
             Runtime& runtime, fs::path dir)
      : config_(config), spec_(spec), records_(records), rt_(runtime), dir_(std::move(dir)) {
    outcome_.task_id = spec.spec.task_id;
  }

  TaskOutcome run() {
    fs::create_directories(dir_);
    split();
    optimize_prompt();
    choose_strategy();
    train_head();
    evaluate();
    outcome_.complete = true;
    return outcome_;
  }

  TaskOutcome& outcome() { return outcome_; }

 private:
  void warn(const std::string& message) {
    spdlog::warn("[{}] {}", to_string(spec_.spec.task_id), message);
    outcome_.warnings.push_back(message);
  }

  std::uint64_t salt(std::uint64_t stage) const {
    return mix_seed(config_.seed, 16 * task_index(spec_.spec.task_id) + stage);
  }

  void split() {
    const fs::path path = dir_ / "split.json";
    if (fs::exists(path)) {
      const json j = read_json_file(path);
      split_.train = subset(records_, j.at("train"), "train");
      split_.test = subset(records_, j.at("test"), "test");
      split_.final = subset(records_, j.at("final"), "final");
      return;
    }
    split_ = split_records(records_, config_.fractions,
                           mix_seed(config_.split_seed, task_index(spec_.spec.task_id)));
    write_json_file(path, {{"train", id_list(split_.train)},
                           {"test", id_list(split_.test)},
                           {"final", id_list(split_.final)}});
  }

  void optimize_prompt() {
    const fs::path path = dir_ / "lineage.json";
    PromptLineage lineage;
    if (fs::exists(path)) {
      lineage = read_json_file(path).get<PromptLineage>();
    } else {
      if (split_.test.empty()) {
        throw ValidationError("test split is empty; nothing to validate instructions on");
      }
      const auto& o = config_.optimizer;
      const std::string scorer_id = o.backend_id.empty() ? rt_.backends.front()->id() : o.backend_id;
      const std::string meta_id = o.meta_backend_id.empty() ? scorer_id : o.meta_backend_id;
      OptimizerConfig oc = o.config;
      if (!o.enabled) oc.max_iterations = 0;
      lineage = optimize(spec_.spec, spec_.spec.initial_instruction, split_.train, split_.test,
                         rt_.backend(scorer_id), rt_.backend(meta_id), oc);
      write_json_file(path, lineage);
    }
    instruction_ = lineage.best().text;
    version_ = lineage.best_version;
    outcome_.instruction_version = version_;
  }

  void choose_strategy() {
    const fs::path path = dir_ / "selection.json";
    if (fs::exists(path)) {
      selection_ = read_json_file(path).get<BestLLMSelection>();
    } else {
      SelectionOptions opts = config_.selection;
      opts.instruction_version = version_;
      const auto ptrs = rt_.backend_ptrs();
      selection_ = select_best_llm(spec_.spec, ptrs, split_.train, instruction_, opts);
      write_json_file(path, selection_);
    }
    voting_ = spec_.strategy == Strategy::voting;
    if (voting_ && rt_.backends.size() < 2) {
      warn("voting needs at least two backends; falling back to best_llm");
      voting_ = false;
    }
    if (voting_) {
      integrator_ = config_.integrator_backend_id.empty() ? rt_.backends.front()->id()
                                                          : config_.integrator_backend_id;
      outcome_.strategy = "voting";
      outcome_.backend_id = "vote:" + integrator_;
    } else {
      outcome_.strategy = "best_llm";
      outcome_.backend_id = selection_.chosen_backend_id;
    }
  }

  EmbeddingProvider& provider() const {
    const auto& id = config_.retriever.provider_id;
    return id.empty() ? *rt_.providers.front() : rt_.provider(id);
  }

  void train_head() {
    const fs::path lists_path = dir_ / "ranked_lists.jsonl";
    const fs::path head_path = dir_ / "head.json";
    if (fs::exists(head_path)) {
      head_ = read_json_file(head_path).get<RetrieverHead>();
      return;
    }
    std::vector<RankedExampleList> lists;
    if (fs::exists(lists_path)) {
      lists = read_ranked_lists(lists_path);
    } else {
      const auto& r = config_.retriever;
      ChatBackend& judge = rt_.backend(r.backend_id.empty() ? selection_.chosen_backend_id : r.backend_id);
      const RecordSet queries = sample(split_.train, r.max_queries, salt(1));
      std::size_t skipped = 0;
      for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        const auto& q = queries[qi];
        const RecordSet candidates =
            sample(split_.train.without(q.record_id), r.max_candidates, mix_seed(salt(2), qi));
        if (candidates.empty()) {
          ++skipped;
          continue;
        }
        try {
          lists.push_back(contribution_rank(spec_.spec, q, candidates, judge, instruction_, version_));
        } catch (const ValidationError&) {
          throw;
        } catch (const Error& e) {
          ++skipped;
          warn("query '" + q.record_id + "' dropped from contribution ranking: " + e.what());
        }
      }
      if (skipped > 0 && lists.empty()) {
        throw TrainingError("no train query produced a contribution ranking");
      }
      write_ranked_lists(lists_path, lists);
    }
    head_ = train_retriever(lists, provider(), instruction_, split_.train, config_.retriever.trainer);
    write_json_file(head_path, head_);
  }

  void evaluate() {
    const RecordSet& eval = config_.evaluation_split == "test" ? split_.test : split_.final;
    const fs::path preds_path = dir_ / "predictions.jsonl";
    std::vector<ScoredPrediction> preds;
    if (fs::exists(preds_path)) {
      preds = read_predictions(preds_path);
      // Warnings from the scoring stage were persisted alongside.
      const fs::path notes = dir_ / "evaluation_warnings.json";
      if (fs::exists(notes)) {
        for (const auto& w : read_json_file(notes)) outcome_.warnings.push_back(w.get<std::string>());
      }
    } else {
      preds = score_split(eval);
      write_predictions(preds_path, preds);
      write_json_file(dir_ / "evaluation_warnings.json", eval_warnings_);
    }
    outcome_.n_predictions = preds.size();
    outcome_.n_failures = static_cast<std::size_t>(
        std::count_if(preds.begin(), preds.end(), [](const auto& p) { return p.failed(); }));
    if (preds.empty()) {
      warn("evaluation split is empty; no metrics");
      return;
    }
    const bool labeled =
        std::all_of(eval.begin(), eval.end(), [](const auto& r) { return r.labeled(); });
    if (!labeled) {
      warn("evaluation split is unlabeled; predictions only");
      return;
    }
    outcome_.report = metric_report(spec_.spec.task_id, preds, eval, config_.selection.grouping);
  }

  // Retrieval already logged these; only record them.
  void eval_warn(const std::string& message, bool log = false) {
    if (log) spdlog::warn("[{}] {}", to_string(spec_.spec.task_id), message);
    outcome_.warnings.push_back(message);
    eval_warnings_.push_back(message);
  }

  std::vector<ScoredPrediction> score_split(const RecordSet& eval) {
    if (eval.empty()) return {};
    EmbeddingProvider& prov = provider();
    const EmbeddedPool pool(prov, instruction_, split_.train);
    const auto ptrs = rt_.backend_ptrs();
    std::vector<ScoredPrediction> preds;
    json icl = json::array();
    json votes = json::array();
    for (const auto& record : eval) {
      const Vector q = embed(prov, instruction_, record.question, record.answer);
      DiversityResult picks = diversity_integrate(head_, q, record.record_id, pool);
      picks.picks.resize(std::min(picks.picks.size(), config_.retriever.examples));
      for (const auto& w : picks.warnings) eval_warn("record '" + record.record_id + "': " + w);
      json entry = picks;
      entry["record_id"] = record.record_id;
      icl.push_back(entry);
      const auto examples = picks.examples();
      if (!voting_) {
        preds.push_back(predict_with_best(selection_, ptrs, record, instruction_, examples));
        continue;
      }
      try {
        auto outcome = vote_integrate(record, ptrs, rt_.backend(integrator_), instruction_,
                                      examples, version_);
        if (auto* bundle = std::get_if<VoteBundle>(&outcome)) {
          votes.push_back(*bundle);
          preds.push_back(to_prediction(*bundle, version_));
        } else {
          const auto& fb = std::get<VoteFallback>(outcome);
          eval_warn("record '" + record.record_id + "': " + fb.reason + "; scored by best LLM", true);
          preds.push_back(predict_with_best(selection_, ptrs, record, instruction_, examples));
        }
      } catch (const IntegrationError& e) {
        eval_warn("record '" + record.record_id + "': " + e.what(), true);
        ScoredPrediction failed;
        failed.record_id = record.record_id;
        failed.backend_id = "vote:" + integrator_;
        failed.instruction_version = version_;
        failed.reason = e.what();
        for (const auto& ex : examples) failed.icl_example_ids.push_back(ex.record_id);
        preds.push_back(std::move(failed));
      }
    }
    write_json_file(dir_ / "icl_examples.json", icl);
    if (voting_) write_json_file(dir_ / "votes.json", votes);
    return preds;
  }

  const RunConfig& config_;
  const TaskRunSpec& spec_;
  const RecordSet& records_;
  Runtime& rt_;
  fs::path dir_;
  TaskOutcome outcome_;

  RecordSplit split_;
  std::string instruction_;
  int version_ = 0;
  BestLLMSelection selection_;
  bool voting_ = false;
  std::string integrator_;
  RetrieverHead head_;
  std::vector<std::string> eval_warnings_;
};

}  // namespace

RunArtifact run_pipeline(const RunConfig& config) {
  validate_run_config(config);
  LoadResult loaded = load_records(config.dataset);
  for (const auto& d : loaded.rejected) {
    spdlog::warn("{}:{}: rejected: {}", config.dataset.string(), d.line, d.message);
  }
  Runtime rt = make_runtime(config, loaded.records);
  return run_pipeline(config, loaded.records, rt);
}

RunArtifact run_pipeline(const RunConfig& config, const RecordSet& dataset, Runtime& runtime) {
  validate_run_config(config);
  for (const auto& b : config.backends) runtime.backend(b.backend_id);
  if (runtime.backends.empty() || runtime.providers.empty()) {
    throw ConfigError("runtime needs at least one backend and one provider");
  }

  RunArtifact artifact;
  artifact.run_id = derive_run_id(config);
  artifact.run_dir = config.artifact_dir / artifact.run_id;
  artifact.config_snapshot = run_config_to_json(config);
  artifact.config_snapshot["run_id"] = artifact.run_id;
  fs::create_directories(artifact.run_dir);
  write_json_file(artifact.run_dir / "config.json", artifact.config_snapshot);

  for (const auto& spec : config.tasks) {
    const RecordSet records = dataset.filter_task(spec.spec.task_id);
    const fs::path dir = artifact.run_dir / "tasks" / std::string(to_string(spec.spec.task_id));
    TaskRunner runner(config, spec, records, runtime, dir);
    TaskOutcome outcome;
    try {
      if (records.empty()) throw ValidationError("dataset has no records for this task");
      outcome = runner.run();
    } catch (const std::exception& e) {
      outcome = runner.outcome();
      outcome.complete = false;
      outcome.error = e.what();
      spdlog::error("[{}] task aborted: {}", to_string(spec.spec.task_id), e.what());
    }
    fs::create_directories(dir);
    write_json_file(dir / "outcome.json", to_json(outcome));
    artifact.tasks.push_back(std::move(outcome));
  }

  json tasks = json::array();
  for (const auto& t : artifact.tasks) tasks.push_back(to_json(t));
  write_json_file(artifact.run_dir / "run.json", {{"run_id", artifact.run_id},
                                                  {"partial", artifact.partial()},
                                                  {"tasks", tasks}});
  return artifact;
}

RunArtifact load_run_artifact(const fs::path& run_dir) {
  const json run = read_json_file(run_dir / "run.json");
  RunArtifact artifact;
  artifact.run_id = run.at("run_id").get<std::string>();
  artifact.run_dir = run_dir;
  artifact.config_snapshot = read_json_file(run_dir / "config.json");
  for (const auto& t : run.at("tasks")) artifact.tasks.push_back(task_outcome_from_json(t));
  return artifact;
}

}  // namespace aeval
