// aeval: command-line front end for the evaluation library.
//
// Every subcommand reads the same run config (--config). Without one, a
// single keyed-hash mock backend and a 64-dimensional hash embedding are
// used, which is enough to exercise the plumbing offline.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aeval/collaboration.hpp"
#include "aeval/config.hpp"
#include "aeval/dataset.hpp"
#include "aeval/error.hpp"
#include "aeval/icl_retriever.hpp"
#include "aeval/metrics.hpp"
#include "aeval/pipeline.hpp"
#include "aeval/prompt_optimizer.hpp"
#include "aeval/report.hpp"
#include "aeval/serialization.hpp"

using namespace aeval;
namespace fs = std::filesystem;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitPartial = 3;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string backend;
  bool verbose = false;
};

RunConfig default_config() {
  RunConfig c;
  BackendConfig b;
  b.backend_id = "mock";
  c.backends.push_back(b);
  ProviderConfig p;
  p.provider_id = "hash64";
  c.providers.push_back(p);
  for (TaskId t : kAllTasks) {
    c.tasks.push_back({{t, std::string(default_display_name(t)), std::string(default_instruction(t))},
                       Strategy::best_llm});
  }
  return c;
}

RunConfig resolve_config(const Globals& g) {
  RunConfig c = g.config_path.empty() ? default_config() : load_run_config(g.config_path);
  if (g.seed) apply_seed_override(c, *g.seed);
  if (!g.backend.empty()) {
    // Restrict the run to one backend; references to the others are dropped.
    std::vector<BackendConfig> kept;
    for (const auto& b : c.backends) {
      if (b.backend_id == g.backend) kept.push_back(b);
    }
    if (kept.empty()) throw ConfigError("--backend: unknown backend '" + g.backend + "'");
    c.backends = kept;
    for (std::string* ref : {&c.optimizer.backend_id, &c.optimizer.meta_backend_id,
                             &c.integrator_backend_id, &c.retriever.backend_id}) {
      if (!ref->empty() && *ref != g.backend) ref->clear();
    }
  }
  return c;
}

RecordSet load_set(const std::string& path, std::optional<TaskId> task = std::nullopt) {
  LoadResult r = load_records(path, task);
  for (const auto& d : r.rejected) {
    spdlog::warn("{}:{}: rejected: {}", path, d.line, d.message);
  }
  return std::move(r.records);
}

const TaskRunSpec& task_spec(const RunConfig& c, TaskId t) {
  for (const auto& s : c.tasks) {
    if (s.spec.task_id == t) return s;
  }
  throw ConfigError("config has no entry for task '" + std::string(to_string(t)) + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string instruction_for(const RunConfig& c, TaskId t, const std::string& file) {
  return file.empty() ? task_spec(c, t).spec.initial_instruction : read_text(file);
}

// One backend for single-judge commands: --backend if given, else the first.
ChatBackend& pick_backend(const Runtime& rt, const Globals& g) {
  return g.backend.empty() ? *rt.backends.front() : rt.backend(g.backend);
}

EmbeddingProvider& pick_provider(const RunConfig& c, const Runtime& rt) {
  return c.retriever.provider_id.empty() ? *rt.providers.front() : rt.provider(c.retriever.provider_id);
}

void emit_json(const Json& j, const std::string& path) {
  if (path.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_json_file(path, j);
  }
}

void write_jsonl(const std::string& path, const std::vector<Json>& rows) {
  std::ostringstream s;
  for (const auto& r : rows) s << r.dump() << '\n';
  if (path.empty()) {
    std::cout << s.str();
  } else {
    write_text_file(path, s.str());
  }
}

TaskId task_arg(const std::string& name) { return parse_task_id(name); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference-free LLM answer evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Run config (JSON)");
  app.add_option("--seed", g.seed, "Override every seed in the config");
  app.add_option("--backend", g.backend, "Use only this backend_id");
  app.add_flag("-v,--verbose", g.verbose, "Log progress");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate a JSONL dataset and summarise it");
  std::string ingest_in, ingest_out, ingest_task;
  ingest->add_option("input", ingest_in, "Dataset file")->required();
  ingest->add_option("-o,--output", ingest_out, "Write the accepted records here");
  ingest->add_option("--task", ingest_task, "Keep only this task");

  // split
  auto* split = app.add_subcommand("split", "Per-task seeded train/test/final split");
  std::string split_in, split_dir;
  split->add_option("input", split_in, "Dataset file")->required();
  split->add_option("-o,--out-dir", split_dir, "Directory for train/test/final.jsonl")->required();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score records with one backend");
  std::string eval_in, eval_task, eval_out, eval_instr, eval_icl, eval_pool;
  evaluate->add_option("input", eval_in, "Records to score")->required();
  evaluate->add_option("--task", eval_task, "Task id")->required();
  evaluate->add_option("-o,--output", eval_out, "Predictions JSONL");
  evaluate->add_option("--instruction-file", eval_instr, "Instruction text");
  evaluate->add_option("--icl", eval_icl, "retrieve-icl output naming examples per record");
  evaluate->add_option("--pool", eval_pool, "Records the --icl examples come from");

  // select-best
  auto* select = app.add_subcommand("select-best", "Pick the best backend on labeled records");
  std::string sel_in, sel_task, sel_out, sel_instr;
  select->add_option("input", sel_in, "Labeled records")->required();
  select->add_option("--task", sel_task, "Task id")->required();
  select->add_option("-o,--output", sel_out, "Selection JSON");
  select->add_option("--instruction-file", sel_instr, "Instruction text");

  // vote
  auto* vote = app.add_subcommand("vote", "Score records by voting over every backend");
  std::string vote_in, vote_task, vote_out, vote_instr, vote_integrator;
  vote->add_option("input", vote_in, "Records to score")->required();
  vote->add_option("--task", vote_task, "Task id")->required();
  vote->add_option("-o,--output", vote_out, "Predictions JSONL");
  vote->add_option("--instruction-file", vote_instr, "Instruction text");
  vote->add_option("--integrator", vote_integrator, "Integrator backend_id");

  // optimize-prompt
  auto* opt = app.add_subcommand("optimize-prompt", "Iteratively rewrite the instruction");
  std::string opt_train, opt_val, opt_task, opt_out, opt_instr;
  opt->add_option("--train", opt_train, "Labeled train records")->required();
  opt->add_option("--validation", opt_val, "Labeled validation records")->required();
  opt->add_option("--task", opt_task, "Task id")->required();
  opt->add_option("-o,--output", opt_out, "Lineage JSON");
  opt->add_option("--instruction-file", opt_instr, "Starting instruction");

  // rank-contributions
  auto* rank = app.add_subcommand("rank-contributions", "Rank train examples per query");
  std::string rank_in, rank_task, rank_out, rank_instr;
  rank->add_option("input", rank_in, "Labeled train records")->required();
  rank->add_option("--task", rank_task, "Task id")->required();
  rank->add_option("-o,--output", rank_out, "Ranked lists JSONL")->required();
  rank->add_option("--instruction-file", rank_instr, "Instruction text");

  // train-retriever
  auto* train = app.add_subcommand("train-retriever", "Fit the retriever head");
  std::string train_lists, train_records, train_task, train_out, train_instr;
  train->add_option("--lists", train_lists, "Ranked lists JSONL")->required();
  train->add_option("--records", train_records, "Records named in the lists")->required();
  train->add_option("--task", train_task, "Task id")->required();
  train->add_option("-o,--output", train_out, "Head JSON")->required();
  train->add_option("--instruction-file", train_instr, "Instruction text");

  // retrieve-icl
  auto* retrieve = app.add_subcommand("retrieve-icl", "Pick four in-context examples per query");
  std::string ret_head, ret_pool, ret_in, ret_task, ret_out, ret_instr;
  retrieve->add_option("--head", ret_head, "Head JSON (identity if omitted)");
  retrieve->add_option("--pool", ret_pool, "Labeled candidate pool")->required();
  retrieve->add_option("input", ret_in, "Query records")->required();
  retrieve->add_option("--task", ret_task, "Task id")->required();
  retrieve->add_option("-o,--output", ret_out, "JSONL, one line per query");
  retrieve->add_option("--instruction-file", ret_instr, "Instruction text");

  // metrics
  auto* metrics = app.add_subcommand("metrics", "Acc./Ken./Spear. of predictions against gold");
  std::string met_preds, met_records, met_task, met_grouping = "per_question", met_out;
  metrics->add_option("predictions", met_preds, "Predictions JSONL")->required();
  metrics->add_option("--records", met_records, "Labeled records")->required();
  metrics->add_option("--task", met_task, "Task id")->required();
  metrics->add_option("--grouping", met_grouping, "per_question or global");
  metrics->add_option("-o,--output", met_out, "Report JSON");

  // run
  auto* run = app.add_subcommand("run", "Full pipeline for every configured task");

  // report
  auto* report = app.add_subcommand("report", "Render the result table of a finished run");
  std::string report_dir;
  report->add_option("run_dir", report_dir, "artifact_dir/run_id")->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(g.verbose ? spdlog::level::info : spdlog::level::warn);
  spdlog::set_pattern("%l: %v");

  try {
    if (*report) {
      std::cout << emit_report(load_run_artifact(report_dir));
      return 0;
    }

    RunConfig config = resolve_config(g);

    if (*ingest) {
      std::optional<TaskId> filter;
      if (!ingest_task.empty()) filter = task_arg(ingest_task);
      LoadResult r = load_records(ingest_in, filter);
      for (const auto& d : r.rejected) {
        std::cerr << ingest_in << ':' << d.line << ": rejected: " << d.message << '\n';
      }
      std::map<TaskId, std::pair<std::size_t, std::size_t>> counts;
      for (const auto& rec : r.records) {
        auto& [total, labeled] = counts[rec.task_id];
        ++total;
        labeled += rec.labeled() ? 1 : 0;
      }
      std::cout << "accepted " << r.records.size() << ", rejected " << r.rejected.size() << '\n';
      for (const auto& [task, c] : counts) {
        std::cout << "  " << to_string(task) << ": " << c.first << " records, " << c.second
                  << " labeled\n";
      }
      if (!ingest_out.empty()) write_records(ingest_out, r.records);
      return 0;
    }

    if (*split) {
      const RecordSet all = load_set(split_in);
      RecordSplit s = split_per_task(all, config.fractions, config.split_seed);
      fs::create_directories(split_dir);
      write_records(fs::path(split_dir) / "train.jsonl", s.train);
      write_records(fs::path(split_dir) / "test.jsonl", s.test);
      write_records(fs::path(split_dir) / "final.jsonl", s.final);
      std::cout << "train " << s.train.size() << ", test " << s.test.size() << ", final "
                << s.final.size() << '\n';
      return 0;
    }

    if (*run) {
      const RunArtifact artifact = run_pipeline(config);
      std::cout << emit_report(artifact);
      std::cout << "artifacts: " << artifact.run_dir.string() << '\n';
      return artifact.partial() ? kExitPartial : 0;
    }

    validate_run_config(config);
    RecordSet dataset;
    Runtime rt = make_runtime(config, dataset);

    if (*evaluate) {
      const TaskId t = task_arg(eval_task);
      const RecordSet records = load_set(eval_in, t);
      const std::string instruction = instruction_for(config, t, eval_instr);
      ChatBackend& backend = pick_backend(rt, g);
      std::map<std::string, std::vector<std::string>> icl;
      RecordSet pool;
      if (!eval_icl.empty()) {
        if (eval_pool.empty()) throw ConfigError("--icl needs --pool");
        pool = load_set(eval_pool, t);
        std::ifstream in(eval_icl);
        if (!in) throw IoError("cannot read '" + eval_icl + "'");
        for (std::string line; std::getline(in, line);) {
          if (line.empty()) continue;
          const Json j = Json::parse(line);
          auto& ids = icl[j.at("record_id").get<std::string>()];
          for (const auto& p : j.at("picks")) ids.push_back(p.at("record_id").get<std::string>());
        }
      }
      std::vector<ScoredPrediction> preds;
      for (const auto& r : records) {
        std::vector<EvaluationRecord> examples;
        for (const auto& id : icl[r.record_id]) {
          const auto* ex = pool.find(id);
          if (!ex) throw ValidationError("--icl names '" + id + "', which is not in the pool");
          examples.push_back(*ex);
        }
        preds.push_back(score_record(backend, instruction, r, examples));
      }
      if (eval_out.empty()) {
        std::vector<Json> rows(preds.begin(), preds.end());
        write_jsonl("", rows);
      } else {
        write_predictions(eval_out, preds);
      }
      return 0;
    }

    if (*select) {
      const TaskId t = task_arg(sel_task);
      const RecordSet train = load_set(sel_in, t);
      const auto ptrs = rt.backend_ptrs();
      const auto selection = select_best_llm(task_spec(config, t).spec, ptrs, train,
                                             instruction_for(config, t, sel_instr), config.selection);
      emit_json(selection, sel_out);
      return 0;
    }

    if (*vote) {
      const TaskId t = task_arg(vote_task);
      const RecordSet records = load_set(vote_in, t);
      const std::string instruction = instruction_for(config, t, vote_instr);
      const auto ptrs = rt.backend_ptrs();
      ChatBackend& integrator =
          rt.backend(!vote_integrator.empty()          ? vote_integrator
                     : !config.integrator_backend_id.empty() ? config.integrator_backend_id
                                                             : rt.backends.front()->id());
      std::vector<Json> rows;
      for (const auto& r : records) {
        auto outcome = vote_integrate(r, ptrs, integrator, instruction);
        if (auto* b = std::get_if<VoteBundle>(&outcome)) {
          Json j = to_prediction(*b, 0);
          j["members"] = *b;
          rows.push_back(j);
        } else {
          const auto& fb = std::get<VoteFallback>(outcome);
          spdlog::warn("{}: {}", r.record_id, fb.reason);
          rows.push_back({{"record_id", r.record_id}, {"fallback", fb.reason}});
        }
      }
      write_jsonl(vote_out, rows);
      return 0;
    }

    if (*opt) {
      const TaskId t = task_arg(opt_task);
      const RecordSet train = load_set(opt_train, t);
      const RecordSet validation = load_set(opt_val, t);
      ChatBackend& scorer = config.optimizer.backend_id.empty() ? pick_backend(rt, g)
                                                                : rt.backend(config.optimizer.backend_id);
      ChatBackend& meta =
          config.optimizer.meta_backend_id.empty() ? scorer : rt.backend(config.optimizer.meta_backend_id);
      const auto lineage = optimize(task_spec(config, t).spec, instruction_for(config, t, opt_instr),
                                    train, validation, scorer, meta, config.optimizer.config);
      emit_json(lineage, opt_out);
      return 0;
    }

    if (*rank) {
      const TaskId t = task_arg(rank_task);
      const RecordSet train = load_set(rank_in, t);
      const std::string instruction = instruction_for(config, t, rank_instr);
      ChatBackend& judge = config.retriever.backend_id.empty() ? pick_backend(rt, g)
                                                               : rt.backend(config.retriever.backend_id);
      std::vector<RankedExampleList> lists;
      if (train.size() < 2) throw ValidationError("rank-contributions needs at least two records");
      for (const auto& q : train) {
        try {
          lists.push_back(contribution_rank(task_spec(config, t).spec, q, train, judge, instruction));
        } catch (const ValidationError&) {
          throw;
        } catch (const Error& e) {
          spdlog::warn("query '{}' dropped: {}", q.record_id, e.what());
        }
      }
      write_ranked_lists(rank_out, lists);
      std::cout << lists.size() << " ranked lists\n";
      return 0;
    }

    if (*train) {
      const TaskId t = task_arg(train_task);
      const RecordSet records = load_set(train_records, t);
      const auto lists = read_ranked_lists(train_lists);
      const RetrieverHead head =
          train_retriever(lists, pick_provider(config, rt), instruction_for(config, t, train_instr),
                          records, config.retriever.trainer);
      write_json_file(train_out, head);
      std::cout << head.meta.n_pairs << " pairs, final loss " << head.meta.final_loss << '\n';
      return 0;
    }

    if (*retrieve) {
      const TaskId t = task_arg(ret_task);
      const RecordSet pool_set = load_set(ret_pool, t);
      const RecordSet queries = load_set(ret_in, t);
      const std::string instruction = instruction_for(config, t, ret_instr);
      EmbeddingProvider& provider = pick_provider(config, rt);
      const RetrieverHead head = ret_head.empty() ? RetrieverHead::identity(provider.dimension())
                                                  : read_json_file(ret_head).get<RetrieverHead>();
      const EmbeddedPool pool(provider, instruction, pool_set);
      std::vector<Json> rows;
      for (const auto& q : queries) {
        const Vector v = embed(provider, instruction, q.question, q.answer);
        Json j = diversity_integrate(head, v, q.record_id, pool);
        j["record_id"] = q.record_id;
        rows.push_back(j);
      }
      write_jsonl(ret_out, rows);
      return 0;
    }

    if (*metrics) {
      const TaskId t = task_arg(met_task);
      const RecordSet records = load_set(met_records, t);
      const auto preds = read_predictions(met_preds);
      const MetricReport r = metric_report(t, preds, records, parse_grouping(met_grouping));
      std::cout << "Acc. | Ken. | Spear.\n" << report_row(r) << '\n';
      if (r.n_failures > 0) std::cout << r.n_failures << " parse failures excluded\n";
      if (!met_out.empty()) write_json_file(met_out, r);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
