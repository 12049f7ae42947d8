#include "aeval/config.hpp"

#include <set>

#include "aeval/error.hpp"
#include "aeval/serialization.hpp"

namespace aeval {

using nlohmann::json;

std::string_view to_string(Strategy s) { return s == Strategy::voting ? "voting" : "best_llm"; }

Strategy parse_strategy(std::string_view name) {
  if (name == "best_llm") return Strategy::best_llm;
  if (name == "voting") return Strategy::voting;
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  if (path.is_absolute() || base.empty()) return path;
  return (base / path).lexically_normal();
}

}  // namespace

BackendConfig parse_backend_config(const json& j, const std::filesystem::path& base_dir) {
  BackendConfig c;
  c.backend_id = get_or<std::string>(j, "backend_id", "");
  c.kind = parse_backend_kind(get_or<std::string>(j, "kind", "mock"));
  c.endpoint = get_or<std::string>(j, "endpoint", "");
  c.model_name = get_or<std::string>(j, "model_name", "");
  c.decoding.temperature = get_or(j, "temperature", 0.0);
  c.decoding.max_tokens = get_or(j, "max_tokens", 512);
  c.auth_env_var = get_or<std::string>(j, "auth_env_var", "");
  c.max_in_flight = get_or(j, "max_in_flight", 4);
  c.timeout_seconds = get_or(j, "timeout_seconds", 60);
  if (auto it = j.find("retry"); it != j.end()) {
    c.retry.max_attempts = get_or(*it, "max_attempts", c.retry.max_attempts);
    c.retry.base_delay = std::chrono::milliseconds(get_or<long long>(*it, "base_delay_ms", 250));
    c.retry.multiplier = get_or(*it, "multiplier", c.retry.multiplier);
    c.retry.max_delay = std::chrono::milliseconds(get_or<long long>(*it, "max_delay_ms", 8000));
  }
  if (auto it = j.find("mock"); it != j.end()) {
    c.mock.mode = parse_mock_mode(get_or<std::string>(*it, "mode", "keyed_hash"));
    c.mock.fixture = get_or(*it, "fixture", std::map<std::string, int>{});
    const std::string fixture_path = get_or<std::string>(*it, "fixture_path", "");
    if (!fixture_path.empty()) {
      const json table = read_json_file(resolve(base_dir, fixture_path));
      for (const auto& [id, score] : table.items()) c.mock.fixture[id] = score.get<int>();
    }
  }
  validate_backend_config(c);
  return c;
}

ProviderConfig parse_provider_config(const json& j) {
  ProviderConfig c;
  c.provider_id = get_or<std::string>(j, "provider_id", "");
  c.mode = parse_provider_mode(get_or<std::string>(j, "mode", "deterministic_test"));
  c.dimension = get_or<std::size_t>(j, "dimension", 64);
  c.endpoint = get_or<std::string>(j, "endpoint", "");
  c.model_name = get_or<std::string>(j, "model_name", "");
  c.auth_env_var = get_or<std::string>(j, "auth_env_var", "");
  c.timeout_seconds = get_or(j, "timeout_seconds", 60);
  validate_provider_config(c);
  return c;
}

RunConfig parse_run_config(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  c.run_id = get_or<std::string>(j, "run_id", "");
  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  c.dataset = resolve(base_dir, get_or<std::string>(j, "dataset", ""));
  c.artifact_dir = resolve(base_dir, get_or<std::string>(j, "artifact_dir", "runs"));
  c.cache = get_or(j, "cache", true);
  c.evaluation_split = get_or<std::string>(j, "evaluation_split", "final");
  c.integrator_backend_id = get_or<std::string>(j, "integrator_backend_id", "");
  c.gold_fixture_backends = get_or(j, "gold_fixture_backends", std::vector<std::string>{});

  for (const auto& t : get_or(j, "tasks", json::array())) {
    TaskRunSpec spec;
    try {
      spec.spec.task_id = parse_task_id(get_or<std::string>(t, "task", ""));
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    }
    spec.spec.display_name =
        get_or<std::string>(t, "display_name", std::string(default_display_name(spec.spec.task_id)));
    spec.spec.initial_instruction = get_or<std::string>(
        t, "initial_instruction", std::string(default_instruction(spec.spec.task_id)));
    spec.strategy = parse_strategy(get_or<std::string>(t, "strategy", "best_llm"));
    c.tasks.push_back(std::move(spec));
  }
  if (c.tasks.empty()) {
    for (TaskId t : kAllTasks) {
      c.tasks.push_back({{t, std::string(default_display_name(t)), std::string(default_instruction(t))},
                         Strategy::best_llm});
    }
  }
  for (const auto& b : get_or(j, "backends", json::array())) {
    c.backends.push_back(parse_backend_config(b, base_dir));
  }
  for (const auto& p : get_or(j, "providers", json::array())) {
    c.providers.push_back(parse_provider_config(p));
  }

  c.split_seed = c.seed;
  if (auto it = j.find("split"); it != j.end()) {
    const auto f = get_or(*it, "fractions", std::vector<double>{0.2, 0.2, 0.6});
    if (f.size() != 3) throw ConfigError("split.fractions needs exactly three values");
    c.fractions = {f[0], f[1], f[2]};
    c.split_seed = get_or<std::uint64_t>(*it, "seed", c.seed);
  }

  c.optimizer.config.seed = c.seed;
  if (auto it = j.find("optimizer"); it != j.end()) {
    auto& o = c.optimizer;
    o.enabled = get_or(*it, "enabled", true);
    o.config.samples_per_iteration = get_or(*it, "samples_per_iteration", o.config.samples_per_iteration);
    o.config.max_iterations = get_or(*it, "max_iterations", o.config.max_iterations);
    o.config.patience = get_or(*it, "patience", o.config.patience);
    o.config.seed = get_or<std::uint64_t>(*it, "seed", c.seed);
    o.backend_id = get_or<std::string>(*it, "backend_id", "");
    o.meta_backend_id = get_or<std::string>(*it, "meta_backend_id", "");
  }

  if (auto it = j.find("selection"); it != j.end()) {
    c.selection.metric = parse_selection_metric(get_or<std::string>(*it, "metric", "mean_of_three"));
    c.selection.grouping = parse_grouping(get_or<std::string>(*it, "grouping", "per_question"));
  }
  c.optimizer.config.metric = c.selection.metric;
  c.optimizer.config.grouping = c.selection.grouping;

  c.retriever.trainer.seed = c.seed;
  if (auto it = j.find("retriever"); it != j.end()) {
    auto& r = c.retriever;
    r.provider_id = get_or<std::string>(*it, "provider_id", "");
    r.backend_id = get_or<std::string>(*it, "backend_id", "");
    r.trainer.steps = get_or(*it, "steps", r.trainer.steps);
    r.trainer.learning_rate = get_or(*it, "learning_rate", r.trainer.learning_rate);
    r.trainer.batch_size = get_or(*it, "batch_size", r.trainer.batch_size);
    r.trainer.seed = get_or<std::uint64_t>(*it, "seed", c.seed);
    r.trainer.d_out = get_or<std::size_t>(*it, "d_out", 0);
    r.trainer.form = parse_loss_form(get_or<std::string>(*it, "form", "logistic"));
    r.trainer.momentum = get_or(*it, "momentum", 0.0);
    r.max_queries = get_or<std::size_t>(*it, "max_queries", 0);
    r.max_candidates = get_or<std::size_t>(*it, "max_candidates", 0);
    r.examples = get_or<std::size_t>(*it, "examples", 4);
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = read_json_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(j, path.parent_path());
}

json run_config_to_json(const RunConfig& c) {
  json tasks = json::array();
  for (const auto& t : c.tasks) {
    tasks.push_back({{"task", to_string(t.spec.task_id)},
                     {"display_name", t.spec.display_name},
                     {"initial_instruction", t.spec.initial_instruction},
                     {"strategy", to_string(t.strategy)}});
  }
  json backends = json::array();
  for (const auto& b : c.backends) {
    backends.push_back({{"backend_id", b.backend_id},
                        {"kind", to_string(b.kind)},
                        {"endpoint", b.endpoint},
                        {"model_name", b.model_name},
                        {"temperature", b.decoding.temperature},
                        {"max_tokens", b.decoding.max_tokens},
                        {"auth_env_var", b.auth_env_var},
                        {"max_in_flight", b.max_in_flight},
                        {"timeout_seconds", b.timeout_seconds},
                        {"retry",
                         {{"max_attempts", b.retry.max_attempts},
                          {"base_delay_ms", b.retry.base_delay.count()},
                          {"multiplier", b.retry.multiplier},
                          {"max_delay_ms", b.retry.max_delay.count()}}},
                        {"mock", {{"mode", to_string(b.mock.mode)}, {"fixture", b.mock.fixture}}}});
  }
  json providers = json::array();
  for (const auto& p : c.providers) {
    providers.push_back({{"provider_id", p.provider_id},
                         {"mode", to_string(p.mode)},
                         {"dimension", p.dimension},
                         {"endpoint", p.endpoint},
                         {"model_name", p.model_name},
                         {"auth_env_var", p.auth_env_var},
                         {"timeout_seconds", p.timeout_seconds}});
  }
  const auto& o = c.optimizer;
  const auto& r = c.retriever;
  return json{
      {"run_id", c.run_id},
      {"seed", c.seed},
      {"dataset", c.dataset.string()},
      {"artifact_dir", c.artifact_dir.string()},
      {"cache", c.cache},
      {"evaluation_split", c.evaluation_split},
      {"integrator_backend_id", c.integrator_backend_id},
      {"gold_fixture_backends", c.gold_fixture_backends},
      {"tasks", tasks},
      {"backends", backends},
      {"providers", providers},
      {"split",
       {{"fractions", {c.fractions.train, c.fractions.test, c.fractions.final}}, {"seed", c.split_seed}}},
      {"optimizer",
       {{"enabled", o.enabled},
        {"samples_per_iteration", o.config.samples_per_iteration},
        {"max_iterations", o.config.max_iterations},
        {"patience", o.config.patience},
        {"seed", o.config.seed},
        {"backend_id", o.backend_id},
        {"meta_backend_id", o.meta_backend_id}}},
      {"selection",
       {{"metric", to_string(c.selection.metric)}, {"grouping", to_string(c.selection.grouping)}}},
      {"retriever",
       {{"provider_id", r.provider_id},
        {"backend_id", r.backend_id},
        {"steps", r.trainer.steps},
        {"learning_rate", r.trainer.learning_rate},
        {"batch_size", r.trainer.batch_size},
        {"seed", r.trainer.seed},
        {"d_out", r.trainer.d_out},
        {"form", to_string(r.trainer.form)},
        {"momentum", r.trainer.momentum},
        {"max_queries", r.max_queries},
        {"max_candidates", r.max_candidates},
        {"examples", r.examples}}}};
}

void validate_run_config(const RunConfig& c) {
  std::vector<TaskSpec> specs;
  for (const auto& t : c.tasks) specs.push_back(t.spec);
  try {
    validate_task_specs(specs);
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  if (c.backends.empty()) throw ConfigError("config needs at least one backend");
  std::set<std::string> backend_ids;
  for (const auto& b : c.backends) {
    if (!backend_ids.insert(b.backend_id).second) {
      throw ConfigError("duplicate backend_id '" + b.backend_id + "'");
    }
  }
  std::set<std::string> provider_ids;
  for (const auto& p : c.providers) {
    if (!provider_ids.insert(p.provider_id).second) {
      throw ConfigError("duplicate provider_id '" + p.provider_id + "'");
    }
  }
  if (c.providers.empty()) throw ConfigError("config needs at least one embedding provider");

  auto check_backend = [&](const std::string& id, const char* field) {
    if (!id.empty() && backend_ids.count(id) == 0) {
      throw ConfigError(std::string(field) + " references unknown backend '" + id + "'");
    }
  };
  check_backend(c.optimizer.backend_id, "optimizer.backend_id");
  check_backend(c.optimizer.meta_backend_id, "optimizer.meta_backend_id");
  check_backend(c.integrator_backend_id, "integrator_backend_id");
  check_backend(c.retriever.backend_id, "retriever.backend_id");
  for (const auto& id : c.gold_fixture_backends) {
    check_backend(id, "gold_fixture_backends");
    for (const auto& b : c.backends) {
      if (b.backend_id == id && b.kind != BackendKind::mock) {
        throw ConfigError("gold_fixture_backends: '" + id + "' is not a mock backend");
      }
    }
  }
  if (!c.retriever.provider_id.empty() && provider_ids.count(c.retriever.provider_id) == 0) {
    throw ConfigError("retriever.provider_id references unknown provider '" +
                      c.retriever.provider_id + "'");
  }
  if (c.evaluation_split != "final" && c.evaluation_split != "test") {
    throw ConfigError("evaluation_split must be 'final' or 'test'");
  }
  const auto& f = c.fractions;
  if (f.train < 0 || f.test < 0 || f.final < 0 || std::abs(f.train + f.test + f.final - 1.0) > 1e-9) {
    throw ConfigError("split.fractions must be non-negative and sum to 1");
  }
  if (c.dataset.empty()) throw ConfigError("config needs a dataset path");
  if (c.retriever.examples == 0 || c.retriever.examples > 4) {
    throw ConfigError("retriever.examples must be in [1,4]");
  }
}

void apply_seed_override(RunConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.split_seed = seed;
  c.optimizer.config.seed = seed;
  c.retriever.trainer.seed = seed;
}

}  // namespace aeval
