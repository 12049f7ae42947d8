#include "aeval/llm_gateway.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "aeval/error.hpp"
#include "aeval/hashing.hpp"
#include "aeval/parallel.hpp"

namespace aeval {

std::string_view to_string(BackendKind kind) {
  return kind == BackendKind::http_chat ? "http_chat" : "mock";
}

BackendKind parse_backend_kind(std::string_view name) {
  if (name == "http_chat") return BackendKind::http_chat;
  if (name == "mock") return BackendKind::mock;
  throw ConfigError("unknown backend kind '" + std::string(name) + "'");
}

std::string_view to_string(MockMode mode) {
  return mode == MockMode::fixture ? "fixture" : "keyed_hash";
}

MockMode parse_mock_mode(std::string_view name) {
  if (name == "keyed_hash") return MockMode::keyed_hash;
  if (name == "fixture") return MockMode::fixture;
  throw ConfigError("unknown mock mode '" + std::string(name) + "'");
}

std::chrono::milliseconds RetryPolicy::delay_after(int attempt) const {
  const double ms = static_cast<double>(base_delay.count()) * std::pow(multiplier, attempt - 1);
  return std::min(max_delay, std::chrono::milliseconds(static_cast<long long>(ms)));
}

void validate_backend_config(const BackendConfig& c) {
  if (c.backend_id.empty()) throw ConfigError("backend_id must be non-empty");
  if (c.decoding.temperature < 0) {
    throw ConfigError("backend '" + c.backend_id + "': temperature must be >= 0");
  }
  if (c.decoding.max_tokens <= 0) {
    throw ConfigError("backend '" + c.backend_id + "': max_tokens must be positive");
  }
  if (c.max_in_flight <= 0) {
    throw ConfigError("backend '" + c.backend_id + "': max_in_flight must be positive");
  }
  if (c.retry.max_attempts <= 0) {
    throw ConfigError("backend '" + c.backend_id + "': retry.max_attempts must be positive");
  }
  if (c.kind == BackendKind::http_chat) {
    if (c.endpoint.empty()) throw ConfigError("backend '" + c.backend_id + "': endpoint required");
    if (c.model_name.empty()) throw ConfigError("backend '" + c.backend_id + "': model_name required");
    if (c.auth_env_var.empty()) {
      throw ConfigError("backend '" + c.backend_id + "': auth_env_var required");
    }
  }
  for (const auto& [id, score] : c.mock.fixture) {
    if (score != kFixtureParseFailure && (score < 1 || score > 5)) {
      throw ConfigError("backend '" + c.backend_id + "': fixture score for '" + id +
                        "' must be 0 (failure) or in [1,5]");
    }
  }
}

// ---------------------------------------------------------------------------
// ResponseCache

ResponseCache::ResponseCache(std::string path) : path_(std::move(path)) {
  std::ifstream in(path_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto obj = nlohmann::json::parse(line);
      entries_[obj.at("key").get<std::string>()] = obj.at("response").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      // A torn final line from an interrupted run; the entry is recomputed.
      spdlog::warn("response cache {}: skipping unreadable line", path_);
    }
  }
}

std::optional<std::string> ResponseCache::get(const std::string& key) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ResponseCache::put(const std::string& key, const std::string& response) {
  std::lock_guard lock(mutex_);
  if (!entries_.emplace(key, response).second) return;
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  out << nlohmann::json{{"key", key}, {"response", response}}.dump() << '\n';
}

std::size_t ResponseCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

// ---------------------------------------------------------------------------
// ChatBackend

ChatBackend::ChatBackend(BackendConfig config)
    : config_(std::move(config)),
      in_flight_(std::make_unique<std::counting_semaphore<>>(config_.max_in_flight)),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
  validate_backend_config(config_);
}

std::string ChatBackend::cache_key(const CompletionRequest& r) const {
  std::ostringstream key;
  key << config_.backend_id << '\n'
      << config_.model_name << '\n'
      << config_.decoding.temperature << '\n'
      << config_.decoding.max_tokens << '\n'
      << static_cast<int>(r.purpose) << '\n'
      << r.record_id << '\n';
  for (const auto& e : r.example_ids) key << e << ',';
  key << '\n';
  for (int s : r.member_scores) key << s << ',';
  key << '\n' << r.prompt;
  return sha256_hex(key.str());
}

std::string ChatBackend::complete(const CompletionRequest& request) {
  std::string key;
  if (cache_) {
    key = cache_key(request);
    if (auto hit = cache_->get(key)) return *hit;
  }

  in_flight_->acquire();
  struct Release {
    std::counting_semaphore<>* s;
    ~Release() { s->release(); }
  } release{in_flight_.get()};

  const int max_attempts = config_.retry.max_attempts;
  for (int attempt = 1;; ++attempt) {
    try {
      ++requests_sent_;
      std::string response = send(request);
      spdlog::debug("backend {}: request {} bytes, response {} bytes (attempt {})",
                    config_.backend_id, request.prompt.size(), response.size(), attempt);
      if (cache_) cache_->put(key, response);
      return response;
    } catch (const TransportError& e) {
      if (!e.transient()) throw;
      if (attempt >= max_attempts) {
        throw TransportError("backend '" + config_.backend_id + "': giving up after " +
                                 std::to_string(attempt) + " attempts: " + e.what(),
                             attempt, true);
      }
      const auto delay = config_.retry.delay_after(attempt);
      spdlog::warn("backend {}: attempt {} failed ({}), retrying in {} ms", config_.backend_id,
                   attempt, e.what(), delay.count());
      sleeper_(delay);
    }
  }
}

std::string complete(ChatBackend& backend, std::string_view prompt) {
  CompletionRequest request;
  request.prompt = std::string(prompt);
  return backend.complete(request);
}

std::unique_ptr<ChatBackend> make_backend(const BackendConfig& config) {
  if (config.kind == BackendKind::http_chat) return std::make_unique<HttpChatBackend>(config);
  return std::make_unique<MockBackend>(config);
}

// ---------------------------------------------------------------------------
// Prompt construction and score parsing

namespace {

constexpr std::string_view kFormatDirective =
    "Respond with exactly two lines and nothing else:\n"
    "SCORE: <an integer from 1 to 5>\n"
    "REASON: <a one-sentence justification>";

constexpr std::string_view kStrictDirective =
    "Your previous reply could not be parsed. Reply with ONLY the two lines below, "
    "replacing the placeholders. The score must be a single digit from 1 to 5.\n"
    "SCORE: <1-5>\n"
    "REASON: <text>";

bool is_word_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u) || c == '_';
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

// First integer in [1,5] that stands alone: not part of a word, a decimal,
// or a negative number.
std::optional<int> first_standalone_score(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    if (!is_digit(s[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && is_digit(s[j])) ++j;
    bool standalone = true;
    if (i > 0) {
      const char p = s[i - 1];
      if (is_word_byte(p) || p == '-' || (p == '.' && i > 1 && is_digit(s[i - 2]))) {
        standalone = false;
      }
    }
    if (j < s.size()) {
      const char n = s[j];
      if (is_word_byte(n) || (n == '.' && j + 1 < s.size() && is_digit(s[j + 1]))) {
        standalone = false;
      }
    }
    if (standalone && j - i <= 3) {
      int value = 0;
      std::from_chars(s.data() + i, s.data() + j, value);
      if (value >= 1 && value <= 5) return value;
    }
    i = j;
  }
  return std::nullopt;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// If `line` is "<label>: rest" (case-insensitive, tolerating markdown
// emphasis around the label), returns rest.
std::optional<std::string_view> labelled_value(std::string_view line, std::string_view label) {
  std::size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '*' ||
                             line[i] == '#' || line[i] == '_' || line[i] == '`')) {
    ++i;
  }
  if (line.size() - i < label.size()) return std::nullopt;
  for (std::size_t k = 0; k < label.size(); ++k) {
    if (std::toupper(static_cast<unsigned char>(line[i + k])) != label[k]) return std::nullopt;
  }
  i += label.size();
  bool colon = false;
  while (i < line.size() && (line[i] == ' ' || line[i] == '*' || line[i] == '_' ||
                             line[i] == '`' || line[i] == ':')) {
    colon = colon || line[i] == ':';
    ++i;
  }
  if (!colon) return std::nullopt;
  return trim(line.substr(i));
}

}  // namespace

std::string_view strict_format_directive() { return kStrictDirective; }

std::string build_scoring_prompt(std::string_view instruction, const EvaluationRecord& record,
                                 std::span<const EvaluationRecord> icl_examples) {
  for (const auto& ex : icl_examples) {
    if (ex.task_id != record.task_id) {
      throw ValidationError("in-context example '" + ex.record_id + "' belongs to task '" +
                            std::string(to_string(ex.task_id)) + "', target is '" +
                            std::string(to_string(record.task_id)) + "'");
    }
    if (!ex.human_score) {
      throw ValidationError("in-context example '" + ex.record_id + "' has no human_score");
    }
  }

  std::string out;
  out.reserve(instruction.size() + record.question.size() + record.answer.size() + 512);
  out += instruction;
  out += "\n\n";
  for (std::size_t i = 0; i < icl_examples.size(); ++i) {
    const auto& ex = icl_examples[i];
    out += "### Example " + std::to_string(i + 1) + "\n";
    out += "Question: " + ex.question + "\n";
    out += "Answer: " + ex.answer + "\n";
    out += "Score: " + std::to_string(*ex.human_score) + "\n\n";
  }
  out += "### Evaluate\n";
  out += "Question: " + record.question + "\n";
  out += "Answer: " + record.answer + "\n\n";
  out += kFormatDirective;
  return out;
}

std::optional<ParsedScore> try_parse_score(std::string_view raw) noexcept {
  try {
    std::optional<int> score;
    std::optional<std::string_view> reason;
    std::size_t start = 0;
    while (start <= raw.size()) {
      auto end = raw.find('\n', start);
      if (end == std::string_view::npos) end = raw.size();
      const std::string_view line = raw.substr(start, end - start);
      if (!score) {
        if (auto v = labelled_value(line, "SCORE")) score = first_standalone_score(*v);
      }
      if (!reason) reason = labelled_value(line, "REASON");
      start = end + 1;
    }
    if (!score) score = first_standalone_score(raw);
    if (!score) return std::nullopt;
    return ParsedScore{*score, reason ? std::string(*reason) : std::string()};
  } catch (...) {
    return std::nullopt;
  }
}

ParsedScore parse_score(std::string_view raw) {
  if (auto p = try_parse_score(raw)) return *p;
  throw ParseError("no score in [1,5] found in response");
}

ScoredPrediction score_record(ChatBackend& backend, std::string_view instruction,
                              const EvaluationRecord& record,
                              std::span<const EvaluationRecord> icl_examples,
                              int instruction_version) {
  CompletionRequest request;
  request.prompt = build_scoring_prompt(instruction, record, icl_examples);
  request.purpose = RequestPurpose::score;
  request.record_id = record.record_id;
  for (const auto& ex : icl_examples) request.example_ids.push_back(ex.record_id);

  ScoredPrediction pred;
  pred.record_id = record.record_id;
  pred.backend_id = backend.id();
  pred.instruction_version = instruction_version;
  pred.icl_example_ids = request.example_ids;

  pred.raw_response = backend.complete(request);
  auto parsed = try_parse_score(pred.raw_response);
  if (!parsed) {
    request.prompt += "\n\n";
    request.prompt += kStrictDirective;
    request.reprompt = 1;
    pred.raw_response = backend.complete(request);
    parsed = try_parse_score(pred.raw_response);
  }
  if (parsed) {
    pred.predicted_score = parsed->score;
    pred.reason = parsed->reason;
  } else {
    spdlog::warn("backend {}: unparseable score for record {}", backend.id(), record.record_id);
  }
  return pred;
}

std::vector<ScoredPrediction> score_records(ChatBackend& backend, std::string_view instruction,
                                            std::span<const EvaluationRecord> records,
                                            int instruction_version) {
  std::vector<ScoredPrediction> out(records.size());
  parallel_for(records.size(), static_cast<std::size_t>(backend.config().max_in_flight),
               [&](std::size_t i) {
                 out[i] = score_record(backend, instruction, records[i], {}, instruction_version);
               });
  return out;
}

}  // namespace aeval
