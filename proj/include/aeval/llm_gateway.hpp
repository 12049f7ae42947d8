#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "aeval/dataset.hpp"

namespace aeval {

enum class BackendKind { http_chat, mock };

std::string_view to_string(BackendKind kind);
BackendKind parse_backend_kind(std::string_view name);

struct Decoding {
  double temperature = 0.0;
  int max_tokens = 512;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{250};
  double multiplier = 2.0;
  std::chrono::milliseconds max_delay{8000};

  /// Delay before attempt `attempt + 1`, for 1-based `attempt`.
  std::chrono::milliseconds delay_after(int attempt) const;
};

enum class MockMode {
  keyed_hash,  // score derived from a keyed hash of the prompt
  fixture,     // score looked up by record_id; unknown ids fall back to keyed_hash
};

std::string_view to_string(MockMode mode);
MockMode parse_mock_mode(std::string_view name);

// Fixture score 0 makes the mock emit an unparseable reply for that record,
// which is how tests inject parse failures.
inline constexpr int kFixtureParseFailure = 0;

struct MockSettings {
  MockMode mode = MockMode::keyed_hash;
  std::map<std::string, int> fixture;
};

struct BackendConfig {
  std::string backend_id;
  BackendKind kind = BackendKind::mock;
  std::string endpoint;  // full chat-completions URL, http_chat only
  std::string model_name;
  Decoding decoding;
  std::string auth_env_var;
  int max_in_flight = 4;
  int timeout_seconds = 60;
  RetryPolicy retry;
  MockSettings mock;
};

/// Throws ConfigError on an invalid or incomplete configuration.
void validate_backend_config(const BackendConfig& config);

enum class RequestPurpose { score, integrate, optimize_instruction };

// Everything except `prompt` is side metadata: transport backends ignore it,
// the mock backend uses it to honour fixtures and scripted behaviour.
struct CompletionRequest {
  std::string prompt;
  RequestPurpose purpose = RequestPurpose::score;
  std::string record_id;
  std::vector<std::string> example_ids;
  std::vector<int> member_scores;
  std::string current_instruction;
  int reprompt = 0;
};

/// Thread-safe response cache keyed by content hash, optionally persisted as
/// JSONL (one {"key","response"} object per line, appended on insert).
class ResponseCache {
 public:
  ResponseCache() = default;
  explicit ResponseCache(std::string path);

  std::optional<std::string> get(const std::string& key) const;
  void put(const std::string& key, const std::string& response);
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::string> entries_;
  std::string path_;
};

class ChatBackend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit ChatBackend(BackendConfig config);
  virtual ~ChatBackend() = default;
  ChatBackend(const ChatBackend&) = delete;
  ChatBackend& operator=(const ChatBackend&) = delete;

  const BackendConfig& config() const { return config_; }
  const std::string& id() const { return config_.backend_id; }

  /// Cache lookup, then up to retry.max_attempts sends with exponential
  /// backoff on transient failures. Blocks while max_in_flight calls run.
  std::string complete(const CompletionRequest& request);

  std::size_t requests_sent() const { return requests_sent_.load(); }
  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }
  void attach_cache(std::shared_ptr<ResponseCache> cache) { cache_ = std::move(cache); }

 protected:
  /// One attempt. Throws TransportError (transient or not) or ConfigError.
  virtual std::string send(const CompletionRequest& request) = 0;

 private:
  std::string cache_key(const CompletionRequest& request) const;

  BackendConfig config_;
  std::unique_ptr<std::counting_semaphore<>> in_flight_;
  std::atomic<std::size_t> requests_sent_{0};
  Sleeper sleeper_;
  std::shared_ptr<ResponseCache> cache_;
};

/// Plain-prompt convenience overload.
std::string complete(ChatBackend& backend, std::string_view prompt);

class MockBackend final : public ChatBackend {
 public:
  using Responder = std::function<std::string(const CompletionRequest&)>;

  explicit MockBackend(BackendConfig config);
  /// Scripted mock: `responder` answers every request.
  MockBackend(BackendConfig config, Responder responder);

  /// Built-in keyed-hash score in [1,5] for a prompt.
  static int hash_score(std::string_view backend_id, std::string_view prompt);
  static std::string format_reply(int score, std::string_view reason);

 protected:
  std::string send(const CompletionRequest& request) override;

 private:
  Responder responder_;
};

class HttpChatBackend final : public ChatBackend {
 public:
  explicit HttpChatBackend(BackendConfig config);

  static std::string build_request_body(const BackendConfig& config, std::string_view prompt);
  /// choices[0].message.content of an OpenAI-compatible response body.
  static std::string extract_content(std::string_view body);

 protected:
  std::string send(const CompletionRequest& request) override;

 private:
  std::string base_;  // scheme://host[:port]
  std::string path_;
};

std::unique_ptr<ChatBackend> make_backend(const BackendConfig& config);

struct ScoredPrediction {
  std::string record_id;
  std::string backend_id;
  int instruction_version = 0;
  std::optional<int> predicted_score;  // nullopt marks a double parse failure
  std::string reason;
  std::string raw_response;
  std::vector<std::string> icl_example_ids;

  bool failed() const { return !predicted_score.has_value(); }
};

struct ParsedScore {
  int score;
  std::string reason;
};

/// Instruction, scored examples, target pair, and the SCORE/REASON format
/// directive, in that order.
std::string build_scoring_prompt(std::string_view instruction, const EvaluationRecord& record,
                                 std::span<const EvaluationRecord> icl_examples);

/// Appended on the single reprompt after an unparseable reply.
std::string_view strict_format_directive();

/// Throws ParseError when no score in [1,5] can be found.
ParsedScore parse_score(std::string_view raw);
std::optional<ParsedScore> try_parse_score(std::string_view raw) noexcept;

ScoredPrediction score_record(ChatBackend& backend, std::string_view instruction,
                              const EvaluationRecord& record,
                              std::span<const EvaluationRecord> icl_examples,
                              int instruction_version = 0);

/// Zero-shot scoring of every record, up to max_in_flight at a time. Output
/// order matches input order.
std::vector<ScoredPrediction> score_records(ChatBackend& backend, std::string_view instruction,
                                            std::span<const EvaluationRecord> records,
                                            int instruction_version = 0);

}  // namespace aeval
