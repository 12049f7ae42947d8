#include <cmath>
#include <numeric>

#include "aeval/error.hpp"
#include "aeval/hashing.hpp"
#include "aeval/llm_gateway.hpp"

namespace aeval {

MockBackend::MockBackend(BackendConfig config) : ChatBackend(std::move(config)) {}

MockBackend::MockBackend(BackendConfig config, Responder responder)
    : ChatBackend(std::move(config)), responder_(std::move(responder)) {}

int MockBackend::hash_score(std::string_view backend_id, std::string_view prompt) {
  return static_cast<int>(keyed_hash64(backend_id, prompt) % 5) + 1;
}

std::string MockBackend::format_reply(int score, std::string_view reason) {
  return "SCORE: " + std::to_string(score) + "\nREASON: " + std::string(reason);
}

std::string MockBackend::send(const CompletionRequest& request) {
  if (responder_) return responder_(request);

  switch (request.purpose) {
    case RequestPurpose::integrate: {
      if (request.member_scores.empty()) break;
      // Mean rounded half up; integer arithmetic keeps .5 exact.
      const int n = static_cast<int>(request.member_scores.size());
      const int sum = std::accumulate(request.member_scores.begin(), request.member_scores.end(), 0);
      const int rounded = (2 * sum + n) / (2 * n);
      return format_reply(rounded, "mean of judge scores");
    }
    case RequestPurpose::optimize_instruction:
      return "<INSTRUCTION>" + request.current_instruction + "</INSTRUCTION>";
    case RequestPurpose::score:
      if (config().mock.mode == MockMode::fixture) {
        auto it = config().mock.fixture.find(request.record_id);
        if (it != config().mock.fixture.end()) {
          if (it->second == kFixtureParseFailure) return "no verdict available";
          return format_reply(it->second, "fixture");
        }
      }
      break;
  }
  const int score = hash_score(id(), request.prompt);
  return format_reply(score, "keyed-hash mock verdict");
}

}  // namespace aeval
