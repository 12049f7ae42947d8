#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "aeval/error.hpp"
#include "aeval/llm_gateway.hpp"

namespace aeval {

using nlohmann::json;

namespace {

// Splits "https://host:port/v1/chat/completions" into base and path.
std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint '" + url + "' has no scheme");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpChatBackend::HttpChatBackend(BackendConfig config) : ChatBackend(std::move(config)) {
  std::tie(base_, path_) = split_url(this->config().endpoint);
}

std::string HttpChatBackend::build_request_body(const BackendConfig& config,
                                                std::string_view prompt) {
  json body = {{"model", config.model_name},
               {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
               {"temperature", config.decoding.temperature},
               {"max_tokens", config.decoding.max_tokens}};
  return body.dump();
}

std::string HttpChatBackend::extract_content(std::string_view body) {
  json parsed;
  try {
    parsed = json::parse(body);
  } catch (const json::parse_error& e) {
    throw TransportError(std::string("invalid JSON in response: ") + e.what(), 1, false);
  }
  try {
    return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception&) {
    throw TransportError("response has no choices[0].message.content", 1, false);
  }
}

std::string HttpChatBackend::send(const CompletionRequest& request) {
  const char* credential = std::getenv(config().auth_env_var.c_str());
  if (credential == nullptr || *credential == '\0') {
    throw ConfigError("backend '" + id() + "': environment variable " + config().auth_env_var +
                      " is not set");
  }

  httplib::Client client(base_);
  client.set_connection_timeout(config().timeout_seconds, 0);
  client.set_read_timeout(config().timeout_seconds, 0);
  client.set_write_timeout(config().timeout_seconds, 0);
  const httplib::Headers headers = {{"Authorization", std::string("Bearer ") + credential}};

  auto res = client.Post(path_, headers, build_request_body(config(), request.prompt),
                         "application/json");
  if (!res) {
    throw TransportError("request to " + base_ + path_ + " failed: " +
                             httplib::to_string(res.error()),
                         1, true);
  }
  if (res->status == 429 || res->status >= 500) {
    throw TransportError("HTTP " + std::to_string(res->status) + " from " + base_, 1, true);
  }
  if (res->status != 200) {
    throw TransportError("HTTP " + std::to_string(res->status) + " from " + base_ + ": " +
                             res->body.substr(0, 200),
                         1, false);
  }
  return extract_content(res->body);
}

}  // namespace aeval
