#include "aeval/embedding.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "aeval/error.hpp"
#include "aeval/hashing.hpp"

namespace aeval {

using nlohmann::json;

std::string_view to_string(ProviderMode mode) {
  return mode == ProviderMode::api ? "api" : "deterministic_test";
}

ProviderMode parse_provider_mode(std::string_view name) {
  if (name == "api") return ProviderMode::api;
  if (name == "deterministic_test") return ProviderMode::deterministic_test;
  throw ConfigError("unknown provider mode '" + std::string(name) + "'");
}

void validate_provider_config(const ProviderConfig& c) {
  if (c.provider_id.empty()) throw ConfigError("provider_id must be non-empty");
  if (c.dimension == 0) throw ConfigError("provider '" + c.provider_id + "': dimension must be > 0");
  if (c.mode == ProviderMode::api &&
      (c.endpoint.empty() || c.model_name.empty() || c.auth_env_var.empty())) {
    throw ConfigError("provider '" + c.provider_id +
                      "': api mode needs endpoint, model_name and auth_env_var");
  }
}

// ---------------------------------------------------------------------------

HashEmbeddingProvider::HashEmbeddingProvider(std::string provider_id, std::size_t dimension)
    : id_(std::move(provider_id)), dimension_(dimension) {
  if (dimension_ == 0) throw ConfigError("embedding dimension must be > 0");
}

Vector HashEmbeddingProvider::embed_text(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (u >= 0x80 || std::isalnum(u)) {
      current.push_back(static_cast<char>(std::tolower(u)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));

  Vector v = Vector::Zero(static_cast<Eigen::Index>(dimension_));
  auto add = [&](std::string_view feature, double weight) {
    const std::uint64_t h = keyed_hash64(id_, feature);
    const auto slot = static_cast<Eigen::Index>(h % dimension_);
    v[slot] += (h >> 63) != 0 ? -weight : weight;
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    add(tokens[i], 1.0);
    if (i + 1 < tokens.size()) add(tokens[i] + ' ' + tokens[i + 1], 0.5);
  }
  if (tokens.empty()) add(text, 1.0);

  const double norm = v.norm();
  if (norm > 0) v /= norm;
  return v;
}

// ---------------------------------------------------------------------------

ApiEmbeddingProvider::ApiEmbeddingProvider(ProviderConfig config) : config_(std::move(config)) {
  validate_provider_config(config_);
}

Vector ApiEmbeddingProvider::embed_text(std::string_view text) {
  const char* credential = std::getenv(config_.auth_env_var.c_str());
  if (credential == nullptr || *credential == '\0') {
    throw ConfigError("provider '" + config_.provider_id + "': environment variable " +
                      config_.auth_env_var + " is not set");
  }
  const auto scheme_end = config_.endpoint.find("://");
  const auto path_start =
      scheme_end == std::string::npos ? std::string::npos : config_.endpoint.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    throw ConfigError("provider '" + config_.provider_id + "': endpoint needs scheme and path");
  }
  const std::string base = config_.endpoint.substr(0, path_start);
  const std::string path = config_.endpoint.substr(path_start);
  const std::string body = json{{"model", config_.model_name}, {"input", text}}.dump();
  const httplib::Headers headers = {{"Authorization", std::string("Bearer ") + credential}};

  for (int attempt = 1;; ++attempt) {
    std::string failure;
    httplib::Client client(base);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      failure = httplib::to_string(res.error());
    } else if (res->status == 429 || res->status >= 500) {
      failure = "HTTP " + std::to_string(res->status);
    } else if (res->status != 200) {
      throw TransportError("embedding request: HTTP " + std::to_string(res->status), attempt, false);
    } else {
      try {
        const auto values = json::parse(res->body).at("data").at(0).at("embedding");
        Vector v(static_cast<Eigen::Index>(values.size()));
        for (std::size_t i = 0; i < values.size(); ++i) {
          v[static_cast<Eigen::Index>(i)] = values[i].get<double>();
        }
        return v;
      } catch (const json::exception& e) {
        throw TransportError(std::string("embedding response malformed: ") + e.what(), attempt,
                             false);
      }
    }
    if (attempt >= config_.retry.max_attempts) {
      throw TransportError("embedding request failed after " + std::to_string(attempt) +
                               " attempts: " + failure,
                           attempt, true);
    }
    std::this_thread::sleep_for(config_.retry.delay_after(attempt));
  }
}

// ---------------------------------------------------------------------------

CachedEmbeddingProvider::CachedEmbeddingProvider(std::shared_ptr<EmbeddingProvider> inner,
                                                 std::string path)
    : inner_(std::move(inner)), path_(std::move(path)) {
  if (path_.empty()) return;
  std::ifstream in(path_);
  std::string line;
  while (std::getline(in, line)) {
    try {
      auto obj = json::parse(line);
      if (obj.at("provider_id").get<std::string>() != inner_->id()) continue;
      const auto& values = obj.at("vector");
      Vector v(static_cast<Eigen::Index>(values.size()));
      for (std::size_t i = 0; i < values.size(); ++i) {
        v[static_cast<Eigen::Index>(i)] = values[i].get<double>();
      }
      if (static_cast<std::size_t>(v.size()) != inner_->dimension()) continue;
      entries_[obj.at("content_hash").get<std::string>()] = std::move(v);
    } catch (const json::exception&) {
      spdlog::warn("embedding cache {}: skipping unreadable line", path_);
    }
  }
}

Vector CachedEmbeddingProvider::embed_text(std::string_view text) {
  const std::string key = sha256_hex(text);
  {
    std::lock_guard lock(mutex_);
    if (auto it = entries_.find(key); it != entries_.end()) {
      ++hits_;
      return it->second;
    }
  }
  Vector v = inner_->embed_text(text);
  std::lock_guard lock(mutex_);
  if (entries_.emplace(key, v).second && !path_.empty()) {
    std::ofstream out(path_, std::ios::app);
    out << json{{"provider_id", inner_->id()},
                {"content_hash", key},
                {"vector", std::vector<double>(v.data(), v.data() + v.size())}}
               .dump()
        << '\n';
  }
  return v;
}

std::size_t CachedEmbeddingProvider::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& config) {
  validate_provider_config(config);
  if (config.mode == ProviderMode::api) return std::make_unique<ApiEmbeddingProvider>(config);
  return std::make_unique<HashEmbeddingProvider>(config.provider_id, config.dimension);
}

std::string embedding_input(std::string_view instruction, std::string_view question,
                            std::string_view answer) {
  std::string out(instruction);
  out += "\n[QUESTION]\n";
  out += question;
  out += "\n[ANSWER]\n";
  out += answer;
  return out;
}

Vector embed(EmbeddingProvider& provider, std::string_view instruction, std::string_view question,
             std::string_view answer) {
  Vector v = provider.embed_text(embedding_input(instruction, question, answer));
  if (static_cast<std::size_t>(v.size()) != provider.dimension()) {
    throw ValidationError("provider '" + provider.id() + "' returned a vector of length " +
                          std::to_string(v.size()) + ", expected " +
                          std::to_string(provider.dimension()));
  }
  return v;
}

}  // namespace aeval
