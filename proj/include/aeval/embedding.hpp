#pragma once

#include <Eigen/Dense>

#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>

#include "aeval/llm_gateway.hpp"

namespace aeval {

using Vector = Eigen::VectorXd;

enum class ProviderMode { api, deterministic_test };

std::string_view to_string(ProviderMode mode);
ProviderMode parse_provider_mode(std::string_view name);

struct ProviderConfig {
  std::string provider_id;
  ProviderMode mode = ProviderMode::deterministic_test;
  std::size_t dimension = 64;
  std::string endpoint;  // OpenAI-compatible /embeddings URL, api only
  std::string model_name;
  std::string auth_env_var;
  int timeout_seconds = 60;
  RetryPolicy retry;
};

void validate_provider_config(const ProviderConfig& config);

/// Frozen text encoder. Every vector it returns has length dimension().
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual const std::string& id() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual Vector embed_text(std::string_view text) = 0;
};

/// Signed feature hashing of lowercase word unigrams and bigrams, L2
/// normalised. A pure function of (provider_id, text).
class HashEmbeddingProvider final : public EmbeddingProvider {
 public:
  HashEmbeddingProvider(std::string provider_id, std::size_t dimension);

  const std::string& id() const override { return id_; }
  std::size_t dimension() const override { return dimension_; }
  Vector embed_text(std::string_view text) override;

 private:
  std::string id_;
  std::size_t dimension_;
};

/// POSTs {"model","input"} to an OpenAI-compatible embeddings endpoint and
/// reads data[0].embedding, retrying transient failures like ChatBackend.
class ApiEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit ApiEmbeddingProvider(ProviderConfig config);

  const std::string& id() const override { return config_.provider_id; }
  std::size_t dimension() const override { return config_.dimension; }
  Vector embed_text(std::string_view text) override;

 private:
  ProviderConfig config_;
};

/// Memoises another provider keyed by (provider_id, sha256(text)). With a
/// path, entries are loaded at construction and appended as JSONL.
class CachedEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit CachedEmbeddingProvider(std::shared_ptr<EmbeddingProvider> inner, std::string path = {});

  const std::string& id() const override { return inner_->id(); }
  std::size_t dimension() const override { return inner_->dimension(); }
  Vector embed_text(std::string_view text) override;

  std::size_t hits() const { return hits_; }
  std::size_t size() const;

 private:
  std::shared_ptr<EmbeddingProvider> inner_;
  std::string path_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, Vector> entries_;
  std::size_t hits_ = 0;
};

std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& config);

/// Tower input text: instruction, then the question and answer behind fixed
/// separators.
std::string embedding_input(std::string_view instruction, std::string_view question,
                            std::string_view answer);

/// Embedding of instruction ⊕ (question, answer). Throws ValidationError if
/// the provider returns the wrong length.
Vector embed(EmbeddingProvider& provider, std::string_view instruction, std::string_view question,
             std::string_view answer);

}  // namespace aeval
