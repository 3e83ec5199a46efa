#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "comma/types.hpp"

namespace comma {

struct EmbeddingVector {
  Vector values;
  std::string provider_tag;
  std::uint64_t content_hash = 0;
};

struct ProviderConfig {
  enum class Kind { Stub, Remote };
  Kind kind = Kind::Stub;
  int dim = 64;
  std::string endpoint;    // remote only, e.g. http://host:port/v1/embeddings
  std::string model;       // remote only
  std::string auth_env;    // name of env var holding the token
  double timeout_seconds = 30.0;
  int max_retries = 3;
};

/// Deterministic bag-of-tokens hash embedding. Tokens are lowercased runs of
/// alphanumerics; each token contributes +-1 at a hashed index; the result is
/// L2-normalized (zero vector for empty text). Hashes are FNV-1a 64 using
/// kStubIndexSeed / kStubSignSeed as the initial basis, so the construction
/// can be reproduced independently.
inline constexpr std::uint64_t kStubIndexSeed = 0x9E3779B97F4A7C15ull;
inline constexpr std::uint64_t kStubSignSeed = 0xC2B2AE3D27D4EB4Full;

EmbeddingVector embed_stub(const std::string& text, int dim);

class Provider {
 public:
  virtual ~Provider() = default;
  virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
  virtual std::string tag() const = 0;
  virtual int dim() const = 0;
};

class StubProvider : public Provider {
 public:
  explicit StubProvider(int dim) : dim_(dim) { require(dim > 0, "stub provider: dim must be > 0"); }
  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;
  std::string tag() const override { return "stub-d" + std::to_string(dim_); }
  int dim() const override { return dim_; }

 private:
  int dim_;
};

/// POST {"model": ..., "input": [...]} against an embedding endpoint;
/// responses are reordered by their "index" field. Retries with exponential
/// backoff on transport failures.
class RemoteProvider : public Provider {
 public:
  explicit RemoteProvider(const ProviderConfig& cfg);
  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;
  std::string tag() const override;
  int dim() const override { return cfg_.dim; }

 private:
  ProviderConfig cfg_;
};

std::unique_ptr<Provider> make_provider(const ProviderConfig& cfg);

/// Content-addressed on-disk cache: one JSON record per (provider_tag, text
/// hash) key, written via temp file + rename so readers never see a torn
/// record. Corrupt records are treated as misses and rewritten.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::string directory);
  EmbeddingVector get_or_compute(const std::string& text, Provider& provider);

 private:
  std::string dir_;
};

}  // namespace comma
