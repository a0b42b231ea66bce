// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ldefense {

using Embedding = std::vector<double>;

/// A remote service failed or answered outside its wire contract.
class ExternalServiceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The service answered, but with data that breaks the contract (e.g. dim).
class ContractViolation : public ExternalServiceError {
 public:
  using ExternalServiceError::ExternalServiceError;
};

struct BackendDescriptor {
  enum class Kind { kMock, kRemote };

  Kind kind = Kind::kMock;
  std::string endpoint;           // remote only, e.g. "http://127.0.0.1:8080"
  int dim = 64;
  std::string model = "mock-hash-v1";
  std::uint64_t seed = 0;         // mock only
  std::size_t max_chars = 0;      // length budget for one text; 0 = unlimited
  int max_in_flight = 4;
  std::size_t batch_size = 64;
  int max_retries = 3;
  int timeout_seconds = 60;

  void validate() const;  // throws std::invalid_argument
};

/// Deterministic unit-norm embedding.
///
/// The text is lowercased and every occurrence of a synthetic marker phrase is
/// cut out and replaced by kMarkerAnchorWeight times its anchor, the basis
/// vector e_(phrase index mod dim). The remaining [a-z0-9]+ tokens form a bag
/// where token t adds, in component i, 2 * U(splitmix64(h_t + i)) - 1 with
/// h_t = fnv1a64(t) ^ splitmix64(seed) and U(x) = (x >> 11) * 2^-53. A text
/// without tokens or markers is treated as the single empty token. The bag is
/// normalized, anchors are added, and the sum is normalized again.
Embedding mock_embed(std::string_view text, int dim, std::uint64_t seed);

inline constexpr double kMarkerAnchorWeight = 2.0;

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;

  /// One vector per text, in order. Throws ExternalServiceError on transport failure.
  virtual std::vector<Embedding> fetch(std::span<const std::string> texts) = 0;
  [[nodiscard]] virtual const BackendDescriptor& descriptor() const = 0;

  [[nodiscard]] std::size_t requests() const { return requests_.load(); }

 protected:
  std::atomic<std::size_t> requests_{0};
};

class MockEmbeddingBackend final : public EmbeddingBackend {
 public:
  explicit MockEmbeddingBackend(BackendDescriptor descriptor);
  std::vector<Embedding> fetch(std::span<const std::string> texts) override;
  [[nodiscard]] const BackendDescriptor& descriptor() const override { return descriptor_; }

 private:
  BackendDescriptor descriptor_;
};

/// POST {endpoint}/embed with {"model", "texts"}; expects {"dim", "vectors"}.
class RemoteEmbeddingBackend final : public EmbeddingBackend {
 public:
  explicit RemoteEmbeddingBackend(BackendDescriptor descriptor);
  std::vector<Embedding> fetch(std::span<const std::string> texts) override;
  [[nodiscard]] const BackendDescriptor& descriptor() const override { return descriptor_; }

 private:
  BackendDescriptor descriptor_;
};

std::shared_ptr<EmbeddingBackend> make_embedding_backend(const BackendDescriptor& descriptor);

/// One file per key: little-endian u32 dim, then dim float64 values.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path dir);

  [[nodiscard]] static std::string key(std::string_view model, std::string_view text);
  [[nodiscard]] std::filesystem::path path_for(std::string_view key) const;

  /// Corrupt or mis-sized entries are deleted, logged, and reported as a miss.
  std::optional<Embedding> get(std::string_view model, std::string_view text, int expected_dim) const;
  void put(std::string_view model, std::string_view text, const Embedding& value) const;

  [[nodiscard]] const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

struct GatewayStats {
  std::size_t cache_hits = 0;
  std::size_t computed = 0;
  std::size_t discarded_entries = 0;
};

/// Front door for all embedding requests: validation, de-duplication,
/// bounded-parallel batching, retries, and the optional on-disk cache.
class EmbeddingGateway {
 public:
  explicit EmbeddingGateway(std::shared_ptr<EmbeddingBackend> backend,
                            std::optional<std::filesystem::path> cache_dir = std::nullopt);

  /// Throws std::invalid_argument on empty input, ContractViolation on a
  /// dimension mismatch, ExternalServiceError once retries are exhausted.
  std::vector<Embedding> embed(std::span<const std::string> texts);
  Embedding embed_one(const std::string& text);

  [[nodiscard]] int dim() const { return backend_->descriptor().dim; }
  [[nodiscard]] const std::string& model() const { return backend_->descriptor().model; }
  [[nodiscard]] const BackendDescriptor& descriptor() const { return backend_->descriptor(); }
  [[nodiscard]] std::size_t backend_requests() const { return backend_->requests(); }
  [[nodiscard]] GatewayStats stats() const;

 private:
  std::vector<Embedding> fetch_with_retry(std::span<const std::string> texts);

  std::shared_ptr<EmbeddingBackend> backend_;
  std::optional<EmbeddingCache> cache_;
  std::atomic<std::size_t> cache_hits_{0};
  std::atomic<std::size_t> computed_{0};
};

}  // namespace ldefense
