// SPDX-License-Identifier: Apache-2.0
#include "ldefense/embedding.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <chrono>
#include <cmath>
#include <future>
#include <thread>
#include <unordered_map>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ldefense/corpus.hpp"
#include "ldefense/kernels.hpp"
#include "ldefense/util.hpp"

namespace ldefense {
namespace {

std::atomic<std::size_t> g_discarded{0};

double unit_from_hash(std::uint64_t x) {
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) return;
  for (double& x : v) x /= n;
}

std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
  // "http://host:port/prefix" -> ("http://host:port", "/prefix")
  const auto scheme = endpoint.find("://");
  const auto path_start = endpoint.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (path_start == std::string::npos) return {endpoint, ""};
  std::string prefix = endpoint.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {endpoint.substr(0, path_start), prefix};
}

}  // namespace

void BackendDescriptor::validate() const {
  if (dim <= 0) throw std::invalid_argument("embedding dim must be > 0");
  if (kind == Kind::kRemote && endpoint.empty()) throw std::invalid_argument("remote embedding backend needs an endpoint");
  if (model.empty()) throw std::invalid_argument("embedding model id must be non-empty");
  if (max_in_flight < 1) throw std::invalid_argument("max_in_flight must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
}

Embedding mock_embed(std::string_view text, int dim, std::uint64_t seed) {
  if (dim <= 0) throw std::invalid_argument("mock_embed: dim must be > 0");
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });

  const auto udim = static_cast<std::size_t>(dim);
  std::vector<double> anchors(udim, 0.0);
  bool any_marker = false;
  const auto markers = synthetic::all_marker_phrases();
  for (std::size_t a = 0; a < markers.size(); ++a) {
    std::size_t pos = 0;
    while ((pos = lower.find(markers[a], pos)) != std::string::npos) {
      anchors[a % udim] += kMarkerAnchorWeight;
      any_marker = true;
      std::fill_n(lower.begin() + static_cast<std::ptrdiff_t>(pos), markers[a].size(), ' ');
      pos += markers[a].size();
    }
  }

  std::vector<std::string> tokens;
  std::string cur;
  for (char c : lower) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  if (tokens.empty() && !any_marker) tokens.emplace_back();

  std::vector<double> bag(udim, 0.0);
  const std::uint64_t salt = splitmix64(seed);
  for (const auto& t : tokens) {
    const std::uint64_t h = fnv1a64(t) ^ salt;
    for (std::size_t i = 0; i < udim; ++i) bag[i] += 2.0 * unit_from_hash(splitmix64(h + i)) - 1.0;
  }
  normalize(bag);
  for (std::size_t i = 0; i < udim; ++i) bag[i] += anchors[i];
  normalize(bag);
  return bag;
}

MockEmbeddingBackend::MockEmbeddingBackend(BackendDescriptor descriptor) : descriptor_(std::move(descriptor)) {
  descriptor_.validate();
}

std::vector<Embedding> MockEmbeddingBackend::fetch(std::span<const std::string> texts) {
  ++requests_;
  return kernels::mock_embed_parallel(texts, descriptor_.dim, descriptor_.seed);
}

RemoteEmbeddingBackend::RemoteEmbeddingBackend(BackendDescriptor descriptor) : descriptor_(std::move(descriptor)) {
  descriptor_.validate();
}

std::vector<Embedding> RemoteEmbeddingBackend::fetch(std::span<const std::string> texts) {
  ++requests_;
  const auto [base, prefix] = split_endpoint(descriptor_.endpoint);
  httplib::Client client(base);
  client.set_connection_timeout(descriptor_.timeout_seconds, 0);
  client.set_read_timeout(descriptor_.timeout_seconds, 0);
  nlohmann::json body;
  body["model"] = descriptor_.model;
  body["texts"] = std::vector<std::string>(texts.begin(), texts.end());
  auto res = client.Post(prefix + "/embed", body.dump(), "application/json");
  if (!res) {
    throw ExternalServiceError("embedding request to " + descriptor_.endpoint + " failed: " +
                               httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw ExternalServiceError("embedding endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body);
  }
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ContractViolation(std::string("embedding response is not JSON: ") + e.what());
  }
  if (!reply.contains("dim") || !reply.contains("vectors") || !reply["vectors"].is_array()) {
    throw ContractViolation("embedding response lacks 'dim' or 'vectors'");
  }
  const int dim = reply["dim"].get<int>();
  if (dim != descriptor_.dim) {
    throw ContractViolation("embedding backend reported dim " + std::to_string(dim) + ", descriptor says " +
                            std::to_string(descriptor_.dim));
  }
  std::vector<Embedding> out;
  for (const auto& v : reply["vectors"]) out.push_back(v.get<Embedding>());
  return out;
}

std::shared_ptr<EmbeddingBackend> make_embedding_backend(const BackendDescriptor& descriptor) {
  if (descriptor.kind == BackendDescriptor::Kind::kRemote) return std::make_shared<RemoteEmbeddingBackend>(descriptor);
  return std::make_shared<MockEmbeddingBackend>(descriptor);
}

EmbeddingCache::EmbeddingCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::string EmbeddingCache::key(std::string_view model, std::string_view text) {
  std::string material(model);
  material.push_back('\0');
  material.append(text);
  return sha256_hex(material);
}

std::filesystem::path EmbeddingCache::path_for(std::string_view key) const {
  return dir_ / std::string(key.substr(0, 2)) / (std::string(key) + ".f64");
}

std::optional<Embedding> EmbeddingCache::get(std::string_view model, std::string_view text, int expected_dim) const {
  const auto path = path_for(key(model, text));
  auto bytes = read_file(path);
  if (!bytes) return std::nullopt;
  auto discard = [&](const char* why) -> std::optional<Embedding> {
    spdlog::warn("embedding cache entry {} discarded: {}", path.string(), why);
    ++g_discarded;
    std::error_code ec;
    std::filesystem::remove(path, ec);
    return std::nullopt;
  };
  if (bytes->size() < 4) return discard("truncated header");
  std::uint32_t dim = 0;
  for (int i = 0; i < 4; ++i) dim |= static_cast<std::uint32_t>(static_cast<unsigned char>((*bytes)[static_cast<std::size_t>(i)])) << (8 * i);
  if (static_cast<int>(dim) != expected_dim) return discard("dimension differs from backend");
  if (bytes->size() != 4 + 8 * static_cast<std::size_t>(dim)) return discard("payload size mismatch");
  Embedding out(dim);
  for (std::uint32_t d = 0; d < dim; ++d) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>((*bytes)[4 + 8 * d + static_cast<std::size_t>(i)])) << (8 * i);
    }
    out[d] = std::bit_cast<double>(v);
    if (!std::isfinite(out[d])) return discard("non-finite value");
  }
  return out;
}

void EmbeddingCache::put(std::string_view model, std::string_view text, const Embedding& value) const {
  std::string bytes;
  bytes.reserve(4 + 8 * value.size());
  const auto dim = static_cast<std::uint32_t>(value.size());
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((dim >> (8 * i)) & 0xFF));
  for (double d : value) {
    const auto bits = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  write_file_atomic(path_for(key(model, text)), bytes);
}

EmbeddingGateway::EmbeddingGateway(std::shared_ptr<EmbeddingBackend> backend,
                                   std::optional<std::filesystem::path> cache_dir)
    : backend_(std::move(backend)) {
  if (!backend_) throw std::invalid_argument("embedding gateway needs a backend");
  if (cache_dir) cache_.emplace(*cache_dir);
}

GatewayStats EmbeddingGateway::stats() const {
  return {cache_hits_.load(), computed_.load(), g_discarded.load()};
}

std::vector<Embedding> EmbeddingGateway::fetch_with_retry(std::span<const std::string> texts) {
  const auto& desc = backend_->descriptor();
  for (int attempt = 0;; ++attempt) {
    try {
      auto out = backend_->fetch(texts);
      if (out.size() != texts.size()) {
        throw ContractViolation("embedding backend returned " + std::to_string(out.size()) + " vectors for " +
                                std::to_string(texts.size()) + " texts");
      }
      for (const auto& v : out) {
        if (static_cast<int>(v.size()) != desc.dim) {
          throw ContractViolation("embedding has dim " + std::to_string(v.size()) + ", descriptor says " +
                                  std::to_string(desc.dim));
        }
        if (!std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); })) {
          throw ContractViolation("embedding contains non-finite entries");
        }
      }
      return out;
    } catch (const ContractViolation&) {
      throw;
    } catch (const ExternalServiceError& e) {
      if (attempt + 1 >= desc.max_retries) throw;
      spdlog::warn("embedding fetch failed (attempt {}): {}", attempt + 1, e.what());
      std::this_thread::sleep_for(std::chrono::milliseconds(100LL << attempt));
    }
  }
}

std::vector<Embedding> EmbeddingGateway::embed(std::span<const std::string> texts) {
  if (texts.empty()) throw std::invalid_argument("embed: empty input list");
  const auto& desc = backend_->descriptor();
  std::vector<Embedding> out(texts.size());

  // Duplicates resolve to their first occurrence; only unique misses are fetched.
  std::unordered_map<std::string_view, std::size_t> first_index;
  std::vector<std::size_t> miss_index;
  std::vector<std::string> pending;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (!first_index.try_emplace(texts[i], i).second) continue;
    if (cache_) {
      if (auto hit = cache_->get(desc.model, texts[i], desc.dim)) {
        ++cache_hits_;
        out[i] = std::move(*hit);
        continue;
      }
    }
    miss_index.push_back(i);
    pending.push_back(texts[i]);
  }

  if (!pending.empty()) {
    const std::size_t batch = desc.batch_size;
    const std::size_t n_batches = (pending.size() + batch - 1) / batch;
    std::vector<std::vector<Embedding>> results(n_batches);
    const auto in_flight = static_cast<std::size_t>(std::max(1, desc.max_in_flight));
    for (std::size_t first = 0; first < n_batches; first += in_flight) {
      const std::size_t last = std::min(n_batches, first + in_flight);
      if (last - first == 1) {
        const std::size_t lo = first * batch;
        const std::size_t hi = std::min(pending.size(), lo + batch);
        results[first] = fetch_with_retry(std::span<const std::string>(pending).subspan(lo, hi - lo));
        continue;
      }
      std::vector<std::future<std::vector<Embedding>>> futures;
      for (std::size_t b = first; b < last; ++b) {
        const std::size_t lo = b * batch;
        const std::size_t hi = std::min(pending.size(), lo + batch);
        futures.push_back(std::async(std::launch::async, [this, &pending, lo, hi] {
          return fetch_with_retry(std::span<const std::string>(pending).subspan(lo, hi - lo));
        }));
      }
      for (std::size_t b = first; b < last; ++b) results[b] = futures[b - first].get();
    }
    std::size_t idx = 0;
    for (auto& chunk : results) {
      for (auto& v : chunk) {
        if (cache_) cache_->put(desc.model, pending[idx], v);
        out[miss_index[idx]] = std::move(v);
        ++computed_;
        ++idx;
      }
    }
  }
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (out[i].empty()) out[i] = out[first_index.at(texts[i])];
  }
  return out;
}

Embedding EmbeddingGateway::embed_one(const std::string& text) {
  return embed(std::span<const std::string>(&text, 1)).front();
}

}  // namespace ldefense
