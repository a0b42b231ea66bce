// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

#include "ldefense/embedding.hpp"  // ExternalServiceError
#include "ldefense/labels.hpp"

namespace ldefense {

struct ChatRequest {
  std::string model;
  std::string system;
  std::string user;
  double temperature = 0.0;

  /// Cache key: sha256 over model, system, user and the temperature.
  [[nodiscard]] std::string hash() const;
};

/// Chat-completion client. Implementations must be safe to call concurrently.
class ChatClient {
 public:
  virtual ~ChatClient() = default;

  std::string complete(const ChatRequest& request);

  [[nodiscard]] virtual std::string model() const = 0;
  /// Requests that reached the backing service (mock or network).
  [[nodiscard]] virtual std::size_t requests() const { return requests_.load(); }

 protected:
  virtual std::string do_complete(const ChatRequest& request) = 0;
  std::atomic<std::size_t> requests_{0};
};

/// Steady-rate limiter; acquire() blocks until a token is available.
class TokenBucket {
 public:
  TokenBucket(double rate_per_second, double burst);
  void acquire();

 private:
  std::mutex mutex_;
  double rate_;
  double burst_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
};

struct HttpChatConfig {
  std::string base_url;                   // POST {base_url}/chat/completions
  std::string model;
  std::string api_key_env = "LDEFENSE_LLM_API_KEY";
  int max_retries = 5;
  double requests_per_second = 2.0;
  int timeout_seconds = 120;
  int initial_backoff_ms = 500;
};

class HttpChatClient final : public ChatClient {
 public:
  explicit HttpChatClient(HttpChatConfig config);
  [[nodiscard]] std::string model() const override { return config_.model; }

 protected:
  std::string do_complete(const ChatRequest& request) override;

 private:
  HttpChatConfig config_;
  TokenBucket bucket_;
};

/// Offline stand-in. Recognizes the reasoning, judging and verdict system
/// prompts and answers each deterministically:
///   reasoning: a confident paragraph quoting the matched marker phrases when
///     at least two assertive (non-hedged) evidence sentences carry markers of
///     the prompt's prior label, otherwise a hedging paragraph without markers;
///   judging: "M:a I:b S:c R:d" derived from a hash of the request;
///   verdict: false / true when only that side's explanation quotes markers,
///     the half label otherwise.
class MockChatClient final : public ChatClient {
 public:
  explicit MockChatClient(std::string model = "mock") : model_(std::move(model)) {}
  [[nodiscard]] std::string model() const override { return model_; }

 protected:
  std::string do_complete(const ChatRequest& request) override;

 private:
  std::string model_;
};

/// Read-through cache: one JSON file per request hash holding the request,
/// the response, a timestamp and the model id.
class CachedChatClient final : public ChatClient {
 public:
  CachedChatClient(std::shared_ptr<ChatClient> inner, std::filesystem::path dir);
  [[nodiscard]] std::string model() const override { return inner_->model(); }
  [[nodiscard]] std::size_t requests() const override { return inner_->requests(); }
  [[nodiscard]] std::size_t hits() const { return hits_.load(); }
  [[nodiscard]] std::filesystem::path path_for(const ChatRequest& request) const;

 protected:
  std::string do_complete(const ChatRequest& request) override;

 private:
  std::shared_ptr<ChatClient> inner_;
  std::filesystem::path dir_;
  std::atomic<std::size_t> hits_{0};
};

/// Mock marker accounting shared by the mock client and tests.
namespace mock_llm {

/// Number of marker phrases of `side` in assertive lines (lines without the hedge cue).
std::size_t assertive_marker_count(std::string_view text, Side side);

/// Occurrences of `side` marker phrases anywhere in `text`.
std::size_t marker_mentions(std::string_view text, Side side);

}  // namespace mock_llm
}  // namespace ldefense
