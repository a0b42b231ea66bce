// SPDX-License-Identifier: Apache-2.0
#include "ldefense/chat_client.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ldefense/corpus.hpp"
#include "ldefense/prompts.hpp"
#include "ldefense/util.hpp"

namespace ldefense {
namespace {

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

// Text between `lead` and the next `stop` after it; empty when `lead` is absent.
std::string_view between(std::string_view text, std::string_view lead, std::string_view stop) {
  const auto a = text.find(lead);
  if (a == std::string_view::npos) return {};
  const auto start = a + lead.size();
  const auto b = text.find(stop, start);
  return text.substr(start, b == std::string_view::npos ? std::string_view::npos : b - start);
}

std::vector<std::string_view> matched_markers(std::string_view evidence, Side side) {
  std::vector<std::string_view> out;
  const auto lower = lowercase(evidence);
  std::size_t line_start = 0;
  while (line_start <= lower.size()) {
    auto line_end = lower.find('\n', line_start);
    if (line_end == std::string::npos) line_end = lower.size();
    const std::string_view line(lower.data() + line_start, line_end - line_start);
    if (line.find(synthetic::kHedgeCue) == std::string_view::npos) {
      for (auto phrase : synthetic::marker_phrases(side)) {
        for (std::size_t i = count_occurrences(line, phrase); i > 0; --i) out.push_back(phrase);
      }
    }
    line_start = line_end + 1;
  }
  return out;
}

std::string mock_rationale(std::string_view user) {
  using namespace prompts;
  const bool has_label = user.find(kLabelLead) != std::string_view::npos;
  const auto claim = has_label ? between(user, kClaimLead, kLabelLead) : between(user, kClaimLead, kRationaleAsk);
  const auto evidence_pos = user.find(kEvidenceLead);
  const std::string_view evidence =
      evidence_pos == std::string_view::npos ? std::string_view{} : user.substr(evidence_pos + kEvidenceLead.size());
  const std::uint64_t h = fnv1a64(user);

  if (!has_label) {
    return "The claim cannot be assessed with confidence from the provided material. Some sentences point one "
           "way and others the opposite way, and none of them settles the matter on its own.";
  }
  const auto label_text = between(user, kLabelLead, kRationaleAsk);
  const Side side = label_text == "false" ? Side::kFalse : Side::kTrue;
  const std::string side_word(to_string(side));

  std::vector<std::string_view> markers = matched_markers(evidence, side);
  if (markers.size() >= 2) {
    // Distinct phrases in first-seen order, at most three.
    std::vector<std::string_view> distinct;
    for (auto m : markers) {
      if (std::find(distinct.begin(), distinct.end(), m) == distinct.end()) distinct.push_back(m);
    }
    if (distinct.size() > 3) distinct.resize(3);
    static constexpr std::string_view kOpeners[] = {
        "The claim is ", "Available reporting indicates that the claim is ", "On balance the claim is "};
    std::string out(kOpeners[h % 3]);
    out += side_word + ". Several outlets state plainly that the story " + std::string(distinct[0]);
    if (distinct.size() > 1) out += ", and others add that it " + std::string(distinct[1]);
    out += ".";
    if (distinct.size() > 2) out += " It is further noted that the story " + std::string(distinct[2]) + ".";
    out += " These accounts are specific and agree with each other, so a reader can accept the " + side_word +
           " reading of the claim about " + std::string(claim) + " without further background.";
    return out;
  }
  static constexpr std::string_view kHedges[] = {
      "It is hard to argue that the claim is ", "One could only tentatively suggest that the claim is ",
      "There is little to support the view that the claim is "};
  std::string out(kHedges[(h >> 8) % 3]);
  out += side_word + ". The available sentences are vague, rely on unnamed posts, and partly contradict each "
                     "other, so this rationale remains speculative.";
  return out;
}

std::string mock_judge(const ChatRequest& request) {
  const std::uint64_t h = fnv1a64(request.user);
  auto score = [&](int shift) { return 1 + static_cast<int>((h >> shift) % 5); };
  return "M:" + std::to_string(score(0)) + " I:" + std::to_string(score(8)) + " S:" + std::to_string(score(16)) +
         " R:" + std::to_string(score(24));
}

std::string mock_verdict(std::string_view user) {
  using namespace prompts;
  const auto e_minus = between(user, kVerdictFalse, kVerdictTrue);
  const auto e_plus = between(user, kVerdictTrue, kVerdictLabels);
  const auto labels = between(user, kVerdictLabels, kVerdictAsk);
  const bool minus_strong = mock_llm::marker_mentions(e_minus, Side::kFalse) > 0;
  const bool plus_strong = mock_llm::marker_mentions(e_plus, Side::kTrue) > 0;
  if (minus_strong && !plus_strong) return "false";
  if (plus_strong && !minus_strong) return "true";
  // The half label of whichever set was offered.
  return labels.find("half-true") != std::string_view::npos ? "half-true" : "half";
}

}  // namespace

std::string ChatRequest::hash() const {
  char temp[32];
  std::snprintf(temp, sizeof temp, "%.6f", temperature);
  std::string material = model;
  material.push_back('\0');
  material += system;
  material.push_back('\0');
  material += user;
  material.push_back('\0');
  material += temp;
  return sha256_hex(material);
}

std::string ChatClient::complete(const ChatRequest& request) {
  auto text = do_complete(request);
  if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c) != 0; })) {
    throw ExternalServiceError("empty completion for prompt " + request.hash());
  }
  return text;
}

TokenBucket::TokenBucket(double rate_per_second, double burst)
    : rate_(rate_per_second), burst_(std::max(1.0, burst)), tokens_(std::max(1.0, burst)),
      last_(std::chrono::steady_clock::now()) {}

void TokenBucket::acquire() {
  if (rate_ <= 0.0) return;
  for (;;) {
    std::chrono::duration<double> wait{};
    {
      std::lock_guard lock(mutex_);
      const auto now = std::chrono::steady_clock::now();
      tokens_ = std::min(burst_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
      last_ = now;
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
    }
    std::this_thread::sleep_for(wait);
  }
}

HttpChatClient::HttpChatClient(HttpChatConfig config)
    : config_(std::move(config)), bucket_(config_.requests_per_second, 1.0) {
  if (config_.base_url.empty()) throw std::invalid_argument("chat client needs a base_url");
  if (config_.model.empty()) throw std::invalid_argument("chat client needs a model id");
}

std::string HttpChatClient::do_complete(const ChatRequest& request) {
  nlohmann::json body;
  body["model"] = request.model.empty() ? config_.model : request.model;
  body["messages"] = nlohmann::json::array({{{"role", "system"}, {"content", request.system}},
                                            {{"role", "user"}, {"content", request.user}}});
  body["temperature"] = request.temperature;

  std::string base = config_.base_url;
  std::string prefix;
  if (auto scheme = base.find("://"); scheme != std::string::npos) {
    if (auto slash = base.find('/', scheme + 3); slash != std::string::npos) {
      prefix = base.substr(slash);
      base.resize(slash);
    }
  }
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  std::string last_error;
  for (int attempt = 0; attempt < config_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long long>(config_.initial_backoff_ms) << (attempt - 1)));
    }
    bucket_.acquire();
    ++requests_;
    httplib::Client client(base);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    auto res = client.Post(prefix + "/chat/completions", headers, body.dump(), "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      spdlog::warn("chat completion attempt {} failed: {}", attempt + 1, last_error);
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
      spdlog::warn("chat completion attempt {} failed: {}", attempt + 1, last_error);
      continue;
    }
    if (res->status != 200) {
      throw ExternalServiceError("chat endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    try {
      const auto reply = nlohmann::json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ExternalServiceError(std::string("malformed chat completion response: ") + e.what());
    }
  }
  throw ExternalServiceError("chat completion failed after " + std::to_string(config_.max_retries) +
                             " attempts for prompt " + request.hash() + ": " + last_error);
}

std::string MockChatClient::do_complete(const ChatRequest& request) {
  ++requests_;
  if (request.system == prompts::kReasoningSystem) return mock_rationale(request.user);
  if (request.system == prompts::kJudgeSystem) return mock_judge(request);
  if (request.system == prompts::kVerdictSystem) return mock_verdict(request.user);
  return "mock completion";
}

CachedChatClient::CachedChatClient(std::shared_ptr<ChatClient> inner, std::filesystem::path dir)
    : inner_(std::move(inner)), dir_(std::move(dir)) {
  if (!inner_) throw std::invalid_argument("cached chat client needs an inner client");
  std::filesystem::create_directories(dir_);
}

std::filesystem::path CachedChatClient::path_for(const ChatRequest& request) const {
  const auto key = request.hash();
  return dir_ / key.substr(0, 2) / (key + ".json");
}

std::string CachedChatClient::do_complete(const ChatRequest& request) {
  const auto path = path_for(request);
  if (auto bytes = read_file(path)) {
    try {
      const auto entry = nlohmann::json::parse(*bytes);
      const auto& req = entry.at("request");
      if (req.at("system").get<std::string>() == request.system && req.at("user").get<std::string>() == request.user) {
        ++hits_;
        return entry.at("response").get<std::string>();
      }
      spdlog::warn("chat cache entry {} does not match its request; recomputing", path.string());
    } catch (const nlohmann::json::exception& e) {
      spdlog::warn("chat cache entry {} is corrupt ({}); recomputing", path.string(), e.what());
    }
  }
  auto text = inner_->complete(request);
  nlohmann::ordered_json entry;
  entry["request"] = {{"model", request.model}, {"system", request.system}, {"user", request.user},
                      {"temperature", request.temperature}};
  entry["response"] = text;
  entry["timestamp"] = static_cast<long long>(std::time(nullptr));
  entry["model"] = inner_->model();
  write_file_atomic(path, entry.dump(2));
  return text;
}

namespace mock_llm {

std::size_t assertive_marker_count(std::string_view text, Side side) { return matched_markers(text, side).size(); }

std::size_t marker_mentions(std::string_view text, Side side) {
  const auto lower = lowercase(text);
  std::size_t n = 0;
  for (auto phrase : synthetic::marker_phrases(side)) n += count_occurrences(lower, phrase);
  return n;
}

}  // namespace mock_llm
}  // namespace ldefense
