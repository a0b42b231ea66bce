// SPDX-License-Identifier: Apache-2.0
#include "ldefense/reasoner.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <future>
#include <mutex>
#include <random>
#include <thread>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "ldefense/prompts.hpp"
#include "ldefense/util.hpp"

namespace ldefense {
namespace {

std::string render_user(std::string_view claim, Side prior, std::span<const std::string> evidence,
                        std::size_t count, const ReasonerFlags& flags) {
  using namespace prompts;
  const std::string label(to_string(prior));
  std::string user(kClaimLead);
  user += claim;
  if (flags.no_prior_label) {
    user += kRationaleAsk;
    user += ".";
  } else {
    user += kLabelLead;
    user += label;
    user += kRationaleAsk;
    user += kReasonedAs;
    user += label;
    user += "].";
  }
  if (!flags.no_evidence) {
    user += kEvidenceLead;
    if (count == 0) {
      user += kEmptyEvidence;
    } else {
      user += '\n';
      for (std::size_t i = 0; i < count; ++i) {
        user += std::to_string(i + 1) + ". " + evidence[i] + "\n";
      }
    }
    user += "].";
  }
  return user;
}

Explanation explanation_from_json(const nlohmann::json& o) {
  Explanation e;
  e.orientation = parse_side(o.at("orientation").get<std::string>());
  e.text = o.at("text").get<std::string>();
  e.generator = o.value("generator", std::string{});
  e.prompt_hash = o.value("prompt_hash", std::string{});
  return e;
}

nlohmann::ordered_json explanation_to_json(const Explanation& e) {
  nlohmann::ordered_json o;
  o["orientation"] = to_string(e.orientation);
  o["text"] = e.text;
  o["generator"] = e.generator;
  o["prompt_hash"] = e.prompt_hash;
  return o;
}

}  // namespace

RenderedPrompt build_prompt(std::string_view claim, Side prior, std::span<const std::string> evidence,
                            const ReasonerFlags& flags, std::size_t budget_chars) {
  RenderedPrompt out;
  out.prompt.system = std::string(prompts::kReasoningSystem);
  std::size_t count = flags.no_evidence ? 0 : evidence.size();
  out.prompt.user = render_user(claim, prior, evidence, count, flags);
  while (count > 0 && out.prompt.user.size() > budget_chars) {
    --count;
    out.prompt.user = render_user(claim, prior, evidence, count, flags);
  }
  out.evidence_used = count;
  out.evidence_dropped = flags.no_evidence ? 0 : evidence.size() - count;
  if (out.evidence_dropped > 0) {
    spdlog::info("prompt budget: dropped {} lowest-ranked evidence sentences", out.evidence_dropped);
  }
  return out;
}

Explanation generate(ChatClient& client, const PromptPair& prompt, Side orientation, double temperature) {
  if (temperature < 0.0) throw std::invalid_argument("temperature must be >= 0");
  ChatRequest request{client.model(), prompt.system, prompt.user, temperature};
  Explanation e;
  e.orientation = orientation;
  e.prompt_hash = request.hash();
  e.text = client.complete(request);
  e.generator = client.model();
  return e;
}

std::vector<std::string> evidence_for_side(const Claim& claim, const CompetingEvidenceSets& sets, Side side,
                                           const ReasonerFlags& flags) {
  const auto& ranked = sets.side(side);
  if (!flags.random_evidence) {
    std::vector<std::string> out;
    out.reserve(ranked.size());
    for (const auto& e : ranked) out.push_back(e.text);
    return out;
  }
  const auto cands = candidates_of(claim);
  std::vector<std::size_t> idx(cands.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(splitmix64(flags.seed ^ fnv1a64(claim.id) ^ (side == Side::kTrue ? 0x7275ULL : 0x6661ULL)));
  const std::size_t take = std::min(static_cast<std::size_t>(std::max(sets.k, 1)), idx.size());
  for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + static_cast<std::size_t>(rng() % (idx.size() - i))]);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < take; ++i) out.emplace_back(cands[idx[i]].text);
  return out;
}

CompetingExplanations reason_both(const Claim& claim, const CompetingEvidenceSets& sets, ChatClient& client,
                                  const ReasonerFlags& flags, double temperature) {
  auto side_task = [&](Side side) {
    const auto evidence = evidence_for_side(claim, sets, side, flags);
    const auto rendered = build_prompt(claim.text, side, evidence, flags);
    return generate(client, rendered.prompt, side, temperature);
  };
  auto minus = std::async(std::launch::async, side_task, Side::kFalse);
  Explanation plus;
  std::exception_ptr plus_error;
  try {
    plus = side_task(Side::kTrue);
  } catch (...) {
    plus_error = std::current_exception();
  }
  CompetingExplanations out;
  out.claim_id = claim.id;
  out.e_minus = minus.get();
  if (plus_error) std::rethrow_exception(plus_error);
  out.e_plus = std::move(plus);
  return out;
}

std::vector<CompetingExplanations> reason_dataset(const Dataset& dataset, std::span<const CompetingEvidenceSets> sets,
                                                  ChatClient& client, const ReasonerFlags& flags,
                                                  double temperature, int max_in_flight) {
  std::unordered_map<std::string_view, const CompetingEvidenceSets*> by_id;
  for (const auto& s : sets) by_id.emplace(s.claim_id, &s);
  for (const auto& c : dataset.claims) {
    if (!by_id.contains(c.id)) throw std::invalid_argument("no evidence sets for claim '" + c.id + "'");
  }

  std::vector<CompetingExplanations> out(dataset.claims.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= dataset.claims.size()) return;
      {
        std::lock_guard lock(failure_mutex);
        if (failure) return;
      }
      try {
        const auto& claim = dataset.claims[i];
        out[i] = reason_both(claim, *by_id.at(claim.id), client, flags, temperature);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, max_in_flight));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, dataset.claims.size()); ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

nlohmann::ordered_json explanations_to_json(const CompetingExplanations& e) {
  nlohmann::ordered_json o;
  o["id"] = e.claim_id;
  o["e_minus"] = explanation_to_json(e.e_minus);
  o["e_plus"] = explanation_to_json(e.e_plus);
  return o;
}

CompetingExplanations explanations_from_json(const nlohmann::json& obj) {
  CompetingExplanations e;
  e.claim_id = obj.at("id").get<std::string>();
  e.e_minus = explanation_from_json(obj.at("e_minus"));
  e.e_plus = explanation_from_json(obj.at("e_plus"));
  if (e.e_minus.orientation != Side::kFalse || e.e_plus.orientation != Side::kTrue) {
    throw std::runtime_error("explanation record '" + e.claim_id + "' has swapped orientations");
  }
  return e;
}

std::string explanations_dump(std::span<const CompetingExplanations> all) {
  std::string out;
  for (const auto& e : all) {
    out += explanations_to_json(e).dump();
    out += '\n';
  }
  return out;
}

std::vector<CompetingExplanations> load_explanations_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open explanations dump " + path.string());
  std::vector<CompetingExplanations> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(explanations_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace ldefense
