// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldefense/chat_client.hpp"
#include "ldefense/corpus.hpp"
#include "ldefense/extractor.hpp"
#include "ldefense/labels.hpp"

namespace ldefense {

inline constexpr double kReasoningTemperature = 0.8;
inline constexpr std::size_t kPromptBudgetChars = 6000;

struct ReasonerFlags {
  bool no_evidence = false;
  bool random_evidence = false;
  bool no_prior_label = false;
  std::uint64_t seed = 0;  // random_evidence sampling
};

struct PromptPair {
  std::string system;
  std::string user;

  bool operator==(const PromptPair&) const = default;
};

struct RenderedPrompt {
  PromptPair prompt;
  std::size_t evidence_used = 0;
  std::size_t evidence_dropped = 0;  // lowest-ranked first, to fit the budget
};

/// Fills the reasoning template for one prior label. Evidence is rendered as a
/// numbered list in rank order, or "(none)" when empty.
RenderedPrompt build_prompt(std::string_view claim, Side prior, std::span<const std::string> evidence,
                            const ReasonerFlags& flags = {}, std::size_t budget_chars = kPromptBudgetChars);

struct Explanation {
  Side orientation = Side::kFalse;
  std::string text;
  std::string generator;
  std::string prompt_hash;

  bool operator==(const Explanation&) const = default;
};

struct CompetingExplanations {
  std::string claim_id;
  Explanation e_minus;
  Explanation e_plus;

  bool operator==(const CompetingExplanations&) const = default;
};

Explanation generate(ChatClient& client, const PromptPair& prompt, Side orientation,
                     double temperature = kReasoningTemperature);

/// Evidence strings handed to the prompt for one side, honoring the
/// random-evidence ablation (seeded sample of the claim's candidates).
std::vector<std::string> evidence_for_side(const Claim& claim, const CompetingEvidenceSets& sets, Side side,
                                           const ReasonerFlags& flags);

/// Both sides, generated concurrently. Any failure fails the claim.
CompetingExplanations reason_both(const Claim& claim, const CompetingEvidenceSets& sets, ChatClient& client,
                                  const ReasonerFlags& flags = {}, double temperature = kReasoningTemperature);

/// All claims with at most `max_in_flight` claims in progress at once.
/// `sets` is matched to claims by id.
std::vector<CompetingExplanations> reason_dataset(const Dataset& dataset, std::span<const CompetingEvidenceSets> sets,
                                                  ChatClient& client, const ReasonerFlags& flags,
                                                  double temperature = kReasoningTemperature, int max_in_flight = 4);

nlohmann::ordered_json explanations_to_json(const CompetingExplanations& e);
CompetingExplanations explanations_from_json(const nlohmann::json& obj);
std::string explanations_dump(std::span<const CompetingExplanations> all);
std::vector<CompetingExplanations> load_explanations_dump(const std::filesystem::path& path);

}  // namespace ldefense
