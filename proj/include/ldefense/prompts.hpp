// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string_view>

namespace ldefense::prompts {

/// System message for veracity-oriented rationale generation.
inline constexpr std::string_view kReasoningSystem =
    "You have been specially designed to perform abductive reasoning for the fake news detection task. "
    "Your primary function is that, according to a veracity label about a news claim and some sentences "
    "related to the claim, please provide a streamlined rationale, for how it is reasoned as the given "
    "veracity label. Note that the related sentences may be helpful for the explanation, but they are mixed "
    "with noise. Thus, the rationale you provided may not necessarily need to rely entirely on the sentences "
    "above, and there is no need to explicitly mention which sentence was referenced in your explanation. "
    "Your goal is to output a streamlined rationale that allows people to determine the veracity of the "
    "claim when they read it, without requiring any additional background knowledge. The length of your "
    "explanation should be less than 200 words.";

// User template pieces; build_prompt stitches them around the claim, label and evidence.
inline constexpr std::string_view kClaimLead = "Given a claim: [";
inline constexpr std::string_view kLabelLead = "], a veracity label [";
inline constexpr std::string_view kRationaleAsk = "], please give me a streamlined rationale associated with the claim";
inline constexpr std::string_view kReasonedAs = ", for how it is reasoned as [";
inline constexpr std::string_view kEvidenceLead =
    " Below are some sentences that may be helpful for the reasoning, but they are mixed with noise: [";
inline constexpr std::string_view kEmptyEvidence = "(none)";

/// Half-label explanation template: both sides, false first.
inline constexpr std::string_view kHalfFalsePrefix = "What may be false: ";
inline constexpr std::string_view kHalfTruePrefix = "\nWhat may be true: ";

inline constexpr std::string_view kJudgeSystem =
    "You are an impartial evaluator of explanations written for fact-checking verdicts. You receive a news "
    "claim, its actual veracity label, and one explanation. Rate the explanation on four 5-point scales.\n"
    "M (misleadingness): does the explanation contradict the actual veracity label of the claim? "
    "1 = not misleading, 5 = very misleading.\n"
    "I (informativeness): does the explanation add new information such as background or additional "
    "context? 1 = not informative, 5 = very informative.\n"
    "S (soundness): is the reasoning of the explanation valid and logical? 1 = not sound, 5 = very sound.\n"
    "R (readability): is the explanation grammatical, well structured, and easy to follow? "
    "1 = poor, 5 = excellent.\n"
    "Reply with one line in exactly this format: M:<1-5> I:<1-5> S:<1-5> R:<1-5>";

inline constexpr std::string_view kVerdictSystem =
    "You are a fact-checking assistant. You receive a news claim and two competing explanations: one "
    "argues that the claim is false and the other argues that it is true. Weigh how convincing each "
    "explanation is and decide the veracity label of the claim. Answer with exactly one label from the "
    "list you are given and nothing else.";

inline constexpr std::string_view kJudgeClaim = "Claim: [";
inline constexpr std::string_view kJudgeGold = "]\nActual veracity label: [";
inline constexpr std::string_view kJudgeExplanation = "]\nExplanation: [";
inline constexpr std::string_view kJudgeAsk = "]\nRate the explanation.";

inline constexpr std::string_view kVerdictClaim = "Claim: [";
inline constexpr std::string_view kVerdictFalse = "]\nExplanation arguing false: [";
inline constexpr std::string_view kVerdictTrue = "]\nExplanation arguing true: [";
inline constexpr std::string_view kVerdictLabels = "]\nLabels: ";
inline constexpr std::string_view kVerdictAsk = "\nAnswer with one label.";

}  // namespace ldefense::prompts
