// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldefense/chat_client.hpp"
#include "ldefense/embedding.hpp"
#include "ldefense/labels.hpp"

namespace ldefense {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct ClassificationReport {
  std::vector<std::string> labels;
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<long>> confusion;  // [gold][pred]
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
};

/// Macro scores over every class of the label set, absent ones included as 0.
/// Labels are native indices. Throws std::invalid_argument on length mismatch
/// and std::out_of_range on an index outside the set.
ClassificationReport macro_prf(std::span<const int> preds, std::span<const int> golds, const LabelSet& labels);

/// |score(pred) - score(gold)|; throws SchemaError for labels outside the scheme.
double discrepancy(std::string_view pred, std::string_view gold, const ScoreScheme& scheme);

/// Throws std::invalid_argument on a dim mismatch or when both vectors are zero.
double cosine(std::span<const double> a, std::span<const double> b);

inline constexpr double kBiasThreshold = 0.5;

/// Share of candidates with cos > threshold, averaged over the evidence
/// sentences. Zero-norm pairs count 0 and are reported with a warning.
double majority_bias_ratio(std::span<const Embedding> evidence, std::span<const Embedding> candidates,
                           double threshold = kBiasThreshold);

struct LikertScores {
  int m = 0;  // misleadingness
  int i = 0;  // informativeness
  int s = 0;  // soundness
  int r = 0;  // readability

  bool operator==(const LikertScores&) const = default;
};

/// Parses "M:a I:b S:c R:d" (any order, case-insensitive, values 1..5).
/// Throws ExternalServiceError carrying the raw text when a field is missing.
LikertScores parse_likert(std::string_view completion);

std::string judge_prompt(std::string_view claim, std::string_view gold_label, std::string_view explanation);

/// One judging call at temperature 0.
LikertScores judge_explanation(ChatClient& client, std::string_view claim, std::string_view gold_label,
                               std::string_view explanation);

struct LikertMeans {
  double m = 0.0;
  double i = 0.0;
  double s = 0.0;
  double r = 0.0;
  std::size_t count = 0;
};

LikertMeans likert_means(std::span<const LikertScores> scores);

struct EvaluationReport {
  ClassificationReport classification;
  double discrepancy_mean = 0.0;
  double bias_ratio_mean = 0.0;
  std::string bias_embedder;
  std::optional<LikertMeans> likert;
};

nlohmann::ordered_json report_to_json(const EvaluationReport& report);

}  // namespace ldefense
