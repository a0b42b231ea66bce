// SPDX-License-Identifier: Apache-2.0
#include "ldefense/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>

#include <spdlog/spdlog.h>

#include "ldefense/kernels.hpp"
#include "ldefense/prompts.hpp"

namespace ldefense {
namespace {

double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

ClassificationReport macro_prf(std::span<const int> preds, std::span<const int> golds, const LabelSet& labels) {
  if (preds.size() != golds.size()) {
    throw std::invalid_argument("macro_prf: " + std::to_string(preds.size()) + " predictions for " +
                                std::to_string(golds.size()) + " gold labels");
  }
  const auto c = labels.size();
  ClassificationReport rep;
  rep.confusion.assign(c, std::vector<long>(c, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || static_cast<std::size_t>(preds[i]) >= c || golds[i] < 0 ||
        static_cast<std::size_t>(golds[i]) >= c) {
      throw std::out_of_range("macro_prf: label index outside the label set");
    }
    ++rep.confusion[static_cast<std::size_t>(golds[i])][static_cast<std::size_t>(preds[i])];
  }
  long correct = 0;
  for (std::size_t k = 0; k < c; ++k) {
    rep.labels.emplace_back(labels.name(static_cast<int>(k)));
    long tp = rep.confusion[k][k];
    long pred_k = 0;
    long gold_k = 0;
    for (std::size_t j = 0; j < c; ++j) {
      pred_k += rep.confusion[j][k];
      gold_k += rep.confusion[k][j];
    }
    ClassMetrics m;
    m.support = static_cast<std::size_t>(gold_k);
    m.precision = safe_ratio(static_cast<double>(tp), static_cast<double>(pred_k));
    m.recall = safe_ratio(static_cast<double>(tp), static_cast<double>(gold_k));
    m.f1 = safe_ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    rep.per_class.push_back(m);
    rep.macro_precision += m.precision;
    rep.macro_recall += m.recall;
    rep.macro_f1 += m.f1;
    correct += tp;
  }
  rep.macro_precision /= static_cast<double>(c);
  rep.macro_recall /= static_cast<double>(c);
  rep.macro_f1 /= static_cast<double>(c);
  rep.accuracy = safe_ratio(static_cast<double>(correct), static_cast<double>(preds.size()));
  return rep;
}

double discrepancy(std::string_view pred, std::string_view gold, const ScoreScheme& scheme) {
  return std::abs(scheme.score(pred) - scheme.score(gold));
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 && nb == 0.0) throw std::invalid_argument("cosine: both vectors are zero");
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double majority_bias_ratio(std::span<const Embedding> evidence, std::span<const Embedding> candidates,
                           double threshold) {
  if (evidence.empty() || candidates.empty()) {
    throw std::invalid_argument("majority_bias_ratio needs at least one evidence and one candidate");
  }
  const auto counts = kernels::bias_ratio_parallel(evidence, candidates, threshold);
  if (counts.zero_norm_pairs > 0) {
    spdlog::warn("majority bias ratio: {} zero-norm pairs counted as 0", counts.zero_norm_pairs);
  }
  return counts.ratio;
}

LikertScores parse_likert(std::string_view completion) {
  std::optional<int> fields[4];
  static constexpr char kKeys[] = {'M', 'I', 'S', 'R'};
  for (std::size_t pos = 0; pos + 1 < completion.size(); ++pos) {
    const char key = static_cast<char>(std::toupper(static_cast<unsigned char>(completion[pos])));
    if (pos > 0 && std::isalnum(static_cast<unsigned char>(completion[pos - 1]))) continue;
    std::size_t q = pos + 1;
    while (q < completion.size() && completion[q] == ' ') ++q;
    if (q >= completion.size() || completion[q] != ':') continue;
    ++q;
    while (q < completion.size() && completion[q] == ' ') ++q;
    if (q >= completion.size() || completion[q] < '1' || completion[q] > '5') continue;
    if (q + 1 < completion.size() && std::isdigit(static_cast<unsigned char>(completion[q + 1]))) continue;
    for (int k = 0; k < 4; ++k) {
      if (key == kKeys[k] && !fields[k]) fields[k] = completion[q] - '0';
    }
  }
  for (int k = 0; k < 4; ++k) {
    if (!fields[k]) {
      throw ExternalServiceError(std::string("judge completion lacks the ") + kKeys[k] +
                                 " score: " + std::string(completion));
    }
  }
  return LikertScores{*fields[0], *fields[1], *fields[2], *fields[3]};
}

std::string judge_prompt(std::string_view claim, std::string_view gold_label, std::string_view explanation) {
  using namespace prompts;
  std::string user(kJudgeClaim);
  user += claim;
  user += kJudgeGold;
  user += gold_label;
  user += kJudgeExplanation;
  user += explanation;
  user += kJudgeAsk;
  return user;
}

LikertScores judge_explanation(ChatClient& client, std::string_view claim, std::string_view gold_label,
                               std::string_view explanation) {
  const auto completion = client.complete(ChatRequest{client.model(), std::string(prompts::kJudgeSystem),
                                                      judge_prompt(claim, gold_label, explanation), 0.0});
  return parse_likert(completion);
}

LikertMeans likert_means(std::span<const LikertScores> scores) {
  LikertMeans out;
  out.count = scores.size();
  if (scores.empty()) return out;
  for (const auto& s : scores) {
    out.m += s.m;
    out.i += s.i;
    out.s += s.s;
    out.r += s.r;
  }
  const auto n = static_cast<double>(scores.size());
  out.m /= n;
  out.i /= n;
  out.s /= n;
  out.r /= n;
  return out;
}

nlohmann::ordered_json report_to_json(const EvaluationReport& report) {
  const auto& c = report.classification;
  nlohmann::ordered_json o;
  o["macro"] = {{"precision", c.macro_precision}, {"recall", c.macro_recall}, {"f1", c.macro_f1},
                {"accuracy", c.accuracy}};
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (std::size_t k = 0; k < c.labels.size(); ++k) {
    const auto& m = c.per_class[k];
    per_class[c.labels[k]] = {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
                              {"support", m.support}};
  }
  o["per_class"] = per_class;
  o["confusion"] = c.confusion;
  o["discrepancy_mean"] = report.discrepancy_mean;
  o["bias_ratio_mean"] = report.bias_ratio_mean;
  o["bias_embedder"] = report.bias_embedder;
  if (report.likert) {
    o["likert"] = {{"M", report.likert->m}, {"I", report.likert->i}, {"S", report.likert->s},
                   {"R", report.likert->r}, {"count", report.likert->count}};
  } else {
    o["likert"] = nullptr;
  }
  return o;
}

}  // namespace ldefense
