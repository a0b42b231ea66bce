// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldefense/corpus.hpp"
#include "ldefense/embedding.hpp"
#include "ldefense/labels.hpp"
#include "ldefense/neural.hpp"

namespace ldefense {

inline constexpr std::size_t kMaxCandidates = 256;
inline constexpr int kDefaultTopK = 10;

/// One candidate sentence with its raw scores (false, true), attention weights
/// per side, and ranking scores rank_v = alpha_v * s_v.
struct ScoredCandidate {
  std::size_t index = 0;  // position in the claim's document-order candidate list
  double s_minus = 0.5;
  double s_plus = 0.5;
  double alpha_minus = 0.0;
  double alpha_plus = 0.0;
  double rank_minus = 0.0;
  double rank_plus = 0.0;

  bool operator==(const ScoredCandidate&) const = default;
};

struct ClaimScore {
  double sc_minus = 0.0;
  double sc_plus = 0.0;
  /// (sc_minus, sc_plus) renormalized to a distribution.
  std::array<double, 2> normalized{0.5, 0.5};
};

struct EvidenceItem {
  std::size_t report = 0;
  std::size_t sentence = 0;
  std::string text;
  std::string party;  // ground-truth tag when the corpus has one
  double raw_score = 0.0;
  double alpha = 0.0;
  double score = 0.0;
};

struct CompetingEvidenceSets {
  std::string claim_id;
  int k = kDefaultTopK;
  std::vector<EvidenceItem> false_set;  // sorted by descending score
  std::vector<EvidenceItem> true_set;

  [[nodiscard]] const std::vector<EvidenceItem>& side(Side s) const {
    return s == Side::kFalse ? false_set : true_set;
  }
};

/// Scorer over the 4d interaction vector, two attention heads over [h_c; h_x],
/// and the temporary three-way classifier over [h_c; p_c].
struct ExtractorParams {
  nn::MlpParams scorer;
  nn::MlpParams attention_minus;
  nn::MlpParams attention_plus;
  nn::MlpParams classifier;

  static ExtractorParams init(int dim, std::uint64_t seed);

  [[nodiscard]] int dim() const { return classifier.input_dim() - 2; }
  [[nodiscard]] std::array<nn::MlpParams*, 4> heads();
  [[nodiscard]] std::array<const nn::MlpParams*, 4> heads() const;
  [[nodiscard]] std::vector<nn::NamedHead> named() const;
  static ExtractorParams from_named(std::vector<nn::NamedHead> heads);
  void validate() const;

  bool operator==(const ExtractorParams&) const = default;
};

/// [h_c ; h_c * h_x ; h_c - h_x ; h_x]
std::vector<double> interact(std::span<const double> claim, std::span<const double> candidate);

/// (s_minus, s_plus) = softmax(scorer(u)).
std::array<double, 2> candidate_scores(const nn::MlpParams& scorer, std::span<const double> interaction);

/// Softmax over candidates of head([h_c ; h_x]).
std::vector<double> attention_weights(const nn::MlpParams& head, std::span<const double> claim,
                                      std::span<const Embedding> candidates);

ClaimScore claim_scores(std::span<const ScoredCandidate> scored);

/// Full forward for one claim (inference path).
std::vector<ScoredCandidate> score_candidates(const ExtractorParams& params, std::span<const double> claim,
                                              std::span<const Embedding> candidates);

std::array<double, 3> temporary_distribution(const ExtractorParams& params, std::span<const double> claim,
                                             const ClaimScore& score);

struct ExtractorExample {
  Embedding claim;
  std::vector<Embedding> candidates;
  Label3 label = Label3::kHalf;
};

struct ExtractorLoss {
  double total = 0.0;
  double kl = 0.0;   // unweighted sums over the batch
  double cls = 0.0;
};

/// gamma * CE + (1 - gamma) * KL summed over claims. When `grads` is given,
/// exact gradients are accumulated into it (claim order, then candidate order).
ExtractorLoss extractor_loss(std::span<const ExtractorExample> batch, const ExtractorParams& params,
                             double gamma, ExtractorParams* grads = nullptr);

struct RankedSides {
  std::vector<std::size_t> false_order;  // indices into the scored list
  std::vector<std::size_t> true_order;
};

/// Two independent stable descending sorts, each truncated to k.
RankedSides rank_top_k(std::span<const ScoredCandidate> scored, std::size_t k);

struct ExtractorEpoch {
  int epoch = 0;
  double train_loss = 0.0;  // mean per claim
  double eval_loss = 0.0;
  double eval_accuracy = 0.0;
};

struct ExtractorTrainReport {
  std::vector<ExtractorEpoch> epochs;
  std::size_t skipped_zero_candidate = 0;
  std::size_t truncated_claims = 0;
  long steps = 0;
};

struct EmbeddedClaims {
  std::vector<ExtractorExample> examples;
  std::vector<std::size_t> claim_index;  // examples[i] came from dataset.claims[claim_index[i]]
  std::size_t skipped_zero_candidate = 0;
  std::size_t truncated_claims = 0;
};

/// Embeds claim texts and the first kMaxCandidates sentences of every claim.
EmbeddedClaims embed_claims(const Dataset& dataset, EmbeddingGateway& gateway);

double temporary_accuracy(std::span<const ExtractorExample> examples, const ExtractorParams& params);

ExtractorParams train_extractor(const Dataset& train, const Dataset* eval, EmbeddingGateway& gateway,
                                const nn::TrainConfig& config, ExtractorTrainReport* report = nullptr);

ExtractorParams train_extractor(const EmbeddedClaims& train, const EmbeddedClaims* eval, int dim,
                                const nn::TrainConfig& config, ExtractorTrainReport* report = nullptr);

CompetingEvidenceSets build_evidence_sets(const Claim& claim, std::span<const ScoredCandidate> scored, int k);

/// Zero-candidate claims yield two empty sets.
CompetingEvidenceSets extract_top_k(const Claim& claim, const ExtractorParams& params, EmbeddingGateway& gateway,
                                    int k);

/// Whole dataset; candidate scoring runs in parallel across claims.
std::vector<CompetingEvidenceSets> extract_dataset(const Dataset& dataset, const ExtractorParams& params,
                                                   EmbeddingGateway& gateway, int k);

nlohmann::ordered_json evidence_to_json(const CompetingEvidenceSets& sets);
CompetingEvidenceSets evidence_from_json(const nlohmann::json& obj);
std::string evidence_dump(std::span<const CompetingEvidenceSets> sets);
std::vector<CompetingEvidenceSets> load_evidence_dump(const std::filesystem::path& path);

}  // namespace ldefense
