// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldefense/chat_client.hpp"
#include "ldefense/corpus.hpp"
#include "ldefense/embedding.hpp"
#include "ldefense/extractor.hpp"
#include "ldefense/labels.hpp"
#include "ldefense/neural.hpp"
#include "ldefense/reasoner.hpp"

namespace ldefense {

inline constexpr std::string_view kSegmentSeparator = " [SEP] ";

/// "claim [SEP] e_minus [SEP] e_plus". When max_chars > 0 and the text is
/// longer, both explanations lose characters from their tails in proportion to
/// their lengths; the claim is never cut. Throws std::invalid_argument on an
/// empty explanation or when the claim alone does not fit.
std::string assemble(std::string_view claim, std::string_view e_minus, std::string_view e_plus,
                     std::size_t max_chars = 0);

struct DefenseInput {
  std::string text;
  Embedding embedding;
};

struct InferenceParams {
  nn::MlpParams head;  // dim -> 128 tanh -> label count

  static InferenceParams init(int dim, int classes, std::uint64_t seed);
  [[nodiscard]] int dim() const { return head.input_dim(); }
  [[nodiscard]] int classes() const { return head.output_dim(); }
  [[nodiscard]] std::vector<nn::NamedHead> named() const;
  static InferenceParams from_named(std::vector<nn::NamedHead> heads);
};

/// softmax(head(v)); throws nn::ShapeError when the dims differ.
std::vector<double> verdict_distribution(std::span<const double> embedding, const InferenceParams& params);

/// Index of the largest entry; ties go to the lower index.
int argmax_lowest(std::span<const double> values);

struct DefenseExample {
  Embedding embedding;
  int gold = 0;  // native label index
};

struct DefenseEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
};

struct DefenseTrainReport {
  std::vector<DefenseEpoch> epochs;
  long steps = 0;
  std::size_t excluded = 0;
};

/// CE training of the head with Adam and warm-up/decay; single-threaded and
/// deterministic for a given config seed.
InferenceParams train_inference(std::span<const DefenseExample> examples, int dim, int classes,
                                const nn::TrainConfig& config, DefenseTrainReport* report = nullptr);

/// Competing explanations matched to dataset claims, embedded as assembled text.
struct DefenseSet {
  std::vector<DefenseExample> examples;
  std::vector<std::size_t> claim_index;  // examples[i] came from dataset.claims[claim_index[i]]
  std::vector<const CompetingExplanations*> explanations;
  std::size_t excluded = 0;              // claims without a usable explanation pair
};

DefenseSet embed_defense(const Dataset& dataset, std::span<const CompetingExplanations> explanations,
                         EmbeddingGateway& gateway, std::size_t max_chars = 0);

enum class Provenance { kMinus, kPlus, kCombined };
std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view text);

/// Provenance of the final explanation for a predicted native label index.
Provenance provenance_for(const LabelSet& labels, int predicted);

/// Final explanation text for a prediction: e_minus, e_plus, or both through
/// the half-label template.
std::string final_explanation(Provenance p, std::string_view e_minus, std::string_view e_plus);

struct Verdict {
  std::string claim_id;
  std::string gold;
  std::string pred;
  std::vector<double> distribution;  // empty for LLM verdicts
  std::string explanation;
  Provenance provenance = Provenance::kMinus;

  bool operator==(const Verdict&) const = default;
};

Verdict make_verdict(const Claim& claim, const LabelSet& labels, std::vector<double> distribution,
                     const CompetingExplanations& explanations);

/// Predictions for every example of `set` (parallel over claims).
std::vector<Verdict> predict_dataset(const Dataset& dataset, const DefenseSet& set, const InferenceParams& params);

/// Label picked from a completion: first label token found scanning left to
/// right, case-insensitively, with longer labels tried before shorter ones at
/// each position.
std::optional<int> parse_label_token(std::string_view completion, const LabelSet& labels);

/// Verdict from the LLM at temperature 0 instead of the trained head.
Verdict ablation_no_training(const Claim& claim, const LabelSet& labels, const CompetingExplanations& explanations,
                             ChatClient& client);

/// Stand-in explanations built from the serialized evidence sets.
CompetingExplanations evidence_as_explanations(const CompetingEvidenceSets& sets);

nlohmann::ordered_json verdict_to_json(const Verdict& v);
Verdict verdict_from_json(const nlohmann::json& obj);
std::string verdict_dump(std::span<const Verdict> verdicts);
std::vector<Verdict> load_verdict_dump(const std::filesystem::path& path);

}  // namespace ldefense
