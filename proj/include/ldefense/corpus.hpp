// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ldefense/labels.hpp"

namespace ldefense {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Report {
  std::string id;
  std::string source;
  std::string text;
  std::vector<std::string> sentences;
  /// Per-sentence "false" | "true" | "noise"; only synthetic corpora carry these.
  std::vector<std::string> party_tags;

  bool operator==(const Report&) const = default;
};

struct Claim {
  std::string id;
  std::string text;
  std::string label;  // native label name for the dataset's label set
  std::vector<Report> reports;

  [[nodiscard]] std::size_t sentence_count() const;
  [[nodiscard]] bool zero_candidate() const { return sentence_count() == 0; }

  bool operator==(const Claim&) const = default;
};

/// A flattened candidate sentence with its (report, sentence) position.
struct CandidateRef {
  std::size_t report = 0;
  std::size_t sentence = 0;
  std::string_view text;
  std::string_view party_tag;  // empty when the corpus has no tags
};

/// Candidates in document order.
std::vector<CandidateRef> candidates_of(const Claim& claim);

struct Dataset {
  DatasetKind kind = DatasetKind::kSynthetic;
  std::string split;
  std::vector<Claim> claims;

  [[nodiscard]] LabelSet labels() const { return LabelSet(kind); }
  [[nodiscard]] std::size_t total_sentences() const;
  [[nodiscard]] std::size_t zero_candidate_count() const;

  bool operator==(const Dataset&) const = default;
};

/// Reads one JSON record per line. Throws DataError with the record index and
/// field on malformed input, SchemaError on labels outside the dataset's set.
Dataset load_dataset(const std::filesystem::path& path, DatasetKind kind, std::string split = {});

/// Writes the same line format load_dataset reads (party_tags only when present).
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);

std::string dataset_to_jsonl(const Dataset& dataset);

/// Throws DataError if any claim id appears in both datasets.
void check_disjoint(const Dataset& a, const Dataset& b);

/// Rule-based splitter on terminal punctuation with an abbreviation stop-list.
/// Unsplittable text comes back as a single trimmed sentence.
std::vector<std::string> split_sentences(std::string_view text);

struct SyntheticConfig {
  int claims_per_label = 140;
  int sentences_per_claim = 60;
  double signal_strength = 0.8;
  double noise_ratio = 0.2;
  int reports_per_claim = 4;
  std::uint64_t seed = 7;
  std::string split = "train";

  void validate() const;
};

/// Balanced three-way corpus. For a claim labelled L, a signal_strength share of
/// its non-noise sentences assert an L-party marker phrase; the rest carry a
/// hedged marker of the opposite party. Half claims alternate both parties.
Dataset generate_synthetic(const SyntheticConfig& config);

namespace synthetic {

/// Marker phrases for one party. The mock embedder maps each phrase to its
/// own anchor direction; the mock LLM counts the assertive occurrences.
std::span<const std::string_view> marker_phrases(Side side);

/// All marker phrases, false party first.
std::span<const std::string_view> all_marker_phrases();

/// Lead-in that marks a sentence as a hedged, minority-party report.
inline constexpr std::string_view kHedgeCue = "unconfirmed posts claim";

}  // namespace synthetic
}  // namespace ldefense
