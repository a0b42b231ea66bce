// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ldefense {

/// Raised when a label string or label/scheme pairing is not valid.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Six-way veracity, ordered by increasing truthfulness.
enum class Label6 : int {
  kPantsFire = 0,
  kFalse = 1,
  kBarelyTrue = 2,
  kHalfTrue = 3,
  kMostlyTrue = 4,
  kTrue = 5,
};

/// Three-way veracity: false < half < true.
enum class Label3 : int { kFalse = 0, kHalf = 1, kTrue = 2 };

/// Binary orientation used for competing evidence and explanations.
enum class Side : int { kFalse = 0, kTrue = 1 };

inline constexpr std::size_t kNumLabels6 = 6;
inline constexpr std::size_t kNumLabels3 = 3;

std::string_view to_string(Label6 label);
std::string_view to_string(Label3 label);
std::string_view to_string(Side side);

std::optional<Label6> parse_label6(std::string_view text);
std::optional<Label3> parse_label3(std::string_view text);
Side parse_side(std::string_view text);

Label3 map_six_to_three(Label6 label);

/// Probability pair ordered (p_false, p_true).
struct Prior2 {
  double p_false = 0.5;
  double p_true = 0.5;

  [[nodiscard]] std::array<double, 2> as_array() const { return {p_false, p_true}; }
};

Prior2 label_to_prior(Label3 label);

enum class DatasetKind { kRawfc, kLiarRaw, kSynthetic };

std::string_view to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(std::string_view text);

/// Label set of a dataset. RAWFC and synthetic corpora are three-way,
/// LIAR-RAW is six-way. A label is carried as its ordinal index within the set.
class LabelSet {
 public:
  explicit LabelSet(DatasetKind kind);

  [[nodiscard]] DatasetKind kind() const { return kind_; }
  [[nodiscard]] std::size_t size() const { return names_.size(); }
  [[nodiscard]] std::string_view name(int index) const;
  [[nodiscard]] int index_of(std::string_view name) const;  // throws SchemaError
  [[nodiscard]] std::span<const std::string_view> names() const { return names_; }

  /// Collapse a native label index to the three-way temporary label.
  [[nodiscard]] Label3 to_three(int index) const;

 private:
  DatasetKind kind_;
  std::vector<std::string_view> names_;
};

/// Numeric label scores used by the Discrepancy metric.
class ScoreScheme {
 public:
  explicit ScoreScheme(DatasetKind kind) : labels_(kind) {}

  [[nodiscard]] const LabelSet& labels() const { return labels_; }
  [[nodiscard]] double score(std::string_view label) const;  // throws SchemaError
  [[nodiscard]] double score_index(int index) const;

 private:
  LabelSet labels_;
};

}  // namespace ldefense
