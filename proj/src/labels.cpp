// SPDX-License-Identifier: Apache-2.0
#include "ldefense/labels.hpp"

#include <string>

namespace ldefense {
namespace {

constexpr std::array<std::string_view, kNumLabels6> kNames6 = {
    "pants-fire", "false", "barely-true", "half-true", "mostly-true", "true"};
constexpr std::array<std::string_view, kNumLabels3> kNames3 = {"false", "half", "true"};

}  // namespace

std::string_view to_string(Label6 label) { return kNames6.at(static_cast<std::size_t>(label)); }
std::string_view to_string(Label3 label) { return kNames3.at(static_cast<std::size_t>(label)); }
std::string_view to_string(Side side) { return side == Side::kFalse ? "false" : "true"; }

std::optional<Label6> parse_label6(std::string_view text) {
  for (std::size_t i = 0; i < kNames6.size(); ++i) {
    if (kNames6[i] == text) return static_cast<Label6>(i);
  }
  return std::nullopt;
}

std::optional<Label3> parse_label3(std::string_view text) {
  for (std::size_t i = 0; i < kNames3.size(); ++i) {
    if (kNames3[i] == text) return static_cast<Label3>(i);
  }
  return std::nullopt;
}

Side parse_side(std::string_view text) {
  if (text == "false") return Side::kFalse;
  if (text == "true") return Side::kTrue;
  throw SchemaError("unknown orientation '" + std::string(text) + "'");
}

Label3 map_six_to_three(Label6 label) {
  switch (label) {
    case Label6::kPantsFire:
    case Label6::kFalse:
    case Label6::kBarelyTrue:
      return Label3::kFalse;
    case Label6::kHalfTrue:
      return Label3::kHalf;
    case Label6::kMostlyTrue:
    case Label6::kTrue:
      return Label3::kTrue;
  }
  return Label3::kHalf;
}

Prior2 label_to_prior(Label3 label) {
  switch (label) {
    case Label3::kFalse:
      return {1.0, 0.0};
    case Label3::kHalf:
      return {0.5, 0.5};
    case Label3::kTrue:
      return {0.0, 1.0};
  }
  return {};
}

std::string_view to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kRawfc:
      return "RAWFC";
    case DatasetKind::kLiarRaw:
      return "LIAR-RAW";
    case DatasetKind::kSynthetic:
      return "synthetic";
  }
  return "synthetic";
}

DatasetKind parse_dataset_kind(std::string_view text) {
  if (text == "RAWFC") return DatasetKind::kRawfc;
  if (text == "LIAR-RAW") return DatasetKind::kLiarRaw;
  if (text == "synthetic") return DatasetKind::kSynthetic;
  throw SchemaError("unknown dataset name '" + std::string(text) + "'");
}

LabelSet::LabelSet(DatasetKind kind) : kind_(kind) {
  if (kind == DatasetKind::kLiarRaw) {
    names_.assign(kNames6.begin(), kNames6.end());
  } else {
    names_.assign(kNames3.begin(), kNames3.end());
  }
}

std::string_view LabelSet::name(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= names_.size()) {
    throw SchemaError("label index " + std::to_string(index) + " out of range for " +
                      std::string(to_string(kind_)));
  }
  return names_[static_cast<std::size_t>(index)];
}

int LabelSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<int>(i);
  }
  throw SchemaError("label '" + std::string(name) + "' is not valid for " +
                    std::string(to_string(kind_)));
}

Label3 LabelSet::to_three(int index) const {
  (void)name(index);
  if (names_.size() == kNumLabels6) return map_six_to_three(static_cast<Label6>(index));
  return static_cast<Label3>(index);
}

double ScoreScheme::score(std::string_view label) const {
  return score_index(labels_.index_of(label));
}

double ScoreScheme::score_index(int index) const {
  (void)labels_.name(index);
  // Three-way scores span the same 0..5 range as the six-way ones.
  if (labels_.size() == kNumLabels3) return 2.5 * index;
  return static_cast<double>(index);
}

}  // namespace ldefense
