// SPDX-License-Identifier: Apache-2.0
#include "ldefense/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "ldefense/util.hpp"

namespace ldefense {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr std::array<std::string_view, 4> kFalseMarkers = {
    "was thoroughly debunked",
    "has no basis in the records",
    "was fabricated by the poster",
    "contradicts the official figures",
};
constexpr std::array<std::string_view, 4> kTrueMarkers = {
    "was officially confirmed",
    "matches the published records",
    "was verified by independent auditors",
    "is backed by the census figures",
};
constexpr std::array<std::string_view, 8> kAllMarkers = {
    kFalseMarkers[0], kFalseMarkers[1], kFalseMarkers[2], kFalseMarkers[3],
    kTrueMarkers[0],  kTrueMarkers[1],  kTrueMarkers[2],  kTrueMarkers[3],
};

// Lowercased, trailing period included.
constexpr std::array<std::string_view, 40> kAbbreviations = {
    "dr.",   "mr.",   "mrs.",  "ms.",   "prof.", "sr.",  "jr.",  "st.",  "vs.",  "etc.",
    "e.g.",  "i.e.",  "u.s.",  "u.k.",  "inc.",  "ltd.", "co.",  "corp.", "gov.", "sen.",
    "rep.",  "gen.",  "lt.",   "col.",  "sgt.",  "jan.", "feb.", "mar.", "apr.", "aug.",
    "sept.", "oct.",  "nov.",  "dec.",  "no.",   "approx.", "dept.", "est.", "fig.", "mt.",
};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool ends_with_abbreviation(std::string_view upto_period) {
  std::size_t start = upto_period.find_last_of(" \t\r\n(\"'");
  std::string_view word = start == std::string_view::npos ? upto_period : upto_period.substr(start + 1);
  std::string lower(word);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), lower) != kAbbreviations.end();
}

std::string require_string(const json& obj, std::string_view field, std::size_t record) {
  auto it = obj.find(field);
  if (it == obj.end() || !it->is_string()) {
    throw DataError("record " + std::to_string(record) + ": field '" + std::string(field) +
                    "' missing or not a string");
  }
  return it->get<std::string>();
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

template <typename Seq>
std::string_view pick_from(std::mt19937_64& rng, const Seq& seq) {
  return seq[pick(rng, std::size(seq))];
}

void shuffle(std::mt19937_64& rng, std::vector<int>& v) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[pick(rng, i)]);
}

constexpr std::array<std::string_view, 12> kSubjects = {
    "senator",  "governor", "city council", "school board", "health agency", "mayor",
    "ministry", "union",    "company",      "university",   "police chief",  "candidate"};
constexpr std::array<std::string_view, 12> kActions = {
    "cut funding for", "doubled spending on", "banned",     "approved", "privatized", "expanded",
    "closed",          "taxed",               "subsidized", "audited",  "relocated",  "renamed"};
constexpr std::array<std::string_view, 12> kObjects = {
    "public libraries", "rural hospitals", "bus routes",   "water plants", "veteran clinics",
    "bridge repairs",   "solar farms",     "school meals", "fire stations", "voting centers",
    "housing grants",   "park services"};
constexpr std::array<std::string_view, 10> kPlaces = {
    "Ohio", "Texas", "Oregon", "Maine", "Nevada", "Georgia", "Iowa", "Utah", "Vermont", "Idaho"};
constexpr std::array<std::string_view, 8> kOutlets = {
    "A regional newspaper", "A local broadcaster", "A policy blog",   "A wire service",
    "A community forum",    "A radio host",        "A weekly column", "A national outlet"};
constexpr std::array<std::string_view, 10> kFiller = {
    "Residents debated the {t} issue during a long town meeting.",
    "Several commentators discussed the {t} story without drawing conclusions.",
    "The {t} topic trended briefly on social media last week.",
    "An opinion piece mentioned the {t} debate alongside other budget items.",
    "Readers shared the {t} headline with mixed reactions.",
    "A podcast episode touched on the {t} question near the end.",
    "Local officials declined to comment on the {t} matter.",
    "The {t} controversy appeared in a weekend news roundup.",
    "Some viewers asked follow up questions about the {t} report.",
    "A newsletter linked to the {t} discussion without further detail.",
};

std::string replace_topic(std::string_view templ, std::string_view topic) {
  std::string out(templ);
  auto pos = out.find("{t}");
  if (pos != std::string::npos) out.replace(pos, 3, topic);
  return out;
}

}  // namespace

std::size_t Claim::sentence_count() const {
  std::size_t n = 0;
  for (const auto& r : reports) n += r.sentences.size();
  return n;
}

std::vector<CandidateRef> candidates_of(const Claim& claim) {
  std::vector<CandidateRef> out;
  out.reserve(claim.sentence_count());
  for (std::size_t r = 0; r < claim.reports.size(); ++r) {
    const auto& report = claim.reports[r];
    for (std::size_t s = 0; s < report.sentences.size(); ++s) {
      std::string_view tag = s < report.party_tags.size() ? std::string_view(report.party_tags[s]) : "";
      out.push_back({r, s, report.sentences[s], tag});
    }
  }
  return out;
}

std::size_t Dataset::total_sentences() const {
  std::size_t n = 0;
  for (const auto& c : claims) n += c.sentence_count();
  return n;
}

std::size_t Dataset::zero_candidate_count() const {
  return static_cast<std::size_t>(
      std::count_if(claims.begin(), claims.end(), [](const Claim& c) { return c.zero_candidate(); }));
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    char c = text[i];
    if (c != '.' && c != '!' && c != '?') {
      ++i;
      continue;
    }
    std::size_t end = i + 1;
    while (end < n && (text[end] == '.' || text[end] == '!' || text[end] == '?')) ++end;
    while (end < n && (text[end] == '"' || text[end] == '\'' || text[end] == ')' || text[end] == ']')) ++end;
    const bool boundary = end == n || is_space(text[end]);
    const bool abbreviation = c == '.' && end == i + 1 && ends_with_abbreviation(text.substr(start, end - start));
    if (boundary && !abbreviation) {
      auto sentence = trim(text.substr(start, end - start));
      if (!sentence.empty()) out.emplace_back(sentence);
      start = end;
    }
    i = end;
  }
  auto tail = trim(text.substr(std::min(start, n)));
  if (!tail.empty()) out.emplace_back(tail);
  return out;
}

Dataset load_dataset(const std::filesystem::path& path, DatasetKind kind, std::string split) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  Dataset ds;
  ds.kind = kind;
  ds.split = std::move(split);
  const LabelSet labels(kind);
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError("record " + std::to_string(record) + ": invalid JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw DataError("record " + std::to_string(record) + ": not an object");
    Claim claim;
    claim.id = require_string(obj, "id", record);
    claim.text = require_string(obj, "claim", record);
    claim.label = require_string(obj, "label", record);
    if (trim(claim.text).empty()) {
      throw DataError("record " + std::to_string(record) + ": field 'claim' is empty");
    }
    (void)labels.index_of(claim.label);
    if (!ids.insert(claim.id).second) {
      throw DataError("record " + std::to_string(record) + ": duplicate id '" + claim.id + "'");
    }
    auto reports = obj.find("reports");
    if (reports == obj.end() || !reports->is_array()) {
      throw DataError("record " + std::to_string(record) + ": field 'reports' missing or not an array");
    }
    for (std::size_t r = 0; r < reports->size(); ++r) {
      const auto& ro = (*reports)[r];
      if (!ro.is_object()) {
        throw DataError("record " + std::to_string(record) + ": field 'reports[" + std::to_string(r) +
                        "]' not an object");
      }
      Report report;
      report.id = require_string(ro, "id", record);
      report.text = require_string(ro, "text", record);
      if (auto src = ro.find("source"); src != ro.end() && src->is_string()) report.source = *src;
      report.sentences = split_sentences(report.text);
      if (auto tags = ro.find("party_tags"); tags != ro.end()) {
        if (!tags->is_object()) {
          throw DataError("record " + std::to_string(record) + ": field 'party_tags' not an object");
        }
        report.party_tags.assign(report.sentences.size(), "noise");
        for (const auto& [key, value] : tags->items()) {
          std::size_t idx = 0;
          try {
            idx = std::stoul(key);
          } catch (const std::exception&) {
            throw DataError("record " + std::to_string(record) + ": field 'party_tags' has bad key '" + key + "'");
          }
          if (idx >= report.sentences.size() || !value.is_string()) {
            throw DataError("record " + std::to_string(record) + ": field 'party_tags' entry '" + key +
                            "' out of range");
          }
          auto tag = value.get<std::string>();
          if (tag != "false" && tag != "true" && tag != "noise") {
            throw DataError("record " + std::to_string(record) + ": field 'party_tags' value '" + tag + "'");
          }
          report.party_tags[idx] = tag;
        }
      }
      claim.reports.push_back(std::move(report));
    }
    ds.claims.push_back(std::move(claim));
    ++record;
  }
  return ds;
}

std::string dataset_to_jsonl(const Dataset& dataset) {
  std::string out;
  for (const auto& claim : dataset.claims) {
    ordered_json obj;
    obj["id"] = claim.id;
    obj["claim"] = claim.text;
    obj["label"] = claim.label;
    ordered_json reports = ordered_json::array();
    for (const auto& r : claim.reports) {
      ordered_json ro;
      ro["id"] = r.id;
      if (!r.source.empty()) ro["source"] = r.source;
      ro["text"] = r.text;
      if (!r.party_tags.empty()) {
        ordered_json tags = ordered_json::object();
        for (std::size_t i = 0; i < r.party_tags.size(); ++i) tags[std::to_string(i)] = r.party_tags[i];
        ro["party_tags"] = std::move(tags);
      }
      reports.push_back(std::move(ro));
    }
    obj["reports"] = std::move(reports);
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  write_file_atomic(path, dataset_to_jsonl(dataset));
}

void check_disjoint(const Dataset& a, const Dataset& b) {
  std::unordered_set<std::string_view> ids;
  for (const auto& c : a.claims) ids.insert(c.id);
  for (const auto& c : b.claims) {
    if (ids.contains(c.id)) {
      throw DataError("claim id '" + c.id + "' appears in both " + a.split + " and " + b.split);
    }
  }
}

void SyntheticConfig::validate() const {
  if (claims_per_label <= 0 || sentences_per_claim <= 0 || reports_per_claim <= 0) {
    throw std::invalid_argument("synthetic counts must be positive");
  }
  if (signal_strength < 0.0 || signal_strength > 1.0 || noise_ratio < 0.0 || noise_ratio > 1.0) {
    throw std::invalid_argument("synthetic ratios must lie in [0, 1]");
  }
}

Dataset generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  Dataset ds;
  ds.kind = DatasetKind::kSynthetic;
  ds.split = config.split;
  std::mt19937_64 rng(splitmix64(config.seed ^ fnv1a64(config.split)));

  const int n = config.sentences_per_claim;
  const int noise = static_cast<int>(std::lround(n * config.noise_ratio));
  const int non_noise = n - noise;
  const int signal = static_cast<int>(std::lround(non_noise * config.signal_strength));

  const std::array<Label3, 3> order = {Label3::kFalse, Label3::kHalf, Label3::kTrue};
  int serial = 0;
  for (int i = 0; i < config.claims_per_label; ++i) {
    for (Label3 label : order) {
      Claim claim;
      char id[64];
      std::snprintf(id, sizeof id, "syn-%s-%05d", config.split.c_str(), serial++);
      claim.id = id;
      claim.label = std::string(to_string(label));
      const std::string subject(pick_from(rng, kSubjects));
      const std::string object(pick_from(rng, kObjects));
      claim.text = "The " + subject + " " + std::string(pick_from(rng, kActions)) + " " + object + " in " +
                   std::string(pick_from(rng, kPlaces)) + ".";
      const std::string topic = object;

      // kind: 0 noise, 1 assertive false, 2 assertive true, 3 hedged false, 4 hedged true
      std::vector<int> kinds;
      kinds.reserve(static_cast<std::size_t>(n));
      for (int k = 0; k < noise; ++k) kinds.push_back(0);
      for (int k = 0; k < non_noise; ++k) {
        const bool in_signal = k < signal;
        if (label == Label3::kHalf) {
          const bool false_side = k % 2 == 0;
          kinds.push_back(in_signal ? (false_side ? 1 : 2) : (false_side ? 3 : 4));
        } else {
          const bool false_claim = label == Label3::kFalse;
          kinds.push_back(in_signal ? (false_claim ? 1 : 2) : (false_claim ? 4 : 3));
        }
      }
      shuffle(rng, kinds);

      std::vector<std::string> sentences;
      std::vector<std::string> tags;
      for (int kind : kinds) {
        if (kind == 0) {
          sentences.push_back(replace_topic(pick_from(rng, kFiller), topic));
          tags.emplace_back("noise");
          continue;
        }
        const Side side = (kind == 1 || kind == 3) ? Side::kFalse : Side::kTrue;
        const auto markers = synthetic::marker_phrases(side);
        const std::string marker(markers[pick(rng, markers.size())]);
        if (kind <= 2) {
          sentences.push_back(std::string(pick_from(rng, kOutlets)) + " reported that the " + subject +
                              " story on " + topic + " " + marker + ".");
        } else {
          std::string cue(synthetic::kHedgeCue);
          cue[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(cue[0])));
          sentences.push_back(cue + " the " + subject + " story on " + topic + " " + marker + ".");
        }
        tags.emplace_back(to_string(side));
      }

      const int reports = std::min(config.reports_per_claim, std::max(n, 1));
      std::size_t cursor = 0;
      for (int r = 0; r < reports; ++r) {
        const std::size_t take = sentences.size() / static_cast<std::size_t>(reports) +
                                 (static_cast<std::size_t>(r) < sentences.size() % static_cast<std::size_t>(reports) ? 1 : 0);
        Report report;
        report.id = claim.id + "-r" + std::to_string(r);
        report.source = "synthetic";
        for (std::size_t s = 0; s < take; ++s, ++cursor) {
          if (s > 0) report.text += ' ';
          report.text += sentences[cursor];
          report.sentences.push_back(sentences[cursor]);
          report.party_tags.push_back(tags[cursor]);
        }
        claim.reports.push_back(std::move(report));
      }
      ds.claims.push_back(std::move(claim));
    }
  }
  return ds;
}

namespace synthetic {

std::span<const std::string_view> marker_phrases(Side side) {
  return side == Side::kFalse ? std::span<const std::string_view>(kFalseMarkers)
                              : std::span<const std::string_view>(kTrueMarkers);
}

std::span<const std::string_view> all_marker_phrases() { return kAllMarkers; }

}  // namespace synthetic
}  // namespace ldefense
