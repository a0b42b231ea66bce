// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>

#include "ldefense/corpus.hpp"
#include "ldefense/labels.hpp"
#include "test_support.hpp"

using namespace ldefense;

TEST_CASE("six-way labels collapse to three") {
  CHECK(map_six_to_three(Label6::kPantsFire) == Label3::kFalse);
  CHECK(map_six_to_three(Label6::kFalse) == Label3::kFalse);
  CHECK(map_six_to_three(Label6::kBarelyTrue) == Label3::kFalse);
  CHECK(map_six_to_three(Label6::kHalfTrue) == Label3::kHalf);
  CHECK(map_six_to_three(Label6::kMostlyTrue) == Label3::kTrue);
  CHECK(map_six_to_three(Label6::kTrue) == Label3::kTrue);
}

TEST_CASE("label priors") {
  CHECK(label_to_prior(Label3::kFalse).as_array() == std::array<double, 2>{1.0, 0.0});
  CHECK(label_to_prior(Label3::kHalf).as_array() == std::array<double, 2>{0.5, 0.5});
  CHECK(label_to_prior(Label3::kTrue).as_array() == std::array<double, 2>{0.0, 1.0});
}

TEST_CASE("label scores per scheme") {
  const ScoreScheme rawfc(DatasetKind::kRawfc);
  const ScoreScheme liar(DatasetKind::kLiarRaw);
  CHECK(rawfc.score("false") == 0.0);
  CHECK(rawfc.score("half") == 2.5);
  CHECK(rawfc.score("true") == 5.0);
  const char* six[] = {"pants-fire", "false", "barely-true", "half-true", "mostly-true", "true"};
  for (int i = 0; i < 6; ++i) CHECK(liar.score(six[i]) == static_cast<double>(i));
  CHECK_THROWS_AS(rawfc.score("mostly-true"), SchemaError);
  CHECK_THROWS_AS(liar.score("half"), SchemaError);
}

TEST_CASE("label parsing round-trips") {
  for (int i = 0; i < 6; ++i) {
    const auto l = static_cast<Label6>(i);
    CHECK(parse_label6(to_string(l)) == l);
  }
  for (int i = 0; i < 3; ++i) {
    const auto l = static_cast<Label3>(i);
    CHECK(parse_label3(to_string(l)) == l);
  }
  CHECK_FALSE(parse_label6("pants on fire").has_value());
  CHECK(parse_dataset_kind("RAWFC") == DatasetKind::kRawfc);
  CHECK(parse_dataset_kind("LIAR-RAW") == DatasetKind::kLiarRaw);
  CHECK(LabelSet(DatasetKind::kLiarRaw).to_three(4) == Label3::kTrue);
  CHECK(LabelSet(DatasetKind::kRawfc).index_of("half") == 1);
  CHECK_THROWS_AS(LabelSet(DatasetKind::kRawfc).index_of("barely-true"), SchemaError);
}

TEST_CASE("sentence splitting") {
  CHECK(split_sentences("A. B? C!") == std::vector<std::string>{"A.", "B?", "C!"});
  CHECK(split_sentences("Dr. Smith spoke.") == std::vector<std::string>{"Dr. Smith spoke."});
  CHECK(split_sentences("no punctuation") == std::vector<std::string>{"no punctuation"});
  CHECK(split_sentences("   ").empty());
  CHECK(split_sentences("He said \"stop.\" Then left.") ==
        std::vector<std::string>{"He said \"stop.\"", "Then left."});
}

TEST_CASE("abbreviations stay inside their sentence") {
  // Each case is one sentence that contains a known abbreviation.
  const char* cases[] = {
      "Dr. Adams signed the order.",
      "Mr. Brown denied the report.",
      "Mrs. Chen filed the claim.",
      "Ms. Diaz led the audit.",
      "Prof. Evans reviewed the data.",
      "The vote in the U.S. Senate was close.",
      "Officials in the U.K. disagreed.",
      "Costs rose, e.g. fuel and rent.",
      "The fee, i.e. the toll, doubled.",
      "Apples, pears, etc. were listed.",
      "Acme Inc. issued a denial.",
      "The case Smith vs. Jones was cited.",
      "Sen. Ortiz voted against it.",
      "Gen. Park commanded the unit.",
      "The deadline was Jan. 15 this year.",
      "The figures are approx. correct.",
      "See fig. 3 for details.",
      "He lives on Main St. near the park.",
      "Bill No. 12 passed the house.",
      "Rep. Lee and Gov. Hart met.",
  };
  for (const char* c : cases) {
    INFO(c);
    CHECK(split_sentences(c) == std::vector<std::string>{c});
  }
}

TEST_CASE("dataset load and save") {
  testing::TempDir dir;
  const auto path = dir / "d.jsonl";
  {
    std::ofstream out(path);
    out << R"({"id":"c1","claim":"Claim one.","label":"half-true","reports":[{"id":"r1","text":"First. Second!"}]})"
        << "\n";
    out << R"({"id":"c2","claim":"Claim two.","label":"true","reports":[]})" << "\n";
  }
  const auto ds = load_dataset(path, DatasetKind::kLiarRaw, "test");
  REQUIRE(ds.claims.size() == 2);
  CHECK(ds.claims[0].reports[0].sentences == std::vector<std::string>{"First.", "Second!"});
  CHECK(ds.claims[1].zero_candidate());
  CHECK(ds.zero_candidate_count() == 1);

  const auto again = dir / "again.jsonl";
  save_dataset(again, ds);
  CHECK(load_dataset(again, DatasetKind::kLiarRaw, "test") == ds);
}

TEST_CASE("dataset errors name the record and field") {
  testing::TempDir dir;
  auto write = [&](const std::string& body) {
    std::ofstream(dir / "bad.jsonl") << body;
    return dir / "bad.jsonl";
  };
  try {
    load_dataset(write(R"({"id":"a","claim":"x","label":"true","reports":[]})"
                       "\n"
                       R"({"id":"b","label":"true","reports":[]})"),
                 DatasetKind::kRawfc);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("record 1") != std::string::npos);
    CHECK(std::string(e.what()).find("'claim'") != std::string::npos);
  }
  CHECK_THROWS_AS(load_dataset(write(R"({"id":"a","claim":"x","label":"mostly-true","reports":[]})"),
                               DatasetKind::kRawfc),
                  SchemaError);
  CHECK_THROWS_AS(load_dataset(write(R"({"id":"a","claim":"x","label":"true","reports":[]})"
                                     "\n"
                                     R"({"id":"a","claim":"y","label":"true","reports":[]})"),
                               DatasetKind::kRawfc),
                  DataError);
}

TEST_CASE("disjoint splits") {
  Dataset a, b;
  a.split = "train";
  b.split = "test";
  a.claims.push_back(Claim{"x", "t", "true", {}});
  b.claims.push_back(Claim{"y", "t", "true", {}});
  CHECK_NOTHROW(check_disjoint(a, b));
  b.claims.push_back(Claim{"x", "t", "false", {}});
  CHECK_THROWS_AS(check_disjoint(a, b), DataError);
}

TEST_CASE("synthetic corpus is deterministic and balanced") {
  SyntheticConfig c;
  c.claims_per_label = 5;
  const auto a = generate_synthetic(c);
  const auto b = generate_synthetic(c);
  CHECK(dataset_to_jsonl(a) == dataset_to_jsonl(b));
  int counts[3] = {0, 0, 0};
  for (const auto& claim : a.claims) ++counts[static_cast<int>(*parse_label3(claim.label))];
  CHECK(counts[0] == 5);
  CHECK(counts[1] == 5);
  CHECK(counts[2] == 5);
  for (const auto& claim : a.claims) CHECK(claim.sentence_count() == 60);
}

TEST_CASE("synthetic party tags follow the signal share") {
  SyntheticConfig c;
  c.claims_per_label = 3;
  c.signal_strength = 1.0;
  for (const auto& claim : generate_synthetic(c).claims) {
    if (claim.label != "true") continue;
    for (const auto& cand : candidates_of(claim)) CHECK((cand.party_tag == "true" || cand.party_tag == "noise"));
  }

  c.signal_strength = 0.5;
  c.sentences_per_claim = 40;
  c.noise_ratio = 0.0;
  for (const auto& claim : generate_synthetic(c).claims) {
    if (claim.label == "half") continue;
    int own = 0;
    for (const auto& cand : candidates_of(claim)) own += cand.party_tag == claim.label;
    CHECK(own == 20);
  }
}

TEST_CASE("assertive sentences carry markers of their party only") {
  SyntheticConfig c;
  c.claims_per_label = 2;
  for (const auto& claim : generate_synthetic(c).claims) {
    for (const auto& cand : candidates_of(claim)) {
      if (cand.party_tag == "noise") continue;
      const Side side = parse_side(cand.party_tag);
      const Side other = side == Side::kFalse ? Side::kTrue : Side::kFalse;
      bool own = false, foreign = false;
      for (auto m : synthetic::marker_phrases(side)) own = own || cand.text.find(m) != std::string_view::npos;
      for (auto m : synthetic::marker_phrases(other)) foreign = foreign || cand.text.find(m) != std::string_view::npos;
      CHECK(own);
      CHECK_FALSE(foreign);
    }
  }
}
