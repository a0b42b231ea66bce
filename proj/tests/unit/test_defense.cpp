// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <omp.h>

#include "ldefense/chat_client.hpp"
#include "ldefense/defense.hpp"
#include "ldefense/kernels.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace ldefense;
using doctest::Approx;

namespace {

std::size_t count_of(const std::string& hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

CompetingExplanations pair(const std::string& id, std::string minus, std::string plus) {
  CompetingExplanations e;
  e.claim_id = id;
  e.e_minus = {Side::kFalse, std::move(minus), "test", ""};
  e.e_plus = {Side::kTrue, std::move(plus), "test", ""};
  return e;
}

// Replies with a fixed string to every request.
class FixedClient final : public ChatClient {
 public:
  explicit FixedClient(std::string reply) : reply_(std::move(reply)) {}
  std::string model() const override { return "fixed"; }
  std::string last_user;
  double last_temperature = -1.0;

 protected:
  std::string do_complete(const ChatRequest& r) override {
    ++requests_;
    last_user = r.user;
    last_temperature = r.temperature;
    return reply_;
  }

 private:
  std::string reply_;
};

}  // namespace

TEST_CASE("assembled text") {
  CHECK(assemble("c", "a", "b") == "c [SEP] a [SEP] b");
  CHECK_FALSE(assemble("c", "a", "b") == assemble("c", "b", "a"));
  CHECK_THROWS_AS(assemble("c", "", "b"), std::invalid_argument);
  CHECK_THROWS_AS(assemble("c", "a", ""), std::invalid_argument);
  CHECK_THROWS_AS(assemble(std::string(50, 'c'), "a", "b", 40), std::invalid_argument);

  testing::Gen g(1);
  for (int t = 0; t < 300; ++t) {
    const std::string claim(static_cast<std::size_t>(g.integer(1, 30)), 'c');
    const std::string a(static_cast<std::size_t>(g.integer(1, 200)), 'a');
    const std::string b(static_cast<std::size_t>(g.integer(1, 200)), 'b');
    const auto budget = static_cast<std::size_t>(g.integer(static_cast<int>(claim.size()) + 16, 460));
    const auto s = assemble(claim, a, b, budget);
    CHECK(s.size() <= budget);
    CHECK(s.rfind(claim + " [SEP] a", 0) == 0);
    CHECK(count_of(s, " [SEP] ") == 2);
    CHECK(s.back() == 'b');
    if (claim.size() + a.size() + b.size() + 14 <= budget) CHECK(s == assemble(claim, a, b));
  }
}

TEST_CASE("verdict distribution") {
  testing::Gen g(2);
  auto p = InferenceParams::init(8, 6, 3);
  CHECK(p.classes() == 6);
  CHECK(p.dim() == 8);
  for (int t = 0; t < 50; ++t) {
    const auto v = g.vec(8);
    const auto d = verdict_distribution(v, p);
    double sum = 0.0;
    for (double x : d) sum += x;
    CHECK(sum == Approx(1.0).epsilon(1e-9));
    const auto ref = testing::ref_softmax(testing::ref_mlp(p.head, v));
    for (std::size_t i = 0; i < 6; ++i) CHECK(d[i] == Approx(ref[i]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(verdict_distribution(g.vec(7), p), nn::ShapeError);

  // Adding a constant to every output logit leaves the argmax alone.
  for (int t = 0; t < 50; ++t) {
    const auto v = g.vec(8);
    auto shifted = p;
    for (auto& b : shifted.head.layers.back().bias) b += 3.5;
    CHECK(argmax_lowest(verdict_distribution(v, p)) == argmax_lowest(verdict_distribution(v, shifted)));
  }

  nn::zero_output_layer(p.head);
  for (double x : verdict_distribution(g.vec(8), p)) CHECK(x == Approx(1.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("argmax ties go to the lower index") {
  CHECK(argmax_lowest(std::vector<double>{0.2, 0.4, 0.4}) == 1);
  CHECK(argmax_lowest(std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3}) == 0);
  CHECK(argmax_lowest(std::vector<double>{0.1, 0.2, 0.7}) == 2);
}

TEST_CASE("final explanation follows the predicted label for every label") {
  // Independent table: which explanation each native label selects.
  struct Row {
    DatasetKind kind;
    const char* label;
    Provenance want;
  };
  const Row rows[] = {
      {DatasetKind::kRawfc, "false", Provenance::kMinus},          {DatasetKind::kRawfc, "half", Provenance::kCombined},
      {DatasetKind::kRawfc, "true", Provenance::kPlus},            {DatasetKind::kLiarRaw, "pants-fire", Provenance::kMinus},
      {DatasetKind::kLiarRaw, "false", Provenance::kMinus},        {DatasetKind::kLiarRaw, "barely-true", Provenance::kMinus},
      {DatasetKind::kLiarRaw, "half-true", Provenance::kCombined}, {DatasetKind::kLiarRaw, "mostly-true", Provenance::kPlus},
      {DatasetKind::kLiarRaw, "true", Provenance::kPlus},
  };
  for (const auto& r : rows) {
    const LabelSet labels(r.kind);
    const int idx = labels.index_of(r.label);
    INFO(r.label);
    CHECK(provenance_for(labels, idx) == r.want);

    std::vector<double> dist(labels.size(), 0.0);
    dist[static_cast<std::size_t>(idx)] = 1.0;
    const Claim claim{"c", "Claim.", r.label, {}};
    const auto v = make_verdict(claim, labels, dist, pair("c", "MINUS TEXT", "PLUS TEXT"));
    CHECK(v.pred == r.label);
    CHECK(v.provenance == r.want);
    switch (r.want) {
      case Provenance::kMinus: CHECK(v.explanation == "MINUS TEXT"); break;
      case Provenance::kPlus: CHECK(v.explanation == "PLUS TEXT"); break;
      case Provenance::kCombined:
        CHECK(v.explanation.find("MINUS TEXT") != std::string::npos);
        CHECK(v.explanation.find("PLUS TEXT") != std::string::npos);
        break;
    }
  }
}

TEST_CASE("half-label template matches its golden file") {
  std::ifstream in(std::string(LDEFENSE_TEST_DATA) + "/golden/half_explanation.txt", std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(final_explanation(Provenance::kCombined, "The fleet grew by under four percent.",
                          "The mayor did expand service.") == ss.str());
}

TEST_CASE("label tokens in completions") {
  const LabelSet rawfc(DatasetKind::kRawfc);
  const LabelSet liar(DatasetKind::kLiarRaw);
  CHECK(parse_label_token("I think it's TRUE.", rawfc) == 2);
  CHECK(parse_label_token("false", rawfc) == 0);
  CHECK(parse_label_token("Verdict: half", rawfc) == 1);
  CHECK(parse_label_token("untrue and falsehood", rawfc) == std::nullopt);
  CHECK(parse_label_token("It is mostly-true overall", liar) == 4);
  CHECK(parse_label_token("Pants-Fire!", liar) == 0);
  CHECK(parse_label_token("barely-true, not true", liar) == 2);
  CHECK(parse_label_token("no idea", liar) == std::nullopt);
}

TEST_CASE("LLM verdict without a trained head") {
  const LabelSet labels(DatasetKind::kRawfc);
  const Claim claim{"c", "Claim.", "true", {}};
  FixedClient says_false("false");
  const auto v = ablation_no_training(claim, labels, pair("c", "minus", "plus"), says_false);
  CHECK(v.pred == "false");
  CHECK(v.explanation == "minus");
  CHECK(v.distribution.empty());
  CHECK(says_false.last_temperature == 0.0);
  CHECK(says_false.last_user.find("false, half, true") != std::string::npos);

  FixedClient rambles("I cannot decide.");
  try {
    ablation_no_training(claim, labels, pair("c", "minus", "plus"), rambles);
    FAIL("expected an error");
  } catch (const ExternalServiceError& e) {
    CHECK(std::string(e.what()).find("I cannot decide.") != std::string::npos);
  }
}

TEST_CASE("training separates labelled clusters and is deterministic") {
  testing::Gen g(7);
  const int dim = 12, classes = 3;
  std::vector<std::vector<double>> centers;
  for (int c = 0; c < classes; ++c) centers.push_back(g.vec(dim, -2.0, 2.0));
  std::vector<DefenseExample> train;
  for (int i = 0; i < 240; ++i) {
    const int c = i % classes;
    auto v = centers[static_cast<std::size_t>(c)];
    for (auto& x : v) x += g.uniform(-0.3, 0.3);
    train.push_back({v, c});
  }
  nn::TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 8;
  DefenseTrainReport report;
  const auto a = train_inference(train, dim, classes, cfg, &report);
  CHECK(report.epochs.size() == 5);
  CHECK(report.epochs.back().train_accuracy >= 0.95);
  CHECK(report.steps == 5 * 30);
  const auto b = train_inference(train, dim, classes, cfg);
  CHECK(a.head == b.head);
  cfg.seed = 14;
  CHECK_FALSE(train_inference(train, dim, classes, cfg).head == a.head);
}

TEST_CASE("defense set, prediction and verdict dump") {
  Dataset ds;
  ds.kind = DatasetKind::kRawfc;
  ds.claims = {Claim{"a", "Claim a.", "false", {}}, Claim{"b", "Claim b.", "true", {}},
               Claim{"c", "Claim c.", "half", {}}};
  const std::vector<CompetingExplanations> ex{pair("b", "b minus", "b plus"), pair("a", "a minus", "a plus")};
  BackendDescriptor d;
  d.dim = 16;
  EmbeddingGateway gw(make_embedding_backend(d));
  const auto set = embed_defense(ds, ex, gw);
  CHECK(set.excluded == 1);
  REQUIRE(set.examples.size() == 2);
  CHECK(set.examples[0].gold == 0);
  CHECK(set.examples[0].embedding == mock_embed("Claim a. [SEP] a minus [SEP] a plus", 16, 0));

  const auto params = InferenceParams::init(16, 3, 1);
  const auto verdicts = predict_dataset(ds, set, params);
  REQUIRE(verdicts.size() == 2);
  CHECK(verdicts[0].claim_id == "a");
  CHECK(verdicts[0].gold == "false");
  CHECK(verdicts[0].distribution == verdict_distribution(set.examples[0].embedding, params));

  testing::TempDir dir;
  std::ofstream(dir / "v.jsonl") << verdict_dump(verdicts);
  CHECK(load_verdict_dump(dir / "v.jsonl") == verdicts);
  const auto j = verdict_to_json(verdicts[1]);
  for (const char* key : {"id", "gold", "pred", "distribution", "explanation", "provenance"}) CHECK(j.contains(key));
}

TEST_CASE("evidence stand-ins for explanations") {
  CompetingEvidenceSets s;
  s.claim_id = "x";
  s.false_set.push_back(EvidenceItem{0, 0, "One.", "", 0, 0, 0});
  s.false_set.push_back(EvidenceItem{0, 1, "Two.", "", 0, 0, 0});
  const auto e = evidence_as_explanations(s);
  CHECK(e.claim_id == "x");
  CHECK(e.e_minus.text == "One. Two.");
  CHECK(e.e_plus.text == "(none)");
  CHECK(e.e_minus.generator == "evidence");
}

TEST_CASE("head distributions: parallel kernel equals the serial one") {
  testing::Gen g(9);
  const auto head = nn::make_head(10, 6, 4);
  std::vector<Embedding> rows;
  for (int i = 0; i < 513; ++i) rows.push_back(g.vec(10));
  omp_set_num_threads(4);
  const auto serial = kernels::head_distributions_serial(head, rows);
  CHECK(kernels::head_distributions_parallel(head, rows) == serial);
  for (std::size_t i = 0; i < rows.size(); i += 64) {
    const auto ref = testing::ref_softmax(testing::ref_mlp(head, rows[i]));
    for (std::size_t c = 0; c < 6; ++c) CHECK(serial[i][c] == Approx(ref[c]).epsilon(1e-12));
  }
}
