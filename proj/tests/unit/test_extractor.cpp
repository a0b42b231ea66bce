// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "ldefense/corpus.hpp"
#include "ldefense/extractor.hpp"
#include "ldefense/kernels.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace ldefense;
using doctest::Approx;

namespace {

void zero_outputs(ExtractorParams& p) {
  for (auto* h : p.heads()) nn::zero_output_layer(*h);
}

ScoredCandidate scored(std::size_t index, double s_minus, double alpha_minus, double alpha_plus = 0.0) {
  ScoredCandidate c;
  c.index = index;
  c.s_minus = s_minus;
  c.s_plus = 1.0 - s_minus;
  c.alpha_minus = alpha_minus;
  c.alpha_plus = alpha_plus;
  c.rank_minus = alpha_minus * c.s_minus;
  c.rank_plus = alpha_plus * c.s_plus;
  return c;
}

}  // namespace

TEST_CASE("interaction vector") {
  CHECK(interact(std::vector<double>{1, 2}, std::vector<double>{3, 4}) ==
        std::vector<double>{1, 2, 3, 8, -2, -2, 3, 4});
  const std::vector<double> c{0.5, -1.5, 2.0};
  const auto same = interact(c, c);
  for (int i = 6; i < 9; ++i) CHECK(same[static_cast<std::size_t>(i)] == 0.0);
  const auto zero = interact(c, std::vector<double>(3, 0.0));
  for (int i = 0; i < 3; ++i) {
    CHECK(zero[static_cast<std::size_t>(3 + i)] == 0.0);
    CHECK(zero[static_cast<std::size_t>(6 + i)] == c[static_cast<std::size_t>(i)]);
  }
  CHECK_THROWS_AS(interact(c, std::vector<double>{1.0}), nn::ShapeError);
}

TEST_CASE("candidate scores") {
  auto p = ExtractorParams::init(4, 1);
  testing::Gen g(2);
  for (int t = 0; t < 50; ++t) {
    const auto u = g.vec(16);
    const auto s = candidate_scores(p.scorer, u);
    CHECK(s[0] + s[1] == Approx(1.0).epsilon(1e-12));
    const auto ref = testing::ref_softmax(testing::ref_mlp(p.scorer, u));
    CHECK(s[0] == Approx(ref[0]).epsilon(1e-12));
  }
  nn::zero_output_layer(p.scorer);
  const auto s = candidate_scores(p.scorer, g.vec(16));
  CHECK(s[0] == 0.5);
  CHECK(s[1] == 0.5);
}

TEST_CASE("attention weights") {
  auto p = ExtractorParams::init(3, 5);
  testing::Gen g(6);
  const auto c = g.vec(3);
  const std::vector<Embedding> one{g.vec(3)};
  CHECK(attention_weights(p.attention_minus, c, one) == std::vector<double>{1.0});
  CHECK(attention_weights(p.attention_plus, c, one) == std::vector<double>{1.0});

  const auto x = g.vec(3);
  const std::vector<Embedding> dup{x, g.vec(3), x};
  const auto a = attention_weights(p.attention_minus, c, dup);
  CHECK(a[0] == a[2]);
  CHECK(a[0] + a[1] + a[2] == Approx(1.0).epsilon(1e-12));

  nn::zero_output_layer(p.attention_plus);
  for (double w : attention_weights(p.attention_plus, c, dup)) CHECK(w == Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(attention_weights(p.attention_plus, c, std::vector<Embedding>{}), std::invalid_argument);
}

TEST_CASE("claim scores") {
  const std::vector<ScoredCandidate> flat{scored(0, 0.5, 0.25, 0.25), scored(1, 0.5, 0.75, 0.75)};
  const auto f = claim_scores(flat);
  CHECK(f.sc_minus == Approx(0.5));
  CHECK(f.sc_plus == Approx(0.5));
  CHECK(f.normalized[0] == Approx(0.5));

  const auto single = claim_scores(std::vector<ScoredCandidate>{scored(0, 0.9, 1.0, 1.0)});
  CHECK(single.sc_minus == Approx(0.9));
  CHECK(single.sc_plus == Approx(0.1));

  // 0.2*0.6 + 0.3*0.1 + 0.5*0.8 = 0.55 ; 0.6*0.4 + 0.1*0.9 + 0.3*0.2 = 0.39
  const std::vector<ScoredCandidate> three{scored(0, 0.6, 0.2, 0.6), scored(1, 0.1, 0.3, 0.1),
                                           scored(2, 0.8, 0.5, 0.3)};
  const auto h = claim_scores(three);
  CHECK(h.sc_minus == Approx(0.55).epsilon(1e-12));
  CHECK(h.sc_plus == Approx(0.39).epsilon(1e-12));
  CHECK(h.normalized[0] == Approx(0.55 / 0.94).epsilon(1e-12));
  CHECK(h.normalized[1] == Approx(0.39 / 0.94).epsilon(1e-12));
  CHECK_THROWS_AS(claim_scores(std::vector<ScoredCandidate>{}), std::invalid_argument);
}

TEST_CASE("scoring invariants over random claims") {
  testing::Gen g(11);
  for (int t = 0; t < 40; ++t) {
    const int dim = g.integer(2, 12);
    const auto p = ExtractorParams::init(dim, static_cast<std::uint64_t>(t));
    auto batch = testing::random_batch(g, 1, 12, dim);
    const auto sc = score_candidates(p, batch[0].claim, batch[0].candidates);
    double am = 0.0, ap = 0.0;
    for (const auto& c : sc) {
      CHECK(c.s_minus + c.s_plus == Approx(1.0).epsilon(1e-9));
      am += c.alpha_minus;
      ap += c.alpha_plus;
    }
    CHECK(am == Approx(1.0).epsilon(1e-9));
    CHECK(ap == Approx(1.0).epsilon(1e-9));
    const auto cs = claim_scores(sc);
    CHECK(cs.sc_minus > 0.0);
    CHECK(cs.sc_minus < 1.0);
    CHECK(cs.normalized[0] + cs.normalized[1] == Approx(1.0).epsilon(1e-12));
    const auto ref = testing::ref_claim(p, batch[0]);
    CHECK(cs.normalized[0] == Approx(ref.p_c[0]).epsilon(1e-12));
  }
}

TEST_CASE("loss matches the longhand reference") {
  testing::Gen g(21);
  for (int t = 0; t < 20; ++t) {
    const int dim = g.integer(2, 10);
    auto p = ExtractorParams::init(dim, static_cast<std::uint64_t>(100 + t));
    testing::perturb_all(p, g, 0.3);
    const auto batch = testing::random_batch(g, g.integer(1, 5), 8, dim);
    const double gamma = g.uniform(0.0, 1.0);
    CHECK(extractor_loss(batch, p, gamma).total ==
          Approx(testing::ref_extractor_loss(p, batch, gamma)).epsilon(1e-10));
  }
}

TEST_CASE("loss endpoints and a pinned two-claim example") {
  auto p = ExtractorParams::init(3, 9);
  zero_outputs(p);
  testing::Gen g(3);
  auto batch = testing::random_batch(g, 2, 4, 3);

  SUBCASE("half label with p_c = (0.5, 0.5) has zero KL") {
    batch[0].label = Label3::kHalf;
    const auto l = extractor_loss(std::span(batch).first(1), p, 0.3);
    CHECK(l.kl == Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("gamma = 1 is the classification term alone") {
    const auto l = extractor_loss(batch, p, 1.0);
    CHECK(l.total == Approx(l.cls).epsilon(1e-15));
  }
  SUBCASE("hand-summed blend") {
    // Every candidate scores (0.75, 0.25) and attention is uniform, so
    // p_c = (0.75, 0.25). The classifier emits (1/4, 1/2, 1/4).
    p.scorer.layers.back().bias = {std::log(3.0), 0.0};
    p.classifier.layers.back().bias = {0.0, std::log(2.0), 0.0};
    batch[0].label = Label3::kFalse;
    batch[1].label = Label3::kHalf;
    // CE: ln 4 + ln 2. KL: ln(4/3) + 0.5 ln(2/3) + 0.5 ln 2.
    const auto l = extractor_loss(batch, p, 0.5);
    CHECK(l.cls == Approx(2.0794415416798357).epsilon(1e-12));
    CHECK(l.kl == Approx(0.4315231086776713).epsilon(1e-12));
    CHECK(l.total == Approx(1.2554823251787535).epsilon(1e-12));
  }
}

TEST_CASE("extractor gradients agree with finite differences") {
  testing::Gen g(31);
  for (int t = 0; t < 4; ++t) {
    const int dim = 6;
    auto p = ExtractorParams::init(dim, static_cast<std::uint64_t>(t));
    testing::perturb_all(p, g, 0.2);
    const auto batch = testing::random_batch(g, 3, 5, dim);
    const double gamma = t == 0 ? 0.0 : (t == 1 ? 1.0 : 0.5);
    const auto r = testing::check_extractor_gradients(p, batch, gamma, 300, static_cast<std::uint64_t>(t));
    INFO("instance " << t << " checked " << r.checked);
    CHECK(r.checked > 200);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("ranking") {
  const std::vector<ScoredCandidate> three{scored(0, 1.0, 0.3), scored(1, 1.0, 0.9), scored(2, 1.0, 0.1)};
  const auto r = rank_top_k(three, 10);
  CHECK(r.false_order == std::vector<std::size_t>{1, 0, 2});
  CHECK(r.true_order.size() == 3);
  CHECK(rank_top_k(three, 2).false_order == std::vector<std::size_t>{1, 0});

  // Ties keep document order.
  const std::vector<ScoredCandidate> tied{scored(0, 1.0, 0.5), scored(1, 1.0, 0.7), scored(2, 1.0, 0.5)};
  CHECK(rank_top_k(tied, 3).false_order == std::vector<std::size_t>{1, 0, 2});
}

TEST_CASE("raising one score never lowers its rank") {
  testing::Gen g(41);
  for (int t = 0; t < 300; ++t) {
    std::vector<ScoredCandidate> list;
    const int n = g.integer(1, 15);
    for (int i = 0; i < n; ++i) list.push_back(scored(static_cast<std::size_t>(i), 1.0, std::round(g.uniform(0, 1) * 8) / 8));
    const auto who = static_cast<std::size_t>(g.integer(0, n - 1));
    auto position = [&](const std::vector<ScoredCandidate>& l) {
      const auto order = rank_top_k(l, l.size()).false_order;
      return std::find(order.begin(), order.end(), who) - order.begin();
    };
    const auto before = position(list);
    list[who].rank_minus += g.uniform(0.0, 0.5);
    CHECK(position(list) <= before);
  }
}

TEST_CASE("evidence sets from a claim") {
  Claim claim{"c", "Claim.", "true", {Report{"r0", "", "A one. A two. A three.", {}, {}}}};
  claim.reports[0].sentences = split_sentences(claim.reports[0].text);
  const std::vector<ScoredCandidate> sc{scored(0, 0.2, 0.3, 0.5), scored(1, 0.7, 0.4, 0.2),
                                        scored(2, 0.5, 0.3, 0.3)};
  const auto sets = build_evidence_sets(claim, sc, 10);
  REQUIRE(sets.false_set.size() == 3);
  REQUIRE(sets.true_set.size() == 3);
  CHECK(sets.false_set[0].text == "A two.");
  CHECK(sets.true_set[0].text == "A one.");
  for (std::size_t i = 1; i < 3; ++i) {
    CHECK(sets.false_set[i - 1].score >= sets.false_set[i].score);
    CHECK(sets.true_set[i - 1].score >= sets.true_set[i].score);
  }
  CHECK_THROWS_AS(build_evidence_sets(claim, sc, 0), std::invalid_argument);

  const auto back = evidence_from_json(nlohmann::json::parse(evidence_to_json(sets).dump()));
  CHECK(back.claim_id == "c");
  CHECK(back.false_set.size() == 3);
  CHECK(back.false_set[1].text == sets.false_set[1].text);
  CHECK(back.true_set[2].score == sets.true_set[2].score);

  const auto empty = build_evidence_sets(Claim{"z", "Nothing.", "false", {}}, {}, 10);
  CHECK(empty.false_set.empty());
  CHECK(empty.true_set.empty());
}

TEST_CASE("serial and parallel claim scoring agree bitwise") {
  testing::Gen g(51);
  const auto p = ExtractorParams::init(8, 3);
  const auto batch = testing::random_batch(g, 12, 20, 8);
  const auto a = kernels::score_claims_serial(p, batch);
  const auto b = kernels::score_claims_parallel(p, batch);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].size() == b[i].size());
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      CHECK(a[i][j].rank_minus == b[i][j].rank_minus);
      CHECK(a[i][j].rank_plus == b[i][j].rank_plus);
    }
  }
}

TEST_CASE("training on a separable synthetic corpus") {
  SyntheticConfig sc;
  sc.claims_per_label = 67;
  sc.sentences_per_claim = 30;
  const auto train = generate_synthetic(sc);
  sc.claims_per_label = 20;
  sc.seed = 99;
  sc.split = "eval";
  const auto eval = generate_synthetic(sc);

  BackendDescriptor d;
  d.dim = 32;
  EmbeddingGateway gw(make_embedding_backend(d));
  const auto tr = embed_claims(train, gw);
  const auto ev = embed_claims(eval, gw);

  nn::TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.gamma = 0.9;
  ExtractorTrainReport report;
  const auto a = train_extractor(tr, &ev, d.dim, cfg, &report);
  CHECK(report.epochs.size() == 5);
  CHECK(report.epochs.back().eval_accuracy >= 0.9);
  CHECK(report.epochs.back().train_loss < report.epochs.front().train_loss);

  const auto b = train_extractor(tr, &ev, d.dim, cfg);
  CHECK(a == b);
}
