// SPDX-License-Identifier: Apache-2.0
#include "ldefense/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "ldefense/kernels.hpp"
#include "ldefense/util.hpp"

namespace ldefense {
namespace {

std::vector<double> concat(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

void check_claim_dims(std::span<const double> claim, std::span<const Embedding> candidates) {
  for (const auto& c : candidates) {
    if (c.size() != claim.size()) throw nn::ShapeError("candidate embedding dim differs from claim embedding dim");
  }
}

// Loss and optional gradients for a single claim.
ExtractorLoss claim_loss(const ExtractorExample& ex, const ExtractorParams& p, double gamma, ExtractorParams* g) {
  const auto n = ex.candidates.size();
  if (n == 0) throw std::invalid_argument("extractor_loss: claim has no candidates");
  check_claim_dims(ex.claim, ex.candidates);

  std::vector<nn::MlpTrace> scorer_tr(g ? n : 0), minus_tr(g ? n : 0), plus_tr(g ? n : 0);
  std::vector<std::array<double, 2>> s(n);
  std::vector<double> logit_minus(n), logit_plus(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto u = interact(ex.claim, ex.candidates[j]);
    const auto z = nn::mlp_forward(p.scorer, u, g ? &scorer_tr[j] : nullptr);
    const auto sj = nn::softmax(z);
    s[j] = {sj[0], sj[1]};
    const auto att_in = concat(ex.claim, ex.candidates[j]);
    logit_minus[j] = nn::mlp_forward(p.attention_minus, att_in, g ? &minus_tr[j] : nullptr)[0];
    logit_plus[j] = nn::mlp_forward(p.attention_plus, att_in, g ? &plus_tr[j] : nullptr)[0];
  }
  const auto alpha_minus = nn::softmax(logit_minus);
  const auto alpha_plus = nn::softmax(logit_plus);
  double sc_minus = 0.0;
  double sc_plus = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    sc_minus += alpha_minus[j] * s[j][0];
    sc_plus += alpha_plus[j] * s[j][1];
  }
  const double total = sc_minus + sc_plus;
  const std::array<double, 2> pc = {sc_minus / total, sc_plus / total};
  const auto prior = label_to_prior(ex.label).as_array();
  const double kl = nn::kl_divergence(prior, pc);

  const auto cls_in = concat(ex.claim, pc);
  nn::MlpTrace cls_tr;
  const auto q = nn::softmax(nn::mlp_forward(p.classifier, cls_in, g ? &cls_tr : nullptr));
  const auto gold = static_cast<std::size_t>(ex.label);
  const double ce = nn::cross_entropy(q, gold);

  ExtractorLoss out{gamma * ce + (1.0 - gamma) * kl, kl, ce};
  if (!g) return out;

  // Classifier head.
  std::vector<double> dz_cls(q.size(), 0.0);
  if (q[gold] > nn::kProbFloor) {
    for (std::size_t c = 0; c < q.size(); ++c) dz_cls[c] = gamma * (q[c] - (c == gold ? 1.0 : 0.0));
  }
  const auto d_cls_in = nn::mlp_backward(p.classifier, cls_tr, dz_cls, g->classifier);
  const auto dkl = nn::kl_divergence_grad_q(prior, pc);
  const std::size_t d = ex.claim.size();
  const std::array<double, 2> dpc = {d_cls_in[d] + (1.0 - gamma) * dkl[0],
                                     d_cls_in[d + 1] + (1.0 - gamma) * dkl[1]};

  // Renormalization pc = sc / (sc_minus + sc_plus).
  const double proj = dpc[0] * pc[0] + dpc[1] * pc[1];
  const double dsc_minus = (dpc[0] - proj) / total;
  const double dsc_plus = (dpc[1] - proj) / total;

  std::vector<double> dalpha_minus(n), dalpha_plus(n);
  for (std::size_t j = 0; j < n; ++j) {
    dalpha_minus[j] = dsc_minus * s[j][0];
    dalpha_plus[j] = dsc_plus * s[j][1];
  }
  const auto dlogit_minus = nn::softmax_backward(alpha_minus, dalpha_minus);
  const auto dlogit_plus = nn::softmax_backward(alpha_plus, dalpha_plus);

  for (std::size_t j = 0; j < n; ++j) {
    const std::array<double, 2> ds = {dsc_minus * alpha_minus[j], dsc_plus * alpha_plus[j]};
    const auto dz = nn::softmax_backward(s[j], ds);
    nn::mlp_backward(p.scorer, scorer_tr[j], dz, g->scorer);
    nn::mlp_backward(p.attention_minus, minus_tr[j], std::span<const double>(&dlogit_minus[j], 1),
                     g->attention_minus);
    nn::mlp_backward(p.attention_plus, plus_tr[j], std::span<const double>(&dlogit_plus[j], 1), g->attention_plus);
  }
  return out;
}

void shuffle(std::mt19937_64& rng, std::vector<std::size_t>& v) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(rng() % i)]);
}

}  // namespace

ExtractorParams ExtractorParams::init(int dim, std::uint64_t seed) {
  if (dim <= 0) throw nn::ShapeError("embedding dim must be > 0");
  ExtractorParams p;
  p.scorer = nn::make_head(4 * dim, 2, splitmix64(seed ^ 0x51));
  p.attention_minus = nn::make_head(2 * dim, 1, splitmix64(seed ^ 0xA1));
  p.attention_plus = nn::make_head(2 * dim, 1, splitmix64(seed ^ 0xA2));
  p.classifier = nn::make_head(dim + 2, 3, splitmix64(seed ^ 0xC1));
  return p;
}

std::array<nn::MlpParams*, 4> ExtractorParams::heads() {
  return {&scorer, &attention_minus, &attention_plus, &classifier};
}

std::array<const nn::MlpParams*, 4> ExtractorParams::heads() const {
  return {&scorer, &attention_minus, &attention_plus, &classifier};
}

std::vector<nn::NamedHead> ExtractorParams::named() const {
  return {{"scorer", scorer}, {"attention_minus", attention_minus}, {"attention_plus", attention_plus},
          {"classifier", classifier}};
}

ExtractorParams ExtractorParams::from_named(std::vector<nn::NamedHead> heads) {
  ExtractorParams p;
  for (auto& [name, head] : heads) {
    if (name == "scorer") p.scorer = std::move(head);
    else if (name == "attention_minus") p.attention_minus = std::move(head);
    else if (name == "attention_plus") p.attention_plus = std::move(head);
    else if (name == "classifier") p.classifier = std::move(head);
    else throw std::runtime_error("unexpected head '" + name + "' in extractor checkpoint");
  }
  p.validate();
  return p;
}

void ExtractorParams::validate() const {
  for (const auto* h : heads()) {
    if (h->layers.empty()) throw nn::ShapeError("extractor checkpoint is missing a head");
    h->validate();
  }
  const int d = dim();
  if (d <= 0 || scorer.input_dim() != 4 * d || attention_minus.input_dim() != 2 * d ||
      attention_plus.input_dim() != 2 * d || scorer.output_dim() != 2 || attention_minus.output_dim() != 1 ||
      attention_plus.output_dim() != 1 || classifier.output_dim() != 3) {
    throw nn::ShapeError("extractor heads have inconsistent shapes");
  }
}

std::vector<double> interact(std::span<const double> claim, std::span<const double> candidate) {
  if (claim.size() != candidate.size()) throw nn::ShapeError("interact: embedding dims differ");
  const auto d = claim.size();
  std::vector<double> u(4 * d);
  for (std::size_t i = 0; i < d; ++i) {
    u[i] = claim[i];
    u[d + i] = claim[i] * candidate[i];
    u[2 * d + i] = claim[i] - candidate[i];
    u[3 * d + i] = candidate[i];
  }
  return u;
}

std::array<double, 2> candidate_scores(const nn::MlpParams& scorer, std::span<const double> interaction) {
  const auto s = nn::softmax(nn::mlp_forward(scorer, interaction));
  return {s[0], s[1]};
}

std::vector<double> attention_weights(const nn::MlpParams& head, std::span<const double> claim,
                                      std::span<const Embedding> candidates) {
  if (candidates.empty()) throw std::invalid_argument("attention_weights: no candidates");
  check_claim_dims(claim, candidates);
  std::vector<double> logits(candidates.size());
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    logits[j] = nn::mlp_forward(head, concat(claim, candidates[j]))[0];
  }
  return nn::softmax(logits);
}

ClaimScore claim_scores(std::span<const ScoredCandidate> scored) {
  if (scored.empty()) throw std::invalid_argument("claim_scores: no scored candidates");
  ClaimScore out;
  for (const auto& c : scored) {
    out.sc_minus += c.alpha_minus * c.s_minus;
    out.sc_plus += c.alpha_plus * c.s_plus;
  }
  const double total = out.sc_minus + out.sc_plus;
  out.normalized = {out.sc_minus / total, out.sc_plus / total};
  return out;
}

std::vector<ScoredCandidate> score_candidates(const ExtractorParams& params, std::span<const double> claim,
                                              std::span<const Embedding> candidates) {
  const auto alpha_minus = attention_weights(params.attention_minus, claim, candidates);
  const auto alpha_plus = attention_weights(params.attention_plus, claim, candidates);
  std::vector<ScoredCandidate> out(candidates.size());
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    const auto s = candidate_scores(params.scorer, interact(claim, candidates[j]));
    auto& c = out[j];
    c.index = j;
    c.s_minus = s[0];
    c.s_plus = s[1];
    c.alpha_minus = alpha_minus[j];
    c.alpha_plus = alpha_plus[j];
    c.rank_minus = c.alpha_minus * c.s_minus;
    c.rank_plus = c.alpha_plus * c.s_plus;
  }
  return out;
}

std::array<double, 3> temporary_distribution(const ExtractorParams& params, std::span<const double> claim,
                                             const ClaimScore& score) {
  const auto q = nn::softmax(nn::mlp_forward(params.classifier, concat(claim, score.normalized)));
  return {q[0], q[1], q[2]};
}

ExtractorLoss extractor_loss(std::span<const ExtractorExample> batch, const ExtractorParams& params, double gamma,
                             ExtractorParams* grads) {
  ExtractorLoss sum;
  for (const auto& ex : batch) {
    const auto l = claim_loss(ex, params, gamma, grads);
    sum.total += l.total;
    sum.kl += l.kl;
    sum.cls += l.cls;
  }
  return sum;
}

RankedSides rank_top_k(std::span<const ScoredCandidate> scored, std::size_t k) {
  RankedSides out;
  auto ranked = [&](auto key) {
    std::vector<std::size_t> order(scored.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return key(scored[a]) > key(scored[b]); });
    order.resize(std::min(k, order.size()));
    return order;
  };
  out.false_order = ranked([](const ScoredCandidate& c) { return c.rank_minus; });
  out.true_order = ranked([](const ScoredCandidate& c) { return c.rank_plus; });
  return out;
}

EmbeddedClaims embed_claims(const Dataset& dataset, EmbeddingGateway& gateway) {
  EmbeddedClaims out;
  const LabelSet labels = dataset.labels();
  std::vector<std::string> texts;
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (first text, candidate count)
  for (std::size_t ci = 0; ci < dataset.claims.size(); ++ci) {
    const auto& claim = dataset.claims[ci];
    auto cands = candidates_of(claim);
    if (cands.empty()) {
      ++out.skipped_zero_candidate;
      continue;
    }
    if (cands.size() > kMaxCandidates) {
      ++out.truncated_claims;
      cands.resize(kMaxCandidates);
    }
    spans.emplace_back(texts.size(), cands.size());
    texts.push_back(claim.text);
    for (const auto& c : cands) texts.emplace_back(c.text);
    out.claim_index.push_back(ci);
  }
  if (out.truncated_claims > 0) {
    spdlog::info("{} claims exceeded {} candidates and were truncated", out.truncated_claims, kMaxCandidates);
  }
  if (texts.empty()) return out;
  auto vectors = gateway.embed(texts);
  out.examples.reserve(spans.size());
  for (std::size_t e = 0; e < spans.size(); ++e) {
    const auto [first, count] = spans[e];
    ExtractorExample ex;
    ex.claim = std::move(vectors[first]);
    ex.candidates.reserve(count);
    for (std::size_t j = 0; j < count; ++j) ex.candidates.push_back(std::move(vectors[first + 1 + j]));
    ex.label = labels.to_three(labels.index_of(dataset.claims[out.claim_index[e]].label));
    out.examples.push_back(std::move(ex));
  }
  return out;
}

double temporary_accuracy(std::span<const ExtractorExample> examples, const ExtractorParams& params) {
  if (examples.empty()) return 0.0;
  const auto scored = kernels::score_claims_parallel(params, examples);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto q = temporary_distribution(params, examples[i].claim, claim_scores(scored[i]));
    const auto pred = static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
    if (pred == static_cast<std::size_t>(examples[i].label)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

ExtractorParams train_extractor(const EmbeddedClaims& train, const EmbeddedClaims* eval, int dim,
                                const nn::TrainConfig& config, ExtractorTrainReport* report) {
  config.validate();
  if (train.examples.empty()) throw std::invalid_argument("train_extractor: no trainable claims");
  auto params = ExtractorParams::init(dim, config.seed);
  auto grads = params;
  const auto heads = params.heads();
  const auto grad_heads = grads.heads();
  std::array<const nn::MlpParams*, 4> grad_const{};
  std::copy(grad_heads.begin(), grad_heads.end(), grad_const.begin());
  std::array<const nn::MlpParams*, 4> param_const{};
  std::copy(heads.begin(), heads.end(), param_const.begin());
  nn::Adam adam(nn::parameter_count(param_const));

  const auto n = train.examples.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const long steps_per_epoch = static_cast<long>((n + batch - 1) / batch);
  const long total_steps = steps_per_epoch * config.epochs;
  std::mt19937_64 rng(splitmix64(config.seed ^ 0xE7));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  ExtractorTrainReport local;
  local.skipped_zero_candidate = train.skipped_zero_candidate;
  local.truncated_claims = train.truncated_claims;
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(rng, order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      for (auto* h : grad_heads) nn::fill_zero(*h);
      const std::size_t end = std::min(n, start + batch);
      for (std::size_t i = start; i < end; ++i) {
        epoch_loss += claim_loss(train.examples[order[i]], params, config.gamma, &grads).total;
      }
      adam.step(heads, grad_const, nn::lr_at(step, total_steps, config.warmup_fraction, config.learning_rate));
      ++step;
    }
    ExtractorEpoch metrics;
    metrics.epoch = epoch + 1;
    metrics.train_loss = epoch_loss / static_cast<double>(n);
    if (eval && !eval->examples.empty()) {
      metrics.eval_loss = extractor_loss(eval->examples, params, config.gamma).total /
                          static_cast<double>(eval->examples.size());
      metrics.eval_accuracy = temporary_accuracy(eval->examples, params);
    }
    spdlog::info("extractor epoch {}: train loss {:.4f}, eval loss {:.4f}, eval temp-acc {:.3f}", metrics.epoch,
                 metrics.train_loss, metrics.eval_loss, metrics.eval_accuracy);
    local.epochs.push_back(metrics);
  }
  local.steps = step;
  if (local.skipped_zero_candidate > 0) {
    spdlog::info("{} zero-candidate claims skipped from the extractor loss", local.skipped_zero_candidate);
  }
  if (report) *report = std::move(local);
  return params;
}

ExtractorParams train_extractor(const Dataset& train, const Dataset* eval, EmbeddingGateway& gateway,
                                const nn::TrainConfig& config, ExtractorTrainReport* report) {
  const auto train_embedded = embed_claims(train, gateway);
  EmbeddedClaims eval_embedded;
  if (eval) eval_embedded = embed_claims(*eval, gateway);
  return train_extractor(train_embedded, eval ? &eval_embedded : nullptr, gateway.dim(), config, report);
}

CompetingEvidenceSets build_evidence_sets(const Claim& claim, std::span<const ScoredCandidate> scored, int k) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  CompetingEvidenceSets out;
  out.claim_id = claim.id;
  out.k = k;
  if (scored.empty()) return out;
  const auto cands = candidates_of(claim);
  const auto ranked = rank_top_k(scored, static_cast<std::size_t>(k));
  auto item = [&](std::size_t idx, Side side) {
    const auto& sc = scored[idx];
    const auto& cand = cands.at(sc.index);
    EvidenceItem e;
    e.report = cand.report;
    e.sentence = cand.sentence;
    e.text = std::string(cand.text);
    e.party = std::string(cand.party_tag);
    e.raw_score = side == Side::kFalse ? sc.s_minus : sc.s_plus;
    e.alpha = side == Side::kFalse ? sc.alpha_minus : sc.alpha_plus;
    e.score = side == Side::kFalse ? sc.rank_minus : sc.rank_plus;
    return e;
  };
  for (auto idx : ranked.false_order) out.false_set.push_back(item(idx, Side::kFalse));
  for (auto idx : ranked.true_order) out.true_set.push_back(item(idx, Side::kTrue));
  return out;
}

CompetingEvidenceSets extract_top_k(const Claim& claim, const ExtractorParams& params, EmbeddingGateway& gateway,
                                    int k) {
  Dataset single;
  single.kind = DatasetKind::kSynthetic;
  single.claims.push_back(claim);
  single.claims.back().label = "half";
  auto results = extract_dataset(single, params, gateway, k);
  return std::move(results.front());
}

std::vector<CompetingEvidenceSets> extract_dataset(const Dataset& dataset, const ExtractorParams& params,
                                                   EmbeddingGateway& gateway, int k) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  const auto embedded = embed_claims(dataset, gateway);
  const auto scored = kernels::score_claims_parallel(params, embedded.examples);
  std::vector<CompetingEvidenceSets> out(dataset.claims.size());
  for (std::size_t i = 0; i < dataset.claims.size(); ++i) {
    out[i].claim_id = dataset.claims[i].id;
    out[i].k = k;
  }
  for (std::size_t e = 0; e < embedded.examples.size(); ++e) {
    const auto ci = embedded.claim_index[e];
    out[ci] = build_evidence_sets(dataset.claims[ci], scored[e], k);
  }
  return out;
}

nlohmann::ordered_json evidence_to_json(const CompetingEvidenceSets& sets) {
  auto side = [](const std::vector<EvidenceItem>& items, Side s) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& e : items) {
      nlohmann::ordered_json o;
      o["text"] = e.text;
      o[s == Side::kFalse ? "s_minus" : "s_plus"] = e.raw_score;
      o[s == Side::kFalse ? "alpha_minus" : "alpha_plus"] = e.alpha;
      o["score"] = e.score;
      o["report"] = e.report;
      o["sentence"] = e.sentence;
      if (!e.party.empty()) o["party"] = e.party;
      arr.push_back(std::move(o));
    }
    return arr;
  };
  nlohmann::ordered_json obj;
  obj["id"] = sets.claim_id;
  obj["k"] = sets.k;
  obj["false_evidence"] = side(sets.false_set, Side::kFalse);
  obj["true_evidence"] = side(sets.true_set, Side::kTrue);
  return obj;
}

CompetingEvidenceSets evidence_from_json(const nlohmann::json& obj) {
  CompetingEvidenceSets sets;
  sets.claim_id = obj.at("id").get<std::string>();
  sets.k = obj.value("k", kDefaultTopK);
  auto read_side = [](const nlohmann::json& arr, Side s) {
    std::vector<EvidenceItem> items;
    for (const auto& o : arr) {
      EvidenceItem e;
      e.text = o.at("text").get<std::string>();
      e.raw_score = o.at(s == Side::kFalse ? "s_minus" : "s_plus").get<double>();
      e.alpha = o.at(s == Side::kFalse ? "alpha_minus" : "alpha_plus").get<double>();
      e.score = o.at("score").get<double>();
      e.report = o.value("report", std::size_t{0});
      e.sentence = o.value("sentence", std::size_t{0});
      e.party = o.value("party", std::string{});
      items.push_back(std::move(e));
    }
    return items;
  };
  sets.false_set = read_side(obj.at("false_evidence"), Side::kFalse);
  sets.true_set = read_side(obj.at("true_evidence"), Side::kTrue);
  return sets;
}

std::string evidence_dump(std::span<const CompetingEvidenceSets> sets) {
  std::string out;
  for (const auto& s : sets) {
    out += evidence_to_json(s).dump();
    out += '\n';
  }
  return out;
}

std::vector<CompetingEvidenceSets> load_evidence_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open evidence dump " + path.string());
  std::vector<CompetingEvidenceSets> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(evidence_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace ldefense
