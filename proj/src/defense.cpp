// SPDX-License-Identifier: Apache-2.0
#include "ldefense/defense.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "ldefense/kernels.hpp"
#include "ldefense/prompts.hpp"
#include "ldefense/util.hpp"

namespace ldefense {
namespace {

void shuffle(std::mt19937_64& rng, std::vector<std::size_t>& v) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(rng() % i)]);
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::string assemble(std::string_view claim, std::string_view e_minus, std::string_view e_plus,
                     std::size_t max_chars) {
  if (e_minus.empty()) throw std::invalid_argument("assemble: e_minus explanation is empty");
  if (e_plus.empty()) throw std::invalid_argument("assemble: e_plus explanation is empty");
  const std::size_t fixed = claim.size() + 2 * kSegmentSeparator.size();
  const std::size_t total = fixed + e_minus.size() + e_plus.size();
  if (max_chars > 0 && total > max_chars) {
    if (fixed + 2 > max_chars) {
      throw std::invalid_argument("assemble: claim does not fit in " + std::to_string(max_chars) + " characters");
    }
    const std::size_t room = max_chars - fixed;
    const std::size_t both = e_minus.size() + e_plus.size();
    std::size_t keep_minus = std::max<std::size_t>(1, e_minus.size() * room / both);
    std::size_t keep_plus = std::max<std::size_t>(1, room - keep_minus);
    keep_plus = std::min(keep_plus, e_plus.size());
    keep_minus = std::min(keep_minus, room - keep_plus);
    e_minus = e_minus.substr(0, keep_minus);
    e_plus = e_plus.substr(0, keep_plus);
  }
  std::string out(claim);
  out += kSegmentSeparator;
  out += e_minus;
  out += kSegmentSeparator;
  out += e_plus;
  return out;
}

InferenceParams InferenceParams::init(int dim, int classes, std::uint64_t seed) {
  if (dim <= 0) throw nn::ShapeError("embedding dim must be > 0");
  if (classes < 2) throw nn::ShapeError("label set needs at least two classes");
  return InferenceParams{nn::make_head(dim, classes, splitmix64(seed ^ 0x5645524443ULL))};
}

std::vector<nn::NamedHead> InferenceParams::named() const { return {{"verdict", head}}; }

InferenceParams InferenceParams::from_named(std::vector<nn::NamedHead> heads) {
  if (heads.size() != 1 || heads.front().first != "verdict") {
    throw std::runtime_error("inference checkpoint must hold exactly one head named 'verdict'");
  }
  InferenceParams p{std::move(heads.front().second)};
  p.head.validate();
  return p;
}

std::vector<double> verdict_distribution(std::span<const double> embedding, const InferenceParams& params) {
  if (static_cast<int>(embedding.size()) != params.dim()) {
    throw nn::ShapeError("defense embedding has dim " + std::to_string(embedding.size()) + ", head expects " +
                         std::to_string(params.dim()));
  }
  return nn::softmax(nn::mlp_forward(params.head, embedding));
}

int argmax_lowest(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return static_cast<int>(best);
}

InferenceParams train_inference(std::span<const DefenseExample> examples, int dim, int classes,
                                const nn::TrainConfig& config, DefenseTrainReport* report) {
  config.validate();
  if (examples.empty()) throw std::invalid_argument("train_inference: no training examples");
  for (const auto& ex : examples) {
    if (static_cast<int>(ex.embedding.size()) != dim) throw nn::ShapeError("train_inference: embedding dim mismatch");
    if (ex.gold < 0 || ex.gold >= classes) throw std::out_of_range("train_inference: gold label out of range");
  }
  auto params = InferenceParams::init(dim, classes, config.seed);
  auto grads = nn::zeros_like(params.head);
  nn::MlpParams* heads[] = {&params.head};
  const nn::MlpParams* grad_heads[] = {&grads};
  nn::Adam adam(params.head.parameter_count());

  const auto n = examples.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const long total_steps = static_cast<long>((n + batch - 1) / batch) * config.epochs;
  std::mt19937_64 rng(splitmix64(config.seed ^ 0xDEF));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  DefenseTrainReport local;
  long step = 0;
  nn::MlpTrace trace;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(rng, order);
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      nn::fill_zero(grads);
      for (std::size_t i = start; i < std::min(n, start + batch); ++i) {
        const auto& ex = examples[order[i]];
        const auto dist = nn::softmax(nn::mlp_forward(params.head, ex.embedding, &trace));
        loss += nn::cross_entropy(dist, static_cast<std::size_t>(ex.gold));
        if (argmax_lowest(dist) == ex.gold) ++correct;
        // d CE / d logits = q - onehot
        std::vector<double> dz = dist;
        dz[static_cast<std::size_t>(ex.gold)] -= 1.0;
        nn::mlp_backward(params.head, trace, dz, grads);
      }
      adam.step(heads, grad_heads, nn::lr_at(step, total_steps, config.warmup_fraction, config.learning_rate));
      ++step;
    }
    DefenseEpoch m{epoch + 1, loss / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
    spdlog::info("inference epoch {}: train loss {:.4f}, train acc {:.3f}", m.epoch, m.train_loss, m.train_accuracy);
    local.epochs.push_back(m);
  }
  local.steps = step;
  if (report) *report = std::move(local);
  return params;
}

DefenseSet embed_defense(const Dataset& dataset, std::span<const CompetingExplanations> explanations,
                         EmbeddingGateway& gateway, std::size_t max_chars) {
  std::unordered_map<std::string_view, const CompetingExplanations*> by_id;
  for (const auto& e : explanations) by_id.emplace(e.claim_id, &e);
  const auto labels = dataset.labels();

  DefenseSet set;
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < dataset.claims.size(); ++i) {
    const auto& claim = dataset.claims[i];
    const auto it = by_id.find(claim.id);
    if (it == by_id.end() || it->second->e_minus.text.empty() || it->second->e_plus.text.empty()) {
      ++set.excluded;
      continue;
    }
    texts.push_back(assemble(claim.text, it->second->e_minus.text, it->second->e_plus.text, max_chars));
    set.claim_index.push_back(i);
    set.explanations.push_back(it->second);
    set.examples.push_back(DefenseExample{{}, labels.index_of(claim.label)});
  }
  if (set.excluded > 0) spdlog::warn("{} claims excluded: no complete explanation pair", set.excluded);
  if (!texts.empty()) {
    auto vectors = gateway.embed(texts);
    for (std::size_t i = 0; i < vectors.size(); ++i) set.examples[i].embedding = std::move(vectors[i]);
  }
  return set;
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::kMinus: return "e_minus";
    case Provenance::kPlus: return "e_plus";
    case Provenance::kCombined: return "combined";
  }
  throw std::logic_error("bad provenance");
}

Provenance parse_provenance(std::string_view text) {
  if (text == "e_minus") return Provenance::kMinus;
  if (text == "e_plus") return Provenance::kPlus;
  if (text == "combined") return Provenance::kCombined;
  throw SchemaError("unknown provenance '" + std::string(text) + "'");
}

Provenance provenance_for(const LabelSet& labels, int predicted) {
  switch (labels.to_three(predicted)) {
    case Label3::kFalse: return Provenance::kMinus;
    case Label3::kTrue: return Provenance::kPlus;
    case Label3::kHalf: return Provenance::kCombined;
  }
  throw std::logic_error("bad label");
}

std::string final_explanation(Provenance p, std::string_view e_minus, std::string_view e_plus) {
  switch (p) {
    case Provenance::kMinus: return std::string(e_minus);
    case Provenance::kPlus: return std::string(e_plus);
    case Provenance::kCombined: {
      std::string out(prompts::kHalfFalsePrefix);
      out += e_minus;
      out += prompts::kHalfTruePrefix;
      out += e_plus;
      return out;
    }
  }
  throw std::logic_error("bad provenance");
}

Verdict make_verdict(const Claim& claim, const LabelSet& labels, std::vector<double> distribution,
                     const CompetingExplanations& explanations) {
  const int pred = argmax_lowest(distribution);
  Verdict v;
  v.claim_id = claim.id;
  v.gold = claim.label;
  v.pred = std::string(labels.name(pred));
  v.distribution = std::move(distribution);
  v.provenance = provenance_for(labels, pred);
  v.explanation = final_explanation(v.provenance, explanations.e_minus.text, explanations.e_plus.text);
  return v;
}

std::vector<Verdict> predict_dataset(const Dataset& dataset, const DefenseSet& set, const InferenceParams& params) {
  std::vector<Embedding> inputs;
  inputs.reserve(set.examples.size());
  for (const auto& ex : set.examples) {
    if (static_cast<int>(ex.embedding.size()) != params.dim()) {
      throw nn::ShapeError("defense embedding dim does not match the inference head");
    }
    inputs.push_back(ex.embedding);
  }
  auto dists = kernels::head_distributions_parallel(params.head, inputs);
  const auto labels = dataset.labels();
  std::vector<Verdict> out;
  out.reserve(dists.size());
  for (std::size_t i = 0; i < dists.size(); ++i) {
    out.push_back(make_verdict(dataset.claims[set.claim_index[i]], labels, std::move(dists[i]), *set.explanations[i]));
  }
  return out;
}

std::optional<int> parse_label_token(std::string_view completion, const LabelSet& labels) {
  const auto lower = lowercase(completion);
  std::vector<int> by_length(labels.size());
  std::iota(by_length.begin(), by_length.end(), 0);
  std::stable_sort(by_length.begin(), by_length.end(),
                   [&](int a, int b) { return labels.name(a).size() > labels.name(b).size(); });
  for (std::size_t pos = 0; pos < lower.size(); ++pos) {
    if (pos > 0 && is_word_char(lower[pos - 1])) continue;
    for (int idx : by_length) {
      const auto name = labels.name(idx);
      if (lower.compare(pos, name.size(), name) != 0) continue;
      const auto end = pos + name.size();
      if (end < lower.size() && is_word_char(lower[end])) continue;
      return idx;
    }
  }
  return std::nullopt;
}

Verdict ablation_no_training(const Claim& claim, const LabelSet& labels, const CompetingExplanations& explanations,
                             ChatClient& client) {
  using namespace prompts;
  std::string label_list;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i > 0) label_list += ", ";
    label_list += labels.name(static_cast<int>(i));
  }
  std::string user(kVerdictClaim);
  user += claim.text;
  user += kVerdictFalse;
  user += explanations.e_minus.text;
  user += kVerdictTrue;
  user += explanations.e_plus.text;
  user += kVerdictLabels;
  user += label_list;
  user += kVerdictAsk;
  const auto completion = client.complete(ChatRequest{client.model(), std::string(kVerdictSystem), user, 0.0});
  const auto pred = parse_label_token(completion, labels);
  if (!pred) {
    throw ExternalServiceError("no label token in verdict completion for claim '" + claim.id + "': " + completion);
  }
  Verdict v;
  v.claim_id = claim.id;
  v.gold = claim.label;
  v.pred = std::string(labels.name(*pred));
  v.provenance = provenance_for(labels, *pred);
  v.explanation = final_explanation(v.provenance, explanations.e_minus.text, explanations.e_plus.text);
  return v;
}

CompetingExplanations evidence_as_explanations(const CompetingEvidenceSets& sets) {
  auto join = [](const std::vector<EvidenceItem>& items) {
    if (items.empty()) return std::string(prompts::kEmptyEvidence);
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (i > 0) out += ' ';
      out += items[i].text;
    }
    return out;
  };
  CompetingExplanations e;
  e.claim_id = sets.claim_id;
  e.e_minus = Explanation{Side::kFalse, join(sets.false_set), "evidence", ""};
  e.e_plus = Explanation{Side::kTrue, join(sets.true_set), "evidence", ""};
  return e;
}

nlohmann::ordered_json verdict_to_json(const Verdict& v) {
  nlohmann::ordered_json o;
  o["id"] = v.claim_id;
  o["gold"] = v.gold;
  o["pred"] = v.pred;
  o["distribution"] = v.distribution;
  o["explanation"] = v.explanation;
  o["provenance"] = to_string(v.provenance);
  return o;
}

Verdict verdict_from_json(const nlohmann::json& obj) {
  Verdict v;
  v.claim_id = obj.at("id").get<std::string>();
  v.gold = obj.at("gold").get<std::string>();
  v.pred = obj.at("pred").get<std::string>();
  v.distribution = obj.at("distribution").get<std::vector<double>>();
  v.explanation = obj.at("explanation").get<std::string>();
  v.provenance = parse_provenance(obj.at("provenance").get<std::string>());
  return v;
}

std::string verdict_dump(std::span<const Verdict> verdicts) {
  std::string out;
  for (const auto& v : verdicts) {
    out += verdict_to_json(v).dump();
    out += '\n';
  }
  return out;
}

std::vector<Verdict> load_verdict_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open verdict dump " + path.string());
  std::vector<Verdict> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(verdict_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace ldefense
