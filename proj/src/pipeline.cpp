// SPDX-License-Identifier: Apache-2.0
#include "ldefense/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "ldefense/defense.hpp"
#include "ldefense/extractor.hpp"
#include "ldefense/metrics.hpp"
#include "ldefense/reasoner.hpp"
#include "ldefense/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace ldefense {
namespace {

template <typename T>
void read_key(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void reject_unknown(const json& obj, std::initializer_list<std::string_view> known, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown config key '" + where + "." + key + "'");
  }
}

void read_train(const json& obj, nn::TrainConfig& tc, bool with_gamma, const std::string& where) {
  if (with_gamma) {
    reject_unknown(obj, {"epochs", "batch_size", "learning_rate", "warmup_fraction", "gamma"}, where);
    read_key(obj, "gamma", tc.gamma, where);
  } else {
    reject_unknown(obj, {"epochs", "batch_size", "learning_rate", "warmup_fraction"}, where);
  }
  read_key(obj, "epochs", tc.epochs, where);
  read_key(obj, "batch_size", tc.batch_size, where);
  read_key(obj, "learning_rate", tc.learning_rate, where);
  read_key(obj, "warmup_fraction", tc.warmup_fraction, where);
}

void read_chat(const json& obj, ChatBackendConfig& c, const std::string& where, bool* enabled = nullptr) {
  if (enabled) {
    reject_unknown(obj, {"enabled", "backend", "model", "base_url", "api_key_env", "requests_per_second",
                         "max_retries", "timeout_seconds", "max_in_flight"}, where);
    read_key(obj, "enabled", *enabled, where);
  } else {
    reject_unknown(obj, {"backend", "model", "base_url", "api_key_env", "requests_per_second", "max_retries",
                         "timeout_seconds", "max_in_flight", "temperature"}, where);
  }
  read_key(obj, "backend", c.backend, where);
  read_key(obj, "model", c.model, where);
  read_key(obj, "base_url", c.base_url, where);
  read_key(obj, "api_key_env", c.api_key_env, where);
  read_key(obj, "requests_per_second", c.requests_per_second, where);
  read_key(obj, "max_retries", c.max_retries, where);
  read_key(obj, "timeout_seconds", c.timeout_seconds, where);
  read_key(obj, "max_in_flight", c.max_in_flight, where);
}

ordered_json train_json(const nn::TrainConfig& tc, bool with_gamma) {
  ordered_json o{{"epochs", tc.epochs}, {"batch_size", tc.batch_size}, {"learning_rate", tc.learning_rate},
                 {"warmup_fraction", tc.warmup_fraction}};
  if (with_gamma) o["gamma"] = tc.gamma;
  return o;
}

ordered_json chat_json(const ChatBackendConfig& c) {
  return {{"backend", c.backend},         {"model", c.model},
          {"base_url", c.base_url},       {"api_key_env", c.api_key_env},
          {"requests_per_second", c.requests_per_second}, {"max_retries", c.max_retries},
          {"timeout_seconds", c.timeout_seconds},         {"max_in_flight", c.max_in_flight}};
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

std::shared_ptr<ChatClient> make_chat(const ChatBackendConfig& c) {
  if (c.backend == "mock") return std::make_shared<MockChatClient>(c.model);
  HttpChatConfig h;
  h.base_url = c.base_url;
  h.model = c.model;
  h.api_key_env = c.api_key_env;
  h.max_retries = c.max_retries;
  h.requests_per_second = c.requests_per_second;
  h.timeout_seconds = c.timeout_seconds;
  return std::make_shared<HttpChatClient>(h);
}

void validate_chat(const ChatBackendConfig& c, const std::string& where) {
  if (c.backend != "mock" && c.backend != "http") {
    throw ConfigError(where + ".backend must be \"mock\" or \"http\", got \"" + c.backend + "\"");
  }
  if (c.backend == "http" && c.base_url.empty()) throw ConfigError(where + ".base_url is required for http");
  if (c.model.empty()) throw ConfigError(where + ".model must not be empty");
  if (c.max_in_flight < 1) throw ConfigError(where + ".max_in_flight must be >= 1");
  if (c.max_retries < 1) throw ConfigError(where + ".max_retries must be >= 1");
}

/// Runs fn(i) for i in [0, n) on at most `workers` threads; rethrows the first failure.
void parallel_bounded(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mutex;
  auto worker = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= n) return;
      {
        std::lock_guard lock(mutex);
        if (failure) return;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), n);
  for (std::size_t w = 0; w < count; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string utc_now() {
  const auto t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

ordered_json party_precision(std::span<const CompetingEvidenceSets> sets) {
  std::size_t hits[2] = {0, 0};
  std::size_t total[2] = {0, 0};
  for (const auto& s : sets) {
    for (const auto& e : s.false_set) {
      if (e.party.empty()) continue;
      ++total[0];
      hits[0] += e.party == "false";
    }
    for (const auto& e : s.true_set) {
      if (e.party.empty()) continue;
      ++total[1];
      hits[1] += e.party == "true";
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? json(nullptr) : json(double(a) / double(b)); };
  return {{"overall", ratio(hits[0] + hits[1], total[0] + total[1])},
          {"false_side", ratio(hits[0], total[0])},
          {"true_side", ratio(hits[1], total[1])},
          {"tagged_items", total[0] + total[1]}};
}

std::string hash_of(const fs::path& p) {
  auto h = sha256_file(p);
  if (!h) throw std::runtime_error("cannot read " + p.string());
  return *h;
}

std::string rel(const fs::path& p, const fs::path& base) { return p.lexically_proximate(base).generic_string(); }

}  // namespace

// ---- config -------------------------------------------------------------

PipelineConfig PipelineConfig::defaults_for(DatasetKind kind) {
  PipelineConfig c;
  c.dataset = kind;
  c.k = kDefaultTopK;
  c.extractor.epochs = 5;
  c.extractor.batch_size = 2;
  c.extractor.learning_rate = 1e-5;
  c.extractor.warmup_fraction = 0.1;
  c.inference.epochs = 5;
  c.inference.learning_rate = 5e-6;
  c.inference.warmup_fraction = 0.1;
  switch (kind) {
    case DatasetKind::kRawfc:
      c.extractor.gamma = 0.9;
      c.inference.batch_size = 8;
      break;
    case DatasetKind::kLiarRaw:
      c.extractor.gamma = 0.5;
      c.inference.batch_size = 32;
      break;
    case DatasetKind::kSynthetic:
      // Heads trained from scratch over 64-dim mock vectors need a larger step.
      c.extractor.gamma = 0.9;
      c.extractor.learning_rate = 1e-3;
      c.inference.batch_size = 8;
      c.inference.learning_rate = 1e-3;
      break;
  }
  c.inference.gamma = 1.0;  // unused by the inference stage
  return c;
}

PipelineConfig PipelineConfig::from_json(const json& doc, const fs::path& base_dir) {
  reject_unknown(doc, {"dataset", "work_dir", "cache_dir", "seed", "k", "embedding", "llm", "reasoning_temperature",
                       "judge", "extractor", "inference", "defense_max_chars", "bias_threshold"},
                 "config");
  if (!doc.contains("dataset")) throw ConfigError("config.dataset is required");
  const auto& ds = doc.at("dataset");
  reject_unknown(ds, {"name", "train", "eval", "test"}, "dataset");
  std::string name;
  read_key(ds, "name", name, "dataset");
  DatasetKind kind;
  try {
    kind = parse_dataset_kind(name);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("dataset.name: ") + e.what());
  }
  auto c = defaults_for(kind);
  std::string train, eval, test, work, cache;
  read_key(ds, "train", train, "dataset");
  read_key(ds, "eval", eval, "dataset");
  read_key(ds, "test", test, "dataset");
  c.train_path = resolve(base_dir, train);
  c.eval_path = resolve(base_dir, eval);
  c.test_path = resolve(base_dir, test);
  read_key(doc, "work_dir", work, "config");
  read_key(doc, "cache_dir", cache, "config");
  if (!work.empty()) c.work_dir = work;
  c.work_dir = resolve(base_dir, c.work_dir);
  c.cache_dir = resolve(base_dir, cache);
  read_key(doc, "seed", c.seed, "config");
  read_key(doc, "k", c.k, "config");
  read_key(doc, "reasoning_temperature", c.reasoning_temperature, "config");
  read_key(doc, "defense_max_chars", c.defense_max_chars, "config");
  read_key(doc, "bias_threshold", c.bias_threshold, "config");

  if (doc.contains("embedding")) {
    const auto& e = doc.at("embedding");
    reject_unknown(e, {"backend", "endpoint", "dim", "model", "seed", "max_chars", "max_in_flight", "batch_size",
                       "max_retries", "timeout_seconds"},
                   "embedding");
    std::string backend = "mock";
    read_key(e, "backend", backend, "embedding");
    if (backend == "mock") c.embedding.kind = BackendDescriptor::Kind::kMock;
    else if (backend == "remote") c.embedding.kind = BackendDescriptor::Kind::kRemote;
    else throw ConfigError("embedding.backend must be \"mock\" or \"remote\", got \"" + backend + "\"");
    read_key(e, "endpoint", c.embedding.endpoint, "embedding");
    read_key(e, "dim", c.embedding.dim, "embedding");
    read_key(e, "model", c.embedding.model, "embedding");
    read_key(e, "seed", c.embedding.seed, "embedding");
    read_key(e, "max_chars", c.embedding.max_chars, "embedding");
    read_key(e, "max_in_flight", c.embedding.max_in_flight, "embedding");
    read_key(e, "batch_size", c.embedding.batch_size, "embedding");
    read_key(e, "max_retries", c.embedding.max_retries, "embedding");
    read_key(e, "timeout_seconds", c.embedding.timeout_seconds, "embedding");
  }
  if (doc.contains("llm")) {
    read_chat(doc.at("llm"), c.llm, "llm");
    read_key(doc.at("llm"), "temperature", c.reasoning_temperature, "llm");
  }
  if (doc.contains("judge")) read_chat(doc.at("judge"), c.judge, "judge", &c.judge_enabled);
  if (doc.contains("extractor")) read_train(doc.at("extractor"), c.extractor, true, "extractor");
  if (doc.contains("inference")) read_train(doc.at("inference"), c.inference, false, "inference");
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  const auto bytes = read_file(path);
  if (!bytes) throw ConfigError("cannot read config file " + path.string());
  json doc;
  try {
    doc = json::parse(*bytes);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(doc, path.parent_path());
}

ordered_json PipelineConfig::to_json() const {
  ordered_json o;
  o["dataset"] = {{"name", ldefense::to_string(dataset)},
                  {"train", train_path.generic_string()},
                  {"eval", eval_path.generic_string()},
                  {"test", test_path.generic_string()}};
  o["work_dir"] = work_dir.generic_string();
  o["cache_dir"] = effective_cache_dir().generic_string();
  o["seed"] = seed;
  o["k"] = k;
  o["embedding"] = {{"backend", embedding.kind == BackendDescriptor::Kind::kMock ? "mock" : "remote"},
                    {"endpoint", embedding.endpoint},
                    {"dim", embedding.dim},
                    {"model", embedding.model},
                    {"seed", embedding.seed},
                    {"max_chars", embedding.max_chars},
                    {"max_in_flight", embedding.max_in_flight},
                    {"batch_size", embedding.batch_size},
                    {"max_retries", embedding.max_retries},
                    {"timeout_seconds", embedding.timeout_seconds}};
  o["llm"] = chat_json(llm);
  o["reasoning_temperature"] = reasoning_temperature;
  o["judge"] = chat_json(judge);
  o["judge"]["enabled"] = judge_enabled;
  o["extractor"] = train_json(extractor, true);
  o["inference"] = train_json(inference, false);
  o["defense_max_chars"] = defense_max_chars;
  o["bias_threshold"] = bias_threshold;
  return o;
}

std::string PipelineConfig::hash() const {
  auto o = to_json();
  o.erase("work_dir");
  o.erase("cache_dir");
  o.erase("dataset");
  o["dataset"] = ldefense::to_string(dataset);  // file contents are tracked as stage inputs
  return sha256_hex(o.dump());
}

void PipelineConfig::validate() const {
  if (k < 1) throw ConfigError("k must be >= 1, got " + std::to_string(k));
  if (train_path.empty()) throw ConfigError("dataset.train is required");
  if (test_path.empty()) throw ConfigError("dataset.test is required");
  for (const auto& p : {train_path, test_path, eval_path}) {
    if (!p.empty() && !fs::exists(p)) throw ConfigError("dataset file " + p.string() + " does not exist");
  }
  try {
    embedding.validate();
    extractor.validate();
    inference.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  validate_chat(llm, "llm");
  if (judge_enabled) validate_chat(judge, "judge");
  if (reasoning_temperature < 0.0) throw ConfigError("reasoning_temperature must be >= 0");
  if (bias_threshold < -1.0 || bias_threshold > 1.0) throw ConfigError("bias_threshold must lie in [-1, 1]");
}

fs::path PipelineConfig::effective_cache_dir() const { return cache_dir.empty() ? work_dir / "cache" : cache_dir; }

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::kNoEvidence: return "no-evidence";
    case Ablation::kRandomEvidence: return "random-evidence";
    case Ablation::kNoPriorLabel: return "no-prior-label";
    case Ablation::kNoExplanations: return "no-explanations";
    case Ablation::kNoInferenceTraining: return "no-inference-training";
  }
  throw std::logic_error("bad ablation");
}

Ablation parse_ablation(std::string_view text) {
  for (auto a : {Ablation::kNoEvidence, Ablation::kRandomEvidence, Ablation::kNoPriorLabel, Ablation::kNoExplanations,
                 Ablation::kNoInferenceTraining}) {
    if (to_string(a) == text) return a;
  }
  throw ConfigError("unknown ablation '" + std::string(text) + "'");
}

// ---- pipeline -----------------------------------------------------------

Pipeline::Pipeline(PipelineConfig config, RunOptions options, std::shared_ptr<ChatClient> llm_override)
    : config_(std::move(config)), options_(options), llm_override_(std::move(llm_override)) {
  config_.validate();
  if (options_.offline) {
    if (config_.embedding.kind != BackendDescriptor::Kind::kMock) {
      throw ConfigError("--offline forbids the remote embedding backend");
    }
    if (config_.llm.backend != "mock" && !llm_override_) throw ConfigError("--offline requires llm.backend \"mock\"");
    if (config_.judge_enabled && config_.judge.backend != "mock") {
      throw ConfigError("--offline requires judge.backend \"mock\"");
    }
  }
  config_hash_ = config_.hash();
  fs::create_directories(config_.work_dir);
  auto stamped = config_.to_json();
  stamped["config_hash"] = config_hash_;
  write_file_atomic(config_.work_dir / "config.resolved.json", stamped.dump(2) + "\n");
}

const Dataset& Pipeline::train_set() {
  if (!train_) train_ = load_dataset(config_.train_path, config_.dataset, "train");
  return *train_;
}

const Dataset& Pipeline::test_set() {
  if (!test_) {
    test_ = load_dataset(config_.test_path, config_.dataset, "test");
    check_disjoint(train_set(), *test_);
  }
  return *test_;
}

const Dataset* Pipeline::eval_set() {
  if (!eval_loaded_) {
    if (!config_.eval_path.empty()) eval_ = load_dataset(config_.eval_path, config_.dataset, "eval");
    eval_loaded_ = true;
  }
  return eval_ ? &*eval_ : nullptr;
}

EmbeddingGateway& Pipeline::gateway() {
  if (!gateway_) {
    gateway_ = std::make_unique<EmbeddingGateway>(make_embedding_backend(config_.embedding),
                                                  config_.effective_cache_dir() / "embeddings");
  }
  return *gateway_;
}

ChatClient& Pipeline::llm() {
  if (llm_override_) return *llm_override_;
  if (!llm_) llm_ = std::make_shared<CachedChatClient>(make_chat(config_.llm), config_.effective_cache_dir() / "llm");
  return *llm_;
}

ChatClient& Pipeline::judge() {
  if (!judge_) {
    judge_ = std::make_shared<CachedChatClient>(make_chat(config_.judge), config_.effective_cache_dir() / "llm");
  }
  return *judge_;
}

std::size_t Pipeline::llm_requests() const {
  std::size_t n = 0;
  if (llm_override_) n += llm_override_->requests();
  if (llm_) n += llm_->requests();
  if (judge_) n += judge_->requests();
  return n;
}

std::size_t Pipeline::embedding_requests() const { return gateway_ ? gateway_->backend_requests() : 0; }

StageResult Pipeline::run_stage(const std::string& stage, const fs::path& dir, const std::vector<Input>& inputs,
                                const std::vector<fs::path>& outputs, const std::function<json()>& body) {
  const auto& work = config_.work_dir;
  StageResult result;
  result.stage = stage;
  result.dir = dir;

  ordered_json input_hashes = ordered_json::object();
  for (const auto& in : inputs) {
    if (!fs::exists(in.path)) {
      if (in.producer.empty()) throw ConfigError("input file " + in.path.string() + " does not exist");
      throw UpstreamMissing("'" + stage + "' needs " + in.path.string() + "; run `ldefense " + in.producer +
                            "` first");
    }
    input_hashes[rel(in.path, work)] = hash_of(in.path);
  }

  const auto manifest_path = dir / "manifest.json";
  if (!options_.force) {
    if (auto bytes = read_file(manifest_path)) {
      try {
        const auto m = json::parse(*bytes);
        bool fresh = m.at("config_hash").get<std::string>() == config_hash_ && m.at("inputs") == json(input_hashes);
        for (const auto& out : outputs) {
          if (!fresh) break;
          const auto key = rel(out, work);
          fresh = fs::exists(out) && m.at("outputs").contains(key) &&
                  m.at("outputs").at(key).get<std::string>() == hash_of(out);
        }
        if (fresh) {
          result.skipped = true;
          result.metrics = m.value("metrics", json::object());
          spdlog::info("{}: up to date, skipping (use --force to recompute)", stage);
          return result;
        }
        if (m.at("config_hash").get<std::string>() != config_hash_) {
          spdlog::info("{}: configuration changed, clearing {}", stage, dir.string());
        }
      } catch (const json::exception& e) {
        spdlog::warn("{}: manifest {} is corrupt ({}); recomputing", stage, manifest_path.string(), e.what());
      }
    }
  }
  if (fs::exists(dir)) fs::remove_all(dir);
  fs::create_directories(dir);

  const auto t0 = std::chrono::steady_clock::now();
  result.metrics = body();
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  ordered_json output_hashes = ordered_json::object();
  for (const auto& out : outputs) {
    if (!fs::exists(out)) throw std::logic_error(stage + " did not produce " + out.string());
    output_hashes[rel(out, work)] = hash_of(out);
  }
  ordered_json manifest;
  manifest["stage"] = stage;
  manifest["config_hash"] = config_hash_;
  manifest["seed"] = config_.seed;
  manifest["inputs"] = input_hashes;
  manifest["outputs"] = output_hashes;
  manifest["metrics"] = result.metrics;
  manifest["seconds"] = result.seconds;
  manifest["created"] = utc_now();
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");
  spdlog::info("{}: done in {:.2f}s", stage, result.seconds);
  return result;
}

StageResult Pipeline::train_extractor() {
  const auto dir = config_.work_dir / kExtractorDir;
  std::vector<Input> inputs{{config_.train_path, ""}};
  if (!config_.eval_path.empty()) inputs.push_back({config_.eval_path, ""});
  return run_stage("train-extractor", dir, inputs, {dir / "heads.bin"}, [&] {
    nn::TrainConfig tc = config_.extractor;
    tc.seed = config_.seed;
    ExtractorTrainReport report;
    const auto params = ::ldefense::train_extractor(train_set(), eval_set(), gateway(), tc, &report);
    nn::save_heads(dir / "heads.bin", params.named());
    json epochs = json::array();
    for (const auto& e : report.epochs) {
      epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"eval_loss", e.eval_loss},
                        {"eval_accuracy", e.eval_accuracy}});
    }
    return json{{"epochs", epochs},
                {"steps", report.steps},
                {"skipped_zero_candidate", report.skipped_zero_candidate},
                {"truncated_claims", report.truncated_claims}};
  });
}

StageResult Pipeline::extract() {
  const auto dir = config_.work_dir / kEvidenceDir;
  const auto heads = config_.work_dir / kExtractorDir / "heads.bin";
  return run_stage("extract", dir, {{heads, "train-extractor"}, {config_.train_path, ""}, {config_.test_path, ""}},
                   {dir / "train.jsonl", dir / "test.jsonl"}, [&] {
                     const auto params = ExtractorParams::from_named(nn::load_heads(heads));
                     const auto train_sets = extract_dataset(train_set(), params, gateway(), config_.k);
                     const auto test_sets = extract_dataset(test_set(), params, gateway(), config_.k);
                     write_file_atomic(dir / "train.jsonl", evidence_dump(train_sets));
                     write_file_atomic(dir / "test.jsonl", evidence_dump(test_sets));
                     const auto embedded = embed_claims(test_set(), gateway());
                     return json{{"k", config_.k},
                                 {"test_temporary_accuracy", temporary_accuracy(embedded.examples, params)},
                                 {"test_party_precision", party_precision(test_sets)},
                                 {"train_claims", train_sets.size()},
                                 {"test_claims", test_sets.size()}};
                   });
}

StageResult Pipeline::reason_into(const fs::path& root, const std::string& stage, bool no_evidence,
                                  bool random_evidence, bool no_prior_label) {
  const auto dir = root / kExplanationsDir;
  const auto evidence = config_.work_dir / kEvidenceDir;
  return run_stage(stage, dir,
                   {{evidence / "train.jsonl", "extract"},
                    {evidence / "test.jsonl", "extract"},
                    {config_.train_path, ""},
                    {config_.test_path, ""}},
                   {dir / "train.jsonl", dir / "test.jsonl"}, [&] {
                     ReasonerFlags flags;
                     flags.no_evidence = no_evidence;
                     flags.random_evidence = random_evidence;
                     flags.no_prior_label = no_prior_label;
                     flags.seed = config_.seed;
                     const auto before = llm_requests();
                     json counts;
                     for (const auto& [split, ds] : {std::pair{"train", &train_set()}, std::pair{"test", &test_set()}}) {
                       const auto sets = load_evidence_dump(evidence / (std::string(split) + ".jsonl"));
                       const auto out = reason_dataset(*ds, sets, llm(), flags, config_.reasoning_temperature,
                                                       config_.llm.max_in_flight);
                       write_file_atomic(dir / (std::string(split) + ".jsonl"), explanations_dump(out));
                       counts[split] = out.size();
                     }
                     return json{{"claims", counts}, {"llm_requests", llm_requests() - before},
                                 {"no_evidence", no_evidence}, {"random_evidence", random_evidence},
                                 {"no_prior_label", no_prior_label}};
                   });
}

StageResult Pipeline::reason() { return reason_into(config_.work_dir, "reason", false, false, false); }

StageResult Pipeline::evidence_explanations_into(const fs::path& root) {
  const auto dir = root / kExplanationsDir;
  const auto evidence = config_.work_dir / kEvidenceDir;
  return run_stage("ablate no-explanations: explanations", dir,
                   {{evidence / "train.jsonl", "extract"}, {evidence / "test.jsonl", "extract"}},
                   {dir / "train.jsonl", dir / "test.jsonl"}, [&] {
                     for (const char* split : {"train", "test"}) {
                       std::vector<CompetingExplanations> out;
                       for (const auto& s : load_evidence_dump(evidence / (std::string(split) + ".jsonl"))) {
                         out.push_back(evidence_as_explanations(s));
                       }
                       write_file_atomic(dir / (std::string(split) + ".jsonl"), explanations_dump(out));
                     }
                     return json{{"source", "evidence"}};
                   });
}

StageResult Pipeline::train_inference_in(const fs::path& root) {
  const auto dir = root / kInferenceDir;
  const auto explanations = root / kExplanationsDir / "train.jsonl";
  const std::string producer =
      root == config_.work_dir ? "reason" : "ablate " + root.filename().string();
  return run_stage(root == config_.work_dir ? "train-inference" : producer + ": train-inference", dir,
                   {{explanations, producer}, {config_.train_path, ""}}, {dir / "heads.bin"}, [&] {
                     const auto expl = load_explanations_dump(explanations);
                     const auto set = embed_defense(train_set(), expl, gateway(), config_.defense_max_chars);
                     nn::TrainConfig tc = config_.inference;
                     tc.seed = config_.seed;
                     DefenseTrainReport report;
                     const auto params = ::ldefense::train_inference(
                         set.examples, gateway().dim(), static_cast<int>(train_set().labels().size()), tc, &report);
                     nn::save_heads(dir / "heads.bin", params.named());
                     json epochs = json::array();
                     for (const auto& e : report.epochs) {
                       epochs.push_back(
                           {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"train_accuracy", e.train_accuracy}});
                     }
                     return json{{"epochs", epochs}, {"steps", report.steps}, {"excluded", set.excluded}};
                   });
}

StageResult Pipeline::predict_in(const fs::path& root) {
  const auto dir = root / kVerdictsDir;
  const auto heads = root / kInferenceDir / "heads.bin";
  const auto explanations = root / kExplanationsDir / "test.jsonl";
  const bool main = root == config_.work_dir;
  const std::string producer = main ? "reason" : "ablate " + root.filename().string();
  return run_stage(main ? "predict" : producer + ": predict", dir,
                   {{heads, main ? "train-inference" : producer}, {explanations, producer}, {config_.test_path, ""}},
                   {dir / "test.jsonl"}, [&] {
                     const auto params = InferenceParams::from_named(nn::load_heads(heads));
                     const auto expl = load_explanations_dump(explanations);
                     const auto set = embed_defense(test_set(), expl, gateway(), config_.defense_max_chars);
                     const auto verdicts = predict_dataset(test_set(), set, params);
                     write_file_atomic(dir / "test.jsonl", verdict_dump(verdicts));
                     return json{{"verdicts", verdicts.size()}, {"excluded", set.excluded}};
                   });
}

StageResult Pipeline::llm_verdicts_in(const fs::path& root) {
  const auto dir = root / kVerdictsDir;
  const auto explanations = config_.work_dir / kExplanationsDir / "test.jsonl";
  return run_stage("ablate no-inference-training: predict", dir, {{explanations, "reason"}, {config_.test_path, ""}},
                   {dir / "test.jsonl"}, [&] {
                     const auto expl = load_explanations_dump(explanations);
                     std::unordered_map<std::string_view, const CompetingExplanations*> by_id;
                     for (const auto& e : expl) by_id.emplace(e.claim_id, &e);
                     const auto& test = test_set();
                     std::vector<std::size_t> usable;
                     for (std::size_t i = 0; i < test.claims.size(); ++i) {
                       if (by_id.contains(test.claims[i].id)) usable.push_back(i);
                     }
                     std::vector<Verdict> verdicts(usable.size());
                     const auto labels = test.labels();
                     parallel_bounded(usable.size(), config_.llm.max_in_flight, [&](std::size_t j) {
                       const auto& claim = test.claims[usable[j]];
                       verdicts[j] = ablation_no_training(claim, labels, *by_id.at(claim.id), llm());
                     });
                     write_file_atomic(dir / "test.jsonl", verdict_dump(verdicts));
                     return json{{"verdicts", verdicts.size()}, {"excluded", test.claims.size() - usable.size()}};
                   });
}

StageResult Pipeline::evaluate_in(const fs::path& root) {
  const auto dir = root / kEvaluationDir;
  const auto verdict_path = root / kVerdictsDir / "test.jsonl";
  const auto evidence_path = config_.work_dir / kEvidenceDir / "test.jsonl";
  const bool main = root == config_.work_dir;
  return run_stage(main ? "evaluate" : "ablate " + root.filename().string() + ": evaluate", dir,
                   {{verdict_path, main ? "predict" : "ablate " + root.filename().string()},
                    {evidence_path, "extract"},
                    {config_.test_path, ""}},
                   {dir / "report.json"}, [&] {
                     const auto& test = test_set();
                     const auto labels = test.labels();
                     const ScoreScheme scheme(test.kind);
                     const auto verdicts = load_verdict_dump(verdict_path);
                     std::unordered_map<std::string_view, const Claim*> claims;
                     for (const auto& c : test.claims) claims.emplace(c.id, &c);

                     EvaluationReport report;
                     std::vector<int> preds, golds;
                     double disc = 0.0;
                     for (const auto& v : verdicts) {
                       preds.push_back(labels.index_of(v.pred));
                       golds.push_back(labels.index_of(v.gold));
                       disc += discrepancy(v.pred, v.gold, scheme);
                     }
                     report.classification = macro_prf(preds, golds, labels);
                     report.discrepancy_mean = verdicts.empty() ? 0.0 : disc / static_cast<double>(verdicts.size());

                     double bias = 0.0;
                     std::size_t bias_n = 0;
                     for (const auto& sets : load_evidence_dump(evidence_path)) {
                       const auto it = claims.find(sets.claim_id);
                       if (it == claims.end()) continue;
                       std::vector<std::string> ev, cand;
                       for (const auto* side : {&sets.false_set, &sets.true_set}) {
                         for (const auto& e : *side) ev.push_back(e.text);
                       }
                       for (const auto& c : candidates_of(*it->second)) cand.emplace_back(c.text);
                       if (ev.empty() || cand.empty()) continue;
                       const auto ev_vecs = gateway().embed(ev);
                       const auto cand_vecs = gateway().embed(cand);
                       bias += majority_bias_ratio(ev_vecs, cand_vecs, config_.bias_threshold);
                       ++bias_n;
                     }
                     report.bias_ratio_mean = bias_n == 0 ? 0.0 : bias / static_cast<double>(bias_n);
                     report.bias_embedder = gateway().model();

                     if (config_.judge_enabled) {
                       std::vector<LikertScores> scores(verdicts.size());
                       parallel_bounded(verdicts.size(), config_.judge.max_in_flight, [&](std::size_t i) {
                         const auto& v = verdicts[i];
                         scores[i] = judge_explanation(judge(), claims.at(v.claim_id)->text, v.gold, v.explanation);
                       });
                       report.likert = likert_means(scores);
                     }
                     auto out = report_to_json(report);
                     out["verdicts"] = verdicts.size();
                     write_file_atomic(dir / "report.json", out.dump(2) + "\n");
                     return json(out);
                   });
}

StageResult Pipeline::train_inference() { return train_inference_in(config_.work_dir); }
StageResult Pipeline::predict() { return predict_in(config_.work_dir); }
StageResult Pipeline::evaluate() { return evaluate_in(config_.work_dir); }

std::vector<StageResult> Pipeline::ablate(Ablation ablation) {
  const auto name = std::string(to_string(ablation));
  const auto root = config_.work_dir / kAblationsDir / name;
  std::vector<StageResult> out;
  switch (ablation) {
    case Ablation::kNoEvidence:
    case Ablation::kRandomEvidence:
    case Ablation::kNoPriorLabel:
      out.push_back(reason_into(root, "ablate " + name + ": reason", ablation == Ablation::kNoEvidence,
                                ablation == Ablation::kRandomEvidence, ablation == Ablation::kNoPriorLabel));
      break;
    case Ablation::kNoExplanations:
      out.push_back(evidence_explanations_into(root));
      break;
    case Ablation::kNoInferenceTraining:
      out.push_back(llm_verdicts_in(root));
      out.push_back(evaluate_in(root));
      return out;
  }
  out.push_back(train_inference_in(root));
  out.push_back(predict_in(root));
  out.push_back(evaluate_in(root));
  return out;
}

std::vector<StageResult> Pipeline::all() {
  return {train_extractor(), extract(), reason(), train_inference(), predict(), evaluate()};
}

int exit_code_for(std::exception_ptr error) {
  try {
    std::rethrow_exception(error);
  } catch (const ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return kExitConfig;
  } catch (const UpstreamMissing& e) {
    spdlog::error("missing upstream artifact: {}", e.what());
    return kExitUpstreamMissing;
  } catch (const ExternalServiceError& e) {
    spdlog::error("external service failure: {}", e.what());
    return kExitExternalService;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFailure;
  }
}

}  // namespace ldefense
