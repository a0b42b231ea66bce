// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldefense/chat_client.hpp"
#include "ldefense/corpus.hpp"
#include "ldefense/embedding.hpp"
#include "ldefense/labels.hpp"
#include "ldefense/neural.hpp"

namespace ldefense {

/// Invalid or inconsistent configuration (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stage ran before the stage that produces its inputs (exit code 3).
class UpstreamMissing : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitUpstreamMissing = 3,
  kExitExternalService = 4,
};

struct ChatBackendConfig {
  std::string backend = "mock";  // "mock" | "http"
  std::string model = "mock";
  std::string base_url;
  std::string api_key_env = "LDEFENSE_LLM_API_KEY";
  double requests_per_second = 2.0;
  int max_retries = 5;
  int timeout_seconds = 120;
  int max_in_flight = 4;
};

struct PipelineConfig {
  DatasetKind dataset = DatasetKind::kSynthetic;
  std::filesystem::path train_path;
  std::filesystem::path eval_path;  // optional
  std::filesystem::path test_path;
  std::filesystem::path work_dir = "run";
  std::filesystem::path cache_dir;  // empty: work_dir/cache

  std::uint64_t seed = 13;
  int k = 10;
  BackendDescriptor embedding;
  ChatBackendConfig llm;
  double reasoning_temperature = 0.8;
  bool judge_enabled = false;
  ChatBackendConfig judge;
  nn::TrainConfig extractor;
  nn::TrainConfig inference;
  std::size_t defense_max_chars = 0;
  double bias_threshold = 0.5;

  /// Defaults for a dataset preset: training settings per stage and k.
  static PipelineConfig defaults_for(DatasetKind kind);

  /// Preset defaults overridden by the keys present in `doc`. Relative paths
  /// are resolved against `base_dir`. Throws ConfigError.
  static PipelineConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
  static PipelineConfig load(const std::filesystem::path& path);

  [[nodiscard]] nlohmann::ordered_json to_json() const;
  /// sha256 of the canonical JSON form, with directories left out.
  [[nodiscard]] std::string hash() const;
  void validate() const;  // throws ConfigError

  [[nodiscard]] std::filesystem::path effective_cache_dir() const;
};

enum class Ablation { kNoEvidence, kRandomEvidence, kNoPriorLabel, kNoExplanations, kNoInferenceTraining };
std::string_view to_string(Ablation a);
Ablation parse_ablation(std::string_view text);  // throws ConfigError

struct RunOptions {
  bool force = false;
  bool offline = false;  // remote backends are a config error
};

struct StageResult {
  std::string stage;
  bool skipped = false;  // inputs, config and outputs unchanged
  std::filesystem::path dir;
  nlohmann::json metrics;
  double seconds = 0.0;
};

/// The three stages over one configuration, with per-stage manifests.
class Pipeline {
 public:
  Pipeline(PipelineConfig config, RunOptions options,
           std::shared_ptr<ChatClient> llm_override = nullptr);

  StageResult train_extractor();
  StageResult extract();
  StageResult reason();
  StageResult train_inference();
  StageResult predict();
  StageResult evaluate();
  std::vector<StageResult> ablate(Ablation ablation);
  std::vector<StageResult> all();

  [[nodiscard]] const PipelineConfig& config() const { return config_; }
  [[nodiscard]] std::size_t llm_requests() const;
  [[nodiscard]] std::size_t embedding_requests() const;

  // Artifact locations, relative to the work directory.
  static constexpr std::string_view kExtractorDir = "extractor";
  static constexpr std::string_view kEvidenceDir = "evidence";
  static constexpr std::string_view kExplanationsDir = "explanations";
  static constexpr std::string_view kInferenceDir = "inference";
  static constexpr std::string_view kVerdictsDir = "verdicts";
  static constexpr std::string_view kEvaluationDir = "evaluation";
  static constexpr std::string_view kAblationsDir = "ablations";

 private:
  struct Input {
    std::filesystem::path path;
    std::string producer;  // subcommand that writes it, empty for user data
  };

  StageResult run_stage(const std::string& stage, const std::filesystem::path& dir, const std::vector<Input>& inputs,
                        const std::vector<std::filesystem::path>& outputs,
                        const std::function<nlohmann::json()>& body);

  const Dataset& train_set();
  const Dataset& test_set();
  const Dataset* eval_set();
  EmbeddingGateway& gateway();
  ChatClient& llm();
  ChatClient& judge();

  StageResult reason_into(const std::filesystem::path& root, const std::string& stage, bool no_evidence,
                          bool random_evidence, bool no_prior_label);
  StageResult evidence_explanations_into(const std::filesystem::path& root);
  StageResult train_inference_in(const std::filesystem::path& root);
  StageResult predict_in(const std::filesystem::path& root);
  StageResult llm_verdicts_in(const std::filesystem::path& root);
  StageResult evaluate_in(const std::filesystem::path& root);

  PipelineConfig config_;
  RunOptions options_;
  std::string config_hash_;
  std::optional<Dataset> train_;
  std::optional<Dataset> test_;
  std::optional<Dataset> eval_;
  bool eval_loaded_ = false;
  std::unique_ptr<EmbeddingGateway> gateway_;
  std::shared_ptr<ChatClient> llm_;
  std::shared_ptr<ChatClient> judge_;
  std::shared_ptr<ChatClient> llm_override_;
};

/// Maps an in-flight exception to the CLI exit code and logs it.
int exit_code_for(std::exception_ptr error);

}  // namespace ldefense
