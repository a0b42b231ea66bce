// SPDX-License-Identifier: Apache-2.0
// Command-line driver for the three-stage pipeline.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ldefense/corpus.hpp"
#include "ldefense/pipeline.hpp"
#include "ldefense/util.hpp"

namespace fs = std::filesystem;
using namespace ldefense;

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> k;
  bool force = false;
  bool offline = false;
  std::string log_level = "info";
};

struct SynthFlags {
  std::string out = "synthetic";
  int train_per_label = 140;
  int eval_per_label = 0;
  int test_per_label = 60;
  int sentences = 60;
  double signal = 0.8;
  double noise = 0.2;
  std::uint64_t seed = 7;
};

void print_results(const std::vector<StageResult>& results) {
  for (const auto& r : results) {
    std::printf("%-45s %s\n", r.stage.c_str(), r.skipped ? "up to date" : "done");
  }
}

int run_synth(const SynthFlags& f) {
  const fs::path out(f.out);
  SyntheticConfig sc;
  sc.sentences_per_claim = f.sentences;
  sc.signal_strength = f.signal;
  sc.noise_ratio = f.noise;
  auto write = [&](const char* split, int per_label, std::uint64_t seed) {
    sc.claims_per_label = per_label;
    sc.split = split;
    sc.seed = seed;
    save_dataset(out / (std::string(split) + ".jsonl"), generate_synthetic(sc));
  };
  write("train", f.train_per_label, f.seed);
  write("test", f.test_per_label, splitmix64(f.seed ^ 0x7E57));
  nlohmann::ordered_json cfg;
  cfg["dataset"] = {{"name", "synthetic"}, {"train", "train.jsonl"}, {"test", "test.jsonl"}};
  if (f.eval_per_label > 0) {
    write("eval", f.eval_per_label, splitmix64(f.seed ^ 0xE7A1));
    cfg["dataset"]["eval"] = "eval.jsonl";
  }
  cfg["work_dir"] = "run";
  cfg["embedding"] = {{"backend", "mock"}, {"dim", 64}};
  cfg["llm"] = {{"backend", "mock"}};
  cfg["judge"] = {{"enabled", true}, {"backend", "mock"}};
  write_file_atomic(out / "config.json", cfg.dump(2) + "\n");
  std::printf("wrote %s\n", (out / "config.json").string().c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Competing-evidence fake news detection pipeline"};
  app.require_subcommand(1);
  GlobalFlags g;
  SynthFlags synth;
  std::string ablation;

  app.add_option("--config", g.config, "Pipeline config file (JSON)");
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--k", g.k, "Override the evidence set size");
  app.add_flag("--force", g.force, "Recompute stages even when up to date");
  app.add_flag("--offline", g.offline, "Forbid network backends");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error")->capture_default_str();

  const char* stages[][2] = {
      {"train-extractor", "Train the evidence extractor"},
      {"extract", "Write top-k competing evidence for every claim"},
      {"reason", "Generate the two competing explanations per claim"},
      {"train-inference", "Train the defense classifier"},
      {"predict", "Write verdicts for the test split"},
      {"evaluate", "Score verdicts, evidence bias and explanations"},
      {"all", "Run every stage in order"},
  };
  for (auto& [name, help] : stages) app.add_subcommand(name, help);
  auto* ablate = app.add_subcommand("ablate", "Run one ablation variant");
  ablate->add_option("variant", ablation, "Ablation name")
      ->required()
      ->check(CLI::IsMember({"no-evidence", "random-evidence", "no-prior-label", "no-explanations",
                             "no-inference-training"}));

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic corpus and a matching config");
  synth_cmd->add_option("--out", synth.out, "Output directory")->capture_default_str();
  synth_cmd->add_option("--train-per-label", synth.train_per_label)->capture_default_str();
  synth_cmd->add_option("--eval-per-label", synth.eval_per_label)->capture_default_str();
  synth_cmd->add_option("--test-per-label", synth.test_per_label)->capture_default_str();
  synth_cmd->add_option("--sentences", synth.sentences, "Sentences per claim")->capture_default_str();
  synth_cmd->add_option("--signal", synth.signal, "Signal strength")->capture_default_str();
  synth_cmd->add_option("--noise", synth.noise, "Noise ratio")->capture_default_str();
  synth_cmd->add_option("--synth-seed", synth.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (g.config.empty()) throw ConfigError("--config is required");
    auto config = PipelineConfig::load(g.config);
    if (g.seed) config.seed = *g.seed;
    if (g.k) config.k = *g.k;
    Pipeline pipeline(std::move(config), RunOptions{g.force, g.offline});

    const auto* sub = app.get_subcommands().front();
    const auto name = sub->get_name();
    std::vector<StageResult> results;
    if (name == "train-extractor") results.push_back(pipeline.train_extractor());
    else if (name == "extract") results.push_back(pipeline.extract());
    else if (name == "reason") results.push_back(pipeline.reason());
    else if (name == "train-inference") results.push_back(pipeline.train_inference());
    else if (name == "predict") results.push_back(pipeline.predict());
    else if (name == "evaluate") results.push_back(pipeline.evaluate());
    else if (name == "all") results = pipeline.all();
    else if (name == "ablate") results = pipeline.ablate(parse_ablation(ablation));
    print_results(results);
    if (name == "evaluate" || name == "all" || name == "ablate") {
      const auto& m = results.back().metrics;
      if (m.contains("macro")) {
        std::printf("accuracy %.4f  macro-F1 %.4f  discrepancy %.4f\n", m["macro"]["accuracy"].get<double>(),
                    m["macro"]["f1"].get<double>(), m["discrepancy_mean"].get<double>());
      }
    }
    return kExitOk;
  } catch (...) {
    return exit_code_for(std::current_exception());
  }
}
