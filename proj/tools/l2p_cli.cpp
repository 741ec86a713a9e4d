// Command-line runner: run, resume, histogram.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "l2p/errors.hpp"
#include "l2p/experiment.hpp"

namespace {

using namespace l2p;

std::filesystem::path output_dir(const ExperimentConfig& config, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* root = std::getenv("L2P_OUT_DIR"); root && *root)
    return std::filesystem::path(root) / config.output_dir;
  return config.output_dir;
}

void summarize(const RunRecord& r) {
  std::cout << "average_accuracy " << r.average_accuracy;
  if (r.forgetting) std::cout << " forgetting " << *r.forgetting;
  std::cout << " wall_clock " << r.wall_clock_seconds << "s\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-pool continual learning experiments"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, record_path, csv_path, out_dir, ablation,
      resume_config;
  std::optional<std::uint64_t> seed;

  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  run->add_option("config", config_path, "JSON config")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out-dir", out_dir, "Output directory (default: $L2P_OUT_DIR/<output_dir>)");
  run->add_option("--ablation", ablation, "none, single_prompt, mean_key or no_diversify");

  auto* resume = app.add_subcommand("resume", "Continue a run from a checkpoint");
  resume->add_option("checkpoint", checkpoint_path, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  resume->add_option("--config", resume_config, "Config to verify against (default: the run's)");

  auto* histogram = app.add_subcommand("histogram", "Write the prompt-selection histogram CSV");
  histogram->add_option("record", record_path, "Run record")->required()->check(CLI::ExistingFile);
  histogram->add_option("out", csv_path, "CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto doc = nlohmann::json::parse(std::ifstream(config_path), nullptr, false);
      if (doc.is_discarded()) throw ConfigError(config_path + ": not valid JSON");
      if (seed) doc["seed"] = *seed;
      if (!ablation.empty()) doc["ablation"] = ablation;
      const auto config = ExperimentConfig::from_json(doc);
      const auto dir = output_dir(config, out_dir);
      const auto record = run_experiment(config, dir);
      std::cout << "record " << (dir / "record.json").string() << "\n";
      summarize(record);
    } else if (*resume) {
      std::optional<std::filesystem::path> cfg;
      if (!resume_config.empty()) cfg = resume_config;
      summarize(resume_experiment(checkpoint_path, cfg));
    } else if (*histogram) {
      const auto record = RunRecord::load(record_path);
      emit_histogram(record, csv_path);
      std::cout << "mean top-" << record.top_n << " jaccard "
                << mean_topn_jaccard(record.histogram(), record.top_n) << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
