// Command-line front end: `ptrm <verb> [--config file] [--set key=value ...]`.
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ptrm/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Tiny recursive model training and parallel-rollout inference"};
  app.require_subcommand(1, 1);

  struct Flags {
    std::string config, out, data, checkpoint, resume, split, puzzle;
    std::vector<std::string> sets;
    int workers = 0;
    long long seed = -1;
  };
  Flags flags;
  const std::map<std::string, std::string> about{
      {"gen-data", "Generate puzzle splits and a manifest"},
      {"train", "Train a model with deep supervision"},
      {"eval", "Deterministic and parallel-rollout evaluation"},
      {"sweep", "Noise-scale sweep over several seeds"},
      {"trace", "Latent trajectories and their principal plane for one puzzle"},
      {"report", "Re-render charts from an existing run directory"},
  };
  for (const auto& verb : ptrm::command_names()) {
    auto* sub = app.add_subcommand(verb, about.at(verb));
    sub->add_option("-c,--config", flags.config, "JSON config file");
    sub->add_option("-s,--set", flags.sets, "Override a config key, e.g. train.lr=3e-4");
    sub->add_option("-o,--out", flags.out, "Output directory (default: $PTRM_OUT_DIR or ./ptrm_out)");
    sub->add_option("--data", flags.data, "Dataset directory");
    sub->add_option("--workers", flags.workers, "Worker threads; never changes results")->check(CLI::PositiveNumber);
    sub->add_option("--seed", flags.seed, "Master seed");
    if (verb == "eval" || verb == "sweep" || verb == "trace")
      sub->add_option("--checkpoint", flags.checkpoint, "Checkpoint directory");
    if (verb == "eval" || verb == "sweep" || verb == "trace")
      sub->add_option("--split", flags.split, "train, val or golden (default golden)");
    if (verb == "train") sub->add_option("--resume", flags.resume, "Checkpoint to resume from");
    if (verb == "trace") sub->add_option("--puzzle", flags.puzzle, "Puzzle id to trace");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ptrm::kExitOk : ptrm::kExitConfig;
  }
  const std::string verb = app.get_subcommands().front()->get_name();

  nlohmann::json config = nlohmann::json::object();
  try {
    if (!flags.config.empty()) config = ptrm::load_config_file(flags.config);
    if (!config.is_object()) throw ptrm::ConfigError("config: top level must be a JSON object");
    if (!flags.out.empty()) config["out_dir"] = flags.out;
    if (!flags.data.empty()) config["data"]["dir"] = flags.data;
    if (flags.workers > 0) config["workers"] = flags.workers;
    if (flags.seed >= 0) {
      if (verb == "gen-data") config["data"]["seed"] = flags.seed;
      else if (verb == "train") config["train"]["seed"] = flags.seed;
      else config["infer"]["master_seed"] = flags.seed;
    }
    if (!flags.checkpoint.empty()) config["checkpoint"] = flags.checkpoint;
    if (!flags.resume.empty()) config["resume"] = flags.resume;
    if (!flags.split.empty()) config["split"] = flags.split;
    if (!flags.puzzle.empty()) config["trace"]["puzzle_id"] = flags.puzzle;
    for (const auto& s : flags.sets) ptrm::apply_override(config, s);
  } catch (const ptrm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return ptrm::kExitConfig;
  }
  return ptrm::run_command(verb, config, std::cerr);
}
