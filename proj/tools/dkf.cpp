// dkf: two-stage dialogue-state tracking at desk scale.
//
// Subcommands: train, sweep, predict, evaluate, ablate. Every run is pinned
// by a JSON config file and/or flags; flags win. All randomness comes from
// the single seed, so repeated runs produce byte-identical artifacts.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dkf/cli.hpp"

namespace {

struct FlagValues {
  std::string config;
  std::string dataset;
  std::string checkpoint;
  std::string out;
  double delta = 0.0;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::string grid;
  std::string ablation;
  std::string generator;
};

void add_common_flags(CLI::App* cmd, FlagValues& flags) {
  cmd->add_option("--config", flags.config, "JSON config file; flags override its values");
  cmd->add_option("--dataset", flags.dataset, "dataset JSON path");
  cmd->add_option("--checkpoint", flags.checkpoint, "model checkpoint path");
  cmd->add_option("--out", flags.out, "output directory");
  cmd->add_option("--delta", flags.delta, "selection threshold in (0,1)");
  cmd->add_option("--seed", flags.seed, "random seed");
  cmd->add_option("--epochs", flags.epochs, "training epochs");
  cmd->add_option("--grid", flags.grid, "comma-separated threshold grid, e.g. 0.5,0.6,0.7");
  cmd->add_option("--ablation", flags.ablation,
                  "prompt configuration: full, -prompt, -OT or -CV (write --ablation=-prompt)");
  cmd->add_option("--generator", flags.generator, "stage-two filler: extractive or gold-oracle");
}

// File first, then flags, so explicit flags always win.
dkf::RunConfig resolve_config(const CLI::App* cmd, const FlagValues& flags) {
  dkf::RunConfig config;
  if (cmd->count("--config")) dkf::load_run_config(flags.config, config);
  if (cmd->count("--dataset")) config.dataset = flags.dataset;
  if (cmd->count("--checkpoint")) config.checkpoint = flags.checkpoint;
  if (cmd->count("--out")) config.out = flags.out;
  if (cmd->count("--delta")) config.selector.delta = flags.delta;
  if (cmd->count("--seed")) config.selector.seed = flags.seed;
  if (cmd->count("--epochs")) config.selector.epochs = flags.epochs;
  if (cmd->count("--grid")) config.grid = dkf::parse_grid(flags.grid);
  if (cmd->count("--ablation")) config.ablation = dkf::parse_ablation(flags.ablation);
  if (cmd->count("--generator")) {
    dkf::validate_generator_name(flags.generator);
    config.generator = flags.generator;
  }
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dkf: slot selection + prompt fusion dialogue-state tracker"};
  app.require_subcommand(1);

  FlagValues train_flags, sweep_flags, predict_flags, eval_flags, ablate_flags;
  std::string predictions_path;

  CLI::App* train = app.add_subcommand("train", "train the slot selector and save a checkpoint");
  add_common_flags(train, train_flags);
  CLI::App* sweep = app.add_subcommand("sweep", "precision/recall across a threshold grid");
  add_common_flags(sweep, sweep_flags);
  CLI::App* predict = app.add_subcommand("predict", "predict a state for every turn");
  add_common_flags(predict, predict_flags);
  CLI::App* evaluate =
      app.add_subcommand("evaluate", "score a prediction dump against a dataset");
  evaluate->add_option("predictions", predictions_path, "prediction dump JSON")->required();
  add_common_flags(evaluate, eval_flags);
  CLI::App* ablate =
      app.add_subcommand("ablate", "predict + evaluate under all four prompt configurations");
  add_common_flags(ablate, ablate_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (train->parsed())
    return dkf::run_command("train", [&] { return dkf::cmd_train(resolve_config(train, train_flags)); });
  if (sweep->parsed())
    return dkf::run_command("sweep", [&] { return dkf::cmd_sweep(resolve_config(sweep, sweep_flags)); });
  if (predict->parsed())
    return dkf::run_command("predict",
                            [&] { return dkf::cmd_predict(resolve_config(predict, predict_flags)); });
  if (evaluate->parsed())
    return dkf::run_command("evaluate", [&] {
      return dkf::cmd_evaluate(resolve_config(evaluate, eval_flags), predictions_path);
    });
  if (ablate->parsed())
    return dkf::run_command("ablate",
                            [&] { return dkf::cmd_ablate(resolve_config(ablate, ablate_flags)); });
  return 2;
}
