// Command-line harness: train ensembles, run transfer attacks, and emit the
// coherence / aligned-subspace diagnostics as CSV files.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "divtrain/reports.hpp"

namespace {

divtrain::cli::ExperimentConfig resolve(const std::string& config_path, const std::string& out,
                                        std::int64_t seed) {
  divtrain::cli::ExperimentConfig cfg = divtrain::cli::load_config(config_path);
  if (!out.empty()) {
    cfg.output_dir = out;
    cfg.resolved["output_dir"] = out;
  }
  if (seed >= 0) {
    cfg.master_seed = static_cast<std::uint64_t>(seed);
    cfg.resolved["seed"] = seed;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diverse-ensemble training and transfer-attack harness"};
  app.require_subcommand(1);

  std::string config_path, out_dir, target_ckpt, surrogate_ckpt, ckpt;
  std::int64_t seed = -1;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
    cmd->add_option("--out", out_dir, "override the config's output directory");
    cmd->add_option("--seed", seed, "override the config's master seed");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train an ensemble and write a checkpoint");
  add_common(train_cmd);

  CLI::App* attack_cmd =
      app.add_subcommand("attack", "craft attacks on a surrogate, measure a target");
  add_common(attack_cmd);
  attack_cmd->add_option("--target", target_ckpt, "target checkpoint")->required();
  attack_cmd->add_option("--surrogate", surrogate_ckpt, "surrogate checkpoint")->required();

  CLI::App* coherence_cmd =
      app.add_subcommand("coherence", "per-input gradient coherence and histogram");
  add_common(coherence_cmd);
  coherence_cmd->add_option("--ckpt", ckpt, "ensemble checkpoint")->required();

  CLI::App* gaas_cmd =
      app.add_subcommand("gaas", "orthogonal aligned-direction success curves");
  add_common(gaas_cmd);
  gaas_cmd->add_option("--ckpt", ckpt, "ensemble checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad invocation counts as a config error
  }

  try {
    divtrain::cli::ExperimentConfig cfg = resolve(config_path, out_dir, seed);
    if (train_cmd->parsed()) {
      divtrain::cli::cmd_train(cfg);
    } else if (attack_cmd->parsed()) {
      divtrain::cli::cmd_attack(cfg, target_ckpt, surrogate_ckpt);
    } else if (coherence_cmd->parsed()) {
      divtrain::cli::cmd_coherence(cfg, ckpt);
    } else if (gaas_cmd->parsed()) {
      divtrain::cli::cmd_gaas(cfg, ckpt);
    }
  } catch (const divtrain::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
