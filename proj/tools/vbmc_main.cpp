#include <CLI11.hpp>
#include <iostream>
#include <string>

#include "vbmc/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"vbmc - sample-efficient Bayesian inference for black-box "
               "models"};
  app.set_version_flag("--version", "vbmc 1.0.0");
  app.require_subcommand(1);

  std::string config_path;
  auto* run_cmd = app.add_subcommand(
      "run", "run inference as described by a config file");
  run_cmd->add_option("config", config_path, "path to the run config")
      ->required();

  std::string result_dir;
  int n_samples = 1000;
  std::uint64_t seed = 0;
  auto* sample_cmd = app.add_subcommand(
      "sample", "draw posterior samples from a finished run");
  sample_cmd->add_option("result_dir", result_dir,
                         "output directory of a previous run")
      ->required();
  sample_cmd->add_option("--n", n_samples, "number of samples");
  sample_cmd->add_option("--seed", seed, "sampling seed");

  CLI11_PARSE(app, argc, argv);

  if (run_cmd->parsed()) {
    return vbmc::cli::cmd_run(config_path, std::cout, std::cerr);
  }
  return vbmc::cli::cmd_sample(result_dir, n_samples, seed, std::cerr);
}
