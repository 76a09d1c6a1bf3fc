#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "transport/error.hpp"
#include "transport/pipeline.hpp"
#include "transport/synthgen.hpp"
#include "transport/version.hpp"

namespace {

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> n_boot, trees, threads;
  std::optional<double> horizon;
  std::optional<std::string> out, save_models, load_models;
  std::vector<std::string> estimands;
};

int run(const std::string& config_path, const RunOverrides& o, bool quiet) {
  transport::RunConfig config;
  try {
    config = transport::read_run_config(config_path);
    if (!o.estimands.empty()) {
      std::vector<transport::Estimand> set;
      for (const auto& e : o.estimands) set.push_back(transport::parse_estimand(e));
      config.estimands = set;
    }
  } catch (const std::exception& e) {
    std::cerr << "config: " << e.what() << "\n";
    return 2;
  }
  if (o.seed) config.seed = *o.seed;
  if (o.n_boot) config.n_boot = *o.n_boot;
  if (o.horizon) config.horizon = *o.horizon;
  if (o.trees) {
    config.forest.n_trees = *o.trees;
    config.selection.n_trees = *o.trees;
  }
  if (o.out) config.output_dir = *o.out;
  if (o.threads) config.threads = *o.threads;
  if (o.save_models) config.save_models = *o.save_models;
  if (o.load_models) config.load_models = *o.load_models;

  const auto result = transport::run_transport(config, quiet ? nullptr : &std::cerr);
  if (!result.ok) {
    std::cerr << "error in stage " << result.error << "\n";
    return 1;
  }
  for (const auto& w : result.estimates.warnings) std::cerr << "warning: " << w << "\n";
  return 0;
}

int generate(const std::optional<std::string>& scenario_path, const std::optional<std::string>& builtin,
             const std::string& out, const std::optional<std::uint64_t>& seed,
             const std::optional<std::size_t>& n_source, const std::optional<std::size_t>& n_target) {
  try {
    auto scenario = scenario_path ? transport::read_scenario(*scenario_path) : transport::builtin_scenario(*builtin);
    if (seed) scenario.seed = *seed;
    if (n_source) scenario.n_source = *n_source;
    if (n_target) scenario.n_target = *n_target;
    scenario.validate();
    const auto truth = transport::write_synthetic(scenario, out);
    for (const auto& c : truth.contrasts) {
      std::cout << c.contrast.label() << ": true TATE " << c.tate << ", true SATE " << c.sate << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "generate: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transport trial treatment effects to a target population"};
  app.set_version_flag("--version", std::string(transport::kVersion));
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "Run the estimation pipeline");
  std::string config_path;
  RunOverrides o;
  bool quiet = false;
  run_cmd->add_option("--config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", o.seed, "Override the master seed");
  run_cmd->add_option("--n-boot", o.n_boot, "Override the number of bootstrap replicates (0 skips)");
  run_cmd->add_option("--horizon", o.horizon, "Override the risk horizon");
  run_cmd->add_option("--trees", o.trees, "Override the number of trees in every forest");
  run_cmd->add_option("--out", o.out, "Override the output directory");
  run_cmd->add_option("--threads", o.threads, "Worker threads (0 = all cores)");
  run_cmd->add_option("--estimands", o.estimands, "Only run these estimands (SATE, OOB-retranslation, TATE, ...)")
      ->delimiter(',');
  run_cmd->add_option("--save-models", o.save_models, "Write the fitted arm forests to this directory");
  run_cmd->add_option("--load-models", o.load_models, "Reuse arm forests saved by an earlier run");
  run_cmd->add_flag("--quiet", quiet, "Do not print stage progress");

  auto* gen_cmd = app.add_subcommand("generate", "Write a synthetic trial, target and truth");
  std::optional<std::string> scenario_path, builtin;
  std::string gen_out;
  std::optional<std::uint64_t> gen_seed;
  std::optional<std::size_t> n_source, n_target;
  auto* scenario_opt = gen_cmd->add_option("--scenario", scenario_path, "Scenario file (JSON)")->check(CLI::ExistingFile);
  auto* builtin_opt = gen_cmd->add_option("--builtin", builtin, "Built-in scenario")->check(CLI::IsMember({"S1", "S2"}));
  scenario_opt->excludes(builtin_opt);
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen_seed, "Override the scenario seed");
  gen_cmd->add_option("--n-source", n_source, "Override the trial size");
  gen_cmd->add_option("--n-target", n_target, "Override the target size");

  CLI11_PARSE(app, argc, argv);

  if (run_cmd->parsed()) return run(config_path, o, quiet);
  if (!scenario_path && !builtin) {
    std::cerr << "generate: give --scenario or --builtin\n";
    return 2;
  }
  return generate(scenario_path, builtin, gen_out, gen_seed, n_source, n_target);
}
