// bff: policy-evaluation experiments from JSON configs.
//
//   bff simulate    --config cfg.json [--out DIR] [--seed N]
//   bff solve-exact --config cfg.json [--out DIR]
//   bff train       --config cfg.json [--out DIR] [--seed N] [--allow-oracle]
//   bff compare     --config a.json [--config b.json ...] [--allow-oracle]
//   bff bias-sweep  --config cfg.json [--self-test]
//
// Exit codes: 0 success, 2 validation failure, 3 training diverged, 4 I/O.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bff/commands.hpp"

namespace {

void add_common_options(CLI::App* sub, bff::CliOptions& opts, bool multi_config) {
  auto* config = sub->add_option("--config", opts.config_paths, "experiment config JSON");
  config->required();
  if (!multi_config) config->expected(1);
  sub->add_option("--out", opts.out_dir,
                  "output directory (overrides the config and BFF_OUT_DIR)");
  sub->add_option("--seed", opts.seed_override, "override the config master_seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bellman residual minimization experiments"};
  app.require_subcommand(1);

  bff::CliOptions opts;
  bool self_test = false;

  auto* simulate = app.add_subcommand("simulate", "record a trajectory");
  add_common_options(simulate, opts, false);

  auto* solve = app.add_subcommand("solve-exact", "exact tabular Bellman solve");
  add_common_options(solve, opts, false);

  auto* train = app.add_subcommand("train", "train one estimator");
  add_common_options(train, opts, false);
  train->add_flag("--allow-oracle", opts.allow_oracle,
                  "permit the model-access 'uncorrelated' estimator");

  auto* compare = app.add_subcommand("compare", "train and rank several estimators");
  add_common_options(compare, opts, true);
  compare->add_flag("--allow-oracle", opts.allow_oracle,
                    "permit the model-access 'uncorrelated' estimator");

  auto* sweep = app.add_subcommand("bias-sweep", "measure the surrogate-objective gap vs eps");
  sweep->add_option("--config", opts.config_paths, "experiment config JSON");
  sweep->add_option("--out", opts.out_dir, "output directory");
  sweep->add_option("--seed", opts.seed_override, "override the config master_seed");
  sweep->add_flag("--self-test", self_test, "run the slope fitter on a synthetic eps^2 gap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : bff::kExitValidation;
  }

  return bff::run_command(
      [&]() -> int {
        if (simulate->parsed()) return bff::cmd_simulate(opts, std::cout);
        if (solve->parsed()) return bff::cmd_solve_exact(opts, std::cout);
        if (train->parsed()) return bff::cmd_train(opts, std::cout);
        if (compare->parsed()) return bff::cmd_compare(opts, std::cout);
        if (sweep->parsed()) {
          if (self_test) return bff::cmd_bias_sweep_selftest(std::cout);
          if (opts.config_paths.empty())
            throw bff::ConfigError("bias-sweep needs --config (or --self-test)");
          return bff::cmd_bias_sweep(opts, std::cout);
        }
        throw bff::ConfigError("no subcommand given");
      },
      std::cerr);
}
