// Implementations of the CLI subcommands (simulate, solve-exact, train,
// compare, bias-sweep). Kept in a header so tests can drive the exact same
// code paths as the binary.
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "bff/bias_lab.hpp"
#include "bff/config.hpp"
#include "bff/trainer.hpp"

namespace bff {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitDiverged = 3;
inline constexpr int kExitIo = 4;

// Relative error a run must reach to count as converged in comparison tables.
inline constexpr double kConvergenceRelError = 0.5;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CliOptions {
  std::vector<std::string> config_paths;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed_override;
  bool allow_oracle = false;
};

namespace detail_cmd {

template <class Fn>
void io_guard(Fn&& fn) {
  try {
    fn();
  } catch (const std::filesystem::filesystem_error& e) {
    throw IoError(e.what());
  } catch (const std::runtime_error& e) {
    throw IoError(e.what());
  }
}

inline std::filesystem::path resolve_out_dir(const ExperimentConfig& cfg, const CliOptions& opts) {
  if (opts.out_dir) return *opts.out_dir;
  if (const char* env_dir = std::getenv("BFF_OUT_DIR"); env_dir && *env_dir)
    return std::filesystem::path(env_dir) / cfg.output.directory;
  return cfg.output.directory;
}

inline std::filesystem::path prepare_out_dir(const ExperimentConfig& cfg, const CliOptions& opts) {
  const auto dir = resolve_out_dir(cfg, opts);
  io_guard([&] { std::filesystem::create_directories(dir); });
  return dir;
}

inline ExperimentConfig load_single_config(const CliOptions& opts) {
  if (opts.config_paths.size() != 1)
    throw ConfigError("expected exactly one --config for this command");
  ExperimentConfig cfg;
  io_guard([&] { cfg = load_config(opts.config_paths.front()); });
  if (opts.seed_override) cfg.master_seed = *opts.seed_override;
  return cfg;
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

template <class Spec>
auto initial_state(const ExperimentConfig& cfg) {
  if constexpr (std::is_same_v<Spec, DiscreteEnvSpec>)
    return static_cast<int>(cfg.trainer.s0);
  else
    return cfg.trainer.s0;
}

// Calls fn(spec, make_approx) with the concrete environment and approximator
// types selected by the config. make_approx(seed) builds a fresh approximator
// (tabular inits ignore the seed: the table starts at zero).
template <class Fn>
void dispatch_experiment(const ExperimentConfig& cfg, Fn&& fn) {
  if (cfg.environment.kind == EnvKind::Discrete) {
    const DiscreteEnvSpec spec = cfg.environment.discrete_spec();
    if (cfg.approximator.kind == ApproximatorConfig::Kind::Tabular) {
      fn(spec, [n = spec.n](std::uint64_t) { return TabularValues::zeros(n); });
    } else {
      fn(spec, [n = spec.n](std::uint64_t seed) {
        return DiscreteInputMlp{CosineMlp::init(seed), n};
      });
    }
  } else {
    if (cfg.approximator.kind == ApproximatorConfig::Kind::Tabular)
      throw ConfigError("tabular approximators require a discrete environment");
    fn(cfg.environment.continuous_spec(),
       [](std::uint64_t seed) { return CosineMlp::init(seed); });
  }
}

inline ReferenceSolution resolve_reference(const ExperimentConfig& cfg,
                                           const DiscreteEnvSpec& spec) {
  if (cfg.reference.path) {
    ReferenceSolution ref;
    io_guard([&] {
      ref = load_reference_csv(*cfg.reference.path, ReferenceSolution::Kind::ExactTabular);
    });
    return ref;
  }
  if (cfg.reference.kind == "oracle")
    throw ConfigError("oracle references are for continuous environments; use exact or auto");
  return build_reference(spec);
}

inline ReferenceSolution resolve_reference(const ExperimentConfig& cfg,
                                           const ContinuousEnvSpec& spec) {
  if (cfg.reference.path) {
    ReferenceSolution ref;
    io_guard([&] {
      ref = load_reference_csv(*cfg.reference.path, ReferenceSolution::Kind::TrainedOracle);
    });
    return ref;
  }
  if (cfg.reference.kind == "exact")
    throw ConfigError("exact references exist only for discrete environments");
  OracleReferenceConfig oracle;
  oracle.trajectory_length = cfg.reference.trajectory_length;
  oracle.tau = cfg.reference.tau;
  oracle.batch_size = cfg.reference.batch_size;
  oracle.epochs = cfg.reference.epochs;
  oracle.seed = cfg.reference.seed;
  oracle.theta_seed = cfg.reference.theta_seed;
  return build_reference(spec, oracle);
}

inline TrainConfig trainer_config(const ExperimentConfig& cfg, EstimatorKind kind) {
  TrainConfig tc;
  tc.estimator = kind;
  tc.tau = cfg.trainer.tau;
  tc.batch_size = cfg.trainer.batch_size;
  tc.epochs = cfg.trainer.epochs;
  tc.seed = cfg.master_seed;
  tc.eval_every = cfg.trainer.eval_every;
  tc.beta = cfg.trainer.beta;
  return tc;
}

struct RunReport {
  std::string name;
  EstimatorKind estimator = EstimatorKind::SampleCloning;
  ErrorTrace trace;
  bool diverged = false;
  bool converged = false;
};

// Trains one estimator on a shared trajectory/reference and writes the run's
// artifacts into dir. Divergence is reported, not rethrown, so comparison
// tables can include stalled runs.
template <class State, class Approx, class MakeApprox>
RunReport execute_run(const ExperimentConfig& cfg, const EnvHandle<State>& env,
                      const Trajectory<State>& traj, const ReferenceSolution& ref,
                      const std::string& name, EstimatorKind kind,
                      std::optional<std::uint64_t> dual_seed, const MakeApprox& make_approx,
                      Approx approx, const std::filesystem::path& dir) {
  RunReport report;
  report.name = name;
  report.estimator = kind;
  io_guard([&] { std::filesystem::create_directories(dir); });

  std::optional<Approx> dual;
  if (kind == EstimatorKind::PrimalDual)
    dual = make_approx(dual_seed.value_or(cfg.trainer.dual_seed));

  const TrainConfig tc = trainer_config(cfg, kind);
  try {
    auto result = train(env, traj, std::move(approx), std::move(dual), tc, &ref);
    approx = std::move(result.approx);
    report.trace = std::move(result.trace);
  } catch (DivergedError& e) {
    report.trace = std::move(e.trace);
    report.diverged = true;
  }
  report.converged = !report.diverged && !report.trace.relative.empty() &&
                     report.trace.final_relative() <= kConvergenceRelError;

  io_guard([&] {
    write_error_trace_csv(dir / "error_trace.csv", report.trace);
    if (!report.diverged) {
      write_value_profile_csv(dir / "value_profile.csv", approx, ref);
      const char* kind_name =
          cfg.approximator.kind == ApproximatorConfig::Kind::Tabular ? "tabular" : "mlp";
      save_params(dir / "checkpoint.txt", kind_name, approx.params(), cfg.approximator.init_seed);
    }
  });
  return report;
}

inline double trace_error_at(const ErrorTrace& trace, std::int64_t step) {
  double value = trace.errors.front();
  for (std::size_t k = 0; k < trace.steps.size(); ++k)
    if (trace.steps[k] <= step) value = trace.errors[k];
  return value;
}

inline void write_summary_csv(const std::filesystem::path& path,
                              const std::vector<RunReport>& reports, std::int64_t matched_step,
                              std::ostream& log) {
  std::vector<const RunReport*> ordered;
  for (const auto& r : reports) ordered.push_back(&r);
  std::sort(ordered.begin(), ordered.end(), [](const RunReport* a, const RunReport* b) {
    if (a->diverged != b->diverged) return !a->diverged;
    return a->trace.final_relative() < b->trace.final_relative();
  });
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "name,estimator,final_step,final_error,final_rel_error,error_at_matched_step,"
         "matched_step,converged,diverged\n";
  log << "compare (matched step " << matched_step << "):\n";
  for (const RunReport* r : ordered) {
    const double e0 = r->trace.errors.front();
    const double matched_error = trace_error_at(r->trace, matched_step);
    out << r->name << ',' << to_string(r->estimator) << ',' << r->trace.steps.back() << ','
        << detail::format_double(r->trace.final_error()) << ','
        << detail::format_double(r->trace.final_relative()) << ','
        << detail::format_double(matched_error) << ',' << matched_step << ','
        << (r->converged ? 1 : 0) << ',' << (r->diverged ? 1 : 0) << '\n';
    log << "  " << r->name << ": final rel error " << r->trace.final_relative()
        << (r->converged ? "  [converged]" : "") << (r->diverged ? "  [diverged]" : "")
        << "  (rel at matched step " << (e0 > 0 ? matched_error / e0 : matched_error) << ")\n";
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace detail_cmd

// simulate: record one trajectory to CSV.
inline int cmd_simulate(const CliOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = detail_cmd::load_single_config(opts);
  const auto dir = detail_cmd::prepare_out_dir(cfg, opts);
  detail_cmd::Timer timer;
  if (cfg.environment.kind == EnvKind::Discrete) {
    const auto spec = cfg.environment.discrete_spec();
    const auto traj = simulate(spec, detail_cmd::initial_state<DiscreteEnvSpec>(cfg),
                               cfg.trainer.trajectory_length, cfg.master_seed);
    detail_cmd::io_guard([&] { save_trajectory_csv(dir / "trajectory.csv", traj); });
  } else {
    const auto spec = cfg.environment.continuous_spec();
    const auto traj = simulate(spec, detail_cmd::initial_state<ContinuousEnvSpec>(cfg),
                               cfg.trainer.trajectory_length, cfg.master_seed);
    detail_cmd::io_guard([&] { save_trajectory_csv(dir / "trajectory.csv", traj); });
  }
  RunManifest manifest;
  manifest.command = "simulate";
  manifest.config_digest = content_digest(serialize_config(cfg));
  manifest.input_digests.emplace_back("config", file_digest(opts.config_paths.front()));
  manifest.duration_seconds = timer.seconds();
  manifest.outputs = {"trajectory.csv"};
  detail_cmd::io_guard([&] { write_manifest(dir / "manifest.json", manifest); });
  log << "simulate: wrote " << (dir / "trajectory.csv").string() << "\n";
  return kExitOk;
}

// solve-exact: direct Bellman solve for the discrete chain.
inline int cmd_solve_exact(const CliOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = detail_cmd::load_single_config(opts);
  if (cfg.environment.kind != EnvKind::Discrete)
    throw ConfigError("exact solve unavailable for continuous environments");
  const auto dir = detail_cmd::prepare_out_dir(cfg, opts);
  detail_cmd::Timer timer;
  const ReferenceSolution ref = build_reference(cfg.environment.discrete_spec());
  detail_cmd::io_guard([&] { write_reference_csv(dir / "value_exact.csv", ref); });
  RunManifest manifest;
  manifest.command = "solve-exact";
  manifest.config_digest = content_digest(serialize_config(cfg));
  manifest.input_digests.emplace_back("config", file_digest(opts.config_paths.front()));
  manifest.duration_seconds = timer.seconds();
  manifest.outputs = {"value_exact.csv"};
  detail_cmd::io_guard([&] { write_manifest(dir / "manifest.json", manifest); });
  log << "solve-exact: wrote " << (dir / "value_exact.csv").string() << "\n";
  return kExitOk;
}

// train: one estimator, full artifact set. Exit code 3 on divergence.
inline int cmd_train(const CliOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = detail_cmd::load_single_config(opts);
  const EstimatorKind kind = parse_estimator(cfg.trainer.estimator);
  if (is_oracle(kind) && !opts.allow_oracle)
    throw ConfigError(
        "estimator 'uncorrelated' uses model access; pass --allow-oracle to permit it");
  const auto dir = detail_cmd::prepare_out_dir(cfg, opts);
  detail_cmd::Timer timer;

  bool diverged = false;
  detail_cmd::dispatch_experiment(cfg, [&](const auto& spec, const auto& make_approx) {
    using Spec = std::decay_t<decltype(spec)>;
    if constexpr (std::is_same_v<Spec, ContinuousEnvSpec>) {
      const auto diag = eta_diagnostic(detail_cmd::trainer_config(cfg, kind), spec);
      if (diag.warn) log << "warning: " << diag.message << "\n";
    }
    const auto env = make_env_handle(spec);
    const auto traj = simulate(spec, detail_cmd::initial_state<Spec>(cfg),
                               cfg.trainer.trajectory_length, cfg.master_seed);
    const ReferenceSolution ref = detail_cmd::resolve_reference(cfg, spec);
    detail_cmd::io_guard([&] { write_reference_csv(dir / "reference_profile.csv", ref); });
    const auto report =
        detail_cmd::execute_run(cfg, env, traj, ref, "train", kind, std::nullopt, make_approx,
                                make_approx(cfg.approximator.init_seed), dir);
    diverged = report.diverged;
    log << "train[" << to_string(kind) << "]: final rel error "
        << (report.trace.relative.empty() ? 0.0 : report.trace.final_relative())
        << (report.diverged ? " (diverged)" : "") << "\n";
  });
  if (diverged) return kExitDiverged;

  RunManifest manifest;
  manifest.command = "train";
  manifest.config_digest = content_digest(serialize_config(cfg));
  manifest.input_digests.emplace_back("config", file_digest(opts.config_paths.front()));
  manifest.duration_seconds = timer.seconds();
  manifest.outputs = {"error_trace.csv", "value_profile.csv", "checkpoint.txt",
                      "reference_profile.csv"};
  detail_cmd::io_guard([&] { write_manifest(dir / "manifest.json", manifest); });
  return kExitOk;
}

// compare: several estimators on a shared environment, trajectory, seed and
// reference. Accepts one config carrying a runs[] array, or several
// single-run configs that agree on everything but the estimator.
inline int cmd_compare(const CliOptions& opts, std::ostream& log) {
  if (opts.config_paths.empty()) throw ConfigError("compare needs at least one --config");
  std::vector<ExperimentConfig> configs;
  for (const auto& path : opts.config_paths) {
    ExperimentConfig cfg;
    detail_cmd::io_guard([&] { cfg = load_config(path); });
    if (opts.seed_override) cfg.master_seed = *opts.seed_override;
    configs.push_back(std::move(cfg));
  }
  ExperimentConfig base = configs.front();
  std::vector<RunSpec> runs;
  if (configs.size() == 1) {
    runs = base.runs;
  } else {
    for (std::size_t c = 0; c < configs.size(); ++c) {
      const auto& cfg = configs[c];
      if (!cfg.runs.empty())
        throw ConfigError("multi-config compare members must not carry a runs[] array");
      if (cfg.environment != base.environment)
        throw ConfigError("compare members disagree on the environment");
      if (cfg.master_seed != base.master_seed)
        throw ConfigError("compare members disagree on the master seed");
      if (cfg.approximator != base.approximator)
        throw ConfigError("compare members disagree on the approximator");
      TrainerBlock normalized = cfg.trainer;
      normalized.estimator = base.trainer.estimator;
      normalized.dual_seed = base.trainer.dual_seed;
      if (normalized != base.trainer)
        throw ConfigError("compare members disagree on trainer hyperparameters");
      RunSpec run;
      run.estimator = cfg.trainer.estimator;
      run.dual_seed = cfg.trainer.dual_seed;
      run.name = std::filesystem::path(opts.config_paths[c]).stem().string();
      runs.push_back(std::move(run));
    }
  }
  if (runs.size() < 2) throw ConfigError("compare needs at least two runs");
  for (const auto& run : runs)
    if (is_oracle(parse_estimator(run.estimator)) && !opts.allow_oracle)
      throw ConfigError("comparison includes the 'uncorrelated' oracle; pass --allow-oracle");

  const auto dir = detail_cmd::prepare_out_dir(base, opts);
  detail_cmd::Timer timer;
  std::vector<detail_cmd::RunReport> reports;
  detail_cmd::dispatch_experiment(base, [&](const auto& spec, const auto& make_approx) {
    using Spec = std::decay_t<decltype(spec)>;
    const auto env = make_env_handle(spec);
    const auto traj = simulate(spec, detail_cmd::initial_state<Spec>(base),
                               base.trainer.trajectory_length, base.master_seed);
    const ReferenceSolution ref = detail_cmd::resolve_reference(base, spec);
    detail_cmd::io_guard([&] { write_reference_csv(dir / "reference_profile.csv", ref); });
    const auto initial = make_approx(base.approximator.init_seed);
    for (const auto& run : runs) {
      reports.push_back(detail_cmd::execute_run(base, env, traj, ref, run.name,
                                                parse_estimator(run.estimator), run.dual_seed,
                                                make_approx, initial, dir / run.name));
    }
  });

  std::int64_t matched_step = reports.front().trace.steps.back();
  for (const auto& r : reports) matched_step = std::min(matched_step, r.trace.steps.back());
  detail_cmd::io_guard(
      [&] { detail_cmd::write_summary_csv(dir / "summary.csv", reports, matched_step, log); });

  RunManifest manifest;
  manifest.command = "compare";
  manifest.config_digest = content_digest(serialize_config(base));
  for (std::size_t c = 0; c < opts.config_paths.size(); ++c)
    manifest.input_digests.emplace_back("config" + std::to_string(c),
                                        file_digest(opts.config_paths[c]));
  manifest.duration_seconds = timer.seconds();
  manifest.outputs = {"summary.csv", "reference_profile.csv"};
  for (const auto& run : runs) manifest.outputs.push_back(run.name + "/error_trace.csv");
  detail_cmd::io_guard([&] { write_manifest(dir / "manifest.json", manifest); });
  return kExitOk;
}

// bias-sweep: gap magnitude per eps plus the fitted log-log slope.
inline int cmd_bias_sweep(const CliOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = detail_cmd::load_single_config(opts);
  if (cfg.environment.kind != EnvKind::Continuous)
    throw ConfigError("bias-sweep requires a continuous environment");
  const auto dir = detail_cmd::prepare_out_dir(cfg, opts);
  detail_cmd::Timer timer;
  const auto spec = cfg.environment.continuous_spec();
  const CosineMlp theta = CosineMlp::init(cfg.bias_sweep.theta_seed);
  const SweepResult result =
      epsilon_sweep(spec, theta, cfg.bias_sweep.eps_list, cfg.bias_sweep.n_outer,
                    cfg.bias_sweep.n_inner, cfg.master_seed);
  detail_cmd::io_guard([&] {
    write_sweep_csv(dir / "sweep.csv", result);
    write_slope_json(dir / "slope.json", result);
  });
  RunManifest manifest;
  manifest.command = "bias-sweep";
  manifest.config_digest = content_digest(serialize_config(cfg));
  manifest.input_digests.emplace_back("config", file_digest(opts.config_paths.front()));
  manifest.duration_seconds = timer.seconds();
  manifest.outputs = {"sweep.csv", "slope.json"};
  detail_cmd::io_guard([&] { write_manifest(dir / "manifest.json", manifest); });
  log << "bias-sweep: fitted log-log slope " << result.slope << "\n";
  return kExitOk;
}

// Fitter self-test on a synthetic exact power law gap = c * eps^2.
inline int cmd_bias_sweep_selftest(std::ostream& log) {
  SweepResult synthetic;
  for (const double eps : {0.2, 0.1, 0.05, 0.025})
    synthetic.points.push_back({eps, 0.37 * eps * eps, 0.0});
  fit_loglog_slope(synthetic);
  const double err = std::abs(synthetic.slope - 2.0);
  log << "bias-sweep self-test: slope " << synthetic.slope << " (|slope - 2| = " << err << ")\n";
  return err <= 1e-9 ? kExitOk : 1;
}

// Exception-to-exit-code mapping shared by the binary and the tests.
template <class Fn>
int run_command(Fn&& fn, std::ostream& log) {
  try {
    return fn();
  } catch (const DivergedError& e) {
    log << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const IoError& e) {
    log << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    log << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

}  // namespace bff
