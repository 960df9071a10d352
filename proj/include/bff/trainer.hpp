// Deterministic SGD training over a recorded trajectory: window extraction,
// seeded permutation into full minibatches, parameter updates for every
// estimator kind, and an error trace against a reference value function.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bff/approximator.hpp"
#include "bff/env.hpp"
#include "bff/residual.hpp"
#include "bff/tabular_grad.hpp"

namespace bff {

struct TrainConfig {
  EstimatorKind estimator = EstimatorKind::SampleCloning;
  double tau = 0.1;
  int batch_size = 1;
  int epochs = 1;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 100;
  double beta = 0.5;  // dual step size, primal_dual only

  // Learning-rate-to-batch-size ratio; diagnostic only.
  double eta() const { return tau / batch_size; }
};

struct ErrorTrace {
  std::vector<std::int64_t> steps;
  std::vector<double> errors;
  std::vector<double> relative;
  bool diverged = false;

  void append(std::int64_t step, double e) {
    steps.push_back(step);
    errors.push_back(e);
    relative.push_back(errors.front() > 0.0 ? e / errors.front() : e);
  }

  double final_error() const { return errors.back(); }
  double final_relative() const { return relative.back(); }
};

struct DivergedError : std::runtime_error {
  ErrorTrace trace;
  explicit DivergedError(ErrorTrace t)
      : std::runtime_error("training diverged (error exceeded 1e6 x e0)"), trace(std::move(t)) {}
};

// Reference value function on a fixed evaluation grid: all n states for the
// discrete chain, 256 uniform points on (0, 2pi] for the continuous one.
struct ReferenceSolution {
  enum class Kind { ExactTabular, TrainedOracle };
  Kind kind = Kind::ExactTabular;
  std::vector<double> grid;    // state per grid point (indices stored as doubles)
  std::vector<double> values;  // V*(grid point)
};

inline constexpr int kContinuousGridSize = 256;

inline std::vector<double> continuous_eval_grid() {
  std::vector<double> grid(kContinuousGridSize);
  for (int g = 0; g < kContinuousGridSize; ++g)
    grid[g] = kTwoPi * (g + 1) / kContinuousGridSize;
  return grid;
}

// e_k = sqrt( sum_grid (V(s; theta) - V*(s))^2 ), the plain Euclidean norm on
// the evaluation grid.
template <class Approx>
double evaluate_error(const Approx& approx, const ReferenceSolution& ref) {
  using State = typename Approx::StateT;
  double sum = 0.0;
  for (std::size_t g = 0; g < ref.grid.size(); ++g) {
    const double diff = approx.value(static_cast<State>(ref.grid[g])) - ref.values[g];
    sum += diff * diff;
  }
  return std::sqrt(sum);
}

// Seeded permutation of the usable window indices {0..T-2}, chunked into full
// batches of size M; the partial tail is dropped. The usable set is the same
// whether or not the estimator needs s_{m+2} (m + 2 <= T holds for every
// m <= T-2), which keeps paired runs on identical index sets.
inline std::vector<std::vector<std::int64_t>> make_batch_indices(std::int64_t transitions,
                                                                 int batch_size,
                                                                 bool /*needs_future*/,
                                                                 std::uint64_t seed) {
  const std::int64_t usable = transitions - 1;
  if (batch_size <= 0) throw std::invalid_argument("batch size must be positive");
  const std::int64_t num_batches = usable / batch_size;
  if (num_batches <= 0) throw std::invalid_argument("trajectory too short for one full batch");
  std::vector<std::int64_t> order(usable);
  for (std::int64_t m = 0; m < usable; ++m) order[m] = m;
  RngStream rng(seed, streams::kShuffle);
  for (std::int64_t m = usable - 1; m > 0; --m)
    std::swap(order[m], order[rng.next_below(static_cast<std::uint64_t>(m + 1))]);
  std::vector<std::vector<std::int64_t>> batches(num_batches);
  for (std::int64_t b = 0; b < num_batches; ++b)
    batches[b].assign(order.begin() + b * batch_size, order.begin() + (b + 1) * batch_size);
  return batches;
}

template <class State>
std::vector<std::vector<std::int64_t>> make_batches(const Trajectory<State>& traj,
                                                    int batch_size, bool needs_future,
                                                    std::uint64_t seed) {
  return make_batch_indices(traj.transition_count(), batch_size, needs_future, seed);
}

template <class State>
std::vector<TransitionWindow<State>> extract_windows(const Trajectory<State>& traj,
                                                     const EnvHandle<State>& env) {
  const std::int64_t usable = traj.transition_count() - 1;
  if (usable < 1) throw std::invalid_argument("trajectory too short (need >= 3 states)");
  std::vector<TransitionWindow<State>> windows(usable);
  for (std::int64_t m = 0; m < usable; ++m) {
    windows[m].s_m = traj.states[m];
    windows[m].s_m1 = traj.states[m + 1];
    windows[m].s_m2 = traj.states[m + 2];
    windows[m].r_m = env.reward_at(traj.states[m]);
  }
  return windows;
}

template <class Approx>
struct TrainResult {
  Approx approx;
  ErrorTrace trace;
};

// Runs epochs x floor(usable/M) updates of
//   theta <- theta - tau * (batch gradient estimate)
// (or the primal-dual step), recording the error at step 0 and every
// eval_every steps. Fully deterministic given the config seed. Passing a null
// reference skips error evaluation (used when building references).
template <class State, class Approx>
TrainResult<Approx> train(const EnvHandle<State>& env, const Trajectory<State>& traj,
                          Approx approx, std::optional<Approx> dual, const TrainConfig& cfg,
                          const ReferenceSolution* ref) {
  if (cfg.estimator == EstimatorKind::PrimalDual && !dual)
    throw std::invalid_argument("primal_dual training needs a dual approximator");
  if (is_oracle(cfg.estimator) && !env.resample)
    throw std::invalid_argument("uncorrelated training needs model access");

  const auto windows = extract_windows(traj, env);
  RngStream resample_rng(cfg.seed, streams::kResample);

  ErrorTrace trace;
  const auto record = [&](std::int64_t step) {
    if (!ref) return;
    const double e = evaluate_error(approx, *ref);
    trace.append(step, e);
    if (!std::isfinite(e) || e > 1e6 * trace.errors.front()) {
      trace.diverged = true;
      throw DivergedError(trace);
    }
  };
  record(0);

  std::vector<TransitionWindow<State>> batch(cfg.batch_size);
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = make_batch_indices(traj.transition_count(), cfg.batch_size,
                                            needs_future(cfg.estimator),
                                            cfg.seed + static_cast<std::uint64_t>(epoch));
    for (const auto& indices : batches) {
      for (std::size_t t = 0; t < indices.size(); ++t) batch[t] = windows[indices[t]];
      if (cfg.estimator == EstimatorKind::PrimalDual) {
        primal_dual_step(approx, *dual, std::span<const TransitionWindow<State>>(batch),
                         env, cfg.tau, cfg.beta);
      } else {
        const GradientEstimate est = estimate_gradient(
            cfg.estimator, approx, std::span<const TransitionWindow<State>>(batch), env,
            &resample_rng);
        auto params = approx.params();
        for (std::size_t i = 0; i < params.size(); ++i)
          params[i] -= cfg.tau * est.grad[i];
      }
      ++step;
      if (cfg.eval_every > 0 && step % cfg.eval_every == 0) record(step);
    }
  }
  if (ref && trace.steps.back() != step) record(step);
  return TrainResult<Approx>{std::move(approx), std::move(trace)};
}

inline ReferenceSolution build_reference(const DiscreteEnvSpec& spec) {
  ReferenceSolution ref;
  ref.kind = ReferenceSolution::Kind::ExactTabular;
  ref.values = tabular::exact_value(spec);
  ref.grid.resize(spec.n);
  for (int i = 0; i < spec.n; ++i) ref.grid[i] = i;
  return ref;
}

// Desk-scale oracle reference for the continuous environment: train the
// uncorrelated estimator on its own long trajectory and freeze the resulting
// network on the evaluation grid.
struct OracleReferenceConfig {
  std::int64_t trajectory_length = 1'000'000;
  double tau = 0.01;
  int batch_size = 1000;
  int epochs = 3;
  std::uint64_t seed = 9001;
  std::uint64_t theta_seed = 9002;
  double s0 = 1.0;
};

inline ReferenceSolution build_reference(const ContinuousEnvSpec& spec,
                                         const OracleReferenceConfig& cfg) {
  const auto traj = simulate(spec, cfg.s0, cfg.trajectory_length, cfg.seed);
  TrainConfig tc;
  tc.estimator = EstimatorKind::Uncorrelated;
  tc.tau = cfg.tau;
  tc.batch_size = cfg.batch_size;
  tc.epochs = cfg.epochs;
  tc.seed = cfg.seed;
  tc.eval_every = 0;
  auto result = train(make_env_handle(spec), traj, CosineMlp::init(cfg.theta_seed),
                      std::nullopt, tc, nullptr);
  ReferenceSolution ref;
  ref.kind = ReferenceSolution::Kind::TrainedOracle;
  ref.grid = continuous_eval_grid();
  ref.values.resize(ref.grid.size());
  for (std::size_t g = 0; g < ref.grid.size(); ++g)
    ref.values[g] = result.approx.value(ref.grid[g]);
  return ref;
}

// The BFF bias bound degrades like eps^2 / eta; warn when that ratio is
// large. Informational: the reference experiments themselves run at
// eps^2/eta = 100.
struct EtaDiagnostic {
  double epsilon = 0.0;
  double eta = 0.0;
  double ratio = 0.0;
  bool warn = false;
  std::string message;
};

inline EtaDiagnostic eta_diagnostic(const TrainConfig& cfg, const ContinuousEnvSpec& spec) {
  EtaDiagnostic diag;
  diag.epsilon = spec.epsilon;
  diag.eta = cfg.eta();
  diag.ratio = diag.eta > 0.0 ? spec.epsilon * spec.epsilon / diag.eta : 0.0;
  diag.warn = diag.ratio > 1.0;
  if (diag.warn)
    diag.message = "eps^2/eta = " + std::to_string(diag.ratio) +
                   " > 1: the BFF bias bound degrades when eta = tau/M is driven "
                   "far below eps^2; consider a larger learning rate or smaller batch";
  else
    diag.message = "eps^2/eta = " + std::to_string(diag.ratio) + ": ok";
  return diag;
}

inline void write_error_trace_csv(const std::filesystem::path& path, const ErrorTrace& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "step,error,rel_error\n";
  for (std::size_t k = 0; k < trace.steps.size(); ++k)
    out << trace.steps[k] << ',' << detail::format_double(trace.errors[k]) << ','
        << detail::format_double(trace.relative[k]) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

template <class Approx>
void write_value_profile_csv(const std::filesystem::path& path, const Approx& approx,
                             const ReferenceSolution& ref) {
  using State = typename Approx::StateT;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "s,v_approx,v_reference\n";
  for (std::size_t g = 0; g < ref.grid.size(); ++g)
    out << detail::format_double(ref.grid[g]) << ','
        << detail::format_double(approx.value(static_cast<State>(ref.grid[g]))) << ','
        << detail::format_double(ref.values[g]) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline void write_reference_csv(const std::filesystem::path& path, const ReferenceSolution& ref) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "s,v\n";
  for (std::size_t g = 0; g < ref.grid.size(); ++g)
    out << detail::format_double(ref.grid[g]) << ',' << detail::format_double(ref.values[g])
        << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline ReferenceSolution load_reference_csv(const std::filesystem::path& path,
                                            ReferenceSolution::Kind kind) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "s,v")
    throw std::runtime_error("bad reference header in " + path.string());
  ReferenceSolution ref;
  ref.kind = kind;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("bad reference row: " + line);
    ref.grid.push_back(detail::parse_double(line.substr(0, comma)));
    ref.values.push_back(detail::parse_double(line.substr(comma + 1)));
  }
  return ref;
}

}  // namespace bff
