// Monte-Carlo estimation of the true objective J(theta), the borrowed-future
// surrogate Jhat(theta), and their gap, plus an epsilon sweep that measures
// how the gap scales with the dynamics time step.
//
// J(theta)    = E[ 1/2 (E[f | s])^2 ]
// Jhat(theta) = 1/2 E[ f(s, s_{m+1}) f(s, s + (s_{m+2} - s_{m+1})) ]
//
// The sweep's gap estimator couples both quantities through common random
// numbers: per inner draw, one normal pair (Z1, Z2) produces the observed
// next state (Z1), the borrowed-future state (Z1, Z2), and a genuinely
// independent next state (Z2). The per-draw difference of the two products
// is itself O(eps^2), so the gap is resolved far above its Monte-Carlo noise
// at desk-scale sample counts. Both factors follow their exact laws, so the
// difference is an unbiased estimate of Jhat - J.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bff/env.hpp"
#include "bff/residual.hpp"

namespace bff {

inline constexpr std::int64_t kBiasBurnInLength = 100'000;

struct BiasEstimate {
  double j_value = 0.0;
  double jhat_value = 0.0;
  double gap = 0.0;  // jhat_value - j_value
  double std_err = 0.0;
  int n_outer = 0;
  int n_inner = 0;
};

namespace detail {

template <class Spec>
struct SpecTraits;

template <>
struct SpecTraits<ContinuousEnvSpec> {
  using State = double;
  static State default_s0() { return 1.0; }
  static double reward(const ContinuousEnvSpec& spec, double s) { return spec.reward_at(s); }
};

template <>
struct SpecTraits<DiscreteEnvSpec> {
  using State = int;
  static State default_s0() { return 0; }
  static double reward(const DiscreteEnvSpec& spec, int i) { return spec.reward_vector.at(i); }
};

// Evenly strided states from a burn-in trajectory, approximating the
// stationary measure.
template <class Spec>
std::vector<typename SpecTraits<Spec>::State> outer_states(const Spec& spec, int n_outer,
                                                           std::uint64_t seed) {
  if (n_outer < 1) throw std::invalid_argument("n_outer must be positive");
  if (n_outer > kBiasBurnInLength)
    throw std::invalid_argument("n_outer exceeds the burn-in trajectory length");
  const auto traj = simulate(spec, SpecTraits<Spec>::default_s0(), kBiasBurnInLength, seed);
  const std::int64_t stride = kBiasBurnInLength / n_outer;
  std::vector<typename SpecTraits<Spec>::State> states(n_outer);
  for (int t = 0; t < n_outer; ++t) states[t] = traj.states[stride * (t + 1) - 1];
  return states;
}

}  // namespace detail

// Monte-Carlo estimate of J(theta). The inner conditional expectation is
// squared with the all-distinct-pairs U-statistic
//   ((sum f)^2 - sum f^2) / (n (n - 1)),
// which is unbiased for (E[f | s])^2, so the O(1/n_inner) bias of the naive
// squared mean does not contaminate eps-scaling measurements.
template <class Spec, class Approx>
double estimate_J(const Spec& spec, const Approx& approx, int n_outer, int n_inner,
                  std::uint64_t seed) {
  if (n_inner < 2)
    throw std::invalid_argument("estimate_J needs n_inner >= 2 (pair estimator undefined)");
  const auto states = detail::outer_states(spec, n_outer, seed);
  RngStream rng(seed, streams::kBiasInner);
  double acc = 0.0;
  for (const auto s : states) {
    const double v0 = approx.value(s);
    const double r = detail::SpecTraits<Spec>::reward(spec, s);
    double sum_f = 0.0, sum_f2 = 0.0;
    for (int t = 0; t < n_inner; ++t) {
      const auto s_next = resample_next(spec, s, rng);
      const double f = r + spec.gamma * approx.value(s_next) - v0;
      sum_f += f;
      sum_f2 += f * f;
    }
    const double pair_mean =
        (sum_f * sum_f - sum_f2) / (static_cast<double>(n_inner) * (n_inner - 1));
    acc += 0.5 * pair_mean;
  }
  return acc / n_outer;
}

// Monte-Carlo estimate of Jhat(theta): the average of
// 1/2 f(s_m, s_{m+1}) f(s_m, s_m + (s_{m+2} - s_{m+1})) over consecutive
// windows of a simulated trajectory -- exactly the quantity the BFF
// algorithms descend.
template <class Approx>
double estimate_Jhat(const ContinuousEnvSpec& spec, const Approx& approx, int n_samples,
                     std::uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("n_samples must be positive");
  const auto traj =
      simulate(spec, 1.0, kBiasBurnInLength + n_samples + 1, seed);
  double acc = 0.0;
  for (int t = 0; t < n_samples; ++t) {
    const std::int64_t m = kBiasBurnInLength + t - 1;
    TransitionWindow<double> w{traj.states[m], traj.states[m + 1], traj.states[m + 2],
                               spec.reward_at(traj.states[m])};
    const double v0 = approx.value(w.s_m);
    const double f1 = w.r_m + spec.gamma * approx.value(w.s_m1) - v0;
    const double f2 = w.r_m + spec.gamma * approx.value(bff_next_state(w)) - v0;
    acc += 0.5 * f1 * f2;
  }
  return acc / n_samples;
}

// Coupled estimate of (J, Jhat, Jhat - J); see the header comment. std_err is
// the standard error of the gap across outer states.
template <class Approx>
BiasEstimate estimate_bias(const ContinuousEnvSpec& spec, const Approx& approx, int n_outer,
                           int n_inner, std::uint64_t seed) {
  if (n_inner < 1) throw std::invalid_argument("n_inner must be positive");
  const auto states = detail::outer_states(spec, n_outer, seed);
  RngStream rng(seed, streams::kBiasInner);
  const double sqrt_eps = std::sqrt(spec.epsilon);
  const double gamma = spec.gamma;

  std::vector<double> gap_per_state(states.size());
  double jhat_acc = 0.0;
  for (std::size_t o = 0; o < states.size(); ++o) {
    const double s = states[o];
    const double r = spec.reward_at(s);
    const double v0 = approx.value(s);
    const double a = spec.drift_at(s);
    const double sig = spec.diffusion_at(s);
    double jhat_state = 0.0, gap_state = 0.0;
    for (int t = 0; t < n_inner; ++t) {
      const double z1 = rng.next_normal();
      const double z2 = rng.next_normal();
      const double s1 = wrap_state(s + a * spec.epsilon + sig * sqrt_eps * z1);
      const double f1 = r + gamma * approx.value(s1) - v0;
      // borrowed-future state: the increment out of s1, re-rooted at s
      const double s2 =
          wrap_state(s1 + spec.drift_at(s1) * spec.epsilon + spec.diffusion_at(s1) * sqrt_eps * z2);
      const double s_bff = wrap_state(s + circular_diff(s2, s1));
      // genuinely independent second draw from s, sharing Z2 with the
      // borrowed one
      const double s_ind = wrap_state(s + a * spec.epsilon + sig * sqrt_eps * z2);
      const double f2_bff = r + gamma * approx.value(s_bff) - v0;
      const double f2_ind = r + gamma * approx.value(s_ind) - v0;
      jhat_state += 0.5 * f1 * f2_bff;
      gap_state += 0.5 * f1 * (f2_bff - f2_ind);
    }
    jhat_acc += jhat_state / n_inner;
    gap_per_state[o] = gap_state / n_inner;
  }

  BiasEstimate est;
  est.n_outer = static_cast<int>(states.size());
  est.n_inner = n_inner;
  est.jhat_value = jhat_acc / est.n_outer;
  double gap_mean = 0.0;
  for (const double g : gap_per_state) gap_mean += g;
  gap_mean /= est.n_outer;
  est.gap = gap_mean;
  est.j_value = est.jhat_value - est.gap;
  if (est.n_outer > 1) {
    double var = 0.0;
    for (const double g : gap_per_state) var += (g - gap_mean) * (g - gap_mean);
    var /= static_cast<double>(est.n_outer - 1);
    est.std_err = std::sqrt(var / est.n_outer);
  }
  return est;
}

struct SweepPoint {
  double eps = 0.0;
  double gap = 0.0;
  double std_err = 0.0;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  double slope = 0.0;
  double intercept = 0.0;
};

// Least-squares fit of log|gap| against log eps.
inline void fit_loglog_slope(SweepResult& result) {
  const std::size_t n = result.points.size();
  if (n < 2) throw std::invalid_argument("slope fit needs at least two points");
  double mx = 0.0, my = 0.0;
  for (const auto& p : result.points) {
    if (p.gap == 0.0) throw std::runtime_error("zero gap cannot enter a log-log fit");
    mx += std::log(p.eps);
    my += std::log(std::abs(p.gap));
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& p : result.points) {
    const double dx = std::log(p.eps) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(std::abs(p.gap)) - my);
  }
  result.slope = sxy / sxx;
  result.intercept = my - result.slope * mx;
}

// |gap(eps)| for each eps in the list, plus the fitted log-log slope. Faults
// when a point's gap is statistically indistinguishable from zero.
template <class Approx>
SweepResult epsilon_sweep(const ContinuousEnvSpec& base, const Approx& approx,
                          std::span<const double> eps_list, int n_outer, int n_inner,
                          std::uint64_t seed) {
  if (eps_list.size() < 3)
    throw std::invalid_argument("epsilon sweep needs at least 3 distinct eps values");
  SweepResult result;
  for (const double eps : eps_list) {
    if (!(eps > 0.0)) throw std::invalid_argument("eps values must be positive");
    ContinuousEnvSpec spec = base;
    spec.epsilon = eps;
    const BiasEstimate est = estimate_bias(spec, approx, n_outer, n_inner, seed);
    if (std::abs(est.gap) < 3.0 * est.std_err)
      throw std::runtime_error(
          "gap at eps=" + std::to_string(eps) +
          " is indistinguishable from Monte-Carlo noise; increase n_samples");
    result.points.push_back({eps, est.gap, est.std_err});
  }
  fit_loglog_slope(result);
  return result;
}

inline void write_sweep_csv(const std::filesystem::path& path, const SweepResult& result) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "eps,gap,std_err,abs_gap\n";
  for (const auto& p : result.points)
    out << detail::format_double(p.eps) << ',' << detail::format_double(p.gap) << ','
        << detail::format_double(p.std_err) << ',' << detail::format_double(std::abs(p.gap))
        << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline void write_slope_json(const std::filesystem::path& path, const SweepResult& result) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "{\n  \"slope\": " << detail::format_double(result.slope)
      << ",\n  \"intercept\": " << detail::format_double(result.intercept)
      << ",\n  \"num_points\": " << result.points.size() << "\n}\n";
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace bff
