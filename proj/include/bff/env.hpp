// MDP environments for policy evaluation: a one-dimensional SDE-driven chain
// on the periodic interval (0, 2pi] and a discrete nearest-neighbor ring.
// Also exposes the model-access oracles (transition matrix, stationary
// distribution, independent resampling) that only reference code may use.
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bff/rng.hpp"

namespace bff {

inline constexpr double kTwoPi = 6.28318530717958647692528676655900577;

// Wraps s onto the half-open periodic domain (0, 2pi].
inline double wrap_state(double s) {
  double r = std::fmod(s, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  return r == 0.0 ? kTwoPi : r;
}

// Minimal signed circular difference a - b, mapped into (-pi, pi].
inline double circular_diff(double a, double b) {
  double d = std::fmod(a - b, kTwoPi);
  if (d <= -0.5 * kTwoPi) d += kTwoPi;
  if (d > 0.5 * kTwoPi) d -= kTwoPi;
  return d;
}

enum class EnvKind { Continuous, Discrete };

inline const char* to_string(EnvKind k) {
  return k == EnvKind::Continuous ? "continuous" : "discrete";
}

// Named scalar functions over the state. Keeping an id instead of a callable
// makes environment specs value types that serialize and compare cleanly.
enum class FuncKind { Default, Zero, Unit, Const };

struct FuncId {
  FuncKind kind = FuncKind::Default;
  double c = 0.0;

  friend bool operator==(const FuncId&, const FuncId&) = default;

  static FuncId zero() { return {FuncKind::Zero, 0.0}; }
  static FuncId unit() { return {FuncKind::Unit, 0.0}; }
  static FuncId constant(double v) { return {FuncKind::Const, v}; }

  // Textual form used by configs: "default" | "zero" | "unit" | "const:<v>".
  std::string str() const {
    switch (kind) {
      case FuncKind::Default: return "default";
      case FuncKind::Zero: return "zero";
      case FuncKind::Unit: return "unit";
      case FuncKind::Const: {
        char buf[40];
        auto res = std::to_chars(buf, buf + sizeof(buf), c);
        return "const:" + std::string(buf, res.ptr);
      }
    }
    return "default";
  }

  static FuncId parse(const std::string& text) {
    if (text == "default") return {};
    if (text == "zero") return zero();
    if (text == "unit") return unit();
    if (text.rfind("const:", 0) == 0) {
      const std::string num = text.substr(6);
      double v = 0.0;
      auto res = std::from_chars(num.data(), num.data() + num.size(), v);
      if (res.ec != std::errc{} || res.ptr != num.data() + num.size())
        throw std::invalid_argument("bad function id: '" + text + "'");
      return constant(v);
    }
    throw std::invalid_argument("unknown function id: '" + text + "'");
  }
};

// Continuous-state environment: s_{m+1} = s_m + alpha(s_m) eps
// + sigma(s_m) sqrt(eps) Z_m, wrapped onto (0, 2pi]. Defaults are the
// benchmark instance: alpha(s) = 2 sin(s)cos(s), sigma(s) = 1 + cos^2(s),
// eps = 0.1, gamma = 0.9, R(s) = cos(2s) + 1.
struct ContinuousEnvSpec {
  FuncId drift;
  FuncId diffusion;
  FuncId reward;
  double epsilon = 0.1;
  double gamma = 0.9;

  friend bool operator==(const ContinuousEnvSpec&, const ContinuousEnvSpec&) = default;

  double drift_at(double s) const {
    switch (drift.kind) {
      case FuncKind::Default: return 2.0 * std::sin(s) * std::cos(s);
      case FuncKind::Zero: return 0.0;
      case FuncKind::Unit: return 1.0;
      case FuncKind::Const: return drift.c;
    }
    return 0.0;
  }

  double diffusion_at(double s) const {
    switch (diffusion.kind) {
      case FuncKind::Default: {
        const double c = std::cos(s);
        return 1.0 + c * c;
      }
      case FuncKind::Zero: return 0.0;
      case FuncKind::Unit: return 1.0;
      case FuncKind::Const: return diffusion.c;
    }
    return 0.0;
  }

  double reward_at(double s) const {
    switch (reward.kind) {
      case FuncKind::Default: return std::cos(2.0 * s) + 1.0;
      case FuncKind::Zero: return 0.0;
      case FuncKind::Unit: return 1.0;
      case FuncKind::Const: return reward.c;
    }
    return 0.0;
  }

  void validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
    if (!(gamma > 0.0 && gamma < 1.0))
      throw std::invalid_argument("gamma must lie in (0, 1)");
    for (int g = 1; g <= 128; ++g) {
      const double s = kTwoPi * g / 128.0;
      if (!std::isfinite(drift_at(s)) || !std::isfinite(diffusion_at(s)) ||
          !std::isfinite(reward_at(s)))
        throw std::invalid_argument("drift/diffusion/reward not finite on domain");
    }
  }
};

// Discrete-state environment: n states with a row-stochastic transition
// matrix P and a per-state reward vector.
struct DiscreteEnvSpec {
  int n = 0;
  std::vector<double> transition;     // row-major n*n
  std::vector<double> reward_vector;  // length n
  double gamma = 0.9;

  friend bool operator==(const DiscreteEnvSpec&, const DiscreteEnvSpec&) = default;

  double p(int i, int j) const { return transition[static_cast<size_t>(i) * n + j]; }
  double& p(int i, int j) { return transition[static_cast<size_t>(i) * n + j]; }

  // Benchmark ring: P_{i,i+1} = 1/2 - (1/5) sin(2pi i/n),
  // P_{i,i-1} = 1/2 + (1/5) sin(2pi i/n), indices mod n; r_i = 1 + cos(2pi i/n).
  static DiscreteEnvSpec ring(int n = 32, double gamma = 0.9) {
    DiscreteEnvSpec spec;
    spec.n = n;
    spec.gamma = gamma;
    spec.transition.assign(static_cast<size_t>(n) * n, 0.0);
    spec.reward_vector.resize(n);
    for (int i = 0; i < n; ++i) {
      const double angle = kTwoPi * i / n;
      const double up = 0.5 - 0.2 * std::sin(angle);
      spec.p(i, (i + 1) % n) = up;
      spec.p(i, (i + n - 1) % n) = 1.0 - up;
      spec.reward_vector[i] = 1.0 + std::cos(angle);
    }
    return spec;
  }

  void validate() const {
    if (n <= 0) throw std::invalid_argument("n must be positive");
    if (transition.size() != static_cast<size_t>(n) * n ||
        reward_vector.size() != static_cast<size_t>(n))
      throw std::invalid_argument("transition/reward dimensions do not match n");
    if (!(gamma > 0.0 && gamma < 1.0))
      throw std::invalid_argument("gamma must lie in (0, 1)");
    for (int i = 0; i < n; ++i) {
      double row = 0.0;
      for (int j = 0; j < n; ++j) {
        const double pij = p(i, j);
        if (pij < 0.0 || pij > 1.0)
          throw std::invalid_argument("transition entry outside [0, 1]");
        row += pij;
      }
      if (std::abs(row - 1.0) > 1e-12)
        throw std::invalid_argument("transition row " + std::to_string(i) +
                                    " does not sum to 1");
    }
  }
};

// Recorded state sequence s_0..s_T with the seed that regenerates it.
template <class State>
struct Trajectory {
  std::vector<State> states;
  std::uint64_t seed = 0;
  EnvKind kind = EnvKind::Continuous;

  // Number of transitions T (states.size() - 1).
  std::int64_t transition_count() const {
    return static_cast<std::int64_t>(states.size()) - 1;
  }
};

inline double step_continuous(const ContinuousEnvSpec& spec, double s, RngStream& rng) {
  const double z = rng.next_normal();
  const double raw = s + spec.drift_at(s) * spec.epsilon +
                     spec.diffusion_at(s) * std::sqrt(spec.epsilon) * z;
  if (!std::isfinite(raw))
    throw std::runtime_error("step_continuous produced a non-finite state (malformed spec)");
  return wrap_state(raw);
}

// Inverse-CDF draw from row i of P using one uniform variate.
inline int step_discrete(const DiscreteEnvSpec& spec, int i, RngStream& rng) {
  if (i < 0 || i >= spec.n) throw std::invalid_argument("state index out of range");
  const double u = rng.next_double();
  double cum = 0.0;
  for (int j = 0; j < spec.n; ++j) {
    cum += spec.p(i, j);
    if (u < cum) return j;
  }
  if (cum < 1.0 - 1e-12)
    throw std::runtime_error("transition row not normalized");
  return spec.n - 1;  // u landed in the roundoff tail
}

inline Trajectory<double> simulate(const ContinuousEnvSpec& spec, double s0,
                                   std::int64_t length, std::uint64_t seed) {
  if (length < 2) throw std::invalid_argument("trajectory length must be >= 2");
  Trajectory<double> traj;
  traj.seed = seed;
  traj.kind = EnvKind::Continuous;
  traj.states.reserve(length + 1);
  traj.states.push_back(wrap_state(s0));
  RngStream rng(seed, streams::kSimulate);
  for (std::int64_t m = 0; m < length; ++m)
    traj.states.push_back(step_continuous(spec, traj.states.back(), rng));
  return traj;
}

inline Trajectory<int> simulate(const DiscreteEnvSpec& spec, int s0,
                                std::int64_t length, std::uint64_t seed) {
  if (length < 2) throw std::invalid_argument("trajectory length must be >= 2");
  Trajectory<int> traj;
  traj.seed = seed;
  traj.kind = EnvKind::Discrete;
  traj.states.reserve(length + 1);
  traj.states.push_back(s0);
  RngStream rng(seed, streams::kSimulate);
  for (std::int64_t m = 0; m < length; ++m)
    traj.states.push_back(step_discrete(spec, traj.states.back(), rng));
  return traj;
}

// Invariant vector of P by power iteration on P-transpose. Two successive
// iterates are averaged each step, which damps the period-2 oscillation of
// bipartite chains (the benchmark ring included) without changing the fixed
// point.
inline std::vector<double> stationary_distribution(const DiscreteEnvSpec& spec) {
  const int n = spec.n;
  std::vector<double> x(n, 1.0 / n), next(n, 0.0);
  for (int iter = 0; iter < 1000000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      const double xi = x[i];
      if (xi == 0.0) continue;
      for (int j = 0; j < n; ++j) next[j] += xi * spec.p(i, j);
    }
    double diff = 0.0;
    double mass = 0.0;
    for (int j = 0; j < n; ++j) {
      next[j] = 0.5 * (next[j] + x[j]);
      mass += next[j];
    }
    for (int j = 0; j < n; ++j) {
      next[j] /= mass;
      diff = std::max(diff, std::abs(next[j] - x[j]));
    }
    x.swap(next);
    if (diff < 1e-12) return x;
  }
  throw std::runtime_error("stationary distribution did not converge (reducible chain?)");
}

// Model-access oracle: an independent draw of the next state from s. Shares
// the per-step implementation with the simulator but consumes the caller's
// stream, which must be distinct from the simulation stream.
inline double resample_next(const ContinuousEnvSpec& spec, double s, RngStream& rng) {
  return step_continuous(spec, s, rng);
}

inline int resample_next(const DiscreteEnvSpec& spec, int i, RngStream& rng) {
  return step_discrete(spec, i, rng);
}

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& text) {
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
    throw std::runtime_error("bad numeric field: '" + text + "'");
  return v;
}

}  // namespace detail

// Trajectory CSV: a header row (env_kind, seed, length) followed by one state
// per record. States are written with shortest round-trip formatting, so the
// file is lossless for both kinds.
template <class State>
void save_trajectory_csv(const std::filesystem::path& path, const Trajectory<State>& traj) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "env_kind,seed,length\n";
  out << to_string(traj.kind) << ',' << traj.seed << ',' << traj.transition_count() << '\n';
  for (const State s : traj.states) {
    if constexpr (std::is_same_v<State, double>)
      out << detail::format_double(s) << '\n';
    else
      out << s << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

template <class State>
Trajectory<State> load_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "env_kind,seed,length")
    throw std::runtime_error("bad trajectory header in " + path.string());
  if (!std::getline(in, line)) throw std::runtime_error("truncated trajectory file");
  std::stringstream header(line);
  std::string kind_str, seed_str, len_str;
  std::getline(header, kind_str, ',');
  std::getline(header, seed_str, ',');
  std::getline(header, len_str, ',');
  Trajectory<State> traj;
  if (kind_str == "continuous") traj.kind = EnvKind::Continuous;
  else if (kind_str == "discrete") traj.kind = EnvKind::Discrete;
  else throw std::runtime_error("unknown env_kind '" + kind_str + "'");
  constexpr bool is_continuous = std::is_same_v<State, double>;
  if ((traj.kind == EnvKind::Continuous) != is_continuous)
    throw std::runtime_error("trajectory kind does not match requested state type");
  traj.seed = std::stoull(seed_str);
  const std::int64_t length = std::stoll(len_str);
  traj.states.reserve(length + 1);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if constexpr (is_continuous)
      traj.states.push_back(detail::parse_double(line));
    else
      traj.states.push_back(static_cast<State>(std::stoll(line)));
  }
  if (traj.transition_count() != length)
    throw std::runtime_error("trajectory record count does not match header length");
  return traj;
}

}  // namespace bff
