// Bellman residual f(s_m, s_{m+1}; theta) = R(s_m) + gamma V(s_{m+1}) - V(s_m)
// and the minibatch gradient estimators built on it:
//
//   uncorrelated   g_m = f1 * grad f(s_m, s'; theta), s' an independent model
//                  resample (oracle; the unbiased gold standard)
//   sample_cloning g_m = f1 * grad f1 (reuses the observed next state twice)
//   bff_gradient   g_m = f1 * grad f2 with s' = s_m + (s_{m+2} - s_{m+1})
//   bff_loss       g_m = 1/2 grad(f1 f2), same borrowed s'
//   primal_dual    two time-scale saddle-point update with a dual function y
//
// Batch sums use compensated accumulation so results are permutation
// invariant to ~1e-12 relative.
#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bff/approximator.hpp"
#include "bff/env.hpp"
#include "bff/rng.hpp"

namespace bff {

enum class EstimatorKind { Uncorrelated, SampleCloning, BFFLoss, BFFGradient, PrimalDual };

inline const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::Uncorrelated: return "uncorrelated";
    case EstimatorKind::SampleCloning: return "sample_cloning";
    case EstimatorKind::BFFLoss: return "bff_loss";
    case EstimatorKind::BFFGradient: return "bff_gradient";
    case EstimatorKind::PrimalDual: return "primal_dual";
  }
  return "?";
}

inline EstimatorKind parse_estimator(const std::string& text) {
  if (text == "uncorrelated") return EstimatorKind::Uncorrelated;
  if (text == "sample_cloning") return EstimatorKind::SampleCloning;
  if (text == "bff_loss") return EstimatorKind::BFFLoss;
  if (text == "bff_gradient") return EstimatorKind::BFFGradient;
  if (text == "primal_dual") return EstimatorKind::PrimalDual;
  throw std::invalid_argument("unknown estimator '" + text + "'");
}

// Uncorrelated sampling needs a fresh model draw, so it is refused by
// model-free run modes.
inline bool is_oracle(EstimatorKind k) { return k == EstimatorKind::Uncorrelated; }

inline bool needs_future(EstimatorKind k) {
  return k == EstimatorKind::BFFLoss || k == EstimatorKind::BFFGradient;
}

// One trajectory slice: (s_m, s_{m+1}, optionally s_{m+2}) plus the realized
// reward R(s_m).
template <class State>
struct TransitionWindow {
  State s_m{};
  State s_m1{};
  std::optional<State> s_m2;
  double r_m = 0.0;
};

// Borrowed next state s' = s_m + (s_{m+2} - s_{m+1}). The increment is taken
// as the minimal signed circular difference so a domain wrap between s_{m+1}
// and s_{m+2} does not inject a spurious 2pi.
inline double bff_next_state(const TransitionWindow<double>& w) {
  if (!w.s_m2) throw std::runtime_error("BFF window truncated: s_{m+2} missing");
  return wrap_state(w.s_m + circular_diff(*w.s_m2, w.s_m1));
}

inline int bff_next_state(const TransitionWindow<int>& w, int n) {
  if (!w.s_m2) throw std::runtime_error("BFF window truncated: s_{m+2} missing");
  const int shifted = (w.s_m + (*w.s_m2 - w.s_m1)) % n;
  return shifted < 0 ? shifted + n : shifted;
}

// Environment facade the estimators need: discount, realized reward, the BFF
// reconstruction rule for the domain, and (oracle paths only) model access.
template <class State>
struct EnvHandle {
  double gamma = 0.9;
  std::function<double(State)> reward_at;
  std::function<State(State, RngStream&)> resample;  // null in model-free use
  std::function<State(const TransitionWindow<State>&)> bff_next;
};

inline EnvHandle<double> make_env_handle(const ContinuousEnvSpec& spec) {
  EnvHandle<double> h;
  h.gamma = spec.gamma;
  h.reward_at = [spec](double s) { return spec.reward_at(s); };
  h.resample = [spec](double s, RngStream& rng) { return resample_next(spec, s, rng); };
  h.bff_next = [](const TransitionWindow<double>& w) { return bff_next_state(w); };
  return h;
}

inline EnvHandle<int> make_env_handle(const DiscreteEnvSpec& spec) {
  EnvHandle<int> h;
  h.gamma = spec.gamma;
  h.reward_at = [r = spec.reward_vector](int i) { return r.at(i); };
  h.resample = [spec](int i, RngStream& rng) { return resample_next(spec, i, rng); };
  h.bff_next = [n = spec.n](const TransitionWindow<int>& w) { return bff_next_state(w, n); };
  return h;
}

template <class Approx, class State>
double bellman_residual(const Approx& approx, const TransitionWindow<State>& w, double gamma) {
  return w.r_m + gamma * approx.value(w.s_m1) - approx.value(w.s_m);
}

struct GradientEstimate {
  std::vector<double> grad;
  int batch_size = 0;
  double mean_residual = 0.0;  // mean of f1 over the batch
};

namespace detail {

// Kahan-compensated vector accumulator; the reduction order is the caller's
// window order, so shuffled batches agree to roundoff.
class CompensatedSum {
 public:
  explicit CompensatedSum(std::size_t n) : sum_(n, 0.0), comp_(n, 0.0) {}

  void add_scaled(std::span<const double> x, double scale) {
    for (std::size_t i = 0; i < sum_.size(); ++i) {
      const double term = x[i] * scale - comp_[i];
      const double t = sum_[i] + term;
      comp_[i] = (t - sum_[i]) - term;
      sum_[i] = t;
    }
  }

  std::vector<double> take_mean(double inv_count) {
    for (auto& v : sum_) v *= inv_count;
    return std::move(sum_);
  }

 private:
  std::vector<double> sum_, comp_;
};

class CompensatedScalar {
 public:
  void add(double x) {
    const double term = x - comp_;
    const double t = sum_ + term;
    comp_ = (t - sum_) - term;
    sum_ = t;
  }
  double value() const { return sum_; }

 private:
  double sum_ = 0.0, comp_ = 0.0;
};

}  // namespace detail

// Mean over the batch of the per-window estimator g_m. The rng argument is
// consumed only by the uncorrelated oracle.
template <class Approx, class State>
GradientEstimate estimate_gradient(EstimatorKind kind, const Approx& approx,
                                   std::span<const TransitionWindow<State>> batch,
                                   const EnvHandle<State>& env, RngStream* rng = nullptr) {
  if (batch.empty()) throw std::invalid_argument("estimate_gradient: empty batch");
  if (kind == EstimatorKind::PrimalDual)
    throw std::invalid_argument("primal_dual is not a single-gradient estimator; use primal_dual_step");
  if (kind == EstimatorKind::Uncorrelated && (!env.resample || rng == nullptr))
    throw std::invalid_argument("uncorrelated sampling requires model access and a random stream");

  const std::size_t d = approx.num_params();
  const double gamma = env.gamma;
  detail::CompensatedSum acc(d);
  detail::CompensatedScalar residual_sum;
  std::vector<double> g0(d), g1(d), g2(d), term(d);

  for (std::size_t w = 0; w < batch.size(); ++w) {
    const auto& win = batch[w];
    double v0, f1, f2;
    switch (kind) {
      case EstimatorKind::SampleCloning: {
        // g_m = f1 * (gamma grad V(s_{m+1}) - grad V(s_m))
        v0 = approx.value_and_grad(win.s_m, g0);
        const double v1 = approx.value_and_grad(win.s_m1, g1);
        f1 = win.r_m + gamma * v1 - v0;
        f2 = f1;
        for (std::size_t i = 0; i < d; ++i) term[i] = f1 * (gamma * g1[i] - g0[i]);
        break;
      }
      case EstimatorKind::Uncorrelated:
      case EstimatorKind::BFFGradient: {
        // g_m = f1 * (gamma grad V(s') - grad V(s_m))
        const State s_prime = kind == EstimatorKind::Uncorrelated
                                  ? env.resample(win.s_m, *rng)
                                  : env.bff_next(win);
        v0 = approx.value_and_grad(win.s_m, g0);
        const double v1 = approx.value(win.s_m1);
        const double vp = approx.value_and_grad(s_prime, g2);
        f1 = win.r_m + gamma * v1 - v0;
        f2 = win.r_m + gamma * vp - v0;
        for (std::size_t i = 0; i < d; ++i) term[i] = f1 * (gamma * g2[i] - g0[i]);
        break;
      }
      case EstimatorKind::BFFLoss: {
        // g_m = 1/2 (f2 grad f1 + f1 grad f2); both product-rule terms.
        const State s_prime = env.bff_next(win);
        v0 = approx.value_and_grad(win.s_m, g0);
        const double v1 = approx.value_and_grad(win.s_m1, g1);
        const double vp = approx.value_and_grad(s_prime, g2);
        f1 = win.r_m + gamma * v1 - v0;
        f2 = win.r_m + gamma * vp - v0;
        const double half_gf2 = 0.5 * gamma * f2;
        const double half_gf1 = 0.5 * gamma * f1;
        const double head = 0.5 * (f1 + f2);
        for (std::size_t i = 0; i < d; ++i)
          term[i] = half_gf2 * g1[i] + half_gf1 * g2[i] - head * g0[i];
        break;
      }
      default:
        throw std::logic_error("unreachable estimator kind");
    }
    if (!std::isfinite(f1) || !std::isfinite(f2))
      throw std::runtime_error("non-finite residual at batch window " + std::to_string(w));
    acc.add_scaled(term, 1.0);
    residual_sum.add(f1);
  }

  GradientEstimate out;
  out.batch_size = static_cast<int>(batch.size());
  const double inv = 1.0 / out.batch_size;
  out.grad = acc.take_mean(inv);
  out.mean_residual = residual_sum.value() * inv;
  for (std::size_t i = 0; i < d; ++i)
    if (!std::isfinite(out.grad[i]))
      throw std::runtime_error("non-finite gradient component " + std::to_string(i));
  return out;
}

// One primal-dual (GTD/SCGD-style) minibatch update:
//   omega += (beta/M) sum (f1 - y(s_m)) grad_omega y(s_m)
//   theta -= (tau/M)  sum grad_theta f1 * y(s_m; omega_new)
// The primal step uses the already-updated dual, matching the displayed
// update order. Both approximators are modified in place.
template <class VApprox, class YApprox, class State>
void primal_dual_step(VApprox& approx_v, YApprox& approx_y,
                      std::span<const TransitionWindow<State>> batch,
                      const EnvHandle<State>& env, double tau, double beta) {
  if (batch.empty()) throw std::invalid_argument("primal_dual_step: empty batch");
  const std::size_t dv = approx_v.num_params();
  const std::size_t dy = approx_y.num_params();
  const double gamma = env.gamma;
  const double inv_m = 1.0 / static_cast<double>(batch.size());

  std::vector<double> gy(dy), g0(dv), g1(dv);

  detail::CompensatedSum dual_acc(dy);
  for (const auto& win : batch) {
    const double y = approx_y.value_and_grad(win.s_m, gy);
    const double f1 = win.r_m + gamma * approx_v.value(win.s_m1) - approx_v.value(win.s_m);
    dual_acc.add_scaled(gy, f1 - y);
  }
  const std::vector<double> dual_delta = dual_acc.take_mean(beta * inv_m);
  auto omega = approx_y.params();
  for (std::size_t i = 0; i < dy; ++i) {
    omega[i] += dual_delta[i];
    if (!std::isfinite(omega[i])) throw std::runtime_error("non-finite dual parameter");
  }

  detail::CompensatedSum primal_acc(dv);
  for (const auto& win : batch) {
    const double y_new = approx_y.value(win.s_m);
    approx_v.value_and_grad(win.s_m, g0);
    approx_v.value_and_grad(win.s_m1, g1);
    for (std::size_t i = 0; i < dv; ++i) g1[i] = (gamma * g1[i] - g0[i]) * y_new;
    primal_acc.add_scaled(g1, 1.0);
  }
  const std::vector<double> primal_delta = primal_acc.take_mean(tau * inv_m);
  auto theta = approx_v.params();
  for (std::size_t i = 0; i < dv; ++i) {
    theta[i] -= primal_delta[i];
    if (!std::isfinite(theta[i])) throw std::runtime_error("non-finite primal parameter");
  }
}

}  // namespace bff
