#include <algorithm>
#include <cmath>
#include <gtest/gtest.h>
#include <numeric>
#include <vector>

#include "bff/residual.hpp"
#include "bff/tabular_grad.hpp"

namespace {

using namespace bff;

DiscreteEnvSpec unit_reward_ring(int n) {
  auto spec = DiscreteEnvSpec::ring(n);
  spec.reward_vector.assign(n, 1.0);
  return spec;
}

// A small random row-stochastic chain for Monte-Carlo oracle checks.
DiscreteEnvSpec random_chain(int n, std::uint64_t seed) {
  DiscreteEnvSpec spec;
  spec.n = n;
  spec.gamma = 0.9;
  spec.transition.assign(static_cast<size_t>(n) * n, 0.0);
  spec.reward_vector.resize(n);
  RngStream rng(seed, 12);
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) {
      const double w = 0.05 + rng.next_double();
      spec.p(i, j) = w;
      row += w;
    }
    for (int j = 0; j < n; ++j) spec.p(i, j) /= row;
    // renormalize the roundoff so the validator's 1e-12 row check holds
    double check = 0.0;
    for (int j = 0; j < n - 1; ++j) check += spec.p(i, j);
    spec.p(i, n - 1) = 1.0 - check;
    spec.reward_vector[i] = rng.next_normal();
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// bellman residual
// ---------------------------------------------------------------------------

TEST(BellmanResidual, ZeroValueGivesReward) {
  const auto tab = TabularValues::zeros(4);
  TransitionWindow<int> w{1, 2, std::nullopt, 0.7};
  EXPECT_DOUBLE_EQ(bellman_residual(tab, w, 0.9), 0.7);
}

TEST(BellmanResidual, ConstantValueShiftsByOneMinusGamma) {
  const TabularValues tab{{1.0, 1.0, 1.0, 1.0}};
  for (int i = 0; i < 4; ++i) {
    TransitionWindow<int> w{i, (i + 1) % 4, std::nullopt, 0.3};
    EXPECT_NEAR(bellman_residual(tab, w, 0.9), 0.3 - 0.1, 1e-15);
  }
}

TEST(BellmanResidual, StoredRewardMatchesSpecFunction) {
  const ContinuousEnvSpec spec;
  const auto env = make_env_handle(spec);
  const auto traj = simulate(spec, 1.0, 100, 3);
  for (std::size_t m = 0; m + 2 < traj.states.size(); ++m)
    ASSERT_EQ(env.reward_at(traj.states[m]), spec.reward_at(traj.states[m]));
}

// ---------------------------------------------------------------------------
// borrowed next state
// ---------------------------------------------------------------------------

TEST(BffNextState, PlainArithmetic) {
  TransitionWindow<double> w{1.0, 1.2, 1.5, 0.0};
  EXPECT_NEAR(bff_next_state(w), 1.3, 1e-15);
}

TEST(BffNextState, DiscreteModularArithmetic) {
  TransitionWindow<int> w{0, 1, 0, 0.0};
  EXPECT_EQ(bff_next_state(w, 32), 31);
  TransitionWindow<int> w2{31, 0, 1, 0.0};
  EXPECT_EQ(bff_next_state(w2, 32), 0);
}

TEST(BffNextState, WrappedTrajectoryUsesCircularIncrement) {
  // The trajectory wrapped between s_{m+1} = 6.25 and s_{m+2} = 0.05; the
  // borrowed increment is +0.0831853..., putting s' at 2pi on the circle.
  TransitionWindow<double> w{6.2, 6.25, 0.05, 0.0};
  const double result = bff_next_state(w);
  EXPECT_GT(result, 0.0);
  EXPECT_LE(result, kTwoPi);
  EXPECT_LT(std::abs(circular_diff(result, kTwoPi)), 1e-12);
}

TEST(BffNextState, MissingFutureFaults) {
  TransitionWindow<double> w{1.0, 1.2, std::nullopt, 0.0};
  EXPECT_THROW(bff_next_state(w), std::runtime_error);
  TransitionWindow<int> wd{0, 1, std::nullopt, 0.0};
  EXPECT_THROW(bff_next_state(wd, 8), std::runtime_error);
}

// ---------------------------------------------------------------------------
// estimate_gradient
// ---------------------------------------------------------------------------

TEST(EstimateGradient, CloningAtZeroValueMatchesHandFormula) {
  // V == 0, r == 1, gamma = 0.9: f1 = 1 and grad f1 = gamma e_j - e_i, so
  // G_{s_m} = -1 and G_{s_{m+1}} = 0.9.
  const auto spec = unit_reward_ring(8);
  const auto env = make_env_handle(spec);
  const auto tab = TabularValues::zeros(8);
  std::vector<TransitionWindow<int>> batch{{2, 3, 4, 1.0}};
  const auto est = estimate_gradient(EstimatorKind::SampleCloning, tab,
                                     std::span<const TransitionWindow<int>>(batch), env);
  EXPECT_DOUBLE_EQ(est.grad[2], -1.0);
  EXPECT_DOUBLE_EQ(est.grad[3], 0.9);
  for (int l = 0; l < 8; ++l)
    if (l != 2 && l != 3) ASSERT_EQ(est.grad[l], 0.0);
  EXPECT_DOUBLE_EQ(est.mean_residual, 1.0);
}

TEST(EstimateGradient, BffLossCollapsesToCloningWhenFutureRepeats) {
  // (k - j) == (j - i) makes j' == j, so f2 == f1 and the product rule
  // collapses to the cloning update bit for bit.
  const auto spec = random_chain(6, 4);
  const auto env = make_env_handle(spec);
  TabularValues tab{{0.3, -1.0, 0.5, 2.0, -0.7, 0.1}};
  std::vector<TransitionWindow<int>> batch{{1, 3, 5, spec.reward_vector[1]}};  // j' = 1+5-3 = 3 = j
  const auto bff = estimate_gradient(EstimatorKind::BFFLoss, tab,
                                     std::span<const TransitionWindow<int>>(batch), env);
  const auto clone = estimate_gradient(EstimatorKind::SampleCloning, tab,
                                       std::span<const TransitionWindow<int>>(batch), env);
  for (int l = 0; l < 6; ++l) ASSERT_EQ(bff.grad[l], clone.grad[l]);
}

TEST(EstimateGradient, UncorrelatedIsUnbiasedForExactGradient) {
  // Monte-Carlo mean of single-window oracle estimates against the exact
  // stationary-weighted gradient, three standard errors per component.
  const auto spec = random_chain(5, 91);
  const auto env = make_env_handle(spec);
  const auto mu = stationary_distribution(spec);
  TabularValues tab{{0.4, -0.2, 1.1, 0.0, -0.8}};
  const auto exact = tabular::exact_gradient(spec, tab.v, mu);

  RngStream sampler(555, 20);
  RngStream resampler(555, bff::streams::kResample);
  const int draws = 400000;
  std::vector<double> mean(5, 0.0), m2(5, 0.0);
  std::vector<TransitionWindow<int>> batch(1);
  for (int t = 0; t < draws; ++t) {
    // i ~ mu exactly, j ~ P(i, .)
    const double u = sampler.next_double();
    int i = 0;
    double cum = 0.0;
    for (; i < 4; ++i) {
      cum += mu[i];
      if (u < cum) break;
    }
    batch[0] = {i, step_discrete(spec, i, sampler), std::nullopt, spec.reward_vector[i]};
    const auto est = estimate_gradient(EstimatorKind::Uncorrelated, tab,
                                       std::span<const TransitionWindow<int>>(batch), env,
                                       &resampler);
    for (int l = 0; l < 5; ++l) {
      const double delta = est.grad[l] - mean[l];
      mean[l] += delta / (t + 1);
      m2[l] += delta * (est.grad[l] - mean[l]);
    }
  }
  for (int l = 0; l < 5; ++l) {
    const double se = std::sqrt(m2[l] / draws / draws);
    EXPECT_NEAR(mean[l], exact[l], 3.0 * se) << "component " << l;
  }
}

TEST(EstimateGradient, BffLossIsHalfSumOfBothProductRuleTerms) {
  // bff_loss == 1/2 (f1 grad f2 + f2 grad f1); the first summand is the
  // bff_gradient estimator, the second is computed by hand here. Tolerance is
  // floating-point reassociation only.
  const auto spec = random_chain(7, 8);
  const auto env = make_env_handle(spec);
  TabularValues tab{{0.3, -1.0, 0.5, 2.0, -0.7, 0.1, 0.9}};
  const auto traj = simulate(spec, 0, 64, 17);
  std::vector<TransitionWindow<int>> batch;
  for (int m = 0; m + 2 < static_cast<int>(traj.states.size()); ++m)
    batch.push_back({traj.states[m], traj.states[m + 1], traj.states[m + 2],
                     spec.reward_vector[traj.states[m]]});

  const auto loss = estimate_gradient(EstimatorKind::BFFLoss, tab,
                                      std::span<const TransitionWindow<int>>(batch), env);
  const auto grad_part = estimate_gradient(EstimatorKind::BFFGradient, tab,
                                           std::span<const TransitionWindow<int>>(batch), env);
  // transposed-role term: f2 grad f1, accumulated the plain way
  std::vector<double> swapped(7, 0.0);
  for (const auto& w : batch) {
    const int jp = bff_next_state(w, spec.n);
    const double d = w.r_m + spec.gamma * tab.v[w.s_m1] - tab.v[w.s_m];
    const double dp = w.r_m + spec.gamma * tab.v[jp] - tab.v[w.s_m];
    swapped[w.s_m] -= dp;
    swapped[w.s_m1] += spec.gamma * dp;
    (void)d;
  }
  for (auto& x : swapped) x /= batch.size();
  for (int l = 0; l < 7; ++l)
    ASSERT_NEAR(loss.grad[l], 0.5 * (grad_part.grad[l] + swapped[l]), 1e-13);
}

TEST(EstimateGradient, PermutationInvariantToRoundoff) {
  const ContinuousEnvSpec spec;
  const auto env = make_env_handle(spec);
  const auto net = CosineMlp::init(3);
  const auto traj = simulate(spec, 1.0, 200, 77);
  std::vector<TransitionWindow<double>> batch;
  for (int m = 0; m + 2 < static_cast<int>(traj.states.size()); ++m)
    batch.push_back({traj.states[m], traj.states[m + 1], traj.states[m + 2],
                     spec.reward_at(traj.states[m])});
  auto shuffled = batch;
  RngStream rng(5, 2);
  for (std::size_t m = shuffled.size() - 1; m > 0; --m)
    std::swap(shuffled[m], shuffled[rng.next_below(m + 1)]);

  for (const auto kind : {EstimatorKind::SampleCloning, EstimatorKind::BFFLoss,
                          EstimatorKind::BFFGradient}) {
    const auto a = estimate_gradient(kind, net, std::span<const TransitionWindow<double>>(batch),
                                     env);
    const auto b = estimate_gradient(kind, net,
                                     std::span<const TransitionWindow<double>>(shuffled), env);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < net.num_params(); ++i) {
      num += (a.grad[i] - b.grad[i]) * (a.grad[i] - b.grad[i]);
      den += a.grad[i] * a.grad[i];
    }
    ASSERT_LT(std::sqrt(num), 1e-12 * std::max(1.0, std::sqrt(den)));
  }
}

TEST(EstimateGradient, FaultsOnBadInput) {
  const auto spec = unit_reward_ring(8);
  const auto env = make_env_handle(spec);
  const auto tab = TabularValues::zeros(8);
  std::vector<TransitionWindow<int>> empty;
  EXPECT_THROW(estimate_gradient(EstimatorKind::SampleCloning, tab,
                                 std::span<const TransitionWindow<int>>(empty), env),
               std::invalid_argument);
  std::vector<TransitionWindow<int>> no_future{{0, 1, std::nullopt, 1.0}};
  EXPECT_THROW(estimate_gradient(EstimatorKind::BFFLoss, tab,
                                 std::span<const TransitionWindow<int>>(no_future), env),
               std::runtime_error);
  std::vector<TransitionWindow<int>> one{{0, 1, 2, 1.0}};
  EXPECT_THROW(estimate_gradient(EstimatorKind::Uncorrelated, tab,
                                 std::span<const TransitionWindow<int>>(one), env, nullptr),
               std::invalid_argument);
  EXPECT_THROW(estimate_gradient(EstimatorKind::PrimalDual, tab,
                                 std::span<const TransitionWindow<int>>(one), env),
               std::invalid_argument);
}

// ---------------------------------------------------------------------------
// primal-dual step
// ---------------------------------------------------------------------------

TEST(PrimalDualStep, ZeroDualFreezesPrimal) {
  const auto spec = unit_reward_ring(6);
  const auto env = make_env_handle(spec);
  TabularValues v{{0.5, -0.5, 1.0, 0.0, 0.2, -0.1}};
  auto y = TabularValues::zeros(6);
  const auto v_before = v.v;
  std::vector<TransitionWindow<int>> batch{{0, 1, std::nullopt, 1.0},
                                           {3, 2, std::nullopt, 1.0}};
  primal_dual_step(v, y, std::span<const TransitionWindow<int>>(batch), env, 0.1, /*beta=*/0.0);
  EXPECT_EQ(v.v, v_before);
  for (const double yi : y.v) EXPECT_EQ(yi, 0.0);
}

TEST(PrimalDualStep, DualMovesTowardResidual) {
  // With V == 0 and r == c the residual is constant c; one batch at state i
  // moves y_i from 0 to beta * c.
  auto spec = unit_reward_ring(6);
  spec.reward_vector.assign(6, 0.8);
  const auto env = make_env_handle(spec);
  auto v = TabularValues::zeros(6);
  auto y = TabularValues::zeros(6);
  std::vector<TransitionWindow<int>> batch{{2, 3, std::nullopt, 0.8}};
  primal_dual_step(v, y, std::span<const TransitionWindow<int>>(batch), env, 0.0, 0.5);
  EXPECT_NEAR(y.v[2], 0.4, 1e-15);
  // repeated applications converge geometrically at rate (1 - beta)
  for (int t = 0; t < 40; ++t)
    primal_dual_step(v, y, std::span<const TransitionWindow<int>>(batch), env, 0.0, 0.5);
  EXPECT_NEAR(y.v[2], 0.8, 1e-10);
}

TEST(PrimalDualStep, MatchesTabularScalarForm) {
  // The generic step with tabular primal/dual and M = 1 must reproduce the
  // scalar-form update exactly.
  const auto spec = random_chain(5, 21);
  const auto env = make_env_handle(spec);
  TabularValues v{{0.4, -0.2, 1.1, 0.0, -0.8}};
  TabularValues y{{0.1, 0.0, -0.3, 0.2, 0.0}};
  auto v_ref = v.v;
  auto y_ref = y.v;

  std::vector<TransitionWindow<int>> batch{{3, 1, std::nullopt, spec.reward_vector[3]}};
  primal_dual_step(v, y, std::span<const TransitionWindow<int>>(batch), env, 0.07, 0.5);
  tabular::tabular_primal_dual_update(v_ref, y_ref, {3, 1, std::nullopt}, spec.reward_vector,
                                      spec.gamma, 0.07, 0.5);
  for (int l = 0; l < 5; ++l) {
    ASSERT_NEAR(v.v[l], v_ref[l], 1e-15);
    ASSERT_NEAR(y.v[l], y_ref[l], 1e-15);
  }
}

}  // namespace
