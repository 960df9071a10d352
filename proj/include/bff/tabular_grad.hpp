// Exact tabular machinery for the discrete chain: Bellman solve, the exact
// stationary-weighted residual gradient, and the per-sample tabular update
// vectors G_m of the four estimators, plus the tabular primal-dual (SCGD)
// update. These are the reference quantities the sampled estimators are
// measured against.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "bff/env.hpp"
#include "bff/residual.hpp"

namespace bff::tabular {

// Solves (I - gamma P) V = r by Gaussian elimination with partial pivoting.
// The system is strictly diagonally dominant for gamma < 1 and row-stochastic
// P, so it is always solvable.
inline std::vector<double> exact_value(const DiscreteEnvSpec& spec) {
  const int n = spec.n;
  std::vector<double> a(static_cast<size_t>(n) * n);
  std::vector<double> x(spec.reward_vector);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      a[static_cast<size_t>(i) * n + j] = (i == j ? 1.0 : 0.0) - spec.gamma * spec.p(i, j);

  for (int col = 0; col < n; ++col) {
    int pivot = col;
    double best = std::abs(a[static_cast<size_t>(col) * n + col]);
    for (int row = col + 1; row < n; ++row) {
      const double cand = std::abs(a[static_cast<size_t>(row) * n + col]);
      if (cand > best) {
        best = cand;
        pivot = row;
      }
    }
    if (best == 0.0) throw std::runtime_error("singular Bellman system");
    if (pivot != col) {
      for (int j = col; j < n; ++j)
        std::swap(a[static_cast<size_t>(col) * n + j], a[static_cast<size_t>(pivot) * n + j]);
      std::swap(x[col], x[pivot]);
    }
    const double inv_piv = 1.0 / a[static_cast<size_t>(col) * n + col];
    for (int row = col + 1; row < n; ++row) {
      const double factor = a[static_cast<size_t>(row) * n + col] * inv_piv;
      if (factor == 0.0) continue;
      for (int j = col; j < n; ++j)
        a[static_cast<size_t>(row) * n + j] -= factor * a[static_cast<size_t>(col) * n + j];
      x[row] -= factor * x[col];
    }
  }
  for (int row = n - 1; row >= 0; --row) {
    double acc = x[row];
    for (int j = row + 1; j < n; ++j) acc -= a[static_cast<size_t>(row) * n + j] * x[j];
    x[row] = acc / a[static_cast<size_t>(row) * n + row];
  }
  return x;
}

// grad_v J = (gamma P - I)^T diag(mu) (r + gamma P v - v).
inline std::vector<double> exact_gradient(const DiscreteEnvSpec& spec,
                                          std::span<const double> v,
                                          std::span<const double> mu) {
  const int n = spec.n;
  std::vector<double> weighted(n);  // mu_i * residual_i
  for (int i = 0; i < n; ++i) {
    double pv = 0.0;
    for (int j = 0; j < n; ++j) pv += spec.p(i, j) * v[j];
    weighted[i] = mu[i] * (spec.reward_vector[i] + spec.gamma * pv - v[i]);
  }
  std::vector<double> grad(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const double wi = weighted[i];
    grad[i] -= wi;
    for (int l = 0; l < n; ++l) grad[l] += spec.gamma * spec.p(i, l) * wi;
  }
  return grad;
}

inline std::vector<double> exact_gradient(const DiscreteEnvSpec& spec,
                                          std::span<const double> v) {
  return exact_gradient(spec, v, stationary_distribution(spec));
}

// One observed sample: s_m = i, s_{m+1} = j, optionally s_{m+2} = k.
struct TabularSample {
  int i = 0;
  int j = 0;
  std::optional<int> k;
};

// Sparse per-sample update G_m: at most three indexed contributions.
// Coinciding target indices accumulate.
struct SparseUpdate {
  std::array<int, 3> idx{};
  std::array<double, 3> val{};
  int count = 0;

  void add(int index, double delta) {
    for (int t = 0; t < count; ++t) {
      if (idx[t] == index) {
        val[t] += delta;
        return;
      }
    }
    idx[count] = index;
    val[count] = delta;
    ++count;
  }

  double at(int index) const {
    double acc = 0.0;
    for (int t = 0; t < count; ++t)
      if (idx[t] == index) acc += val[t];
    return acc;
  }

  std::vector<double> dense(int n) const {
    std::vector<double> out(n, 0.0);
    for (int t = 0; t < count; ++t) out[idx[t]] += val[t];
    return out;
  }

  // v -= scale * G_m
  void apply(std::span<double> v, double scale) const {
    for (int t = 0; t < count; ++t) v[idx[t]] -= scale * val[t];
  }
};

// The per-sample tabular update vectors. With d = r_i + gamma v_j - v_i and,
// for the BFF variants, j' = (i + k - j) mod n and d' = r_i + gamma v_{j'} - v_i:
//
//   uncorrelated   G_i -= d,             G_{j''} += gamma d   (j'' a fresh model draw)
//   sample_cloning G_i -= d,             G_j    += gamma d
//   bff_gradient   G_i -= d,             G_{j'} += gamma d
//   bff_loss       G_i -= (d + d')/2,    G_j += (gamma/2) d', G_{j'} += (gamma/2) d
//
// For the uncorrelated oracle the caller supplies the fresh draw via
// `resampled` (the estimator itself is model-free code).
inline SparseUpdate sample_update(EstimatorKind kind, const TabularSample& sample,
                                  std::span<const double> v, std::span<const double> r,
                                  double gamma, int n,
                                  std::optional<int> resampled = std::nullopt) {
  const int i = sample.i;
  const int j = sample.j;
  if (i < 0 || i >= n || j < 0 || j >= n)
    throw std::invalid_argument("tabular sample index out of range");
  const double d = r[i] + gamma * v[j] - v[i];
  SparseUpdate g;
  switch (kind) {
    case EstimatorKind::Uncorrelated: {
      if (!resampled) throw std::invalid_argument("uncorrelated update needs a resampled index");
      g.add(i, -d);
      g.add(*resampled, gamma * d);
      break;
    }
    case EstimatorKind::SampleCloning: {
      g.add(i, -d);
      g.add(j, gamma * d);
      break;
    }
    case EstimatorKind::BFFGradient: {
      if (!sample.k) throw std::runtime_error("BFF sample missing s_{m+2}");
      const int jp = ((i + *sample.k - j) % n + n) % n;
      g.add(i, -d);
      g.add(jp, gamma * d);
      break;
    }
    case EstimatorKind::BFFLoss: {
      if (!sample.k) throw std::runtime_error("BFF sample missing s_{m+2}");
      const int jp = ((i + *sample.k - j) % n + n) % n;
      const double dp = r[i] + gamma * v[jp] - v[i];
      g.add(i, -0.5 * (d + dp));
      g.add(j, 0.5 * gamma * dp);
      g.add(jp, 0.5 * gamma * d);
      break;
    }
    case EstimatorKind::PrimalDual:
      throw std::invalid_argument("primal_dual has no single G_m; use tabular_primal_dual_update");
  }
  return g;
}

// Tabular SCGD / primal-dual update for one sample. Only coordinate i of the
// dual moves (tabular features are basis vectors), and the primal step uses
// the updated dual value:
//   y_i'  = y_i + beta (d - y_i)
//   v_i' += tau y_i',  v_j' -= tau gamma y_i'   (accumulating when i = j)
inline void tabular_primal_dual_update(std::span<double> v, std::span<double> y,
                                       const TabularSample& sample,
                                       std::span<const double> r, double gamma,
                                       double tau, double beta) {
  const int i = sample.i;
  const int j = sample.j;
  const double d = r[i] + gamma * v[j] - v[i];
  y[i] += beta * (d - y[i]);
  const double yi = y[i];
  v[i] += tau * yi;
  v[j] -= tau * gamma * yi;
}

}  // namespace bff::tabular
