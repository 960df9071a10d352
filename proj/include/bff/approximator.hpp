// Value-function approximators: a tabular vector over discrete states and a
// 3-layer fully connected network with cosine activations on the periodic
// embedding (cos s, sin s). Both expose value() and an exact reverse-mode
// parameter gradient through the same interface, so estimators and the
// trainer are generic over the representation.
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
#include "bff/rng.hpp"

namespace bff {

// V(i) = v_i with gradient e_i.
struct TabularValues {
  using StateT = int;

  std::vector<double> v;

  static TabularValues zeros(int n) { return TabularValues{std::vector<double>(n, 0.0)}; }

  int num_params() const { return static_cast<int>(v.size()); }
  std::span<double> params() { return v; }
  std::span<const double> params() const { return v; }

  double value(int i) const { return v.at(i); }

  double value_and_grad(int i, std::span<double> grad) const {
    std::fill(grad.begin(), grad.end(), 0.0);
    grad[i] = 1.0;
    return v.at(i);
  }
};

// V(s; theta) = L3( cos( L2( cos( L1( (cos s, sin s) ) ) ) ) ) with two
// 50-unit hidden layers. Parameters are stored flat in the order
// (w1, b1, w2, b2, w3, b3), each weight matrix row-major; the layout is part
// of the checkpoint format and must not change.
class CosineMlp {
 public:
  using StateT = double;

  static constexpr int kInputDim = 2;
  static constexpr int kHidden = 50;
  static constexpr int kW1 = 0;
  static constexpr int kB1 = kW1 + kHidden * kInputDim;  // 100
  static constexpr int kW2 = kB1 + kHidden;              // 150
  static constexpr int kB2 = kW2 + kHidden * kHidden;    // 2650
  static constexpr int kW3 = kB2 + kHidden;              // 2700
  static constexpr int kB3 = kW3 + kHidden;              // 2750
  static constexpr int kParamCount = kB3 + 1;            // 2751

  CosineMlp() : theta_(kParamCount, 0.0) {}

  explicit CosineMlp(std::vector<double> theta) : theta_(std::move(theta)) {
    if (theta_.size() != kParamCount)
      throw std::invalid_argument("CosineMlp parameter vector must have length " +
                                  std::to_string(kParamCount));
  }

  // Weights ~ Normal(0, 1/fan_in), biases zero. Deterministic given seed.
  static CosineMlp init(std::uint64_t seed) {
    RngStream rng(seed, streams::kParamInit);
    CosineMlp net;
    const double s1 = 1.0 / std::sqrt(static_cast<double>(kInputDim));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(kHidden));
    for (int k = 0; k < kHidden * kInputDim; ++k)
      net.theta_[kW1 + k] = s1 * rng.next_normal();
    for (int k = 0; k < kHidden * kHidden; ++k)
      net.theta_[kW2 + k] = s2 * rng.next_normal();
    for (int k = 0; k < kHidden; ++k)
      net.theta_[kW3 + k] = s2 * rng.next_normal();
    return net;
  }

  int num_params() const { return kParamCount; }
  std::span<double> params() { return theta_; }
  std::span<const double> params() const { return theta_; }

  double value(double s) const {
    double h1[kHidden], h2[kHidden];
    forward(s, h1, h2, nullptr, nullptr);
    return output(h2);
  }

  // Writes the exact gradient of V(s; theta) into grad (length kParamCount)
  // and returns the value.
  double value_and_grad(double s, std::span<double> grad) const {
    double h1[kHidden], h2[kHidden], pre1[kHidden], pre2[kHidden];
    const double x0 = std::cos(s), x1 = std::sin(s);
    forward(s, h1, h2, pre1, pre2);
    const double out = output(h2);

    const double* w2 = theta_.data() + kW2;
    const double* w3 = theta_.data() + kW3;

    grad[kB3] = 1.0;
    double d2[kHidden];
    for (int k = 0; k < kHidden; ++k) {
      grad[kW3 + k] = h2[k];
      d2[k] = -w3[k] * std::sin(pre2[k]);
      grad[kB2 + k] = d2[k];
    }
    double dh1[kHidden] = {};
    for (int k = 0; k < kHidden; ++k) {
      const double dk = d2[k];
      double* gw2 = grad.data() + kW2 + k * kHidden;
      const double* w2row = w2 + k * kHidden;
      for (int l = 0; l < kHidden; ++l) {
        gw2[l] = dk * h1[l];
        dh1[l] += dk * w2row[l];
      }
    }
    for (int l = 0; l < kHidden; ++l) {
      const double d1 = -dh1[l] * std::sin(pre1[l]);
      grad[kB1 + l] = d1;
      grad[kW1 + l * kInputDim] = d1 * x0;
      grad[kW1 + l * kInputDim + 1] = d1 * x1;
    }
    return out;
  }

 private:
  void forward(double s, double* h1, double* h2, double* pre1_out, double* pre2_out) const {
    const double x0 = std::cos(s), x1 = std::sin(s);
    const double* w1 = theta_.data() + kW1;
    const double* b1 = theta_.data() + kB1;
    const double* w2 = theta_.data() + kW2;
    const double* b2 = theta_.data() + kB2;
    for (int j = 0; j < kHidden; ++j) {
      const double pre = w1[j * kInputDim] * x0 + w1[j * kInputDim + 1] * x1 + b1[j];
      if (pre1_out) pre1_out[j] = pre;
      h1[j] = std::cos(pre);
    }
    for (int k = 0; k < kHidden; ++k) {
      double pre = b2[k];
      const double* row = w2 + k * kHidden;
      for (int l = 0; l < kHidden; ++l) pre += row[l] * h1[l];
      if (pre2_out) pre2_out[k] = pre;
      h2[k] = std::cos(pre);
    }
  }

  double output(const double* h2) const {
    const double* w3 = theta_.data() + kW3;
    double out = theta_[kB3];
    for (int k = 0; k < kHidden; ++k) out += w3[k] * h2[k];
    if (!std::isfinite(out))
      throw std::runtime_error("CosineMlp produced a non-finite value");
    return out;
  }

  std::vector<double> theta_;
};

// Network view over discrete states: state i enters the net as s = 2pi i / n.
struct DiscreteInputMlp {
  using StateT = int;

  CosineMlp net;
  int n = 0;

  double input(int i) const { return kTwoPi * i / n; }
  int num_params() const { return net.num_params(); }
  std::span<double> params() { return net.params(); }
  std::span<const double> params() const { return net.params(); }
  double value(int i) const { return net.value(input(i)); }
  double value_and_grad(int i, std::span<double> grad) const {
    return net.value_and_grad(input(i), grad);
  }
};

// Checkpoint format: "kind dims seed" header then one parameter per line,
// shortest round-trip formatting (exact restore).
inline void save_params(const std::filesystem::path& path, const std::string& kind,
                        std::span<const double> values, std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << kind << ' ' << values.size() << ' ' << seed << '\n';
  for (const double v : values) out << detail::format_double(v) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

struct LoadedParams {
  std::string kind;
  std::uint64_t seed = 0;
  std::vector<double> values;
};

inline LoadedParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  LoadedParams result;
  std::size_t dims = 0;
  in >> result.kind >> dims >> result.seed;
  if (!in) throw std::runtime_error("bad checkpoint header in " + path.string());
  result.values.reserve(dims);
  std::string token;
  while (in >> token) result.values.push_back(detail::parse_double(token));
  if (result.values.size() != dims)
    throw std::runtime_error("checkpoint value count does not match header");
  return result;
}

}  // namespace bff
