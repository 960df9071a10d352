#include <cmath>
#include <filesystem>
#include <gtest/gtest.h>
#include <vector>

#include "bff/approximator.hpp"
#include "bff/rng.hpp"

namespace {

using namespace bff;

// Finite-difference comparisons use |fd - g| / max(1, |g|): the absolute
// truncation error of a central difference at h = 1e-5 is ~1e-10, so exact
// zeros in the analytic gradient must not inflate the ratio.
double grad_mismatch(double fd, double g) {
  return std::abs(fd - g) / std::max({1.0, std::abs(g), std::abs(fd)});
}

// ---------------------------------------------------------------------------
// tabular
// ---------------------------------------------------------------------------

TEST(TabularValues, LookupAndBasisGradient) {
  TabularValues tab{{4.0 / 3.0, 2.0 / 3.0}};
  EXPECT_DOUBLE_EQ(tab.value(0), 4.0 / 3.0);
  EXPECT_DOUBLE_EQ(tab.value(1), 2.0 / 3.0);
  std::vector<double> grad(2);
  EXPECT_DOUBLE_EQ(tab.value_and_grad(1, grad), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(grad[0], 0.0);
  EXPECT_DOUBLE_EQ(grad[1], 1.0);
}

TEST(TabularValues, ZeroInit) {
  const auto tab = TabularValues::zeros(5);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(tab.value(i), 0.0);
}

TEST(TabularValues, GradIndependentOfValues) {
  TabularValues a{{1.0, -2.0, 3.0}}, b{{0.0, 0.0, 0.0}};
  std::vector<double> ga(3), gb(3);
  a.value_and_grad(2, ga);
  b.value_and_grad(2, gb);
  EXPECT_EQ(ga, gb);
}

// ---------------------------------------------------------------------------
// cosine MLP
// ---------------------------------------------------------------------------

TEST(CosineMlp, ParameterCountIs2751) {
  EXPECT_EQ(CosineMlp::kParamCount, 2751);
  EXPECT_EQ(CosineMlp::init(1).num_params(), 2751);
}

TEST(CosineMlp, ZeroWeightsGiveConstantOutput) {
  // With w1 = 0, b1 = 0 the first hidden layer is cos(0) = 1 elementwise;
  // with w2 = 0 the second is also all ones; with w3 = 0 the output is b3.
  std::vector<double> theta(CosineMlp::kParamCount, 0.0);
  theta[CosineMlp::kB3] = -2.5;
  const CosineMlp net{std::move(theta)};
  for (double s : {0.1, 1.0, 3.0, 6.28}) EXPECT_DOUBLE_EQ(net.value(s), -2.5);
}

TEST(CosineMlp, PeriodicByConstruction) {
  const auto net = CosineMlp::init(17);
  RngStream rng(4, 1);
  for (int t = 0; t < 100; ++t) {
    const double s = rng.next_double() * kTwoPi;
    EXPECT_NEAR(net.value(s), net.value(s + kTwoPi), 1e-12);
  }
}

TEST(CosineMlp, OutputBoundedByLastLayer) {
  const auto net = CosineMlp::init(23);
  const auto theta = net.params();
  double bound = std::abs(theta[CosineMlp::kB3]);
  for (int k = 0; k < CosineMlp::kHidden; ++k) bound += std::abs(theta[CosineMlp::kW3 + k]);
  RngStream rng(5, 1);
  for (int t = 0; t < 200; ++t)
    ASSERT_LE(std::abs(net.value(rng.next_double() * kTwoPi)), bound + 1e-12);
}

TEST(CosineMlp, BiasOutputGradientIsOne) {
  const auto net = CosineMlp::init(3);
  std::vector<double> grad(CosineMlp::kParamCount);
  for (double s : {0.2, 2.0, 5.5}) {
    net.value_and_grad(s, grad);
    EXPECT_DOUBLE_EQ(grad[CosineMlp::kB3], 1.0);
  }
}

TEST(CosineMlp, GradientMatchesCentralDifferences) {
  auto net = CosineMlp::init(41);
  RngStream rng(77, 2);
  std::vector<double> grad(CosineMlp::kParamCount);
  const double h = 1e-5;
  for (int probe = 0; probe < 50; ++probe) {
    const double s = rng.next_double() * kTwoPi;
    const int coord = static_cast<int>(rng.next_below(CosineMlp::kParamCount));
    net.value_and_grad(s, grad);
    auto theta = net.params();
    const double saved = theta[coord];
    theta[coord] = saved + h;
    const double up = net.value(s);
    theta[coord] = saved - h;
    const double down = net.value(s);
    theta[coord] = saved;
    const double fd = (up - down) / (2.0 * h);
    ASSERT_LT(grad_mismatch(fd, grad[coord]), 1e-5)
        << "coord " << coord << " fd " << fd << " grad " << grad[coord];
  }
}

TEST(CosineMlp, DirectionalDerivativeMatchesGradient) {
  auto net = CosineMlp::init(59);
  RngStream rng(91, 6);
  std::vector<double> grad(CosineMlp::kParamCount);
  std::vector<double> direction(CosineMlp::kParamCount);
  const double h = 1e-5;
  for (int probe = 0; probe < 100; ++probe) {
    const double s = rng.next_double() * kTwoPi;
    double norm = 0.0;
    for (auto& u : direction) {
      u = rng.next_normal();
      norm += u * u;
    }
    norm = std::sqrt(norm);
    for (auto& u : direction) u /= norm;

    net.value_and_grad(s, grad);
    double dot = 0.0;
    for (int i = 0; i < CosineMlp::kParamCount; ++i) dot += grad[i] * direction[i];

    auto theta = net.params();
    std::vector<double> saved(theta.begin(), theta.end());
    for (int i = 0; i < CosineMlp::kParamCount; ++i) theta[i] = saved[i] + h * direction[i];
    const double up = net.value(s);
    for (int i = 0; i < CosineMlp::kParamCount; ++i) theta[i] = saved[i] - h * direction[i];
    const double down = net.value(s);
    for (int i = 0; i < CosineMlp::kParamCount; ++i) theta[i] = saved[i];

    ASSERT_LT(grad_mismatch((up - down) / (2.0 * h), dot), 1e-5);
  }
}

TEST(CosineMlp, InitIsDeterministicAndScaled) {
  const auto a = CosineMlp::init(12345);
  const auto b = CosineMlp::init(12345);
  const auto ta = a.params(), tb = b.params();
  for (int i = 0; i < CosineMlp::kParamCount; ++i) ASSERT_EQ(ta[i], tb[i]);

  // biases zero
  for (int k = 0; k < CosineMlp::kHidden; ++k) {
    EXPECT_EQ(ta[CosineMlp::kB1 + k], 0.0);
    EXPECT_EQ(ta[CosineMlp::kB2 + k], 0.0);
  }
  EXPECT_EQ(ta[CosineMlp::kB3], 0.0);

  // w2 sample variance ~ 1/50 over its 2500 entries
  double sum = 0.0, sum2 = 0.0;
  const int n = CosineMlp::kHidden * CosineMlp::kHidden;
  for (int k = 0; k < n; ++k) {
    const double w = ta[CosineMlp::kW2 + k];
    sum += w;
    sum2 += w * w;
  }
  const double mean = sum / n;
  const double var = (sum2 - n * mean * mean) / (n - 1);
  EXPECT_NEAR(var, 1.0 / 50.0, 0.1 / 50.0);
}

TEST(DiscreteInputMlp, MapsIndexToAngle) {
  DiscreteInputMlp view{CosineMlp::init(2), 32};
  EXPECT_DOUBLE_EQ(view.input(8), kTwoPi / 4.0);
  EXPECT_DOUBLE_EQ(view.value(8), view.net.value(kTwoPi / 4.0));
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

TEST(Checkpoint, RoundTripIsExact) {
  const auto net = CosineMlp::init(8);
  const auto path = std::filesystem::temp_directory_path() / "bff_ckpt.txt";
  save_params(path, "mlp", net.params(), 8);
  const auto loaded = load_params(path);
  EXPECT_EQ(loaded.kind, "mlp");
  EXPECT_EQ(loaded.seed, 8u);
  ASSERT_EQ(loaded.values.size(), static_cast<std::size_t>(CosineMlp::kParamCount));
  const auto theta = net.params();
  for (int i = 0; i < CosineMlp::kParamCount; ++i) ASSERT_EQ(loaded.values[i], theta[i]);
  std::filesystem::remove(path);
}

}  // namespace
