#include <cmath>
#include <gtest/gtest.h>

#include "bff/rng.hpp"

using bff::RngStream;

TEST(RngStream, DeterministicGivenSeedAndStream) {
  RngStream a(42, 7), b(42, 7);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(RngStream, DistinctStreamsDiffer) {
  RngStream a(42, 1), b(42, 2);
  int differing = 0;
  for (int i = 0; i < 64; ++i)
    if (a.next_u64() != b.next_u64()) ++differing;
  EXPECT_GT(differing, 60);
}

TEST(RngStream, UniformMomentsMatch) {
  RngStream rng(123);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.next_double();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sum2 += u * u;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  // mean 1/2 (se ~ 1/sqrt(12 n)), variance 1/12
  EXPECT_NEAR(mean, 0.5, 5.0 / std::sqrt(12.0 * n));
  EXPECT_NEAR(var, 1.0 / 12.0, 0.002);
}

TEST(RngStream, NormalMomentsMatch) {
  RngStream rng(99, 3);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0, sum4 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.next_normal();
    sum += z;
    sum2 += z * z;
    sum4 += z * z * z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 5.0 / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(sum2 / n, 1.0, 0.02);
  EXPECT_NEAR(sum4 / n, 3.0, 0.15);  // normal kurtosis
}

TEST(RngStream, StreamsAreUncorrelated) {
  RngStream a(1717, bff::streams::kSimulate), b(1717, bff::streams::kResample);
  const int n = 100000;
  double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
  for (int i = 0; i < n; ++i) {
    const double x = a.next_normal();
    const double y = b.next_normal();
    sa += x;
    sb += y;
    sab += x * y;
    saa += x * x;
    sbb += y * y;
  }
  const double cov = sab / n - (sa / n) * (sb / n);
  const double corr = cov / std::sqrt((saa / n - (sa / n) * (sa / n)) *
                                      (sbb / n - (sb / n) * (sb / n)));
  EXPECT_LT(std::abs(corr), 0.02);
}

TEST(RngStream, NextBelowIsUnbiasedish) {
  RngStream rng(5);
  int counts[7] = {};
  const int n = 140000;
  for (int i = 0; i < n; ++i) ++counts[rng.next_below(7)];
  for (int k = 0; k < 7; ++k) EXPECT_NEAR(counts[k], n / 7.0, 5.0 * std::sqrt(n / 7.0));
}
