// Deterministic, splittable random streams for trajectory simulation and
// training. All stochastic code in the library draws from an explicit
// RngStream, so every result is a pure function of (seed, stream id).
#pragma once

#include <cmath>
#include <cstdint>

namespace bff {

// One round of the splitmix64 mixer; used only to key stream states.
inline std::uint64_t splitmix64_next(std::uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// xoshiro256++ generator keyed by (seed, stream). Streams with the same seed
// but different stream ids are seeded through independent splitmix64 chains,
// so e.g. simulation and oracle resampling never share randomness.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0) {
    std::uint64_t key = seed ^ (0xD1B54A32D192ED03ULL * (stream + 1));
    for (auto& word : state_) word = splitmix64_next(key);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; the sine branch is cached so draws come
  // in deterministic pairs.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * kTau * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  // Unbiased uniform integer in [0, n) by rejection.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

 private:
  static constexpr double kTau = 6.28318530717958647692528676655900577;
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Well-known stream ids. Using fixed tags keeps runs reproducible when new
// consumers are added.
namespace streams {
inline constexpr std::uint64_t kSimulate = 1;
inline constexpr std::uint64_t kResample = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kParamInit = 4;
inline constexpr std::uint64_t kBiasOuter = 5;
inline constexpr std::uint64_t kBiasInner = 6;
}  // namespace streams

}  // namespace bff
