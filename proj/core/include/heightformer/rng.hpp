#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace heightformer {

// Deterministic RNG. std::*_distribution output is implementation-defined,
// so the draws here are written out explicitly; a (seed, sequence) pair
// yields the same stream on any platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  // Independent child stream. Used for per-worker / per-tile streams so
  // results do not depend on scheduling.
  static Rng split(uint64_t seed, uint64_t stream) { return Rng(mix(seed, stream)); }
  static uint64_t mix(uint64_t a, uint64_t b) {
    // splitmix64-style finalizer over the combined words
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(uniform() * static_cast<double>(n)) % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller (always consumes two uniforms).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Normal rejection-sampled into [-2 sigma, 2 sigma].
  double truncated_normal(double stddev) {
    for (;;) {
      double v = normal();
      if (std::abs(v) <= 2.0) return v * stddev;
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace heightformer
