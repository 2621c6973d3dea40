#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace vaemmd {

/// Counter-based, splittable generator. A stream is identified by a 64-bit
/// key; draws hash (key, counter) so results never depend on how many other
/// streams were consumed. `split` derives an independent child stream.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : key_(mix(seed ^ 0x9e3779b97f4a7c15ULL)) {}

  Rng split(uint64_t stream) const {
    Rng child;
    child.key_ = mix(key_ ^ mix(stream + 0x632be59bd9b4e019ULL));
    return child;
  }

  uint64_t next_u64() { return mix(key_ + 0xbf58476d1ce4e5b9ULL * ++counter_); }

  /// Uniform in [0, 1) with 53 bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n == 0 ? 0 : static_cast<uint64_t>(uniform() * static_cast<double>(n)); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one value per call; no cached spare so
  /// the stream position stays a pure function of the call count).
  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Knuth's multiplicative method; fine for the small means used here.
  int poisson(double mean) {
    const double limit = std::exp(-mean);
    int k = 0;
    double p = uniform();
    while (p > limit) {
      ++k;
      p *= uniform();
    }
    return k;
  }

  uint64_t key() const { return key_; }

 private:
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t key_ = 0;
  uint64_t counter_ = 0;
};

}  // namespace vaemmd
