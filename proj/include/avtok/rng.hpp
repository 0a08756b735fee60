#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "avtok/hash.hpp"

namespace avtok {

/// Deterministic generator built on SplitMix64.  Every consumer derives its
/// own stream from the root seed plus a stable name, so adding a new draw
/// site never perturbs existing ones.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Derive an independent stream from a root seed and a stream name.
  static Rng stream(std::uint64_t root_seed, std::string_view name) {
    std::uint64_t h = fnv1a64(name);
    // Mix the seed and name hash through one SplitMix64 round each so that
    // (seed, name) pairs land far apart even for small seeds.
    Rng r(root_seed ^ 0x9e3779b97f4a7c15ULL);
    std::uint64_t a = r.next_u64();
    Rng q(h);
    std::uint64_t b = q.next_u64();
    return Rng(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
  }

  /// Derive a child stream from this one (order-sensitive).
  Rng split(std::string_view name) {
    std::uint64_t salt = next_u64();
    return Rng(salt ^ fnv1a64(name));
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).  53-bit mantissa, never returns 1.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).  Rejection sampling, no modulo bias.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) return 0;
    std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  /// Standard normal via Box-Muller.  One value per call; the pair's second
  /// member is cached.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 == 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace avtok
