#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace divtrain {

// Deterministic PRNG used everywhere randomness appears. splitmix64 state
// transition with hand-rolled distributions, so identical seeds reproduce
// identical streams regardless of standard-library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1) with 53 bits of precision.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  // Box-Muller; caches the spare draw.
  double normal(double mean = 0.0, double stddev = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + stddev * r * std::cos(theta);
  }

  // N(0, sigma) conditioned on |z| <= bound, by rejection.
  double truncated_normal(double sigma, double bound) {
    for (;;) {
      double z = normal(0.0, sigma);
      if (std::fabs(z) <= bound) return z;
    }
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// FNV-1a, used to derive purpose-specific seeds from a master seed.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seed fan-out: master seed + purpose tag -> independent per-purpose seed.
// purpose tags in use: "member-init/<i>", "augment/<epoch>", "noise/<epoch>",
// "adv/<epoch>", "attack/<name>", "shuffle/<epoch>", "data".
inline std::uint64_t fanout_seed(std::uint64_t master, std::string_view purpose) {
  std::uint64_t z = master ^ fnv1a64(purpose);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace divtrain
