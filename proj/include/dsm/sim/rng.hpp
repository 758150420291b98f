#pragma once

// Named, reproducible random streams: mt19937_64 seeded through splitmix64
// from (scenario seed, stream name); uniforms take the top 53 bits; normals use
// Box-Muller, caching the second value of each pair.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

namespace dsm::sim {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

class Stream {
public:
  Stream(std::uint64_t seed, std::string_view name) : eng_(splitmix64(seed ^ fnv1a64(name))) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0)
      u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Standard normal draw keyed by (seed, name, index): the value depends only
/// on its key, so sample noise does not depend on query order.
inline double keyed_normal(std::uint64_t seed, std::uint64_t name_hash, std::int64_t index) {
  std::uint64_t k = splitmix64(seed ^ name_hash) ^ static_cast<std::uint64_t>(index);
  std::uint64_t a = splitmix64(k);
  std::uint64_t b = splitmix64(a);
  double u1 = static_cast<double>((a >> 11) + 1) * 0x1.0p-53; // (0, 1]
  double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2 * std::numbers::pi * u2);
}

} // namespace dsm::sim
