#pragma once

#include <cmath>
#include <cstdint>

namespace rollsim::detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Derives an independent substream seed. Used for per-group generator
// streams and per-iteration run seeds; documented in the README so
// results are citable.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ (0x9E3779B97F4A7C15ull * (stream + 1)));
}

// Self-contained deterministic RNG. The standard library distributions are
// implementation-defined, so all sampling is done by hand to keep traces
// bit-identical for a given seed on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

  // Uniform in [0, 1).
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n). n must be >= 1.
  std::uint64_t uniform_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Box-Muller without the cached spare so the draw count per call is fixed.
  double normal(double mean, double sigma) {
    if (sigma == 0.0) return mean;
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform01();
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    return mean + sigma * z;
  }

  double lognormal(double mu, double sigma) { return std::exp(normal(mu, sigma)); }

  // Inverse-CDF Pareto with minimum xm and shape alpha.
  double pareto(double xm, double alpha) {
    double u = 1.0 - uniform01();  // (0, 1]
    return xm / std::pow(u, 1.0 / alpha);
  }

 private:
  std::uint64_t state_;
};

}  // namespace rollsim::detail
