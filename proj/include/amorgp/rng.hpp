#pragma once

// Seeded random source with the distributions the sampling pipeline needs.
// All distributions are implemented on top of a single mt19937_64 stream so
// that a given seed produces the same draw sequence on every platform and
// standard-library version.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace amorgp {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [lo, hi], both inclusive.
  int uniform_int(int lo, int hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    const auto span = static_cast<double>(hi) - static_cast<double>(lo) + 1.0;
    int k = lo + static_cast<int>(uniform() * span);
    return k > hi ? hi : k;
  }

  /// Standard normal via Box-Muller (two uniforms per draw, no cached spare).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Gamma(shape, rate) via Marsaglia-Tsang squeeze (boosted for shape < 1).
  double gamma(double shape, double rate) {
    if (shape <= 0.0 || rate <= 0.0)
      throw std::invalid_argument("gamma: shape and rate must be positive");
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / (3.0 * std::sqrt(d));
    for (;;) {
      const double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v / rate;
    }
  }

  /// Exponential with the given rate (mean 1/rate).
  double exponential(double rate) {
    if (rate <= 0.0) throw std::invalid_argument("exponential: rate must be positive");
    return -std::log(1.0 - uniform()) / rate;
  }

  /// Geometric on support {1, 2, ...}: number of trials to first success.
  int geometric(double p) {
    if (p <= 0.0 || p >= 1.0)
      throw std::invalid_argument("geometric: p must be in (0, 1)");
    const double u = uniform();
    const double k = std::ceil(std::log1p(-u) / std::log1p(-p));
    if (k < 1.0) return 1;
    if (k > static_cast<double>(std::numeric_limits<int>::max()))
      return std::numeric_limits<int>::max();
    return static_cast<int>(k);
  }

  /// Derive an independent stream seed (splitmix64 over master + index).
  static std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace amorgp
