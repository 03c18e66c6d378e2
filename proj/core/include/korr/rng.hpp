#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace korr {

// Deterministic RNG with hand-rolled distributions. std::*_distribution is
// implementation-defined, which would break the bit-exact reproducibility
// contract across toolchains, so sampling is done from raw mt19937_64 draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; one value per call, no caching, so the
  // draw sequence is independent of call-site interleaving.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Fisher-Yates shuffle of [0, n) indices into `out`.
  template <typename Index>
  void shuffle(std::vector<Index>& out) {
    for (std::size_t i = out.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(gen_() % i);
      std::swap(out[i - 1], out[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace korr
