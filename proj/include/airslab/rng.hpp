#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "airslab/common.hpp"

namespace airslab {

/// Thin wrapper over mt19937_64. The standard distributions are
/// implementation-defined, so the variates are derived here to keep outputs
/// identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1], safe for log().
  double uniform_open() { return (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform_open()));
    const double a = 2.0 * kPi * uniform();
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Circularly-symmetric complex normal with unit variance.
  cplx cnormal() {
    const double re = normal();
    const double im = normal();
    return {re * M_SQRT1_2, im * M_SQRT1_2};
  }

  cplx unit_phase() {
    const double a = 2.0 * kPi * uniform();
    return {std::cos(a), std::sin(a)};
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace airslab
