#pragma once

#include "precdelta/types.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace precdelta {

// Seed-deterministic draws on top of mt19937_64. The standard distributions are
// implementation-defined, so uniform/normal are spelled out here to keep
// reports byte-identical for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t integer(std::uint64_t n) {  // uniform in [0, n)
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = gen_();
    while (v >= limit) v = gen_();
    return v % n;
  }

  Vecd normal_vec(Index n) {
    Vecd v(n);
    for (Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  Matd normal_mat(Index r, Index c) {
    Matd m(r, c);
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) m(i, j) = normal();
    return m;
  }

  // Uniform on the unit sphere via normalized Gaussian draws.
  Vecd sphere_vec(Index n) {
    Vecd v = normal_vec(n);
    double nrm = v.norm();
    while (nrm < 1e-12) {
      v = normal_vec(n);
      nrm = v.norm();
    }
    return v / nrm;
  }

  Vecd uniform_vec(Index n, double lo, double hi) {
    Vecd v(n);
    for (Index i = 0; i < n; ++i) v[i] = uniform(lo, hi);
    return v;
  }

  std::mt19937_64& raw() { return gen_; }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace precdelta
