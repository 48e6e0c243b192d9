#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "cosetconv/tensor.hpp"

namespace cosetconv {

// Exact-erf GELU; the tanh approximation is not accurate enough for
// tight finite-difference checks.
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
  const double phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return phi + x * pdf;
}

/// Fan-in-scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline void init_fan_in_uniform(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& x : t.v) x = dist(rng);
}

/// FNV-1a over a byte string; used for config hashes in reports.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace cosetconv
