#include "cosetconv/coset.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cosetconv {

namespace {

void require_unit(const Vec3& n, const char* who) {
  if (std::abs(n.norm() - 1.0) > 1e-6)
    throw std::invalid_argument(std::string(who) + ": normal is not unit length");
}

// psi(x, y) = exp(-(x-y)^2 / (2 sigma^2)) at centers {0, 1/d, ..., (d-1)/d}.
void bump_block(double u, int d, double inv_two_sigma2, std::vector<double>& out) {
  for (int j = 0; j < d; ++j) {
    const double c = static_cast<double>(j) / d;
    const double t = u - c;
    out.push_back(std::exp(-t * t * inv_two_sigma2));
  }
}

}  // namespace

DoubleCosetParams encode_double_coset(const Vec3& x, const Vec3& n, const Vec3& xi,
                                      const Vec3& ni, double radius) {
  if (!(radius > 0)) throw std::invalid_argument("encode_double_coset: radius must be positive");
  require_unit(n, "encode_double_coset");
  require_unit(ni, "encode_double_coset");

  const Vec3 delta = xi - x;
  const double dist = delta.norm();
  if (dist > radius + 1e-9)
    throw std::invalid_argument("encode_double_coset: neighbor outside ball radius");

  DoubleCosetParams p;
  // Float drift can push the dot of unit vectors past +-1; arccos needs the clamp.
  p.beta = std::acos(std::clamp(n.dot(ni), -1.0, 1.0));
  if (dist < 1e-12) return p;  // coincident neighbor: limit of the normalized terms

  const double axial = n.dot(delta);  // == (n . delta/|delta|) * |delta|
  p.zbar = axial / radius;
  p.rbar = std::sqrt(std::max(0.0, dist * dist - axial * axial)) / radius;
  return p;
}

std::vector<double> gaussian_embedding(const DoubleCosetParams& p, int d, double sigma) {
  if (d < 1) throw std::invalid_argument("gaussian_embedding: d must be >= 1");
  if (!(sigma > 0)) throw std::invalid_argument("gaussian_embedding: sigma must be positive");

  const double inv = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> out;
  out.reserve(3 * static_cast<std::size_t>(d));
  bump_block(p.beta / M_PI, d, inv, out);
  bump_block(p.rbar, d, inv, out);
  bump_block((p.zbar + 1.0) * 0.5, d, inv, out);
  return out;
}

std::vector<double> raw_offset_embedding(const Vec3& delta, double radius, int d, double sigma) {
  if (d < 1) throw std::invalid_argument("raw_offset_embedding: d must be >= 1");
  if (!(radius > 0) || !(sigma > 0))
    throw std::invalid_argument("raw_offset_embedding: radius and sigma must be positive");

  const double inv = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> out;
  out.reserve(3 * static_cast<std::size_t>(d));
  bump_block((delta.x / radius + 1.0) * 0.5, d, inv, out);
  bump_block((delta.y / radius + 1.0) * 0.5, d, inv, out);
  bump_block((delta.z / radius + 1.0) * 0.5, d, inv, out);
  return out;
}

}  // namespace cosetconv
