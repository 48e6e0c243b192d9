#pragma once

#include <vector>

#include "cosetconv/geom.hpp"

namespace cosetconv {

/// Rigid-motion-invariant coordinates of a neighbor relative to a centroid's
/// normal axis: angle between normals, and radius-normalized cylindrical /
/// axial distances.
struct DoubleCosetParams {
  double beta = 0;  // [0, pi]
  double rbar = 0;  // [0, 1]
  double zbar = 0;  // [-1, 1]
};

/// Encodes (centroid, neighbor) into double-coset parameters. Preconditions:
/// radius > 0, both normals unit length, |x_i - x| <= radius (+1e-9 slack).
/// A coincident neighbor (|delta| < 1e-12) maps to rbar = zbar = 0.
DoubleCosetParams encode_double_coset(const Vec3& x, const Vec3& n, const Vec3& xi,
                                      const Vec3& ni, double radius);

/// Per-coordinate Gaussian bump evaluation at centers {0, 1/d, ..., (d-1)/d}
/// after mapping (beta, rbar, zbar) to [0,1] as (beta/pi, rbar, (zbar+1)/2).
/// Blocks concatenated in beta, r, z order; length 3d.
std::vector<double> gaussian_embedding(const DoubleCosetParams& p, int d, double sigma);

/// Non-invariant ablation path: embeds the raw local offset instead of the
/// double-coset parameters, each component mapped to [0,1] by (c/r + 1)/2.
std::vector<double> raw_offset_embedding(const Vec3& delta, double radius, int d, double sigma);

}  // namespace cosetconv
