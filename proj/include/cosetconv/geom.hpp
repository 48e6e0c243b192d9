#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cosetconv/tensor.hpp"

namespace cosetconv {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm2() const { return dot(*this); }
  double norm() const { return std::sqrt(norm2()); }
  Vec3 normalized() const {
    const double n = norm();
    return {x / n, y / n, z / n};
  }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

// Row-major 3x3.
using Mat3 = std::array<double, 9>;

Mat3 mat3_identity();
Mat3 mat3_mul(const Mat3& a, const Mat3& b);
Mat3 mat3_transpose(const Mat3& a);
double mat3_det(const Mat3& a);
Vec3 mat3_apply(const Mat3& a, const Vec3& v);

/// Rigid motion: p -> R p + t. Directions transform by R alone.
struct RigidTransform {
  Mat3 rotation = mat3_identity();
  Vec3 translation{};

  Vec3 apply_point(const Vec3& p) const { return mat3_apply(rotation, p) + translation; }
  Vec3 apply_dir(const Vec3& n) const { return mat3_apply(rotation, n); }
  RigidTransform inverse() const;
  /// Composition: (other ∘ this), i.e. apply this first.
  RigidTransform then(const RigidTransform& other) const;
  /// Throws unless the rotation is orthonormal with det +1 within tol.
  void validate(double tol = 1e-9) const;
};

struct PointCloud {
  std::vector<Vec3> coords;
  std::vector<Vec3> normals;  // empty, or one unit vector per point
  Tensor features;            // [N, C], possibly empty

  std::size_t size() const { return coords.size(); }
  bool has_normals() const { return !normals.empty(); }
  void validate() const;  // length agreement, finite coords, unit normals
};

struct NeighborList {
  int centroid_index = -1;
  std::vector<int> neighbor_indices;
  int actual_count() const { return static_cast<int>(neighbor_indices.size()); }
};

/// Greedy max-min subsampling. First index is seed_index; ties broken by
/// lowest index. Throws on empty cloud or m outside [1, N].
std::vector<int> farthest_point_sampling(const PointCloud& cloud, int m, int seed_index);

/// Up to k points of `cloud` within `radius` of each centroid, in ascending
/// index order (first-k rule). Empty lists are valid results.
std::vector<NeighborList> ball_query(const PointCloud& centroids, const PointCloud& cloud,
                                     double radius, int k);

/// k nearest cloud points per query, ties by lowest index. Throws if k > N.
std::vector<std::vector<int>> knn(const PointCloud& queries, const PointCloud& cloud, int k);

/// Unit eigenvector of the covariance of mean-centered `vectors` with the
/// smallest eigenvalue. Sign: flipped so dot(v, sign_ref) >= 0; when
/// |sign_ref| < 1e-9, flipped so the first component with |value| > 1e-9 is
/// positive. Equal smallest eigenvalues resolve to the lexicographically
/// smallest sign-canonical eigenvector.
Vec3 pca_least_eigenvector(std::span<const Vec3> vectors, const Vec3& sign_ref);

enum class CosetBranch : std::uint8_t { mean_offset, pca_fallback };

/// Lifts bare coordinates to unit vectors: per point, the normalized mean of
/// its k-NN offsets when the mean norm exceeds 1e-5, else the PCA least
/// eigenvector of the offsets. The point itself is part of its own k-NN set
/// (zero offset). Throws if N < k.
std::vector<Vec3> augment_cosets(std::span<const Vec3> coords, int k,
                                 std::vector<CosetBranch>* branches = nullptr);

/// Rotation uniform on SO(3) (unit quaternion), translation uniform in
/// [-bound, bound]^3.
RigidTransform random_se3(std::mt19937_64& rng, double translation_bound);

/// coords -> R x + t, normals -> R n, features unchanged.
PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t);

// Text format: one point per line, `x y z` or `x y z nx ny nz`; `#` starts a
// comment line. Mixed 3/6-column files are rejected.
PointCloud load_cloud_text(const std::string& path);
void save_cloud_text(const std::string& path, const PointCloud& cloud);

struct EigenDecomp3 {
  std::array<double, 3> values;  // ascending
  std::array<Vec3, 3> vectors;
};

/// Jacobi eigendecomposition of a symmetric 3x3.
EigenDecomp3 symmetric_eigen3(const Mat3& m);

}  // namespace cosetconv
