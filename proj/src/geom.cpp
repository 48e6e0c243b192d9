#include "cosetconv/geom.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cosetconv {

Mat3 mat3_identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
      r[i * 3 + j] = s;
    }
  return r;
}

Mat3 mat3_transpose(const Mat3& a) {
  return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

double mat3_det(const Mat3& a) {
  return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
         a[2] * (a[3] * a[7] - a[4] * a[6]);
}

Vec3 mat3_apply(const Mat3& a, const Vec3& v) {
  return {a[0] * v.x + a[1] * v.y + a[2] * v.z, a[3] * v.x + a[4] * v.y + a[5] * v.z,
          a[6] * v.x + a[7] * v.y + a[8] * v.z};
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform r;
  r.rotation = mat3_transpose(rotation);
  r.translation = -mat3_apply(r.rotation, translation);
  return r;
}

RigidTransform RigidTransform::then(const RigidTransform& other) const {
  RigidTransform r;
  r.rotation = mat3_mul(other.rotation, rotation);
  r.translation = mat3_apply(other.rotation, translation) + other.translation;
  return r;
}

void RigidTransform::validate(double tol) const {
  const Mat3 rtr = mat3_mul(mat3_transpose(rotation), rotation);
  const Mat3 id = mat3_identity();
  for (int i = 0; i < 9; ++i)
    if (std::abs(rtr[i] - id[i]) > tol)
      throw std::invalid_argument("RigidTransform: rotation is not orthonormal");
  if (std::abs(mat3_det(rotation) - 1.0) > tol)
    throw std::invalid_argument("RigidTransform: rotation determinant is not +1");
  if (!translation.finite()) throw std::invalid_argument("RigidTransform: non-finite translation");
}

void PointCloud::validate() const {
  if (coords.empty()) throw std::invalid_argument("PointCloud: empty cloud");
  if (!normals.empty() && normals.size() != coords.size())
    throw std::invalid_argument("PointCloud: normals length disagrees with coords");
  if (!features.empty() && (features.shape.size() != 2 || features.rows() != coords.size()))
    throw std::invalid_argument("PointCloud: features shape disagrees with coords");
  for (const auto& p : coords)
    if (!p.finite()) throw std::invalid_argument("PointCloud: non-finite coordinate");
  for (const auto& n : normals)
    if (std::abs(n.norm() - 1.0) > 1e-6)
      throw std::invalid_argument("PointCloud: normal is not unit length");
}

std::vector<int> farthest_point_sampling(const PointCloud& cloud, int m, int seed_index) {
  const int n = static_cast<int>(cloud.size());
  if (n == 0) throw std::invalid_argument("farthest_point_sampling: empty cloud");
  if (m < 1 || m > n) throw std::invalid_argument("farthest_point_sampling: m out of range");
  if (seed_index < 0 || seed_index >= n)
    throw std::invalid_argument("farthest_point_sampling: seed_index out of range");

  std::vector<int> picked;
  picked.reserve(m);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);

  int cur = seed_index;
  picked.push_back(cur);
  taken[cur] = 1;
  for (int step = 1; step < m; ++step) {
    const Vec3 c = cloud.coords[cur];
    for (int i = 0; i < n; ++i) {
      const double d2 = (cloud.coords[i] - c).norm2();
      if (d2 < min_d2[i]) min_d2[i] = d2;
    }
    // argmax of min distance; strict > keeps the lowest index on ties
    int best = -1;
    double best_d2 = -1.0;
    for (int i = 0; i < n; ++i) {
      if (taken[i]) continue;
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    picked.push_back(best);
    taken[best] = 1;
    cur = best;
  }
  return picked;
}

std::vector<NeighborList> ball_query(const PointCloud& centroids, const PointCloud& cloud,
                                     double radius, int k) {
  if (!(radius > 0)) throw std::invalid_argument("ball_query: radius must be positive");
  if (k < 1) throw std::invalid_argument("ball_query: k must be >= 1");
  const double r2 = radius * radius;
  const int n = static_cast<int>(cloud.size());

  std::vector<NeighborList> out(centroids.size());
  for (std::size_t m = 0; m < centroids.size(); ++m) {
    NeighborList& nl = out[m];
    nl.centroid_index = static_cast<int>(m);
    const Vec3 c = centroids.coords[m];
    for (int i = 0; i < n && nl.actual_count() < k; ++i) {
      if ((cloud.coords[i] - c).norm2() <= r2) nl.neighbor_indices.push_back(i);
    }
  }
  return out;
}

std::vector<std::vector<int>> knn(const PointCloud& queries, const PointCloud& cloud, int k) {
  const int n = static_cast<int>(cloud.size());
  if (k < 1 || k > n) throw std::invalid_argument("knn: k out of range");

  std::vector<std::vector<int>> out(queries.size());
  std::vector<std::pair<double, int>> dist(n);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const Vec3 p = queries.coords[q];
    for (int i = 0; i < n; ++i) dist[i] = {(cloud.coords[i] - p).norm2(), i};
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    out[q].resize(k);
    for (int i = 0; i < k; ++i) out[q][i] = dist[i].second;
  }
  return out;
}

EigenDecomp3 symmetric_eigen3(const Mat3& m) {
  // Cyclic Jacobi; plenty for 3x3.
  Mat3 a = m;
  Mat3 v = mat3_identity();
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = std::abs(a[1]) + std::abs(a[2]) + std::abs(a[5]);
    if (off < 1e-300) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        const double apq = a[p * 3 + q];
        if (std::abs(apq) < 1e-300) continue;
        const double app = a[p * 3 + p], aqq = a[q * 3 + q];
        const double theta = 0.5 * (aqq - app) / apq;
        const double t =
            (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < 3; ++i) {
          const double aip = a[i * 3 + p], aiq = a[i * 3 + q];
          a[i * 3 + p] = c * aip - s * aiq;
          a[i * 3 + q] = s * aip + c * aiq;
        }
        for (int i = 0; i < 3; ++i) {
          const double api = a[p * 3 + i], aqi = a[q * 3 + i];
          a[p * 3 + i] = c * api - s * aqi;
          a[q * 3 + i] = s * api + c * aqi;
        }
        for (int i = 0; i < 3; ++i) {
          const double vip = v[i * 3 + p], viq = v[i * 3 + q];
          v[i * 3 + p] = c * vip - s * viq;
          v[i * 3 + q] = s * vip + c * viq;
        }
      }
  }
  std::array<int, 3> order = {0, 1, 2};
  std::array<double, 3> vals = {a[0], a[4], a[8]};
  std::sort(order.begin(), order.end(), [&](int i, int j) {
    if (vals[i] != vals[j]) return vals[i] < vals[j];
    return i < j;
  });
  EigenDecomp3 out;
  for (int r = 0; r < 3; ++r) {
    const int c = order[r];
    out.values[r] = vals[c];
    out.vectors[r] = Vec3{v[c], v[3 + c], v[6 + c]}.normalized();
  }
  return out;
}

namespace {

Vec3 lex_canonical(const Vec3& v) {
  // Sign fixed so the first component with |value| > 1e-9 is positive.
  double lead = 0;
  if (std::abs(v.x) > 1e-9)
    lead = v.x;
  else if (std::abs(v.y) > 1e-9)
    lead = v.y;
  else
    lead = v.z;
  return lead < 0 ? -v : v;
}

bool lex_less(const Vec3& a, const Vec3& b) {
  if (a.x != b.x) return a.x < b.x;
  if (a.y != b.y) return a.y < b.y;
  return a.z < b.z;
}

}  // namespace

Vec3 pca_least_eigenvector(std::span<const Vec3> vectors, const Vec3& sign_ref) {
  if (vectors.size() < 2)
    throw std::invalid_argument("pca_least_eigenvector: need at least 2 vectors");

  Vec3 mean{};
  for (const auto& v : vectors) mean += v;
  mean = mean * (1.0 / static_cast<double>(vectors.size()));

  Mat3 cov{};
  for (const auto& v : vectors) {
    const Vec3 d = v - mean;
    cov[0] += d.x * d.x;
    cov[1] += d.x * d.y;
    cov[2] += d.x * d.z;
    cov[4] += d.y * d.y;
    cov[5] += d.y * d.z;
    cov[8] += d.z * d.z;
  }
  const double inv_n = 1.0 / static_cast<double>(vectors.size());
  cov[0] *= inv_n;
  cov[1] *= inv_n;
  cov[2] *= inv_n;
  cov[4] *= inv_n;
  cov[5] *= inv_n;
  cov[8] *= inv_n;
  cov[3] = cov[1];
  cov[6] = cov[2];
  cov[7] = cov[5];

  const EigenDecomp3 eig = symmetric_eigen3(cov);

  // Degenerate smallest eigenvalue: pick the lexicographically smallest
  // sign-canonical eigenvector among the tied ones.
  const double scale = std::max({std::abs(eig.values[0]), std::abs(eig.values[2]), 1e-30});
  Vec3 least = eig.vectors[0];
  for (int i = 1; i < 3; ++i) {
    if (eig.values[i] - eig.values[0] > 1e-12 * scale) break;
    const Vec3 cand = lex_canonical(eig.vectors[i]);
    if (lex_less(cand, lex_canonical(least))) least = cand;
  }

  if (sign_ref.norm() >= 1e-9) {
    if (least.dot(sign_ref) < 0) least = -least;
  } else {
    least = lex_canonical(least);
  }
  return least.normalized();
}

std::vector<Vec3> augment_cosets(std::span<const Vec3> coords, int k,
                                 std::vector<CosetBranch>* branches) {
  const int n = static_cast<int>(coords.size());
  if (k < 1 || n < k) throw std::invalid_argument("augment_cosets: need N >= K >= 1");

  PointCloud cl;
  cl.coords.assign(coords.begin(), coords.end());
  const auto nbrs = knn(cl, cl, k);

  Vec3 global_centroid{};
  for (const auto& p : coords) global_centroid += p;
  global_centroid = global_centroid * (1.0 / n);

  std::vector<Vec3> out(n);
  if (branches) branches->assign(n, CosetBranch::mean_offset);
  std::vector<Vec3> offsets(k);
  for (int i = 0; i < n; ++i) {
    Vec3 mean{};
    for (int j = 0; j < k; ++j) {
      offsets[j] = coords[nbrs[i][j]] - coords[i];
      mean += offsets[j];
    }
    mean = mean * (1.0 / k);
    if (mean.norm() > 1e-5) {
      out[i] = mean.normalized();
    } else {
      // Sign reference co-rotates with the cloud: local neighborhood
      // centroid toward the global centroid.
      const Vec3 local_centroid = coords[i] + mean;
      out[i] = pca_least_eigenvector(offsets, global_centroid - local_centroid);
      if (branches) (*branches)[i] = CosetBranch::pca_fallback;
    }
  }
  return out;
}

RigidTransform random_se3(std::mt19937_64& rng, double translation_bound) {
  if (translation_bound < 0)
    throw std::invalid_argument("random_se3: translation_bound must be >= 0");

  std::normal_distribution<double> gauss(0.0, 1.0);
  double q[4];
  double n2 = 0;
  do {
    n2 = 0;
    for (double& c : q) {
      c = gauss(rng);
      n2 += c * c;
    }
  } while (n2 < 1e-12);
  const double inv = 1.0 / std::sqrt(n2);
  const double w = q[0] * inv, x = q[1] * inv, y = q[2] * inv, z = q[3] * inv;

  RigidTransform t;
  t.rotation = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
                2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
                2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
  if (translation_bound > 0) {
    std::uniform_real_distribution<double> u(-translation_bound, translation_bound);
    t.translation = {u(rng), u(rng), u(rng)};
  }
  return t;
}

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t) {
  PointCloud out;
  out.coords.reserve(cloud.size());
  for (const auto& p : cloud.coords) out.coords.push_back(t.apply_point(p));
  out.normals.reserve(cloud.normals.size());
  for (const auto& n : cloud.normals) out.normals.push_back(t.apply_dir(n));
  out.features = cloud.features;
  return out;
}

namespace {

bool parse_double(const std::string& tok, double& out) {
  const char* b = tok.data();
  const char* e = b + tok.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc{} && p == e && std::isfinite(out);
}

}  // namespace

PointCloud load_cloud_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_cloud_text: cannot open " + path);

  PointCloud cloud;
  int columns = 0;  // 3 or 6 once decided
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<std::string> toks;
    std::string tok;
    while (ls >> tok) {
      if (tok[0] == '#') break;
      toks.push_back(tok);
    }
    if (toks.empty()) continue;
    if (toks.size() != 3 && toks.size() != 6)
      throw std::runtime_error("load_cloud_text: line " + std::to_string(lineno) +
                               ": expected 3 or 6 columns");
    if (columns == 0) columns = static_cast<int>(toks.size());
    if (static_cast<int>(toks.size()) != columns)
      throw std::runtime_error("load_cloud_text: line " + std::to_string(lineno) +
                               ": mixed 3/6-column file");
    double f[6] = {};
    for (std::size_t i = 0; i < toks.size(); ++i)
      if (!parse_double(toks[i], f[i]))
        throw std::runtime_error("load_cloud_text: line " + std::to_string(lineno) +
                                 ": bad number '" + toks[i] + "'");
    cloud.coords.push_back({f[0], f[1], f[2]});
    if (columns == 6) cloud.normals.push_back({f[3], f[4], f[5]});
  }
  if (cloud.coords.empty()) throw std::runtime_error("load_cloud_text: no points in " + path);
  return cloud;
}

void save_cloud_text(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_cloud_text: cannot open " + path);
  out.precision(17);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.coords[i];
    out << p.x << ' ' << p.y << ' ' << p.z;
    if (cloud.has_normals()) {
      const Vec3& n = cloud.normals[i];
      out << ' ' << n.x << ' ' << n.y << ' ' << n.z;
    }
    out << '\n';
  }
}

}  // namespace cosetconv
