#include <cmath>
#include <random>

#include "doctest.h"

#include "cosetconv/coset.hpp"

using namespace cosetconv;

namespace {

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec3 v{g(rng), g(rng), g(rng)};
  while (v.norm() < 1e-9) v = {g(rng), g(rng), g(rng)};
  return v.normalized();
}

}  // namespace

TEST_CASE("encode: axis-aligned case") {
  const auto p = encode_double_coset({0, 0, 0}, {0, 0, 1}, {0, 0, 0.5}, {0, 0, 1}, 1.0);
  CHECK(p.beta == doctest::Approx(0.0));
  CHECK(p.rbar == doctest::Approx(0.0));
  CHECK(p.zbar == doctest::Approx(0.5));
}

TEST_CASE("encode: orthogonal case") {
  const auto p = encode_double_coset({0, 0, 0}, {0, 0, 1}, {0.3, 0.4, 0}, {1, 0, 0}, 1.0);
  CHECK(p.beta == doctest::Approx(M_PI / 2));
  CHECK(p.rbar == doctest::Approx(0.5));
  CHECK(p.zbar == doctest::Approx(0.0));
}

TEST_CASE("encode: coincident neighbor maps to the origin of (rbar, zbar)") {
  const auto p = encode_double_coset({1, 2, 3}, {0, 0, 1}, {1, 2, 3}, {1, 0, 0}, 0.7);
  CHECK(p.beta == doctest::Approx(M_PI / 2));
  CHECK(p.rbar == 0.0);
  CHECK(p.zbar == 0.0);
}

TEST_CASE("encode: error paths") {
  CHECK_THROWS_AS(encode_double_coset({0, 0, 0}, {0, 0, 1}, {0, 0, 0.5}, {0, 0, 1}, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(encode_double_coset({0, 0, 0}, {0, 0, 2}, {0, 0, 0.5}, {0, 0, 1}, 1.0),
                  std::invalid_argument);
  // Neighbor outside the ball beyond the 1e-9 slack.
  CHECK_THROWS_AS(encode_double_coset({0, 0, 0}, {0, 0, 1}, {0, 0, 1.1}, {0, 0, 1}, 1.0),
                  std::invalid_argument);
}

TEST_CASE("encode: SE(3) invariance over 1000 random transforms") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  double worst = 0;
  for (int rep = 0; rep < 10; ++rep) {
    const Vec3 x{u(rng), u(rng), u(rng)};
    const Vec3 n = random_unit(rng);
    const Vec3 ni = random_unit(rng);
    const Vec3 xi = x + random_unit(rng) * (0.9 * u(rng));
    const auto ref = encode_double_coset(x, n, xi, ni, 1.0);
    for (int s = 0; s < 100; ++s) {
      const RigidTransform t = random_se3(rng, 10.0);
      const auto got = encode_double_coset(t.apply_point(x), t.apply_dir(n), t.apply_point(xi),
                                           t.apply_dir(ni), 1.0);
      worst = std::max({worst, std::abs(got.beta - ref.beta), std::abs(got.rbar - ref.rbar),
                        std::abs(got.zbar - ref.zbar)});
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("encode: outputs stay in range") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const Vec3 x{u(rng), u(rng), u(rng)};
    const double radius = 0.2 + u(rng);
    const Vec3 xi = x + random_unit(rng) * (radius * u(rng));
    const auto p = encode_double_coset(x, random_unit(rng), xi, random_unit(rng), radius);
    CHECK(p.beta >= 0.0);
    CHECK(p.beta <= M_PI);
    CHECK(p.rbar >= 0.0);
    CHECK(p.rbar <= 1.0 + 1e-9);
    CHECK(std::abs(p.zbar) <= 1.0 + 1e-9);
    CHECK(p.rbar * p.rbar + p.zbar * p.zbar <= 1.0 + 1e-9);
  }
}

TEST_CASE("encode: canonical-pose reconstruction returns the same triple") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int i = 0; i < 200; ++i) {
    const double radius = 0.3 + u(rng);
    const Vec3 x{u(rng), u(rng), u(rng)};
    const Vec3 xi = x + random_unit(rng) * (0.9 * radius * u(rng));
    const auto p = encode_double_coset(x, random_unit(rng), xi, random_unit(rng), radius);

    // Neighbor at canonical pose (rbar*r, 0, zbar*r), normal R_y(beta) e_z.
    const Vec3 canon_xi{p.rbar * radius, 0, p.zbar * radius};
    const Vec3 canon_ni{std::sin(p.beta), 0, std::cos(p.beta)};
    const auto q = encode_double_coset({0, 0, 0}, {0, 0, 1}, canon_xi, canon_ni, radius);
    CHECK(std::abs(q.beta - p.beta) < 1e-10);
    CHECK(std::abs(q.rbar - p.rbar) < 1e-10);
    CHECK(std::abs(q.zbar - p.zbar) < 1e-10);
  }
}

TEST_CASE("gaussian embedding: closed-form block at beta=0") {
  DoubleCosetParams p;
  p.beta = 0;
  p.rbar = 0;
  p.zbar = 0;
  const auto emb = gaussian_embedding(p, 4, 0.05);
  REQUIRE(emb.size() == 12);
  // psi(0, j/4) = exp(-(j/4)^2 / (2 * 0.0025))
  CHECK(emb[0] == doctest::Approx(1.0));
  CHECK(emb[1] == doctest::Approx(std::exp(-12.5)));
  CHECK(emb[2] == doctest::Approx(std::exp(-50.0)));
  CHECK(emb[3] == doctest::Approx(std::exp(-112.5)));
}

TEST_CASE("gaussian embedding: exact center hits 1, components in (0, 1]") {
  DoubleCosetParams p;
  p.beta = M_PI * 0.25;  // beta/pi = 0.25 = center 1/d at d = 4
  p.rbar = 0.5;
  p.zbar = 0.0;  // (z+1)/2 = 0.5
  const auto emb = gaussian_embedding(p, 4, 0.05);
  CHECK(emb[1] == doctest::Approx(1.0));   // beta block, center 0.25
  CHECK(emb[6] == doctest::Approx(1.0));   // r block, center 0.5
  CHECK(emb[10] == doctest::Approx(1.0));  // z block, center 0.5
  for (double v : emb) {
    CHECK(v > 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("gaussian embedding: monotone locality per center") {
  const int d = 8;
  const double sigma = 0.05;
  // psi(x, y) strictly decreases as |x - y| grows.
  for (int c = 0; c < d; ++c) {
    const double y = static_cast<double>(c) / d;
    double prev = 2.0;
    for (double step = 0.0; step <= 0.5; step += 0.05) {
      DoubleCosetParams p;
      p.rbar = std::min(1.0, std::max(0.0, y + step));
      if (p.rbar != y + step) break;
      const auto emb = gaussian_embedding(p, d, sigma);
      const double v = emb[d + c];
      if (step > 0) CHECK(v < prev);
      prev = v;
    }
  }
}

TEST_CASE("gaussian embedding: SE(3)-related pairs embed bitwise identically") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  const Vec3 x{u(rng), u(rng), u(rng)};
  const Vec3 n = random_unit(rng);
  const Vec3 ni = random_unit(rng);
  const Vec3 xi = x + random_unit(rng) * 0.4;
  const auto ref = gaussian_embedding(encode_double_coset(x, n, xi, ni, 1.0), 16, 0.05);
  const RigidTransform t = random_se3(rng, 2.0);
  const auto got = gaussian_embedding(
      encode_double_coset(t.apply_point(x), t.apply_dir(n), t.apply_point(xi), t.apply_dir(ni),
                          1.0),
      16, 0.05);
  // psi is deterministic: identical triples embed bitwise identically. The
  // transformed triple itself differs by ~1e-15, so the cross-transform
  // comparison happens at that scale.
  const auto p = encode_double_coset(x, n, xi, ni, 1.0);
  const auto once = gaussian_embedding(p, 16, 0.05);
  const auto twice = gaussian_embedding(p, 16, 0.05);
  CHECK(once == twice);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(ref[i] - got[i]) < 1e-12);
}

TEST_CASE("raw offset embedding varies under rotation") {
  const Vec3 delta{0.3, 0.1, -0.2};
  std::mt19937_64 rng(31);
  const RigidTransform t = random_se3(rng, 0.0);
  const auto a = raw_offset_embedding(delta, 1.0, 8, 0.1);
  const auto b = raw_offset_embedding(t.apply_dir(delta), 1.0, 8, 0.1);
  double dev = 0;
  for (std::size_t i = 0; i < a.size(); ++i) dev = std::max(dev, std::abs(a[i] - b[i]));
  CHECK(dev > 1e-3);
}
