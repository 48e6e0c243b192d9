#include "cosetconv/data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

namespace cosetconv {

const char* shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::cube: return "cube";
    case ShapeKind::torus: return "torus";
    case ShapeKind::cylinder: return "cylinder";
  }
  return "?";
}

void ShapeSpec::validate() const {
  if (n_points < 8) throw std::invalid_argument("ShapeSpec: n_points must be >= 8");
  if (noise_sigma < 0) throw std::invalid_argument("ShapeSpec: noise_sigma must be >= 0");
  if (!(torus_tube > 0) || !(cylinder_height > 0) || !(cylinder_radius > 0))
    throw std::invalid_argument("ShapeSpec: geometry knobs must be positive");
}

namespace {

struct Sample {
  Vec3 p;
  Vec3 n;
};

Sample sample_sphere(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec3 d{g(rng), g(rng), g(rng)};
  while (d.norm() < 1e-9) d = {g(rng), g(rng), g(rng)};
  d = d.normalized();
  return {d, d};
}

Sample sample_cube(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> face(0, 5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int f = face(rng);
  const double a = u(rng), b = u(rng);
  const double s = f % 2 == 0 ? 1.0 : -1.0;
  switch (f / 2) {
    case 0: return {{s, a, b}, {s, 0, 0}};
    case 1: return {{a, s, b}, {0, s, 0}};
    default: return {{a, b, s}, {0, 0, s}};
  }
}

Sample sample_torus(std::mt19937_64& rng, double tube) {
  constexpr double ring = 0.7;
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> rej(0.0, 1.0);
  const double u = angle(rng);
  // Area element carries a (ring + tube cos v) factor; rejection keeps the
  // sampling uniform over the surface.
  double v;
  do {
    v = angle(rng);
  } while (rej(rng) > (ring + tube * std::cos(v)) / (ring + tube));
  const Vec3 p{(ring + tube * std::cos(v)) * std::cos(u), (ring + tube * std::cos(v)) * std::sin(u),
               tube * std::sin(v)};
  const Vec3 n{std::cos(v) * std::cos(u), std::cos(v) * std::sin(u), std::sin(v)};
  return {p, n};
}

Sample sample_cylinder(std::mt19937_64& rng, double radius, double height) {
  const double side_area = 2.0 * M_PI * radius * height;
  const double cap_area = M_PI * radius * radius;
  std::uniform_real_distribution<double> pick(0.0, side_area + 2.0 * cap_area);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double where = pick(rng);
  const double u = angle(rng);
  if (where < side_area) {
    const double z = (unit(rng) - 0.5) * height;
    return {{radius * std::cos(u), radius * std::sin(u), z}, {std::cos(u), std::sin(u), 0}};
  }
  const double s = where < side_area + cap_area ? 1.0 : -1.0;
  const double r = radius * std::sqrt(unit(rng));
  return {{r * std::cos(u), r * std::sin(u), s * height * 0.5}, {0, 0, s}};
}

}  // namespace

PointCloud sample_shape(const ShapeSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);

  PointCloud cloud;
  cloud.coords.reserve(spec.n_points);
  cloud.normals.reserve(spec.n_points);
  for (int i = 0; i < spec.n_points; ++i) {
    Sample s;
    switch (spec.kind) {
      case ShapeKind::sphere: s = sample_sphere(rng); break;
      case ShapeKind::cube: s = sample_cube(rng); break;
      case ShapeKind::torus: s = sample_torus(rng, spec.torus_tube); break;
      case ShapeKind::cylinder:
        s = sample_cylinder(rng, spec.cylinder_radius, spec.cylinder_height);
        break;
    }
    cloud.coords.push_back(s.p);
    cloud.normals.push_back(s.n);
  }
  if (spec.noise_sigma > 0) {
    std::normal_distribution<double> g(0.0, spec.noise_sigma);
    for (auto& p : cloud.coords) p += Vec3{g(rng), g(rng), g(rng)};
  }

  // All four generators are symmetric about the origin, so the surface's
  // center of mass is already there; only the scale needs normalizing.
  // Subtracting the empirical sample mean instead would shift each cloud by
  // an O(1/sqrt(N)) offset and break the exact sphere geometry.
  double max_r = 0;
  for (const auto& p : cloud.coords) max_r = std::max(max_r, p.norm());
  if (max_r > 0) {
    const double inv = 1.0 / max_r;
    for (auto& p : cloud.coords) p = p * inv;
  }
  return cloud;
}

Dataset make_dataset(int classes, int train_per_class, int test_per_class, int n_points,
                     double noise_sigma, std::uint64_t seed) {
  if (classes < 1 || classes > 4)
    throw std::invalid_argument("make_dataset: classes must be in [1, 4]");
  if (train_per_class < 0 || test_per_class < 0)
    throw std::invalid_argument("make_dataset: negative per-class count");

  const ShapeKind kinds[4] = {ShapeKind::sphere, ShapeKind::cube, ShapeKind::torus,
                              ShapeKind::cylinder};
  Dataset ds;
  ds.train.num_classes = classes;
  ds.test.num_classes = classes;
  ds.test_rotated.num_classes = classes;

  std::mt19937_64 knob_rng(seed * 7919 + 13);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto make_cloud = [&](ShapeKind kind, std::uint64_t cloud_seed) {
    ShapeSpec spec;
    spec.kind = kind;
    spec.n_points = n_points;
    spec.noise_sigma = noise_sigma;
    spec.seed = cloud_seed;
    spec.torus_tube = 0.25 + 0.1 * u01(knob_rng);
    spec.cylinder_height = 1.3 + 0.6 * u01(knob_rng);
    spec.cylinder_radius = 0.4 + 0.2 * u01(knob_rng);
    return sample_shape(spec);
  };

  std::uint64_t counter = 0;
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < train_per_class; ++i) {
      ds.train.clouds.push_back(make_cloud(kinds[c], seed + 1000003 * ++counter));
      ds.train.labels.push_back(c);
    }
  }
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < test_per_class; ++i) {
      ds.test.clouds.push_back(make_cloud(kinds[c], seed + 1000003 * ++counter));
      ds.test.labels.push_back(c);
    }
  }

  std::mt19937_64 rot_rng(seed * 31337 + 7);
  for (std::size_t i = 0; i < ds.test.clouds.size(); ++i) {
    const RigidTransform t = random_se3(rot_rng, 0.0);
    ds.test_rotated.clouds.push_back(apply_transform(ds.test.clouds[i], t));
    ds.test_rotated.labels.push_back(ds.test.labels[i]);
    ds.test_rotated.transforms.push_back(t);
  }
  return ds;
}

namespace {

void write_split(const std::filesystem::path& dir, const LabeledBatch& batch) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "labels.csv");
  if (!manifest) throw std::runtime_error("write_dataset_dir: cannot open labels.csv");
  manifest << "file,label\n";
  for (std::size_t i = 0; i < batch.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "cloud_%05zu.txt", i);
    save_cloud_text((dir / name).string(), batch.clouds[i]);
    manifest << name << ',' << batch.labels[i] << '\n';
  }
  if (!batch.transforms.empty()) {
    std::ofstream tf(dir / "transforms.csv");
    tf << "file,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz\n";
    tf.precision(17);
    for (std::size_t i = 0; i < batch.transforms.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "cloud_%05zu.txt", i);
      const auto& t = batch.transforms[i];
      tf << name;
      for (double r : t.rotation) tf << ',' << r;
      tf << ',' << t.translation.x << ',' << t.translation.y << ',' << t.translation.z << '\n';
    }
  }
}

}  // namespace

void write_dataset_dir(const std::string& dir, const Dataset& ds) {
  const std::filesystem::path root(dir);
  write_split(root / "train", ds.train);
  write_split(root / "test", ds.test);
  write_split(root / "test_rotated", ds.test_rotated);
}

}  // namespace cosetconv
