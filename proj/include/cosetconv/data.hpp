#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cosetconv/geom.hpp"

namespace cosetconv {

enum class ShapeKind { sphere, cube, torus, cylinder };

const char* shape_name(ShapeKind k);

struct ShapeSpec {
  ShapeKind kind = ShapeKind::sphere;
  int n_points = 256;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  // Geometry knobs; class defaults live in make_dataset.
  double torus_tube = 0.3;      // tube radius, ring radius fixed at 0.7
  double cylinder_height = 1.6;
  double cylinder_radius = 0.5;

  void validate() const;
};

/// Uniform surface sampling with analytic normals taken before noise is
/// added; the cloud is centered at the origin and scaled to max radius 1.
PointCloud sample_shape(const ShapeSpec& spec);

struct LabeledBatch {
  std::vector<PointCloud> clouds;
  std::vector<int> labels;
  int num_classes = 0;
  // Recorded transforms for rotated variants (audit trail); empty otherwise.
  std::vector<RigidTransform> transforms;

  std::size_t size() const { return clouds.size(); }
};

struct Dataset {
  LabeledBatch train;
  LabeledBatch test;
  LabeledBatch test_rotated;  // the same test clouds under recorded rotations
};

/// Deterministic per-seed split over the four shape classes. Per-cloud
/// geometry knobs jitter within class-specific ranges so the task is not
/// solvable from a single template.
Dataset make_dataset(int classes, int train_per_class, int test_per_class, int n_points,
                     double noise_sigma, std::uint64_t seed);

/// Writes clouds as text files plus labels.csv (file,label); the rotated
/// split also gets transforms.csv with the rotation rows.
void write_dataset_dir(const std::string& dir, const Dataset& ds);

}  // namespace cosetconv
