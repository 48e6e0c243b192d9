#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cosetconv/model.hpp"

namespace cosetconv {

/// (f(x+h) - f(x-h)) / 2h.
double central_diff(const std::function<double(double)>& f, double x, double h);

/// Central-difference audit of an analytic gradient. `slots` point at the
/// scalars to perturb; `loss` re-evaluates the objective at the current
/// values. Relative error uses max(1e-6, |analytic|, |fd|) as denominator.
double fd_max_rel_err(const std::function<double()>& loss, std::span<double* const> slots,
                      std::span<const double> analytic, double h);

struct EquivOptions {
  int pairs = 200;       // coset-level random (centroid, neighbor) pairs
  int transforms = 100;  // transforms per level
  int points = 256;
  double translation_bound = 1.0;
  double tol_coset = 1e-12;
  double tol_layer = 1e-6;
  double tol_network = 1e-6;
  bool negative_control = false;  // transform coordinates but not normals
  bool translation_only = false;
  std::uint64_t seed = 7;
  ClassifierConfig model;  // layer level uses blocks[0], network level the full stack
};

struct EquivReport {
  double coset_max_dev = 0;
  double layer_max_dev = 0;
  double network_max_dev = 0;
  double tol_coset = 0, tol_layer = 0, tol_network = 0;
  bool negative_control = false;
  bool pass = false;  // all deviations within tolerance
};

EquivReport run_equivariance_suite(const EquivOptions& opts);

/// Runs the block stack on one cloud with centroids pinned per level so two
/// geometrically related runs stay comparable; returns the final feature
/// matrix. Centroid index lists are computed by FPS when not supplied.
Tensor network_features(Classifier& model, const PointCloud& cloud,
                        std::vector<std::vector<int>>* centroid_plan);

struct GradcheckOptions {
  double h = 1e-6;
  int seeds = 20;
  double tol = 1e-4;
  std::uint64_t seed = 7;
};

struct GradcheckReport {
  std::vector<std::pair<std::string, double>> op_max_rel_err;
  double tol = 1e-4;
  bool pass = false;
};

/// Finite-difference audit across every differentiable op; `ops` filters by
/// name, empty meaning all.
GradcheckReport run_gradcheck_suite(const GradcheckOptions& opts,
                                    const std::vector<std::string>& ops = {});

}  // namespace cosetconv
