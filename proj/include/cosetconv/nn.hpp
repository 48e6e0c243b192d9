#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cosetconv/coset.hpp"
#include "cosetconv/geom.hpp"
#include "cosetconv/kernel.hpp"
#include "cosetconv/tape.hpp"

namespace cosetconv {

struct BlockConfig {
  int m = 0;        // centroid count after subsampling
  ConvConfig conv;  // ball-query cap/radius and kernel hyperparameters
  bool residual = true;
  std::vector<int> coeff_hidden;  // empty -> {2*3d, 2*3d}
  // Ablation: feed raw local offsets to the coefficient net instead of the
  // invariant double-coset parameters.
  bool raw_offset_embedding = false;

  std::vector<int> coeff_hidden_or_default() const;
  void validate(int input_points) const;
};

struct BatchNormParams {
  Tensor gamma;  // [C]
  Tensor beta;   // [C]
  BatchNormRunning running;

  static BatchNormParams init(int channels);
};

struct BlockParams {
  CoefficientNet coeff;
  Tensor bases;  // [A, c_out, c_in]
  BatchNormParams bn;
  Tensor res_w;  // [c_out, c_in]; empty when not residual
  Tensor res_b;  // [c_out]

  static BlockParams init(const BlockConfig& cfg, std::uint64_t seed);
};

/// Parameter-to-tape binding for one step. Grads are harvested in binding
/// order, which is fixed by construction, so training is deterministic.
struct ParamBinding {
  std::vector<std::pair<Tensor*, int>> entries;

  int bind(Tape& t, Tensor& param) {
    const int id = t.add_value(param);
    entries.push_back({&param, id});
    return id;
  }
  void harvest(Tape& t, std::vector<Tensor>& grads_out) const {
    grads_out.clear();
    grads_out.reserve(entries.size());
    for (const auto& [p, id] : entries) grads_out.push_back(t.grad(id));
  }
};

struct BoundBlock {
  std::vector<int> coeff_w, coeff_b;
  int bases = -1;
  int bn_gamma = -1, bn_beta = -1;
  int res_w = -1, res_b = -1;
};
BoundBlock bind_block(Tape& t, ParamBinding& binding, BlockParams& p, bool residual);

struct BlockInput {
  const PointCloud* geom = nullptr;  // coords + normals; features travel on the tape
  int feats = -1;                    // [N, c_in] var
};

struct BlockOutput {
  PointCloud geom;  // centroid coords + normals, no features
  int feats = -1;   // [M, c_out] var
  std::vector<int> centroid_indices;
};

/// One convolution block over a batch of clouds sharing batch-norm
/// statistics: farthest-point sampling picks centroids, a ball query groups
/// neighbors, the coefficient network maps coordinate embeddings to basis
/// weights, and the convolution output (summed with the centroid-feature
/// linear path when residual) passes through batch norm and GELU.
/// `preset_centroids`, when given, bypasses FPS (one index list per cloud).
std::vector<BlockOutput> conv_block_batch(Tape& t, std::span<const BlockInput> inputs,
                                          const BlockConfig& cfg, const BoundBlock& bound,
                                          BlockParams& params, bool training,
                                          const std::vector<std::vector<int>>* preset_centroids =
                                              nullptr);

/// Up-samples coarse features onto the fine cloud: per fine point, the k
/// nearest coarse points are averaged with inverse-squared-distance weights
/// normalized to sum 1, and the result is concatenated to the fine feature.
/// A zero-distance coarse point takes the whole weight (split evenly among
/// exact ties).
int feature_propagation(Tape& t, const PointCloud& fine, int fine_feats,
                        const PointCloud& coarse, int coarse_feats, int k);

/// Interpolation weights alone (exposed for tests and oracles).
void feature_propagation_weights(const PointCloud& fine, const PointCloud& coarse, int k,
                                 std::vector<std::vector<int>>& idx,
                                 std::vector<std::vector<double>>& w);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> m, v;
};

/// Standard Adam with bias correction over an ordered parameter list.
void adam_step(AdamState& state, const std::vector<Tensor*>& params,
               const std::vector<Tensor>& grads, double lr);

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * epoch / total)) / 2.
double cosine_lr(int epoch, int total_epochs, double lr_max, double lr_min);

/// Standalone label-smoothed cross entropy; returns loss and writes the
/// logits gradient when grad is non-null.
double smoothed_cross_entropy(std::span<const double> logits, int label, double epsilon,
                              std::vector<double>* grad = nullptr);

/// Independent per-axis rescaling with factors uniform in (lo, hi). Under
/// anisotropic factors, present normals are re-derived from the scaled
/// coordinates (coset augmentation with neighborhood size coset_k); isotropic
/// factors leave normals untouched.
PointCloud scale_augment(const PointCloud& cloud, std::mt19937_64& rng, double lo = 2.0 / 3.0,
                         double hi = 1.5, int coset_k = 16);

// Checkpoint format: little-endian, magic "ECKC", u32 version, u32 tensor
// count, then per tensor u32 name length, name bytes, u32 rank, u64 dims,
// f64 payload. Round-trips are bitwise exact.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

}  // namespace cosetconv
