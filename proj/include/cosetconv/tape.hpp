#pragma once

#include <functional>
#include <vector>

#include "cosetconv/geom.hpp"
#include "cosetconv/kernel.hpp"
#include "cosetconv/tensor.hpp"

namespace cosetconv {

/// Recorded forward computation over tensors. Each op appends one node whose
/// closure holds the saved intermediates; backward replays nodes in reverse,
/// visiting each exactly once. Gradients accumulate per variable.
class Tape {
 public:
  int add_value(Tensor v) {
    vals_.push_back(std::move(v));
    grads_.emplace_back();
    return static_cast<int>(vals_.size()) - 1;
  }
  const Tensor& val(int id) const { return vals_.at(id); }
  Tensor& grad(int id) {
    Tensor& g = grads_.at(id);
    if (g.shape != vals_[id].shape) g = Tensor(vals_[id].shape);
    return g;
  }
  void push_node(std::function<void(Tape&)> backward) { nodes_.push_back(std::move(backward)); }

  /// Seeds d(root)/d(root) = 1 for a scalar root and replays all nodes.
  void backward(int root);
  void backward_seed(int root, const Tensor& seed);

  std::size_t node_count() const { return nodes_.size(); }

  StorageCounters counters;  // convolution-node accounting only
  int bn_passthrough_events = 0;

 private:
  std::vector<Tensor> vals_;
  std::vector<Tensor> grads_;
  std::vector<std::function<void(Tape&)>> nodes_;
};

/// Running batch-norm statistics for eval mode; momentum 0.9 on the old value.
struct BatchNormRunning {
  Tensor mean;  // [C]
  Tensor var;   // [C]
  bool initialized = false;
};

namespace ops {

int constant(Tape& t, Tensor v);

/// y = x W^T + b. x: [n, in], w: [out, in], b: [out] (pass -1 for no bias).
int linear(Tape& t, int x, int w, int b);

int gelu(Tape& t, int x);

int add(Tape& t, int a, int b);

/// Per-channel standardization over the rows of every listed tensor jointly,
/// then affine. A single-row set passes through unchanged (variance is
/// undefined) and bumps the tape's pass-through counter. When training is
/// false, running statistics are used instead of batch statistics.
std::vector<int> batch_norm(Tape& t, const std::vector<int>& xs, int gamma, int beta,
                            BatchNormRunning* running, bool training);

int gather_rows(Tape& t, int x, std::vector<int> rows);

/// Mean over rows -> [1, C].
int mean_rows(Tape& t, int x);

int concat_cols(Tape& t, int a, int b);

/// Per-centroid convolution in the requested ordering. `feats` is the source
/// feature matrix var; each NeighborList selects its rows. `omegas` holds the
/// stacked per-neighbor coefficient rows in neighborhood order. `bases` is an
/// [A, c_out, c_in] var. Returns [M, c_out]; empty neighborhoods yield zero
/// rows. Counter accounting lands in t.counters.
int conv_rows(Tape& t, int feats, const std::vector<NeighborList>& neighborhoods, int omegas,
              int bases, KernelOrdering ordering, bool normalize_by_count);

/// out[i] = sum_k w[i][k] * coarse[idx[i][k]]; weights are fixed geometry.
int interpolate_rows(Tape& t, int coarse, const std::vector<std::vector<int>>& idx,
                     const std::vector<std::vector<double>>& w);

/// Label-smoothed cross entropy of one [1, C] logits row -> scalar [1].
int smoothed_cross_entropy(Tape& t, int logits, int label, double epsilon);

/// Mean of scalar vars -> [1].
int mean_scalars(Tape& t, const std::vector<int>& xs);

}  // namespace ops

}  // namespace cosetconv
