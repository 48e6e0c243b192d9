#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cosetconv/tensor.hpp"

namespace cosetconv {

/// Whether the basis maps are applied per neighbor before summation
/// (implicit_form) or once, after the coefficient-weighted feature sums
/// (explicit_form). Both compute the same convolution; their backward
/// passes retain very different amounts of intermediate state.
enum class KernelOrdering { implicit_form, explicit_form };

const char* ordering_name(KernelOrdering o);
KernelOrdering ordering_from_name(const std::string& name);

struct ConvConfig {
  int anchors = 22;        // A
  int c_in = 64;
  int c_out = 64;
  int max_neighbors = 32;  // k
  double radius = 1.0;
  int embed_d = 64;
  double embed_sigma = 0.05;
  KernelOrdering ordering = KernelOrdering::explicit_form;
  bool normalize_by_count = false;

  void validate() const;
};

/// Exact bookkeeping of what one neighborhood's forward+backward retains
/// and materializes. saved_intermediate_scalars counts tensors saved by the
/// forward for the backward plus buffers materialized during gradient
/// assembly; parameters and gradient accumulators are excluded.
struct StorageCounters {
  std::uint64_t saved_intermediate_scalars = 0;
  std::uint64_t flop_forward = 0;
  std::uint64_t flop_backward = 0;

  StorageCounters& operator+=(const StorageCounters& o) {
    saved_intermediate_scalars += o.saved_intermediate_scalars;
    flop_forward += o.flop_forward;
    flop_backward += o.flop_backward;
    return *this;
  }
};

// Closed-form counter models, per neighborhood with k actual neighbors.
//
// implicit: k*Cout*Cin per-neighbor kernels saved, k*Cout*Cin kernel
//           cotangents plus A*k per-(neighbor, basis) Cout*Cin products
//           materialized in gradient assembly, plus saved inputs.
// explicit: A*Cin inner sums saved, A*Cin inner-sum cotangents, A Cout*Cin
//           basis-gradient products and A*k Cin-sized feature-gradient
//           products materialized, plus saved inputs.
std::uint64_t conv_saved_scalars_model(KernelOrdering o, std::uint64_t a, std::uint64_t k,
                                       std::uint64_t c_in, std::uint64_t c_out);
/// Leading term only: A*K*Cin*Cout (implicit) vs A*(K*Cin + Cin*Cout) (explicit).
std::uint64_t conv_saved_scalars_dominant(KernelOrdering o, std::uint64_t a, std::uint64_t k,
                                          std::uint64_t c_in, std::uint64_t c_out);
std::uint64_t conv_flops_forward_model(KernelOrdering o, std::uint64_t a, std::uint64_t k,
                                       std::uint64_t c_in, std::uint64_t c_out);
std::uint64_t conv_flops_backward_model(KernelOrdering o, std::uint64_t a, std::uint64_t k,
                                        std::uint64_t c_in, std::uint64_t c_out);

/// The A learnable basis maps W_j, each c_out x c_in.
struct AnchorBases {
  int count = 0;
  int c_out = 0;
  int c_in = 0;
  Tensor w;  // [A, c_out, c_in]

  const double* basis(int j) const { return w.v.data() + static_cast<std::size_t>(j) * c_out * c_in; }
  double* basis(int j) { return w.v.data() + static_cast<std::size_t>(j) * c_out * c_in; }
  static AnchorBases init(int count, int c_out, int c_in, std::uint64_t seed);
};

/// MLP mapping coordinate embeddings (length 3d) to the A basis coefficients.
/// Hidden layers use GELU; the final layer is linear so coefficients are
/// unbounded.
struct CoefficientNet {
  std::vector<Tensor> weights;  // each [out, in]
  std::vector<Tensor> biases;   // each [out]

  int input_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.front().cols()); }
  int output_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.back().rows()); }
  std::size_t layer_count() const { return weights.size(); }
  std::size_t parameter_count() const;

  static CoefficientNet init(int in_dim, const std::vector<int>& hidden, int out_dim,
                             std::uint64_t seed);
};

struct CoeffTape {
  std::vector<Tensor> layer_inputs;  // input to each layer (post-activation)
  std::vector<Tensor> pre_acts;      // pre-activation of each hidden layer
};

/// Forward pass of the coefficient network on one embedding; records the
/// activations needed for the backward when tape is non-null.
std::vector<double> coeff_forward(const CoefficientNet& net, std::span<const double> embedding,
                                  CoeffTape* tape = nullptr);

struct CoeffGrads {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
};
CoeffGrads coeff_grads_like(const CoefficientNet& net);

/// Accumulates parameter gradients into `grads`; optionally also returns the
/// gradient w.r.t. the embedding.
void coeff_backward(const CoefficientNet& net, const CoeffTape& tape,
                    std::span<const double> upstream, CoeffGrads& grads,
                    std::vector<double>* d_embedding = nullptr);

/// Per-neighborhood record of one convolution forward, replayable backward.
struct ConvTape {
  KernelOrdering ordering = KernelOrdering::explicit_form;
  int anchors = 0;
  int k_actual = 0;
  int c_in = 0;
  int c_out = 0;
  bool normalize_by_count = false;
  bool forward_done = false;

  Tensor feats;    // [k_actual, c_in] saved copy
  Tensor omegas;   // [k_actual, A] saved copy
  Tensor kernels;  // implicit: [k_actual, c_out, c_in] assembled per-neighbor kernels
  Tensor sums;     // explicit: [A, c_in] inner sums

  StorageCounters counters;
};

/// Per-neighbor kernel assembly then application (the pre-reordering form).
/// feats is [K, c_in], omegas [K, A]; rows at and beyond k_actual are masked
/// out and contribute neither to the output nor to the counters. An empty
/// neighborhood (k_actual = 0) yields the zero vector.
std::vector<double> conv_forward_implicit(const Tensor& feats, const Tensor& omegas,
                                          const AnchorBases& bases, int k_actual,
                                          ConvTape* tape = nullptr,
                                          bool normalize_by_count = false);

/// Coefficient-weighted feature sums first, basis maps applied once after.
std::vector<double> conv_forward_explicit(const Tensor& feats, const Tensor& omegas,
                                          const AnchorBases& bases, int k_actual,
                                          ConvTape* tape = nullptr,
                                          bool normalize_by_count = false);

struct ConvGrads {
  Tensor feats;   // [k_actual, c_in]
  Tensor omegas;  // [k_actual, A]
  Tensor bases;   // [A, c_out, c_in]
};

/// Exact gradients of the recorded forward. Throws std::logic_error when the
/// tape was produced by the other ordering or has not run forward.
ConvGrads conv_backward(KernelOrdering ordering, ConvTape& tape,
                        std::span<const double> upstream, const AnchorBases& bases);

struct CostSweepPoint {
  int anchors = 0;
  int k = 0;
  int c_in = 0;
  int c_out = 0;
};

struct CostSample {
  KernelOrdering ordering;
  CostSweepPoint point;
  StorageCounters counters;
  double wall_ms = 0;           // one forward+backward
  double wall_backward_ms = 0;  // backward only
};

/// Runs both orderings per sweep point on a random dense instance and
/// reports counters and wall-clock (median over repeats).
std::vector<CostSample> measure_costs(const std::vector<CostSweepPoint>& sweep,
                                      std::uint64_t seed, int repeats = 5,
                                      double min_sample_ms = 10.0);

void write_cost_csv(const std::string& path, const std::vector<CostSample>& samples);

}  // namespace cosetconv
