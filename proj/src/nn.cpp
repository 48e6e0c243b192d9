#include "cosetconv/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "cosetconv/mathutil.hpp"

namespace cosetconv {

std::vector<int> BlockConfig::coeff_hidden_or_default() const {
  if (!coeff_hidden.empty()) return coeff_hidden;
  return {6 * conv.embed_d, 6 * conv.embed_d};
}

void BlockConfig::validate(int input_points) const {
  if (m < 1 || m > input_points)
    throw std::invalid_argument("BlockConfig: m out of range for input cloud");
  conv.validate();
}

BatchNormParams BatchNormParams::init(int channels) {
  BatchNormParams p;
  p.gamma = Tensor::full({static_cast<std::size_t>(channels)}, 1.0);
  p.beta = Tensor({static_cast<std::size_t>(channels)});
  return p;
}

BlockParams BlockParams::init(const BlockConfig& cfg, std::uint64_t seed) {
  BlockParams p;
  p.coeff = CoefficientNet::init(3 * cfg.conv.embed_d, cfg.coeff_hidden_or_default(),
                                 cfg.conv.anchors, seed * 2654435761u + 1);
  AnchorBases ab =
      AnchorBases::init(cfg.conv.anchors, cfg.conv.c_out, cfg.conv.c_in, seed * 2654435761u + 2);
  p.bases = std::move(ab.w);
  p.bn = BatchNormParams::init(cfg.conv.c_out);
  if (cfg.residual) {
    std::mt19937_64 rng(seed * 2654435761u + 3);
    p.res_w = Tensor(
        {static_cast<std::size_t>(cfg.conv.c_out), static_cast<std::size_t>(cfg.conv.c_in)});
    p.res_b = Tensor({static_cast<std::size_t>(cfg.conv.c_out)});
    init_fan_in_uniform(p.res_w, cfg.conv.c_in, rng);
    init_fan_in_uniform(p.res_b, cfg.conv.c_in, rng);
  }
  return p;
}

BoundBlock bind_block(Tape& t, ParamBinding& binding, BlockParams& p, bool residual) {
  BoundBlock b;
  for (std::size_t l = 0; l < p.coeff.weights.size(); ++l) {
    b.coeff_w.push_back(binding.bind(t, p.coeff.weights[l]));
    b.coeff_b.push_back(binding.bind(t, p.coeff.biases[l]));
  }
  b.bases = binding.bind(t, p.bases);
  b.bn_gamma = binding.bind(t, p.bn.gamma);
  b.bn_beta = binding.bind(t, p.bn.beta);
  if (residual) {
    b.res_w = binding.bind(t, p.res_w);
    b.res_b = binding.bind(t, p.res_b);
  }
  return b;
}

namespace {

int coeff_net_rows(Tape& t, const BoundBlock& bound, int embeddings) {
  int cur = embeddings;
  const std::size_t layers = bound.coeff_w.size();
  for (std::size_t l = 0; l < layers; ++l) {
    cur = ops::linear(t, cur, bound.coeff_w[l], bound.coeff_b[l]);
    if (l + 1 < layers) cur = ops::gelu(t, cur);
  }
  return cur;
}

}  // namespace

std::vector<BlockOutput> conv_block_batch(Tape& t, std::span<const BlockInput> inputs,
                                          const BlockConfig& cfg, const BoundBlock& bound,
                                          BlockParams& params, bool training,
                                          const std::vector<std::vector<int>>* preset_centroids) {
  if (inputs.empty()) throw std::invalid_argument("conv_block_batch: no inputs");
  if (preset_centroids && preset_centroids->size() != inputs.size())
    throw std::invalid_argument("conv_block_batch: preset centroid list count mismatch");

  struct PerCloud {
    std::vector<int> centroids;
    std::vector<NeighborList> nbrs;
    int pre_bn = -1;
  };
  std::vector<PerCloud> work(inputs.size());
  std::vector<BlockOutput> outs(inputs.size());

  for (std::size_t b = 0; b < inputs.size(); ++b) {
    const PointCloud& cloud = *inputs[b].geom;
    if (!cloud.has_normals())
      throw std::invalid_argument("conv_block_batch: cloud needs normals (true or augmented)");
    cfg.validate(static_cast<int>(cloud.size()));
    PerCloud& pc = work[b];

    pc.centroids = preset_centroids ? (*preset_centroids)[b]
                                    : farthest_point_sampling(cloud, cfg.m, 0);
    PointCloud centroid_geom;
    centroid_geom.coords.reserve(pc.centroids.size());
    centroid_geom.normals.reserve(pc.centroids.size());
    for (int ci : pc.centroids) {
      centroid_geom.coords.push_back(cloud.coords[ci]);
      centroid_geom.normals.push_back(cloud.normals[ci]);
    }
    pc.nbrs = ball_query(centroid_geom, cloud, cfg.conv.radius, cfg.conv.max_neighbors);

    // Coordinate embeddings for all (centroid, neighbor) pairs; geometry is
    // constant on the tape, only the network downstream is differentiated.
    std::size_t total = 0;
    for (const auto& nl : pc.nbrs) total += nl.neighbor_indices.size();
    Tensor emb({total, static_cast<std::size_t>(3 * cfg.conv.embed_d)});
    std::size_t row = 0;
    for (std::size_t m = 0; m < pc.nbrs.size(); ++m) {
      const int ci = pc.centroids[m];
      for (int ni : pc.nbrs[m].neighbor_indices) {
        std::vector<double> e;
        if (cfg.raw_offset_embedding) {
          e = raw_offset_embedding(cloud.coords[ni] - cloud.coords[ci], cfg.conv.radius,
                                   cfg.conv.embed_d, cfg.conv.embed_sigma);
        } else {
          const DoubleCosetParams p =
              encode_double_coset(cloud.coords[ci], cloud.normals[ci], cloud.coords[ni],
                                  cloud.normals[ni], cfg.conv.radius);
          e = gaussian_embedding(p, cfg.conv.embed_d, cfg.conv.embed_sigma);
        }
        std::copy(e.begin(), e.end(), emb.row(row++));
      }
    }
    const int emb_var = ops::constant(t, std::move(emb));
    const int omegas = coeff_net_rows(t, bound, emb_var);
    int pre_bn = ops::conv_rows(t, inputs[b].feats, pc.nbrs, omegas, bound.bases,
                                cfg.conv.ordering, cfg.conv.normalize_by_count);
    if (cfg.residual) {
      const int centroid_feats = ops::gather_rows(t, inputs[b].feats, pc.centroids);
      pre_bn = ops::add(t, pre_bn, ops::linear(t, centroid_feats, bound.res_w, bound.res_b));
    }
    pc.pre_bn = pre_bn;

    BlockOutput& out = outs[b];
    out.geom = std::move(centroid_geom);
    out.centroid_indices = pc.centroids;
  }

  // Batch norm couples the clouds of the batch; the residual sum happens
  // before normalization, activation after.
  std::vector<int> pre_bn_vars;
  for (const auto& pc : work) pre_bn_vars.push_back(pc.pre_bn);
  const std::vector<int> normed =
      ops::batch_norm(t, pre_bn_vars, bound.bn_gamma, bound.bn_beta, &params.bn.running, training);
  for (std::size_t b = 0; b < inputs.size(); ++b) outs[b].feats = ops::gelu(t, normed[b]);
  return outs;
}

void feature_propagation_weights(const PointCloud& fine, const PointCloud& coarse, int k,
                                 std::vector<std::vector<int>>& idx,
                                 std::vector<std::vector<double>>& w) {
  if (k < 1 || static_cast<std::size_t>(k) > coarse.size())
    throw std::invalid_argument("feature_propagation: k out of range for coarse cloud");
  idx = knn(fine, coarse, k);
  w.assign(fine.size(), {});
  for (std::size_t i = 0; i < fine.size(); ++i) {
    std::vector<double> d2(k);
    int zeros = 0;
    for (int j = 0; j < k; ++j) {
      d2[j] = (fine.coords[i] - coarse.coords[idx[i][j]]).norm2();
      if (d2[j] == 0.0) ++zeros;
    }
    w[i].resize(k);
    if (zeros > 0) {
      // Limit of the inverse-square rule: coincident points take all weight.
      for (int j = 0; j < k; ++j) w[i][j] = d2[j] == 0.0 ? 1.0 / zeros : 0.0;
    } else {
      double sum = 0;
      for (int j = 0; j < k; ++j) {
        w[i][j] = 1.0 / d2[j];
        sum += w[i][j];
      }
      for (int j = 0; j < k; ++j) w[i][j] /= sum;
    }
  }
}

int feature_propagation(Tape& t, const PointCloud& fine, int fine_feats, const PointCloud& coarse,
                        int coarse_feats, int k) {
  std::vector<std::vector<int>> idx;
  std::vector<std::vector<double>> w;
  feature_propagation_weights(fine, coarse, k, idx, w);
  const int up = ops::interpolate_rows(t, coarse_feats, idx, w);
  return ops::concat_cols(t, fine_feats, up);
}

void adam_step(AdamState& state, const std::vector<Tensor*>& params,
               const std::vector<Tensor>& grads, double lr) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.push_back(Tensor(p->shape));
      state.v.push_back(Tensor(p->shape));
    }
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: state does not match parameter list");

  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (!p.same_shape(g)) throw std::invalid_argument("adam_step: gradient shape mismatch");
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m.v[j] = state.beta1 * m.v[j] + (1.0 - state.beta1) * g.v[j];
      v.v[j] = state.beta2 * v.v[j] + (1.0 - state.beta2) * g.v[j] * g.v[j];
      const double mhat = m.v[j] / bc1;
      const double vhat = v.v[j] / bc2;
      p.v[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double cosine_lr(int epoch, int total_epochs, double lr_max, double lr_min) {
  if (total_epochs < 1) throw std::invalid_argument("cosine_lr: total_epochs must be >= 1");
  const double phase = M_PI * static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

double smoothed_cross_entropy(std::span<const double> logits, int label, double epsilon,
                              std::vector<double>* grad) {
  const std::size_t c = logits.size();
  if (c == 0 || label < 0 || static_cast<std::size_t>(label) >= c)
    throw std::invalid_argument("smoothed_cross_entropy: label out of range");
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  double z = 0;
  for (double l : logits) z += std::exp(l - mx);
  const double log_z = std::log(z) + mx;
  double loss = 0;
  for (std::size_t i = 0; i < c; ++i) {
    const double target =
        epsilon / static_cast<double>(c) + (static_cast<std::size_t>(label) == i ? 1 - epsilon : 0);
    loss -= target * (logits[i] - log_z);
  }
  if (grad) {
    grad->assign(c, 0.0);
    for (std::size_t i = 0; i < c; ++i) {
      const double p = std::exp(logits[i] - log_z);
      const double target = epsilon / static_cast<double>(c) +
                            (static_cast<std::size_t>(label) == i ? 1 - epsilon : 0);
      (*grad)[i] = p - target;
    }
  }
  return loss;
}

PointCloud scale_augment(const PointCloud& cloud, std::mt19937_64& rng, double lo, double hi,
                         int coset_k) {
  if (!(lo > 0) || !(hi >= lo)) throw std::invalid_argument("scale_augment: bad scale range");
  std::uniform_real_distribution<double> u(lo, hi);
  const double sx = u(rng), sy = u(rng), sz = u(rng);

  PointCloud out = cloud;
  for (auto& p : out.coords) {
    p.x *= sx;
    p.y *= sy;
    p.z *= sz;
  }
  const bool anisotropic = !(sx == sy && sy == sz);
  if (out.has_normals() && anisotropic) {
    // Anisotropic scaling invalidates surface normals; re-derive them from
    // the scaled coordinates.
    out.normals = augment_cosets(out.coords, std::min<int>(coset_k, out.size()));
  }
  return out;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; byte swapping is not implemented");

template <typename T>
void write_raw(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write("ECKC", 4);
  write_raw<std::uint32_t>(f, 1);  // version
  write_raw<std::uint32_t>(f, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    write_raw<std::uint32_t>(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_raw<std::uint32_t>(f, static_cast<std::uint32_t>(tensor->shape.size()));
    for (std::size_t d : tensor->shape) write_raw<std::uint64_t>(f, d);
    f.write(reinterpret_cast<const char*>(tensor->v.data()),
            static_cast<std::streamsize>(tensor->v.size() * sizeof(double)));
  }
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "ECKC", 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  const auto version = read_raw<std::uint32_t>(f);
  if (version != 1) throw std::runtime_error("load_checkpoint: unsupported version");
  const auto count = read_raw<std::uint32_t>(f);

  std::map<std::string, Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_raw<std::uint32_t>(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const auto rank = read_raw<std::uint32_t>(f);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(read_raw<std::uint64_t>(f));
    Tensor tensor(shape);
    f.read(reinterpret_cast<char*>(tensor.v.data()),
           static_cast<std::streamsize>(tensor.v.size() * sizeof(double)));
    if (!f) throw std::runtime_error("load_checkpoint: truncated tensor payload");
    out.emplace(std::move(name), std::move(tensor));
  }
  return out;
}

}  // namespace cosetconv
