#include "cosetconv/harness.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace cosetconv {

double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

double fd_max_rel_err(const std::function<double()>& loss, std::span<double* const> slots,
                      std::span<const double> analytic, double h) {
  if (slots.size() != analytic.size())
    throw std::invalid_argument("fd_max_rel_err: slot/gradient size mismatch");
  if (slots.empty()) return 0.0;

  // Roundoff in a central difference is ~eps*|f|/h; differences below that
  // carry no signal about the analytic gradient.
  const double f0 = loss();
  const double noise = 8.0 * 2.2e-16 * std::max(1.0, std::abs(f0)) / h;

  std::vector<double> fd(slots.size());
  double gmax = 0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    double* p = slots[i];
    const double saved = *p;
    *p = saved + h;
    const double up = loss();
    *p = saved - h;
    const double down = loss();
    *p = saved;
    fd[i] = (up - down) / (2.0 * h);
    gmax = std::max({gmax, std::abs(fd[i]), std::abs(analytic[i])});
  }
  double worst = 0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const double diff = std::abs(fd[i] - analytic[i]);
    const double denom = std::max({std::abs(fd[i]), std::abs(analytic[i]), 1e-3 * gmax, noise});
    worst = std::max(worst, diff / denom);
  }
  return worst;
}

namespace {

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec3 v{g(rng), g(rng), g(rng)};
  while (v.norm() < 1e-9) v = {g(rng), g(rng), g(rng)};
  return v.normalized();
}

RigidTransform draw_transform(std::mt19937_64& rng, const EquivOptions& opts) {
  if (!opts.translation_only) return random_se3(rng, opts.translation_bound);
  RigidTransform t;
  if (opts.translation_bound > 0) {
    std::uniform_real_distribution<double> u(-opts.translation_bound, opts.translation_bound);
    t.translation = {u(rng), u(rng), u(rng)};
  }
  return t;
}

double coset_level_deviation(const EquivOptions& opts) {
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double radius = 0.8;
  double worst = 0;
  for (int p = 0; p < opts.pairs; ++p) {
    const Vec3 x{u01(rng), u01(rng), u01(rng)};
    const Vec3 n = random_unit(rng);
    const Vec3 ni = random_unit(rng);
    // Neighbor strictly inside the ball, away from the coincident corner.
    const Vec3 xi = x + random_unit(rng) * (radius * (0.05 + 0.9 * u01(rng)));
    const DoubleCosetParams ref = encode_double_coset(x, n, xi, ni, radius);
    const int reps = std::max(1, opts.transforms / std::max(1, opts.pairs / 10));
    for (int s = 0; s < reps; ++s) {
      const RigidTransform t = draw_transform(rng, opts);
      const DoubleCosetParams got =
          encode_double_coset(t.apply_point(x), t.apply_dir(n), t.apply_point(xi),
                              t.apply_dir(ni), radius);
      worst = std::max({worst, std::abs(got.beta - ref.beta), std::abs(got.rbar - ref.rbar),
                        std::abs(got.zbar - ref.zbar)});
    }
  }
  return worst;
}

PointCloud equiv_test_cloud(int points, std::uint64_t seed) {
  ShapeSpec spec;
  spec.kind = ShapeKind::torus;
  spec.n_points = points;
  spec.noise_sigma = 0.02;
  spec.seed = seed;
  return sample_shape(spec);
}

PointCloud transform_for_test(const PointCloud& cloud, const RigidTransform& t,
                              bool negative_control) {
  PointCloud out = apply_transform(cloud, t);
  if (negative_control) out.normals = cloud.normals;  // break equivariance on purpose
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::logic_error("max_abs_diff: shape mismatch");
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.v[i] - b.v[i]));
  return worst;
}

Tensor block_features(BlockParams& params, const BlockConfig& cfg, const PointCloud& cloud,
                      const std::vector<int>& centroids) {
  Tape tape;
  ParamBinding binding;
  const BoundBlock bound = bind_block(tape, binding, params, cfg.residual);
  BlockInput input;
  input.geom = &cloud;
  input.feats = ops::constant(
      tape, Tensor::full({cloud.size(), static_cast<std::size_t>(cfg.conv.c_in)}, 1.0));
  const std::vector<std::vector<int>> preset = {centroids};
  auto outs = conv_block_batch(tape, std::span<const BlockInput>(&input, 1), cfg, bound, params,
                               true, &preset);
  return tape.val(outs[0].feats);
}

}  // namespace

Tensor network_features(Classifier& model, const PointCloud& cloud,
                        std::vector<std::vector<int>>* centroid_plan) {
  Tape tape;
  ParamBinding binding;
  const BoundClassifier bound = bind_classifier(tape, binding, model);

  PointCloud geom;
  geom.coords = cloud.coords;
  geom.normals = (model.cfg.use_true_normals && cloud.has_normals())
                     ? cloud.normals
                     : augment_cosets(geom.coords,
                                      std::min<int>(model.cfg.coset_k, geom.coords.size()));
  BlockInput stage;
  stage.geom = &geom;
  stage.feats = ops::constant(
      tape, Tensor::full({geom.size(), static_cast<std::size_t>(model.cfg.input_channels)}, 1.0));

  const bool have_plan = centroid_plan && !centroid_plan->empty();
  if (centroid_plan && !have_plan) centroid_plan->resize(model.cfg.blocks.size());

  PointCloud next;
  for (std::size_t layer = 0; layer < model.cfg.blocks.size(); ++layer) {
    const BlockConfig& cfg = model.cfg.blocks[layer];
    std::vector<std::vector<int>> preset;
    if (have_plan) {
      preset = {(*centroid_plan)[layer]};
    } else {
      preset = {farthest_point_sampling(geom, cfg.m, 0)};
      if (centroid_plan) (*centroid_plan)[layer] = preset[0];
    }
    auto outs = conv_block_batch(tape, std::span<const BlockInput>(&stage, 1), cfg,
                                 bound.blocks[layer], model.blocks[layer], true, &preset);
    next = std::move(outs[0].geom);
    geom = std::move(next);
    stage.geom = &geom;
    stage.feats = outs[0].feats;
  }
  return tape.val(stage.feats);
}

EquivReport run_equivariance_suite(const EquivOptions& opts) {
  EquivReport report;
  report.tol_coset = opts.tol_coset;
  report.tol_layer = opts.tol_layer;
  report.tol_network = opts.tol_network;
  report.negative_control = opts.negative_control;

  report.coset_max_dev = coset_level_deviation(opts);

  if (opts.model.blocks.empty())
    throw std::invalid_argument("run_equivariance_suite: model config has no blocks");

  const PointCloud cloud = equiv_test_cloud(opts.points, opts.seed + 11);

  // Layer level: one block, centroid indices pinned so runs are comparable.
  {
    const BlockConfig& cfg = opts.model.blocks.front();
    BlockParams params = BlockParams::init(cfg, opts.seed + 21);
    const std::vector<int> centroids = farthest_point_sampling(cloud, cfg.m, 0);
    const Tensor ref = block_features(params, cfg, cloud, centroids);
    std::mt19937_64 rng(opts.seed + 31);
    for (int s = 0; s < opts.transforms; ++s) {
      const RigidTransform t = draw_transform(rng, opts);
      const PointCloud moved = transform_for_test(cloud, t, opts.negative_control);
      const Tensor got = block_features(params, cfg, moved, centroids);
      report.layer_max_dev = std::max(report.layer_max_dev, max_abs_diff(ref, got));
    }
  }

  // Network level: the full stack with a per-level centroid plan.
  {
    Classifier model = Classifier::init(opts.model);
    std::vector<std::vector<int>> plan;
    const Tensor ref = network_features(model, cloud, &plan);
    std::mt19937_64 rng(opts.seed + 41);
    for (int s = 0; s < opts.transforms; ++s) {
      const RigidTransform t = draw_transform(rng, opts);
      const PointCloud moved = transform_for_test(cloud, t, opts.negative_control);
      const Tensor got = network_features(model, moved, &plan);
      report.network_max_dev = std::max(report.network_max_dev, max_abs_diff(ref, got));
    }
  }

  report.pass = report.coset_max_dev <= report.tol_coset &&
                report.layer_max_dev <= report.tol_layer &&
                report.network_max_dev <= report.tol_network;
  return report;
}

namespace {

std::vector<double*> tensor_slots(std::initializer_list<Tensor*> tensors) {
  std::vector<double*> slots;
  for (Tensor* t : tensors)
    for (auto& x : t->v) slots.push_back(&x);
  return slots;
}

void append_grad(std::vector<double>& out, const Tensor& g) {
  out.insert(out.end(), g.v.begin(), g.v.end());
}

void randomize(Tensor& t, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& x : t.v) x = u(rng);
}

double check_conv(KernelOrdering ordering, std::uint64_t seed, double h) {
  std::mt19937_64 rng(seed);
  const int k = 5, a = 3, cin = 4, cout = 3;
  Tensor feats({k, cin}), omegas({k, a});
  randomize(feats, rng);
  randomize(omegas, rng);
  AnchorBases bases = AnchorBases::init(a, cout, cin, seed + 1);
  randomize(bases.w, rng);
  std::vector<double> probe(cout);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& x : probe) x = u(rng);

  auto loss = [&]() {
    const std::vector<double> y =
        ordering == KernelOrdering::implicit_form
            ? conv_forward_implicit(feats, omegas, bases, k, nullptr)
            : conv_forward_explicit(feats, omegas, bases, k, nullptr);
    double s = 0;
    for (int o = 0; o < cout; ++o) s += probe[o] * y[o];
    return s;
  };

  ConvTape tape;
  if (ordering == KernelOrdering::implicit_form)
    conv_forward_implicit(feats, omegas, bases, k, &tape);
  else
    conv_forward_explicit(feats, omegas, bases, k, &tape);
  const ConvGrads g = conv_backward(ordering, tape, probe, bases);

  std::vector<double> analytic;
  append_grad(analytic, g.feats);
  append_grad(analytic, g.omegas);
  append_grad(analytic, g.bases);
  const auto slots = tensor_slots({&feats, &omegas, &bases.w});
  return fd_max_rel_err(loss, slots, analytic, h);
}

double check_coeff_net(std::uint64_t seed, double h) {
  std::mt19937_64 rng(seed);
  CoefficientNet net = CoefficientNet::init(6, {8, 8}, 4, seed + 1);
  Tensor emb({6});
  randomize(emb, rng);
  std::vector<double> probe(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& x : probe) x = u(rng);

  auto loss = [&]() {
    const std::vector<double> y = coeff_forward(net, emb.v);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += probe[i] * y[i];
    return s;
  };

  CoeffTape tape;
  coeff_forward(net, emb.v, &tape);
  CoeffGrads grads = coeff_grads_like(net);
  std::vector<double> d_emb;
  coeff_backward(net, tape, probe, grads, &d_emb);

  std::vector<double> analytic;
  std::vector<double*> slots;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    append_grad(analytic, grads.weights[l]);
    for (auto& x : net.weights[l].v) slots.push_back(&x);
    append_grad(analytic, grads.biases[l]);
    for (auto& x : net.biases[l].v) slots.push_back(&x);
  }
  analytic.insert(analytic.end(), d_emb.begin(), d_emb.end());
  for (auto& x : emb.v) slots.push_back(&x);
  return fd_max_rel_err(loss, slots, analytic, h);
}

// Shared scaffolding for tape-op checks: rebuild the tape per evaluation,
// probe-weight the output, and backprop the probe as the seed.
double check_tape_graph(std::initializer_list<Tensor*> inputs_and_params,
                        const std::function<int(Tape&, const std::vector<int>&)>& build,
                        std::uint64_t seed, double h) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  std::vector<Tensor*> tensors(inputs_and_params);

  // First pass fixes the probe from the output shape.
  Tensor probe;
  {
    Tape tape;
    std::vector<int> vars;
    for (Tensor* t : tensors) vars.push_back(tape.add_value(*t));
    const int out = build(tape, vars);
    probe = Tensor(tape.val(out).shape);
    for (auto& x : probe.v) x = u(rng);
  }

  auto loss = [&]() {
    Tape tape;
    std::vector<int> vars;
    for (Tensor* t : tensors) vars.push_back(tape.add_value(*t));
    const int out = build(tape, vars);
    const Tensor& y = tape.val(out);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += probe.v[i] * y.v[i];
    return s;
  };

  std::vector<double> analytic;
  {
    Tape tape;
    std::vector<int> vars;
    for (Tensor* t : tensors) vars.push_back(tape.add_value(*t));
    const int out = build(tape, vars);
    tape.backward_seed(out, probe);
    for (int v : vars) append_grad(analytic, tape.grad(v));
  }
  std::vector<double*> slots;
  for (Tensor* t : tensors)
    for (auto& x : t->v) slots.push_back(&x);
  return fd_max_rel_err(loss, slots, analytic, h);
}

double check_linear(std::uint64_t seed, double h) {
  std::mt19937_64 rng(seed);
  Tensor x({5, 4}), w({3, 4}), b({3});
  randomize(x, rng);
  randomize(w, rng);
  randomize(b, rng);
  return check_tape_graph({&x, &w, &b},
                          [](Tape& t, const std::vector<int>& v) {
                            return ops::linear(t, v[0], v[1], v[2]);
                          },
                          seed, h);
}

double check_gelu(std::uint64_t seed, double h) {
  std::mt19937_64 rng(seed);
  Tensor x({4, 6});
  randomize(x, rng, 2.0);
  return check_tape_graph({&x},
                          [](Tape& t, const std::vector<int>& v) { return ops::gelu(t, v[0]); },
                          seed, h);
}

double check_batch_norm(std::uint64_t seed, double h) {
  std::mt19937_64 rng(seed);
  Tensor x({7, 3}), gamma({3}), beta({3});
  randomize(x, rng);
  randomize(gamma, rng);
  randomize(beta, rng);
  return check_tape_graph({&x, &gamma, &beta},
                          [](Tape& t, const std::vector<int>& v) {
                            return ops::batch_norm(t, {v[0]}, v[1], v[2], nullptr, true)[0];
                          },
                          seed, h);
}

double check_loss(std::uint64_t seed, double h) {
  std::mt19937_64 rng(seed);
  const int c = 5;
  Tensor logits({static_cast<std::size_t>(c)});
  randomize(logits, rng, 2.0);
  const int label = static_cast<int>(seed % c);
  const double eps = 0.2;

  auto loss = [&]() { return smoothed_cross_entropy(logits.v, label, eps); };
  std::vector<double> analytic;
  smoothed_cross_entropy(logits.v, label, eps, &analytic);
  std::vector<double*> slots;
  for (auto& x : logits.v) slots.push_back(&x);
  return fd_max_rel_err(loss, slots, analytic, h);
}

double check_feature_propagation(std::uint64_t seed, double h) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointCloud fine, coarse;
  for (int i = 0; i < 9; ++i) fine.coords.push_back({u(rng), u(rng), u(rng)});
  for (int i = 0; i < 5; ++i) coarse.coords.push_back({u(rng), u(rng), u(rng)});
  Tensor fine_feats({9, 2}), coarse_feats({5, 3});
  randomize(fine_feats, rng);
  randomize(coarse_feats, rng);
  return check_tape_graph({&fine_feats, &coarse_feats},
                          [&](Tape& t, const std::vector<int>& v) {
                            return feature_propagation(t, fine, v[0], coarse, v[1], 3);
                          },
                          seed, h);
}

double check_residual_block(std::uint64_t seed, double h) {
  std::mt19937_64 rng(seed);
  BlockConfig cfg;
  cfg.m = 6;
  cfg.conv.max_neighbors = 4;
  cfg.conv.radius = 1.5;
  cfg.conv.anchors = 2;
  cfg.conv.c_in = 3;
  cfg.conv.c_out = 4;
  cfg.conv.embed_d = 3;
  cfg.conv.embed_sigma = 0.2;
  cfg.residual = true;
  cfg.coeff_hidden = {6};

  PointCloud cloud;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 12; ++i) cloud.coords.push_back({u(rng), u(rng), u(rng)});
  cloud.normals = augment_cosets(cloud.coords, 5);
  Tensor feats({12, 3});
  randomize(feats, rng);

  BlockParams params = BlockParams::init(cfg, seed + 3);
  std::vector<Tensor*> tensors = {&feats, &params.bases, &params.res_w, &params.res_b,
                                  &params.bn.gamma, &params.bn.beta};
  for (auto& w : params.coeff.weights) tensors.push_back(&w);
  for (auto& b : params.coeff.biases) tensors.push_back(&b);

  const std::vector<int> centroids = farthest_point_sampling(cloud, cfg.m, 0);
  const std::vector<std::vector<int>> preset = {centroids};

  auto forward = [&](Tape& tape) {
    ParamBinding binding;
    const BoundBlock bound = bind_block(tape, binding, params, true);
    BlockInput input;
    input.geom = &cloud;
    input.feats = tape.add_value(feats);
    auto outs = conv_block_batch(tape, std::span<const BlockInput>(&input, 1), cfg, bound, params,
                                 true, &preset);
    // The params were re-bound from the (possibly perturbed) tensors; input
    // feats var must be differentiated too.
    return std::make_tuple(outs[0].feats, input.feats, binding);
  };

  Tensor probe;
  {
    Tape tape;
    auto [out, fvar, binding] = forward(tape);
    probe = Tensor(tape.val(out).shape);
    for (auto& x : probe.v) x = u(rng);
  }
  auto loss = [&]() {
    Tape tape;
    auto [out, fvar, binding] = forward(tape);
    const Tensor& y = tape.val(out);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += probe.v[i] * y.v[i];
    return s;
  };

  std::vector<double> analytic;
  std::vector<double*> slots;
  {
    Tape tape;
    auto [out, fvar, binding] = forward(tape);
    tape.backward_seed(out, probe);
    append_grad(analytic, tape.grad(fvar));
    for (auto& x : feats.v) slots.push_back(&x);
    for (const auto& [param, var] : binding.entries) {
      append_grad(analytic, tape.grad(var));
      for (auto& x : param->v) slots.push_back(&x);
    }
  }
  return fd_max_rel_err(loss, slots, analytic, h);
}

}  // namespace

GradcheckReport run_gradcheck_suite(const GradcheckOptions& opts,
                                    const std::vector<std::string>& ops) {
  struct OpCheck {
    const char* name;
    std::function<double(std::uint64_t, double)> run;
  };
  const OpCheck all[] = {
      {"conv_implicit",
       [](std::uint64_t s, double h) { return check_conv(KernelOrdering::implicit_form, s, h); }},
      {"conv_explicit",
       [](std::uint64_t s, double h) { return check_conv(KernelOrdering::explicit_form, s, h); }},
      {"coefficient_net", check_coeff_net},
      {"batch_norm", check_batch_norm},
      {"gelu", check_gelu},
      {"linear", check_linear},
      {"residual_block", check_residual_block},
      {"feature_propagation", check_feature_propagation},
      {"loss", check_loss},
  };

  GradcheckReport report;
  report.tol = opts.tol;
  report.pass = true;
  for (const auto& op : all) {
    if (!ops.empty() && std::find(ops.begin(), ops.end(), op.name) == ops.end()) continue;
    double worst = 0;
    for (int s = 0; s < opts.seeds; ++s)
      worst = std::max(worst, op.run(opts.seed + 7919ull * s, opts.h));
    report.op_max_rel_err.push_back({op.name, worst});
    if (worst > opts.tol) report.pass = false;
  }
  return report;
}

}  // namespace cosetconv
