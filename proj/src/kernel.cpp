#include "cosetconv/kernel.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "cosetconv/mathutil.hpp"

namespace cosetconv {

const char* ordering_name(KernelOrdering o) {
  return o == KernelOrdering::implicit_form ? "implicit" : "explicit";
}

KernelOrdering ordering_from_name(const std::string& name) {
  if (name == "implicit") return KernelOrdering::implicit_form;
  if (name == "explicit") return KernelOrdering::explicit_form;
  throw std::invalid_argument("unknown kernel ordering '" + name + "'");
}

void ConvConfig::validate() const {
  if (anchors < 1 || c_in < 1 || c_out < 1 || max_neighbors < 1 || embed_d < 1)
    throw std::invalid_argument("ConvConfig: counts must be >= 1");
  if (!(radius > 0) || !(embed_sigma > 0))
    throw std::invalid_argument("ConvConfig: radius and sigma must be positive");
}

std::uint64_t conv_saved_scalars_dominant(KernelOrdering o, std::uint64_t a, std::uint64_t k,
                                          std::uint64_t c_in, std::uint64_t c_out) {
  if (o == KernelOrdering::implicit_form) return a * k * c_in * c_out;
  return a * (k * c_in + c_in * c_out);
}

std::uint64_t conv_saved_scalars_model(KernelOrdering o, std::uint64_t a, std::uint64_t k,
                                       std::uint64_t c_in, std::uint64_t c_out) {
  const std::uint64_t inputs = k * c_in + k * a;  // saved feats + omegas
  if (o == KernelOrdering::implicit_form)
    return conv_saved_scalars_dominant(o, a, k, c_in, c_out) + 2 * k * c_in * c_out + inputs;
  return conv_saved_scalars_dominant(o, a, k, c_in, c_out) + 2 * a * c_in + inputs;
}

std::uint64_t conv_flops_forward_model(KernelOrdering o, std::uint64_t a, std::uint64_t k,
                                       std::uint64_t c_in, std::uint64_t c_out) {
  if (o == KernelOrdering::implicit_form) return 2 * k * c_in * c_out * (a + 1);
  return 2 * a * (k * c_in + c_in * c_out);
}

std::uint64_t conv_flops_backward_model(KernelOrdering o, std::uint64_t a, std::uint64_t k,
                                        std::uint64_t c_in, std::uint64_t c_out) {
  if (o == KernelOrdering::implicit_form) return 4 * a * k * c_in * c_out + 3 * k * c_in * c_out;
  return 4 * a * (k * c_in + c_in * c_out);
}

AnchorBases AnchorBases::init(int count, int c_out, int c_in, std::uint64_t seed) {
  if (count < 1 || c_out < 1 || c_in < 1)
    throw std::invalid_argument("AnchorBases: counts must be >= 1");
  AnchorBases b;
  b.count = count;
  b.c_out = c_out;
  b.c_in = c_in;
  b.w = Tensor({static_cast<std::size_t>(count), static_cast<std::size_t>(c_out),
                static_cast<std::size_t>(c_in)});
  std::mt19937_64 rng(seed);
  init_fan_in_uniform(b.w, static_cast<std::size_t>(c_in), rng);
  return b;
}

std::size_t CoefficientNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += w.size();
  for (const auto& b : biases) n += b.size();
  return n;
}

CoefficientNet CoefficientNet::init(int in_dim, const std::vector<int>& hidden, int out_dim,
                                    std::uint64_t seed) {
  if (in_dim < 1 || out_dim < 1)
    throw std::invalid_argument("CoefficientNet: dimensions must be >= 1");
  std::mt19937_64 rng(seed);
  CoefficientNet net;
  int prev = in_dim;
  auto push = [&](int out) {
    Tensor w({static_cast<std::size_t>(out), static_cast<std::size_t>(prev)});
    Tensor b({static_cast<std::size_t>(out)});
    init_fan_in_uniform(w, static_cast<std::size_t>(prev), rng);
    init_fan_in_uniform(b, static_cast<std::size_t>(prev), rng);
    net.weights.push_back(std::move(w));
    net.biases.push_back(std::move(b));
    prev = out;
  };
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("CoefficientNet: hidden width must be >= 1");
    push(h);
  }
  push(out_dim);
  return net;
}

std::vector<double> coeff_forward(const CoefficientNet& net, std::span<const double> embedding,
                                  CoeffTape* tape) {
  if (net.weights.empty()) throw std::invalid_argument("coeff_forward: uninitialized net");
  if (static_cast<int>(embedding.size()) != net.input_dim())
    throw std::invalid_argument("coeff_forward: embedding length does not match input width");

  std::vector<double> cur(embedding.begin(), embedding.end());
  if (tape) {
    tape->layer_inputs.clear();
    tape->pre_acts.clear();
  }
  const std::size_t layers = net.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    const Tensor& w = net.weights[l];
    const Tensor& b = net.biases[l];
    if (tape) {
      Tensor in({cur.size()});
      in.v = cur;
      tape->layer_inputs.push_back(std::move(in));
    }
    std::vector<double> next(w.rows());
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double s = b.v[o];
      const double* wr = w.row(o);
      for (std::size_t i = 0; i < w.cols(); ++i) s += wr[i] * cur[i];
      next[o] = s;
    }
    if (l + 1 < layers) {
      if (tape) {
        Tensor pre({next.size()});
        pre.v = next;
        tape->pre_acts.push_back(std::move(pre));
      }
      for (auto& x : next) x = gelu(x);
    }
    cur = std::move(next);
  }
  return cur;
}

CoeffGrads coeff_grads_like(const CoefficientNet& net) {
  CoeffGrads g;
  for (const auto& w : net.weights) g.weights.push_back(Tensor(w.shape));
  for (const auto& b : net.biases) g.biases.push_back(Tensor(b.shape));
  return g;
}

void coeff_backward(const CoefficientNet& net, const CoeffTape& tape,
                    std::span<const double> upstream, CoeffGrads& grads,
                    std::vector<double>* d_embedding) {
  const std::size_t layers = net.weights.size();
  if (tape.layer_inputs.size() != layers)
    throw std::logic_error("coeff_backward: tape does not match net");
  if (static_cast<int>(upstream.size()) != net.output_dim())
    throw std::invalid_argument("coeff_backward: upstream length mismatch");

  std::vector<double> d_out(upstream.begin(), upstream.end());
  for (std::size_t li = layers; li-- > 0;) {
    const Tensor& w = net.weights[li];
    const Tensor& in = tape.layer_inputs[li];
    // d pre-activation: hidden layers pass through the GELU derivative
    if (li + 1 < layers) {
      const Tensor& pre = tape.pre_acts[li];
      for (std::size_t o = 0; o < d_out.size(); ++o) d_out[o] *= gelu_grad(pre.v[o]);
    }
    Tensor& gw = grads.weights[li];
    Tensor& gb = grads.biases[li];
    for (std::size_t o = 0; o < w.rows(); ++o) {
      gb.v[o] += d_out[o];
      double* gwr = gw.row(o);
      for (std::size_t i = 0; i < w.cols(); ++i) gwr[i] += d_out[o] * in.v[i];
    }
    if (li > 0 || d_embedding) {
      std::vector<double> d_in(w.cols(), 0.0);
      for (std::size_t o = 0; o < w.rows(); ++o) {
        const double* wr = w.row(o);
        const double g = d_out[o];
        for (std::size_t i = 0; i < w.cols(); ++i) d_in[i] += g * wr[i];
      }
      if (li == 0) {
        *d_embedding = std::move(d_in);
        break;
      }
      d_out = std::move(d_in);
    }
  }
}

namespace {

void check_conv_inputs(const Tensor& feats, const Tensor& omegas, const AnchorBases& bases,
                       int k_actual) {
  if (feats.shape.size() != 2 || omegas.shape.size() != 2)
    throw std::invalid_argument("conv_forward: feats and omegas must be 2-D");
  if (feats.rows() != omegas.rows())
    throw std::invalid_argument("conv_forward: feats/omegas row counts disagree");
  if (static_cast<int>(feats.cols()) != bases.c_in)
    throw std::invalid_argument("conv_forward: feature width does not match bases c_in");
  if (static_cast<int>(omegas.cols()) != bases.count)
    throw std::invalid_argument("conv_forward: omega width does not match anchor count");
  if (k_actual < 0 || k_actual > static_cast<int>(feats.rows()))
    throw std::invalid_argument("conv_forward: k_actual out of range");
}

}  // namespace

std::vector<double> conv_forward_implicit(const Tensor& feats, const Tensor& omegas,
                                          const AnchorBases& bases, int k_actual, ConvTape* tape,
                                          bool normalize_by_count) {
  check_conv_inputs(feats, omegas, bases, k_actual);
  const int a = bases.count, cin = bases.c_in, cout = bases.c_out;
  const std::size_t plane = static_cast<std::size_t>(cout) * cin;
  const double scale = (normalize_by_count && k_actual > 0) ? 1.0 / k_actual : 1.0;

  std::vector<double> y(cout, 0.0);
  Tensor kernels({static_cast<std::size_t>(k_actual), static_cast<std::size_t>(cout),
                  static_cast<std::size_t>(cin)});
  for (int i = 0; i < k_actual; ++i) {
    double* kap = kernels.v.data() + i * plane;
    const double* om = omegas.row(i);
    for (int j = 0; j < a; ++j) {
      const double w = om[j];
      const double* bj = bases.basis(j);
      for (std::size_t t = 0; t < plane; ++t) kap[t] += w * bj[t];
    }
    const double* f = feats.row(i);
    for (int o = 0; o < cout; ++o) {
      const double* kr = kap + static_cast<std::size_t>(o) * cin;
      double s = 0;
      for (int c = 0; c < cin; ++c) s += kr[c] * f[c];
      y[o] += s;
    }
  }
  if (scale != 1.0)
    for (auto& v : y) v *= scale;

  if (tape) {
    tape->ordering = KernelOrdering::implicit_form;
    tape->anchors = a;
    tape->k_actual = k_actual;
    tape->c_in = cin;
    tape->c_out = cout;
    tape->normalize_by_count = normalize_by_count;
    tape->forward_done = true;
    tape->feats = Tensor({static_cast<std::size_t>(k_actual), static_cast<std::size_t>(cin)});
    tape->omegas = Tensor({static_cast<std::size_t>(k_actual), static_cast<std::size_t>(a)});
    for (int i = 0; i < k_actual; ++i) {
      std::copy(feats.row(i), feats.row(i) + cin, tape->feats.row(i));
      std::copy(omegas.row(i), omegas.row(i) + a, tape->omegas.row(i));
    }
    tape->kernels = std::move(kernels);
    tape->sums = Tensor();
    const std::uint64_t uk = k_actual, ua = a, uci = cin, uco = cout;
    tape->counters = StorageCounters{};
    // retained: per-neighbor kernels + input copies
    tape->counters.saved_intermediate_scalars += uk * uco * uci + uk * uci + uk * ua;
    tape->counters.flop_forward += 2 * uk * uci * uco * (ua + 1);
  }
  return y;
}

std::vector<double> conv_forward_explicit(const Tensor& feats, const Tensor& omegas,
                                          const AnchorBases& bases, int k_actual, ConvTape* tape,
                                          bool normalize_by_count) {
  check_conv_inputs(feats, omegas, bases, k_actual);
  const int a = bases.count, cin = bases.c_in, cout = bases.c_out;
  const double scale = (normalize_by_count && k_actual > 0) ? 1.0 / k_actual : 1.0;

  Tensor sums({static_cast<std::size_t>(a), static_cast<std::size_t>(cin)});
  for (int i = 0; i < k_actual; ++i) {
    const double* f = feats.row(i);
    const double* om = omegas.row(i);
    for (int j = 0; j < a; ++j) {
      const double w = om[j];
      double* sj = sums.row(j);
      for (int c = 0; c < cin; ++c) sj[c] += w * f[c];
    }
  }
  std::vector<double> y(cout, 0.0);
  for (int j = 0; j < a; ++j) {
    const double* sj = sums.row(j);
    const double* bj = bases.basis(j);
    for (int o = 0; o < cout; ++o) {
      const double* br = bj + static_cast<std::size_t>(o) * cin;
      double s = 0;
      for (int c = 0; c < cin; ++c) s += br[c] * sj[c];
      y[o] += s;
    }
  }
  if (scale != 1.0)
    for (auto& v : y) v *= scale;

  if (tape) {
    tape->ordering = KernelOrdering::explicit_form;
    tape->anchors = a;
    tape->k_actual = k_actual;
    tape->c_in = cin;
    tape->c_out = cout;
    tape->normalize_by_count = normalize_by_count;
    tape->forward_done = true;
    tape->feats = Tensor({static_cast<std::size_t>(k_actual), static_cast<std::size_t>(cin)});
    tape->omegas = Tensor({static_cast<std::size_t>(k_actual), static_cast<std::size_t>(a)});
    for (int i = 0; i < k_actual; ++i) {
      std::copy(feats.row(i), feats.row(i) + cin, tape->feats.row(i));
      std::copy(omegas.row(i), omegas.row(i) + a, tape->omegas.row(i));
    }
    tape->sums = std::move(sums);
    tape->kernels = Tensor();
    const std::uint64_t uk = k_actual, ua = a, uci = cin;
    tape->counters = StorageCounters{};
    // retained: inner sums + input copies
    tape->counters.saved_intermediate_scalars += ua * uci + uk * uci + uk * ua;
    tape->counters.flop_forward +=
        2 * ua * (uk * uci + uci * static_cast<std::uint64_t>(cout));
  }
  return y;
}

ConvGrads conv_backward(KernelOrdering ordering, ConvTape& tape,
                        std::span<const double> upstream, const AnchorBases& bases) {
  if (!tape.forward_done) throw std::logic_error("conv_backward: tape has not run forward");
  if (tape.ordering != ordering)
    throw std::logic_error("conv_backward: tape ordering does not match requested ordering");
  if (static_cast<int>(upstream.size()) != tape.c_out)
    throw std::invalid_argument("conv_backward: upstream length mismatch");
  if (bases.count != tape.anchors || bases.c_in != tape.c_in || bases.c_out != tape.c_out)
    throw std::invalid_argument("conv_backward: bases shape does not match tape");

  const int a = tape.anchors, k = tape.k_actual, cin = tape.c_in, cout = tape.c_out;
  const std::size_t plane = static_cast<std::size_t>(cout) * cin;
  const double scale = (tape.normalize_by_count && k > 0) ? 1.0 / k : 1.0;

  std::vector<double> up(upstream.begin(), upstream.end());
  if (scale != 1.0)
    for (auto& v : up) v *= scale;

  ConvGrads g;
  g.feats = Tensor({static_cast<std::size_t>(k), static_cast<std::size_t>(cin)});
  g.omegas = Tensor({static_cast<std::size_t>(k), static_cast<std::size_t>(a)});
  g.bases = Tensor(bases.w.shape);

  const std::uint64_t uk = k, ua = a, uci = cin, uco = cout;

  if (ordering == KernelOrdering::implicit_form) {
    std::vector<double> kbar(plane);    // cotangent of one per-neighbor kernel
    std::vector<double> product(plane); // one per-(neighbor, basis) gradient product
    for (int i = 0; i < k; ++i) {
      const double* f = tape.feats.row(i);
      const double* kap = tape.kernels.v.data() + i * plane;
      // d feats_i = kappa_i^T ybar
      double* gf = g.feats.row(i);
      for (int o = 0; o < cout; ++o) {
        const double u = up[o];
        const double* kr = kap + static_cast<std::size_t>(o) * cin;
        for (int c = 0; c < cin; ++c) gf[c] += u * kr[c];
      }
      // kbar_i = outer(ybar, f_i)
      for (int o = 0; o < cout; ++o) {
        const double u = up[o];
        double* row = kbar.data() + static_cast<std::size_t>(o) * cin;
        for (int c = 0; c < cin; ++c) row[c] = u * f[c];
      }
      tape.counters.saved_intermediate_scalars += plane;
      const double* om = tape.omegas.row(i);
      double* go = g.omegas.row(i);
      for (int j = 0; j < a; ++j) {
        // d omega_ij = <kbar_i, W_j>
        const double* bj = bases.basis(j);
        double dot = 0;
        for (std::size_t t = 0; t < plane; ++t) dot += kbar[t] * bj[t];
        go[j] = dot;
        // d W_j += omega_ij * kbar_i, materialized per pair before accumulation
        const double w = om[j];
        double* gb = g.bases.v.data() + static_cast<std::size_t>(j) * plane;
        for (std::size_t t = 0; t < plane; ++t) product[t] = w * kbar[t];
        for (std::size_t t = 0; t < plane; ++t) gb[t] += product[t];
        tape.counters.saved_intermediate_scalars += plane;
      }
    }
    tape.counters.flop_backward += 4 * ua * uk * uci * uco + 3 * uk * uci * uco;
  } else {
    Tensor sbar({static_cast<std::size_t>(a), static_cast<std::size_t>(cin)});
    std::vector<double> product(static_cast<std::size_t>(cout) * cin);
    for (int j = 0; j < a; ++j) {
      const double* bj = bases.basis(j);
      double* sb = sbar.row(j);
      // sbar_j = W_j^T ybar
      for (int o = 0; o < cout; ++o) {
        const double u = up[o];
        const double* br = bj + static_cast<std::size_t>(o) * cin;
        for (int c = 0; c < cin; ++c) sb[c] += u * br[c];
      }
      // d W_j += outer(ybar, s_j), materialized per basis
      const double* sj = tape.sums.row(j);
      for (int o = 0; o < cout; ++o) {
        const double u = up[o];
        double* row = product.data() + static_cast<std::size_t>(o) * cin;
        for (int c = 0; c < cin; ++c) row[c] = u * sj[c];
      }
      double* gb = g.bases.v.data() + static_cast<std::size_t>(j) * plane;
      for (std::size_t t = 0; t < plane; ++t) gb[t] += product[t];
    }
    tape.counters.saved_intermediate_scalars += ua * uci + ua * uci * uco;

    std::vector<double> fprod(cin);  // one per-(neighbor, basis) feature-gradient product
    for (int i = 0; i < k; ++i) {
      const double* f = tape.feats.row(i);
      const double* om = tape.omegas.row(i);
      double* gf = g.feats.row(i);
      double* go = g.omegas.row(i);
      for (int j = 0; j < a; ++j) {
        const double* sb = sbar.row(j);
        double dot = 0;
        for (int c = 0; c < cin; ++c) dot += f[c] * sb[c];
        go[j] = dot;
        const double w = om[j];
        for (int c = 0; c < cin; ++c) fprod[c] = w * sb[c];
        for (int c = 0; c < cin; ++c) gf[c] += fprod[c];
        tape.counters.saved_intermediate_scalars += uci;
      }
    }
    tape.counters.flop_backward += 4 * ua * (uk * uci + uci * uco);
  }
  return g;
}

std::vector<CostSample> measure_costs(const std::vector<CostSweepPoint>& sweep,
                                      std::uint64_t seed, int repeats, double min_sample_ms) {
  if (sweep.empty()) throw std::invalid_argument("measure_costs: sweep must be nonempty");
  using clock = std::chrono::steady_clock;

  std::vector<CostSample> out;
  for (const auto& pt : sweep) {
    if (pt.anchors < 1 || pt.k < 1 || pt.c_in < 1 || pt.c_out < 1)
      throw std::invalid_argument("measure_costs: sweep point counts must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor feats({static_cast<std::size_t>(pt.k), static_cast<std::size_t>(pt.c_in)});
    Tensor omegas({static_cast<std::size_t>(pt.k), static_cast<std::size_t>(pt.anchors)});
    for (auto& x : feats.v) x = u(rng);
    for (auto& x : omegas.v) x = u(rng);
    AnchorBases bases = AnchorBases::init(pt.anchors, pt.c_out, pt.c_in, seed ^ 0x9e3779b9ull);
    std::vector<double> upstream(pt.c_out);
    for (auto& x : upstream) x = u(rng);

    for (KernelOrdering ord : {KernelOrdering::implicit_form, KernelOrdering::explicit_form}) {
      auto run_forward = [&](ConvTape& tape) {
        if (ord == KernelOrdering::implicit_form)
          conv_forward_implicit(feats, omegas, bases, pt.k, &tape);
        else
          conv_forward_explicit(feats, omegas, bases, pt.k, &tape);
      };

      CostSample sample;
      sample.ordering = ord;
      sample.point = pt;
      {
        ConvTape tape;
        run_forward(tape);
        conv_backward(ord, tape, upstream, bases);
        sample.counters = tape.counters;
      }

      // Calibrate an inner iteration count so each timed sample is long
      // enough to be stable, then take the median over repeats.
      int iters = 1;
      for (;;) {
        const auto t0 = clock::now();
        for (int it = 0; it < iters; ++it) {
          ConvTape tape;
          run_forward(tape);
          conv_backward(ord, tape, upstream, bases);
        }
        const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        if (ms >= min_sample_ms || iters >= (1 << 20)) break;
        iters *= 2;
      }
      std::vector<double> total_ms(repeats), bwd_ms(repeats);
      for (int r = 0; r < repeats; ++r) {
        auto t0 = clock::now();
        for (int it = 0; it < iters; ++it) {
          ConvTape tape;
          run_forward(tape);
          conv_backward(ord, tape, upstream, bases);
        }
        total_ms[r] =
            std::chrono::duration<double, std::milli>(clock::now() - t0).count() / iters;

        ConvTape tape;
        run_forward(tape);
        t0 = clock::now();
        for (int it = 0; it < iters; ++it) {
          tape.counters = StorageCounters{};
          conv_backward(ord, tape, upstream, bases);
        }
        bwd_ms[r] = std::chrono::duration<double, std::milli>(clock::now() - t0).count() / iters;
      }
      std::sort(total_ms.begin(), total_ms.end());
      std::sort(bwd_ms.begin(), bwd_ms.end());
      sample.wall_ms = total_ms[repeats / 2];
      sample.wall_backward_ms = bwd_ms[repeats / 2];
      out.push_back(std::move(sample));
    }
  }
  return out;
}

void write_cost_csv(const std::string& path, const std::vector<CostSample>& samples) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_cost_csv: cannot open " + path);
  f << "ordering,A,K,cin,cout,saved_scalars,flop_fwd,flop_bwd,wall_ms\n";
  for (const auto& s : samples) {
    f << ordering_name(s.ordering) << ',' << s.point.anchors << ',' << s.point.k << ','
      << s.point.c_in << ',' << s.point.c_out << ',' << s.counters.saved_intermediate_scalars
      << ',' << s.counters.flop_forward << ',' << s.counters.flop_backward << ',' << s.wall_ms
      << '\n';
  }
}

}  // namespace cosetconv
