#include "cosetconv/tape.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "cosetconv/mathutil.hpp"

namespace cosetconv {

void Tape::backward(int root) {
  if (val(root).size() != 1) throw std::invalid_argument("Tape::backward: root must be scalar");
  Tensor seed({1});
  seed.v[0] = 1.0;
  backward_seed(root, seed);
}

void Tape::backward_seed(int root, const Tensor& seed) {
  if (!seed.same_shape(val(root)))
    throw std::invalid_argument("Tape::backward_seed: seed shape mismatch");
  Tensor& g = grad(root);
  for (std::size_t i = 0; i < g.size(); ++i) g.v[i] += seed.v[i];
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(*this);
}

namespace ops {

int constant(Tape& t, Tensor v) { return t.add_value(std::move(v)); }

int linear(Tape& t, int x, int w, int b) {
  const Tensor& xv = t.val(x);
  const Tensor& wv = t.val(w);
  if (xv.shape.size() != 2 || wv.shape.size() != 2 || xv.cols() != wv.cols())
    throw std::invalid_argument("ops::linear: shape mismatch");
  const std::size_t n = xv.rows(), in = xv.cols(), out = wv.rows();
  const double* bias = nullptr;
  if (b >= 0) {
    const Tensor& bv = t.val(b);
    if (bv.size() != out) throw std::invalid_argument("ops::linear: bias shape mismatch");
    bias = bv.v.data();
  }

  Tensor y({n, out});
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = xv.row(r);
    double* yr = y.row(r);
    for (std::size_t o = 0; o < out; ++o) {
      double s = bias ? bias[o] : 0.0;
      const double* wr = wv.row(o);
      for (std::size_t i = 0; i < in; ++i) s += wr[i] * xr[i];
      yr[o] = s;
    }
  }
  const int yid = t.add_value(std::move(y));
  t.push_node([x, w, b, yid, n, in, out](Tape& tp) {
    const Tensor& dy = tp.grad(yid);
    const Tensor& xv = tp.val(x);
    const Tensor& wv = tp.val(w);
    Tensor& dx = tp.grad(x);
    Tensor& dw = tp.grad(w);
    for (std::size_t r = 0; r < n; ++r) {
      const double* dyr = dy.row(r);
      const double* xr = xv.row(r);
      double* dxr = dx.row(r);
      for (std::size_t o = 0; o < out; ++o) {
        const double g = dyr[o];
        if (g == 0.0) continue;
        const double* wr = wv.row(o);
        double* dwr = dw.row(o);
        for (std::size_t i = 0; i < in; ++i) {
          dxr[i] += g * wr[i];
          dwr[i] += g * xr[i];
        }
      }
    }
    if (b >= 0) {
      Tensor& db = tp.grad(b);
      for (std::size_t r = 0; r < n; ++r) {
        const double* dyr = dy.row(r);
        for (std::size_t o = 0; o < out; ++o) db.v[o] += dyr[o];
      }
    }
  });
  return yid;
}

int gelu(Tape& t, int x) {
  const Tensor& xv = t.val(x);
  Tensor y(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) y.v[i] = cosetconv::gelu(xv.v[i]);
  const int yid = t.add_value(std::move(y));
  t.push_node([x, yid](Tape& tp) {
    const Tensor& dy = tp.grad(yid);
    const Tensor& xv = tp.val(x);
    Tensor& dx = tp.grad(x);
    for (std::size_t i = 0; i < xv.size(); ++i) dx.v[i] += dy.v[i] * gelu_grad(xv.v[i]);
  });
  return yid;
}

int add(Tape& t, int a, int b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("ops::add: shape mismatch");
  Tensor y(av.shape);
  for (std::size_t i = 0; i < av.size(); ++i) y.v[i] = av.v[i] + bv.v[i];
  const int yid = t.add_value(std::move(y));
  t.push_node([a, b, yid](Tape& tp) {
    const Tensor& dy = tp.grad(yid);
    Tensor& da = tp.grad(a);
    Tensor& db = tp.grad(b);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      da.v[i] += dy.v[i];
      db.v[i] += dy.v[i];
    }
  });
  return yid;
}

std::vector<int> batch_norm(Tape& t, const std::vector<int>& xs, int gamma, int beta,
                            BatchNormRunning* running, bool training) {
  if (xs.empty()) throw std::invalid_argument("ops::batch_norm: no inputs");
  const std::size_t c = t.val(xs[0]).cols();
  std::size_t total_rows = 0;
  for (int x : xs) {
    const Tensor& xv = t.val(x);
    if (xv.shape.size() != 2 || xv.cols() != c)
      throw std::invalid_argument("ops::batch_norm: inconsistent channel counts");
    total_rows += xv.rows();
  }
  const Tensor& gv = t.val(gamma);
  const Tensor& bv = t.val(beta);
  if (gv.size() != c || bv.size() != c)
    throw std::invalid_argument("ops::batch_norm: scale/shift shape mismatch");

  const bool batch_stats = training || running == nullptr || !running->initialized;
  if (total_rows == 1 && batch_stats) {
    // Variance over one point is undefined; pass through.
    ++t.bn_passthrough_events;
    std::vector<int> outs;
    for (int x : xs) {
      Tensor y = t.val(x);
      const int yid = t.add_value(std::move(y));
      t.push_node([x, yid](Tape& tp) {
        const Tensor& dy = tp.grad(yid);
        Tensor& dx = tp.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) dx.v[i] += dy.v[i];
      });
      outs.push_back(yid);
    }
    return outs;
  }

  constexpr double kEps = 1e-12;
  std::vector<double> mean(c, 0.0), var(c, 0.0), inv_std(c, 0.0);

  if (batch_stats) {
    for (int x : xs) {
      const Tensor& xv = t.val(x);
      for (std::size_t r = 0; r < xv.rows(); ++r) {
        const double* xr = xv.row(r);
        for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += xr[ch];
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch) mean[ch] /= static_cast<double>(total_rows);
    for (int x : xs) {
      const Tensor& xv = t.val(x);
      for (std::size_t r = 0; r < xv.rows(); ++r) {
        const double* xr = xv.row(r);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double d = xr[ch] - mean[ch];
          var[ch] += d * d;
        }
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch) var[ch] /= static_cast<double>(total_rows);
    if (training && running) {
      if (!running->initialized) {
        running->mean = Tensor({c});
        running->var = Tensor({c});
        running->var.fill(1.0);
        running->initialized = true;
      }
      for (std::size_t ch = 0; ch < c; ++ch) {
        running->mean.v[ch] = 0.9 * running->mean.v[ch] + 0.1 * mean[ch];
        running->var.v[ch] = 0.9 * running->var.v[ch] + 0.1 * var[ch];
      }
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running->mean.v[ch];
      var[ch] = running->var.v[ch];
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + kEps);

  // Normalized values are shared by all outputs' backward.
  auto xhat = std::make_shared<std::vector<Tensor>>();
  std::vector<int> outs;
  for (int x : xs) {
    const Tensor& xv = t.val(x);
    Tensor h(xv.shape);
    Tensor y(xv.shape);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      const double* xr = xv.row(r);
      double* hr = h.row(r);
      double* yr = y.row(r);
      for (std::size_t ch = 0; ch < c; ++ch) {
        hr[ch] = (xr[ch] - mean[ch]) * inv_std[ch];
        yr[ch] = gv.v[ch] * hr[ch] + bv.v[ch];
      }
    }
    xhat->push_back(std::move(h));
    outs.push_back(t.add_value(std::move(y)));
  }

  t.push_node([xs, outs, gamma, beta, xhat, inv_std, c, total_rows, batch_stats](Tape& tp) {
    const Tensor& gv = tp.val(gamma);
    Tensor& dgamma = tp.grad(gamma);
    Tensor& dbeta = tp.grad(beta);

    // Reductions over the joint row set.
    std::vector<double> sum_dy(c, 0.0), sum_dy_h(c, 0.0);
    for (std::size_t s = 0; s < xs.size(); ++s) {
      const Tensor& dy = tp.grad(outs[s]);
      const Tensor& h = (*xhat)[s];
      for (std::size_t r = 0; r < dy.rows(); ++r) {
        const double* dyr = dy.row(r);
        const double* hr = h.row(r);
        for (std::size_t ch = 0; ch < c; ++ch) {
          sum_dy[ch] += dyr[ch];
          sum_dy_h[ch] += dyr[ch] * hr[ch];
        }
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      dgamma.v[ch] += sum_dy_h[ch];
      dbeta.v[ch] += sum_dy[ch];
    }
    const double inv_n = 1.0 / static_cast<double>(total_rows);
    for (std::size_t s = 0; s < xs.size(); ++s) {
      const Tensor& dy = tp.grad(outs[s]);
      const Tensor& h = (*xhat)[s];
      Tensor& dx = tp.grad(xs[s]);
      for (std::size_t r = 0; r < dy.rows(); ++r) {
        const double* dyr = dy.row(r);
        const double* hr = h.row(r);
        double* dxr = dx.row(r);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double g = dyr[ch];
          if (batch_stats) g -= inv_n * (sum_dy[ch] + hr[ch] * sum_dy_h[ch]);
          dxr[ch] += gv.v[ch] * inv_std[ch] * g;
        }
      }
    }
  });
  return outs;
}

int gather_rows(Tape& t, int x, std::vector<int> rows) {
  const Tensor& xv = t.val(x);
  if (xv.shape.size() != 2) throw std::invalid_argument("ops::gather_rows: need 2-D input");
  const std::size_t c = xv.cols();
  Tensor y({rows.size(), c});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const int src = rows[r];
    if (src < 0 || static_cast<std::size_t>(src) >= xv.rows())
      throw std::invalid_argument("ops::gather_rows: row index out of range");
    std::copy(xv.row(src), xv.row(src) + c, y.row(r));
  }
  const int yid = t.add_value(std::move(y));
  t.push_node([x, yid, rows = std::move(rows), c](Tape& tp) {
    const Tensor& dy = tp.grad(yid);
    Tensor& dx = tp.grad(x);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double* dyr = dy.row(r);
      double* dxr = dx.row(rows[r]);
      for (std::size_t ch = 0; ch < c; ++ch) dxr[ch] += dyr[ch];
    }
  });
  return yid;
}

int mean_rows(Tape& t, int x) {
  const Tensor& xv = t.val(x);
  if (xv.shape.size() != 2 || xv.rows() == 0)
    throw std::invalid_argument("ops::mean_rows: need nonempty 2-D input");
  const std::size_t n = xv.rows(), c = xv.cols();
  Tensor y({1, c});
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = xv.row(r);
    for (std::size_t ch = 0; ch < c; ++ch) y.v[ch] += xr[ch];
  }
  for (std::size_t ch = 0; ch < c; ++ch) y.v[ch] /= static_cast<double>(n);
  const int yid = t.add_value(std::move(y));
  t.push_node([x, yid, n, c](Tape& tp) {
    const Tensor& dy = tp.grad(yid);
    Tensor& dx = tp.grad(x);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      double* dxr = dx.row(r);
      for (std::size_t ch = 0; ch < c; ++ch) dxr[ch] += dy.v[ch] * inv_n;
    }
  });
  return yid;
}

int concat_cols(Tape& t, int a, int b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  if (av.shape.size() != 2 || bv.shape.size() != 2 || av.rows() != bv.rows())
    throw std::invalid_argument("ops::concat_cols: row counts disagree");
  const std::size_t n = av.rows(), ca = av.cols(), cb = bv.cols();
  Tensor y({n, ca + cb});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy(av.row(r), av.row(r) + ca, y.row(r));
    std::copy(bv.row(r), bv.row(r) + cb, y.row(r) + ca);
  }
  const int yid = t.add_value(std::move(y));
  t.push_node([a, b, yid, n, ca, cb](Tape& tp) {
    const Tensor& dy = tp.grad(yid);
    Tensor& da = tp.grad(a);
    Tensor& db = tp.grad(b);
    for (std::size_t r = 0; r < n; ++r) {
      const double* dyr = dy.row(r);
      double* dar = da.row(r);
      double* dbr = db.row(r);
      for (std::size_t i = 0; i < ca; ++i) dar[i] += dyr[i];
      for (std::size_t i = 0; i < cb; ++i) dbr[i] += dyr[ca + i];
    }
  });
  return yid;
}

int conv_rows(Tape& t, int feats, const std::vector<NeighborList>& neighborhoods, int omegas,
              int bases, KernelOrdering ordering, bool normalize_by_count) {
  const Tensor& fv = t.val(feats);
  const Tensor& ov = t.val(omegas);
  const Tensor& bv = t.val(bases);
  if (bv.shape.size() != 3) throw std::invalid_argument("ops::conv_rows: bases must be 3-D");
  const int a = static_cast<int>(bv.shape[0]);
  const int c_out = static_cast<int>(bv.shape[1]);
  const int c_in = static_cast<int>(bv.shape[2]);
  if (static_cast<int>(fv.cols()) != c_in)
    throw std::invalid_argument("ops::conv_rows: feature width mismatch");
  if (static_cast<int>(ov.cols()) != a)
    throw std::invalid_argument("ops::conv_rows: omega width mismatch");

  AnchorBases ab;
  ab.count = a;
  ab.c_out = c_out;
  ab.c_in = c_in;
  ab.w = bv;  // copy; bases are small relative to the rest of the step

  const std::size_t m = neighborhoods.size();
  Tensor y({m, static_cast<std::size_t>(c_out)});
  auto tapes = std::make_shared<std::vector<ConvTape>>(m);
  std::size_t omega_row = 0;
  for (std::size_t ci = 0; ci < m; ++ci) {
    const auto& nl = neighborhoods[ci];
    const int k = nl.actual_count();
    Tensor nf({static_cast<std::size_t>(k), static_cast<std::size_t>(c_in)});
    Tensor no({static_cast<std::size_t>(k), static_cast<std::size_t>(a)});
    for (int i = 0; i < k; ++i) {
      std::copy(fv.row(nl.neighbor_indices[i]), fv.row(nl.neighbor_indices[i]) + c_in, nf.row(i));
      std::copy(ov.row(omega_row + i), ov.row(omega_row + i) + a, no.row(i));
    }
    omega_row += k;
    std::vector<double> out =
        ordering == KernelOrdering::implicit_form
            ? conv_forward_implicit(nf, no, ab, k, &(*tapes)[ci], normalize_by_count)
            : conv_forward_explicit(nf, no, ab, k, &(*tapes)[ci], normalize_by_count);
    std::copy(out.begin(), out.end(), y.row(ci));
  }
  if (omega_row != t.val(omegas).rows())
    throw std::invalid_argument("ops::conv_rows: omega rows do not cover the neighborhoods");

  const int yid = t.add_value(std::move(y));
  t.push_node([feats, omegas, bases, yid, neighborhoods, tapes, ordering, ab, c_in,
               a](Tape& tp) mutable {
    const Tensor& dy = tp.grad(yid);
    Tensor& dfeats = tp.grad(feats);
    Tensor& domegas = tp.grad(omegas);
    Tensor& dbases = tp.grad(bases);
    std::size_t omega_row = 0;
    for (std::size_t ci = 0; ci < neighborhoods.size(); ++ci) {
      ConvTape& ct = (*tapes)[ci];
      const int k = ct.k_actual;
      std::span<const double> up(dy.row(ci), dy.cols());
      ConvGrads g = conv_backward(ordering, ct, up, ab);
      for (int i = 0; i < k; ++i) {
        double* df = dfeats.row(neighborhoods[ci].neighbor_indices[i]);
        const double* gf = g.feats.row(i);
        for (int c = 0; c < c_in; ++c) df[c] += gf[c];
        double* dom = domegas.row(omega_row + i);
        const double* go = g.omegas.row(i);
        for (int j = 0; j < a; ++j) dom[j] += go[j];
      }
      omega_row += k;
      for (std::size_t i = 0; i < dbases.size(); ++i) dbases.v[i] += g.bases.v[i];
      tp.counters += ct.counters;
      ct.counters = StorageCounters{};  // forward part was already added
    }
  });
  // Forward portion of the accounting lands immediately.
  for (const auto& ct : *tapes) t.counters += ct.counters;
  for (auto& ct : *tapes) ct.counters = StorageCounters{};
  return yid;
}

int interpolate_rows(Tape& t, int coarse, const std::vector<std::vector<int>>& idx,
                     const std::vector<std::vector<double>>& w) {
  const Tensor& cv = t.val(coarse);
  if (cv.shape.size() != 2) throw std::invalid_argument("ops::interpolate_rows: need 2-D input");
  if (idx.size() != w.size())
    throw std::invalid_argument("ops::interpolate_rows: index/weight length mismatch");
  const std::size_t n = idx.size(), c = cv.cols();
  Tensor y({n, c});
  for (std::size_t r = 0; r < n; ++r) {
    if (idx[r].size() != w[r].size())
      throw std::invalid_argument("ops::interpolate_rows: ragged index/weight row");
    double* yr = y.row(r);
    for (std::size_t k = 0; k < idx[r].size(); ++k) {
      const double* src = cv.row(idx[r][k]);
      const double wk = w[r][k];
      for (std::size_t ch = 0; ch < c; ++ch) yr[ch] += wk * src[ch];
    }
  }
  const int yid = t.add_value(std::move(y));
  t.push_node([coarse, yid, idx, w, c](Tape& tp) {
    const Tensor& dy = tp.grad(yid);
    Tensor& dc = tp.grad(coarse);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const double* dyr = dy.row(r);
      for (std::size_t k = 0; k < idx[r].size(); ++k) {
        double* dst = dc.row(idx[r][k]);
        const double wk = w[r][k];
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += wk * dyr[ch];
      }
    }
  });
  return yid;
}

int smoothed_cross_entropy(Tape& t, int logits, int label, double epsilon) {
  const Tensor& lv = t.val(logits);
  if (lv.shape.size() != 2 || lv.rows() != 1)
    throw std::invalid_argument("ops::smoothed_cross_entropy: logits must be [1, C]");
  const std::size_t c = lv.cols();
  if (label < 0 || static_cast<std::size_t>(label) >= c)
    throw std::invalid_argument("ops::smoothed_cross_entropy: label out of range");
  if (epsilon < 0 || epsilon >= 1)
    throw std::invalid_argument("ops::smoothed_cross_entropy: epsilon must be in [0, 1)");

  double mx = lv.v[0];
  for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, lv.v[i]);
  std::vector<double> p(c);
  double z = 0;
  for (std::size_t i = 0; i < c; ++i) {
    p[i] = std::exp(lv.v[i] - mx);
    z += p[i];
  }
  const double log_z = std::log(z) + mx;
  double loss = 0;
  for (std::size_t i = 0; i < c; ++i) {
    p[i] /= z;
    const double target = epsilon / static_cast<double>(c) +
                          (static_cast<std::size_t>(label) == i ? 1.0 - epsilon : 0.0);
    loss -= target * (lv.v[i] - log_z);
  }
  Tensor out({1});
  out.v[0] = loss;
  const int yid = t.add_value(std::move(out));
  t.push_node([logits, yid, label, epsilon, p = std::move(p), c](Tape& tp) {
    const double g = tp.grad(yid).v[0];
    Tensor& dl = tp.grad(logits);
    for (std::size_t i = 0; i < c; ++i) {
      const double target = epsilon / static_cast<double>(c) +
                            (static_cast<std::size_t>(label) == i ? 1.0 - epsilon : 0.0);
      dl.v[i] += g * (p[i] - target);
    }
  });
  return yid;
}

int mean_scalars(Tape& t, const std::vector<int>& xs) {
  if (xs.empty()) throw std::invalid_argument("ops::mean_scalars: no inputs");
  double s = 0;
  for (int x : xs) {
    if (t.val(x).size() != 1) throw std::invalid_argument("ops::mean_scalars: non-scalar input");
    s += t.val(x).v[0];
  }
  Tensor out({1});
  out.v[0] = s / static_cast<double>(xs.size());
  const int yid = t.add_value(std::move(out));
  t.push_node([xs, yid](Tape& tp) {
    const double g = tp.grad(yid).v[0] / static_cast<double>(xs.size());
    for (int x : xs) tp.grad(x).v[0] += g;
  });
  return yid;
}

}  // namespace ops

}  // namespace cosetconv
