#include <cmath>
#include <random>

#include "doctest.h"

#include "cosetconv/coset.hpp"
#include "cosetconv/kernel.hpp"
#include "cosetconv/mathutil.hpp"

using namespace cosetconv;

namespace {

void randomize(Tensor& t, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& x : t.v) x = u(rng);
}

// Triple-loop scalar oracle for the convolution, independent of both
// production orderings.
std::vector<double> conv_oracle(const Tensor& feats, const Tensor& omegas,
                                const AnchorBases& bases, int k_actual) {
  std::vector<double> y(bases.c_out, 0.0);
  for (int i = 0; i < k_actual; ++i)
    for (int j = 0; j < bases.count; ++j)
      for (int o = 0; o < bases.c_out; ++o)
        for (int c = 0; c < bases.c_in; ++c)
          y[o] += omegas(i, j) * bases.basis(j)[o * bases.c_in + c] * feats(i, c);
  return y;
}

// Plain dense-matrix MLP oracle with its own loop structure.
std::vector<double> mlp_oracle(const CoefficientNet& net, const std::vector<double>& emb) {
  std::vector<double> cur = emb;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const Tensor& w = net.weights[l];
    std::vector<double> next(w.rows(), 0.0);
    for (std::size_t i = 0; i < w.cols(); ++i)
      for (std::size_t o = 0; o < w.rows(); ++o) next[o] += w(o, i) * cur[i];
    for (std::size_t o = 0; o < w.rows(); ++o) next[o] += net.biases[l].v[o];
    if (l + 1 < net.weights.size())
      for (auto& x : next) x = gelu(x);
    cur = std::move(next);
  }
  return cur;
}

}  // namespace

TEST_CASE("coeff_forward: zero parameters give zero output") {
  CoefficientNet net = CoefficientNet::init(6, {5}, 3, 1);
  for (auto& w : net.weights) w.fill(0.0);
  for (auto& b : net.biases) b.fill(0.0);
  const std::vector<double> emb(6, 0.7);
  for (double v : coeff_forward(net, emb)) CHECK(v == 0.0);
}

TEST_CASE("coeff_forward: identity single layer passes the embedding through") {
  CoefficientNet net = CoefficientNet::init(4, {}, 4, 1);
  net.weights[0].fill(0.0);
  net.biases[0].fill(0.0);
  for (int i = 0; i < 4; ++i) net.weights[0](i, i) = 1.0;
  const std::vector<double> emb = {0.1, -0.4, 0.9, 0.3};
  const auto out = coeff_forward(net, emb);
  for (int i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(emb[i]));
}

TEST_CASE("coeff_forward: matches the dense-matrix oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    CoefficientNet net = CoefficientNet::init(9, {12, 7}, 5, 100 + trial);
    std::vector<double> emb(9);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto& x : emb) x = u(rng);
    const auto got = coeff_forward(net, emb);
    const auto expect = mlp_oracle(net, emb);
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(std::abs(got[i] - expect[i]) < 1e-12);
  }
}

TEST_CASE("coeff_forward: shape mismatch throws") {
  CoefficientNet net = CoefficientNet::init(6, {5}, 3, 1);
  const std::vector<double> emb(5, 0.0);
  CHECK_THROWS_AS(coeff_forward(net, emb), std::invalid_argument);
}

TEST_CASE("conv forward: identity setup and zero coefficients") {
  AnchorBases bases = AnchorBases::init(1, 3, 3, 1);
  bases.w.fill(0.0);
  for (int i = 0; i < 3; ++i) bases.basis(0)[i * 3 + i] = 1.0;
  Tensor feats({1, 3});
  feats.v = {0.2, -0.5, 0.8};
  Tensor omegas({1, 1});
  omegas.v = {1.0};

  for (auto fwd : {conv_forward_implicit, conv_forward_explicit}) {
    const auto y = fwd(feats, omegas, bases, 1, nullptr, false);
    for (int i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(feats.v[i]));
  }
  omegas.fill(0.0);
  for (auto fwd : {conv_forward_implicit, conv_forward_explicit})
    for (double v : fwd(feats, omegas, bases, 1, nullptr, false)) CHECK(v == 0.0);
}

TEST_CASE("conv forward: empty neighborhood gives the zero vector") {
  AnchorBases bases = AnchorBases::init(2, 4, 3, 5);
  Tensor feats({0, 3}), omegas({0, 2});
  for (auto fwd : {conv_forward_implicit, conv_forward_explicit}) {
    const auto y = fwd(feats, omegas, bases, 0, nullptr, false);
    REQUIRE(y.size() == 4);
    for (double v : y) CHECK(v == 0.0);
  }
}

TEST_CASE("conv forward: matches the scalar oracle") {
  std::mt19937_64 rng(7);
  const int k = 5, a = 3, cin = 4, cout = 2;
  Tensor feats({k, cin}), omegas({k, a});
  randomize(feats, rng);
  randomize(omegas, rng);
  AnchorBases bases = AnchorBases::init(a, cout, cin, 9);
  randomize(bases.w, rng);

  const auto expect = conv_oracle(feats, omegas, bases, k);
  for (auto fwd : {conv_forward_implicit, conv_forward_explicit}) {
    const auto y = fwd(feats, omegas, bases, k, nullptr, false);
    for (int o = 0; o < cout; ++o) CHECK(std::abs(y[o] - expect[o]) < 1e-12);
  }
}

TEST_CASE("conv forward: masked rows beyond k_actual contribute nothing") {
  std::mt19937_64 rng(11);
  const int k = 6, k_actual = 4;
  Tensor feats({k, 3}), omegas({k, 2});
  randomize(feats, rng);
  randomize(omegas, rng);
  AnchorBases bases = AnchorBases::init(2, 3, 3, 13);
  const auto expect = conv_oracle(feats, omegas, bases, k_actual);
  const auto y = conv_forward_explicit(feats, omegas, bases, k_actual, nullptr, false);
  for (int o = 0; o < 3; ++o) CHECK(std::abs(y[o] - expect[o]) < 1e-12);
}

TEST_CASE("conv: linearity in features, both orderings") {
  std::mt19937_64 rng(13);
  const int k = 4, a = 2, cin = 3, cout = 3;
  Tensor f({k, cin}), g({k, cin}), omegas({k, a});
  randomize(f, rng);
  randomize(g, rng);
  randomize(omegas, rng);
  AnchorBases bases = AnchorBases::init(a, cout, cin, 17);
  const double alpha = 1.7;

  Tensor combo({k, cin});
  for (std::size_t i = 0; i < combo.size(); ++i) combo.v[i] = alpha * f.v[i] + g.v[i];
  for (auto fwd : {conv_forward_implicit, conv_forward_explicit}) {
    const auto yc = fwd(combo, omegas, bases, k, nullptr, false);
    const auto yf = fwd(f, omegas, bases, k, nullptr, false);
    const auto yg = fwd(g, omegas, bases, k, nullptr, false);
    for (int o = 0; o < cout; ++o) CHECK(std::abs(yc[o] - (alpha * yf[o] + yg[o])) < 1e-12);
  }
}

TEST_CASE("conv: ordering equivalence forward and backward on 100 instances") {
  std::mt19937_64 rng(19);
  const int as[] = {1, 8, 22};
  const int ks[] = {1, 16, 64};
  const int cs[] = {4, 64};
  int instance = 0;
  for (int rep = 0; rep < 6 && instance < 100; ++rep)
    for (int a : as)
      for (int k : ks)
        for (int c : cs) {
          if (instance++ >= 100) break;
          Tensor feats({static_cast<std::size_t>(k), static_cast<std::size_t>(c)});
          Tensor omegas({static_cast<std::size_t>(k), static_cast<std::size_t>(a)});
          randomize(feats, rng);
          randomize(omegas, rng);
          AnchorBases bases = AnchorBases::init(a, c, c, 23 + instance);
          std::vector<double> up(c);
          std::uniform_real_distribution<double> u(-1, 1);
          for (auto& x : up) x = u(rng);

          ConvTape ti, te;
          const auto yi = conv_forward_implicit(feats, omegas, bases, k, &ti);
          const auto ye = conv_forward_explicit(feats, omegas, bases, k, &te);
          for (int o = 0; o < c; ++o)
            CHECK(std::abs(yi[o] - ye[o]) <= 1e-12 * (1.0 + std::abs(ye[o])));

          const auto gi = conv_backward(KernelOrdering::implicit_form, ti, up, bases);
          const auto ge = conv_backward(KernelOrdering::explicit_form, te, up, bases);
          auto rel_close = [](const Tensor& x, const Tensor& y) {
            double worst = 0;
            for (std::size_t i = 0; i < x.size(); ++i)
              worst = std::max(worst, std::abs(x.v[i] - y.v[i]) /
                                          std::max({1.0, std::abs(x.v[i]), std::abs(y.v[i])}));
            return worst;
          };
          CHECK(rel_close(gi.feats, ge.feats) < 1e-10);
          CHECK(rel_close(gi.omegas, ge.omegas) < 1e-10);
          CHECK(rel_close(gi.bases, ge.bases) < 1e-10);
        }
  CHECK(instance >= 100);
}

TEST_CASE("conv backward: tape and ordering must match") {
  std::mt19937_64 rng(29);
  Tensor feats({2, 3}), omegas({2, 2});
  randomize(feats, rng);
  randomize(omegas, rng);
  AnchorBases bases = AnchorBases::init(2, 3, 3, 31);
  const std::vector<double> up(3, 1.0);

  ConvTape tape;
  conv_forward_explicit(feats, omegas, bases, 2, &tape);
  CHECK_THROWS_AS(conv_backward(KernelOrdering::implicit_form, tape, up, bases),
                  std::logic_error);
  ConvTape fresh;
  CHECK_THROWS_AS(conv_backward(KernelOrdering::explicit_form, fresh, up, bases),
                  std::logic_error);
}

TEST_CASE("counters: exact closed forms and the default-size dominant terms") {
  // Dominant terms at A=22, K=32, Cin=Cout=64.
  CHECK(conv_saved_scalars_dominant(KernelOrdering::implicit_form, 22, 32, 64, 64) == 2883584ull);
  CHECK(conv_saved_scalars_dominant(KernelOrdering::explicit_form, 22, 32, 64, 64) == 135168ull);

  std::mt19937_64 rng(37);
  for (const auto [a, k, cin, cout] :
       {std::array<int, 4>{1, 1, 1, 1}, {3, 5, 4, 2}, {22, 32, 64, 64}, {8, 16, 32, 24}}) {
    Tensor feats({static_cast<std::size_t>(k), static_cast<std::size_t>(cin)});
    Tensor omegas({static_cast<std::size_t>(k), static_cast<std::size_t>(a)});
    randomize(feats, rng);
    randomize(omegas, rng);
    AnchorBases bases = AnchorBases::init(a, cout, cin, 41);
    std::vector<double> up(cout, 0.5);

    for (KernelOrdering ord : {KernelOrdering::implicit_form, KernelOrdering::explicit_form}) {
      ConvTape tape;
      if (ord == KernelOrdering::implicit_form)
        conv_forward_implicit(feats, omegas, bases, k, &tape);
      else
        conv_forward_explicit(feats, omegas, bases, k, &tape);
      conv_backward(ord, tape, up, bases);
      CHECK(tape.counters.saved_intermediate_scalars ==
            conv_saved_scalars_model(ord, a, k, cin, cout));
      CHECK(tape.counters.flop_forward == conv_flops_forward_model(ord, a, k, cin, cout));
      CHECK(tape.counters.flop_backward == conv_flops_backward_model(ord, a, k, cin, cout));
    }
  }
}

TEST_CASE("counters: dominant-term growth factors from the cost models") {
  const std::uint64_t a = 22, k = 32, cin = 64, cout = 64;
  // Doubling c_out doubles the implicit dominant term.
  CHECK(conv_saved_scalars_dominant(KernelOrdering::implicit_form, a, k, cin, 2 * cout) ==
        2 * conv_saved_scalars_dominant(KernelOrdering::implicit_form, a, k, cin, cout));
  // The explicit dominant term grows by (K Cin + 2 Cin Cout) / (K Cin + Cin Cout).
  const auto e1 = conv_saved_scalars_dominant(KernelOrdering::explicit_form, a, k, cin, cout);
  const auto e2 = conv_saved_scalars_dominant(KernelOrdering::explicit_form, a, k, cin, 2 * cout);
  CHECK(e2 * (k * cin + cin * cout) == e1 * (k * cin + 2 * cin * cout));
  // A = 1 reduces both to single-basis linear models.
  CHECK(conv_saved_scalars_dominant(KernelOrdering::implicit_form, 1, k, cin, cout) ==
        k * cin * cout);
  CHECK(conv_saved_scalars_dominant(KernelOrdering::explicit_form, 1, k, cin, cout) ==
        k * cin + cin * cout);
}

TEST_CASE("measure_costs: counters monotone in every argument") {
  const std::vector<CostSweepPoint> sweep = {
      {4, 8, 8, 8}, {8, 8, 8, 8}, {4, 16, 8, 8}, {4, 8, 16, 8}, {4, 8, 8, 16}};
  const auto samples = measure_costs(sweep, 1, 3, 0.5);
  REQUIRE(samples.size() == 2 * sweep.size());
  // Entry 0/1 is the base point per ordering; every doubled argument must
  // not decrease any counter.
  for (std::size_t arg = 1; arg < sweep.size(); ++arg) {
    for (int ord = 0; ord < 2; ++ord) {
      const auto& base = samples[ord];
      const auto& bigger = samples[2 * arg + ord];
      CHECK(bigger.counters.saved_intermediate_scalars >=
            base.counters.saved_intermediate_scalars);
      CHECK(bigger.counters.flop_forward >= base.counters.flop_forward);
      CHECK(bigger.counters.flop_backward >= base.counters.flop_backward);
    }
  }
  CHECK_THROWS_AS(measure_costs({}, 1), std::invalid_argument);
}

TEST_CASE("normalize_by_count divides by the neighbor count") {
  std::mt19937_64 rng(43);
  Tensor feats({4, 3}), omegas({4, 2});
  randomize(feats, rng);
  randomize(omegas, rng);
  AnchorBases bases = AnchorBases::init(2, 3, 3, 47);
  const auto plain = conv_forward_explicit(feats, omegas, bases, 4, nullptr, false);
  const auto normed = conv_forward_explicit(feats, omegas, bases, 4, nullptr, true);
  for (int o = 0; o < 3; ++o) CHECK(normed[o] == doctest::Approx(plain[o] / 4.0));
}

TEST_CASE("kernel pipeline: per-neighborhood SE(3) invariance end to end") {
  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::normal_distribution<double> g(0, 1);
  auto unit = [&]() {
    Vec3 v{g(rng), g(rng), g(rng)};
    return v.normalized();
  };

  const int k = 6, a = 4, cin = 3, cout = 5, d = 8;
  const double radius = 0.8, sigma = 0.1;
  CoefficientNet net = CoefficientNet::init(3 * d, {16}, a, 59);
  AnchorBases bases = AnchorBases::init(a, cout, cin, 61);
  Tensor feats({k, cin});
  randomize(feats, rng);

  const Vec3 x{u(rng), u(rng), u(rng)};
  const Vec3 n = unit();
  std::vector<Vec3> xi(k), ni(k);
  for (int i = 0; i < k; ++i) {
    xi[i] = x + unit() * (0.9 * radius * u(rng));
    ni[i] = unit();
  }

  auto run = [&](const RigidTransform* t) {
    Tensor omegas({k, a});
    for (int i = 0; i < k; ++i) {
      const Vec3 cx = t ? t->apply_point(x) : x;
      const Vec3 cn = t ? t->apply_dir(n) : n;
      const Vec3 px = t ? t->apply_point(xi[i]) : xi[i];
      const Vec3 pn = t ? t->apply_dir(ni[i]) : ni[i];
      const auto emb = gaussian_embedding(encode_double_coset(cx, cn, px, pn, radius), d, sigma);
      const auto w = coeff_forward(net, emb);
      std::copy(w.begin(), w.end(), omegas.row(i));
    }
    return conv_forward_explicit(feats, omegas, bases, k, nullptr, false);
  };

  const auto ref = run(nullptr);
  for (int s = 0; s < 50; ++s) {
    const RigidTransform t = random_se3(rng, 3.0);
    const auto got = run(&t);
    for (int o = 0; o < cout; ++o) CHECK(std::abs(got[o] - ref[o]) < 1e-10);
  }
}
