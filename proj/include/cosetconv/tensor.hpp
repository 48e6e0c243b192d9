#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace cosetconv {

/// Dense row-major tensor of doubles; rank implied by shape.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)), v(count(shape), 0.0) {}

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }
  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::size_t> s, double x) {
    Tensor t(std::move(s));
    t.fill(x);
    return t;
  }

  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }

  // 2-D accessors; shape checks are the caller's job on hot paths.
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }
  double* row(std::size_t r) { return v.data() + r * cols(); }
  const double* row(std::size_t r) const { return v.data() + r * cols(); }
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols() + c]; }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline void check_shape(const Tensor& t, std::initializer_list<std::size_t> want,
                        const char* who) {
  if (t.shape.size() != want.size() || !std::equal(want.begin(), want.end(), t.shape.begin()))
    throw std::invalid_argument(std::string(who) + ": tensor shape mismatch");
}

}  // namespace cosetconv
