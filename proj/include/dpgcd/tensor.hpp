#pragma once
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "dpgcd/common.hpp"
#include "dpgcd/prng.hpp"

namespace dpgcd {

// Dense row-major N-d array, the single value type of the whole pipeline:
// [C,H,W] feature maps, [L,C] sequences, [Co,Ci,k,k] conv kernels.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(checked_numel(shape), fill);
  }

  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != checked_numel(shape))
      throw dim_error("tensor: data length does not match shape product");
  }

  static size_t checked_numel(const std::vector<int>& s) {
    if (s.empty()) throw dim_error("tensor: empty shape");
    size_t n = 1;
    for (int e : s) {
      if (e < 1) throw dim_error("tensor: extent < 1");
      n *= (size_t)e;
    }
    return n;
  }

  size_t numel() const { return data.size(); }
  int ndim() const { return (int)shape.size(); }
  int extent(int i) const { return shape[(size_t)i]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  T& at2(int r, int c) { return data[(size_t)r * shape[1] + c]; }
  T at2(int r, int c) const { return data[(size_t)r * shape[1] + c]; }
  T& at3(int c, int h, int w) { return data[((size_t)c * shape[1] + h) * shape[2] + w]; }
  T at3(int c, int h, int w) const { return data[((size_t)c * shape[1] + h) * shape[2] + w]; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite((double)v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = (U)data[i];
    return out;
  }
};

template <typename T>
void fill_uniform(Tensor<T>& t, Prng& rng, double lo, double hi) {
  for (auto& v : t.data) v = (T)rng.uniform(lo, hi);
}

template <typename T>
Tensor<T> random_uniform(std::vector<int> shape, Prng& rng, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  fill_uniform(t, rng, lo, hi);
  return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw dim_error("max_abs_diff: shape mismatch");
  double m = 0;
  for (size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs((double)a.data[i] - (double)b.data[i]));
  return m;
}

template <typename T>
double l2u_norm(const Tensor<T>& a) {
  double s = 0;
  for (T v : a.data) s += (double)v * (double)v;
  return std::sqrt(s);
}

}  // namespace dpgcd
