#pragma once
#include <cmath>
#include <string>
#include <vector>

#include "dpgcd/tape.hpp"

namespace dpgcd {

namespace detail {

template <typename T>
inline void check_same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw contract_error("op: operands live on different tapes");
}

template <typename T>
inline void axpy(Tensor<T>* dst, const Tensor<T>& g) {
  if (!dst) return;
  for (size_t i = 0; i < g.data.size(); ++i) dst->data[i] += g.data[i];
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  Tape<T>& t = *a.tape;
  const Tensor<T>& av = t.val(a.id);
  const Tensor<T>& bv = t.val(b.id);
  if (!av.same_shape(bv)) throw dim_error("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  Tensor<T> y = av;
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += bv.data[i];
  int id = t.emplace(std::move(y), {a.id, b.id});
  if (t.rg(id))
    t.set_back(id, [a, b](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      detail::axpy(tp.grad_accum(a.id), g);
      detail::axpy(tp.grad_accum(b.id), g);
    });
  return {&t, id};
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  Tape<T>& t = *a.tape;
  const Tensor<T>& av = t.val(a.id);
  const Tensor<T>& bv = t.val(b.id);
  if (!av.same_shape(bv)) throw dim_error("sub: shape mismatch");
  Tensor<T> y = av;
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] -= bv.data[i];
  int id = t.emplace(std::move(y), {a.id, b.id});
  if (t.rg(id))
    t.set_back(id, [a, b](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      detail::axpy(tp.grad_accum(a.id), g);
      if (Tensor<T>* gb = tp.grad_accum(b.id))
        for (size_t i = 0; i < g.data.size(); ++i) gb->data[i] -= g.data[i];
    });
  return {&t, id};
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  Tape<T>& t = *a.tape;
  const Tensor<T>& av = t.val(a.id);
  const Tensor<T>& bv = t.val(b.id);
  if (!av.same_shape(bv)) throw dim_error("mul: shape mismatch");
  Tensor<T> y = av;
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] *= bv.data[i];
  int id = t.emplace(std::move(y), {a.id, b.id});
  if (t.rg(id))
    t.set_back(id, [a, b](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      const Tensor<T>& av2 = tp.val(a.id);
      const Tensor<T>& bv2 = tp.val(b.id);
      if (Tensor<T>* ga = tp.grad_accum(a.id))
        for (size_t i = 0; i < g.data.size(); ++i) ga->data[i] += g.data[i] * bv2.data[i];
      if (Tensor<T>* gb = tp.grad_accum(b.id))
        for (size_t i = 0; i < g.data.size(); ++i) gb->data[i] += g.data[i] * av2.data[i];
    });
  return {&t, id};
}

template <typename T>
Var<T> mul_scalar(Var<T> a, double s) {
  Tape<T>& t = *a.tape;
  Tensor<T> y = t.val(a.id);
  for (auto& v : y.data) v = (T)(v * (T)s);
  int id = t.emplace(std::move(y), {a.id});
  if (t.rg(id))
    t.set_back(id, [a, s](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      if (Tensor<T>* ga = tp.grad_accum(a.id))
        for (size_t i = 0; i < g.data.size(); ++i) ga->data[i] += g.data[i] * (T)s;
    });
  return {&t, id};
}

template <typename T>
Var<T> add_scalar(Var<T> a, double s) {
  Tape<T>& t = *a.tape;
  Tensor<T> y = t.val(a.id);
  for (auto& v : y.data) v = (T)(v + (T)s);
  int id = t.emplace(std::move(y), {a.id});
  if (t.rg(id))
    t.set_back(id, [a](Tape<T>& tp, int self) {
      detail::axpy(tp.grad_accum(a.id), tp.grad_of(self));
    });
  return {&t, id};
}

template <typename T>
Var<T> sum(Var<T> a) {
  Tape<T>& t = *a.tape;
  const Tensor<T>& av = t.val(a.id);
  T s = 0;
  for (T v : av.data) s += v;
  int id = t.emplace(Tensor<T>({1}, std::vector<T>{s}), {a.id});
  if (t.rg(id))
    t.set_back(id, [a](Tape<T>& tp, int self) {
      T g = tp.grad_of(self).data[0];
      if (Tensor<T>* ga = tp.grad_accum(a.id))
        for (auto& v : ga->data) v += g;
    });
  return {&t, id};
}

template <typename T>
Var<T> mean(Var<T> a) {
  Tape<T>& t = *a.tape;
  const Tensor<T>& av = t.val(a.id);
  T s = 0;
  for (T v : av.data) s += v;
  T n = (T)av.numel();
  int id = t.emplace(Tensor<T>({1}, std::vector<T>{s / n}), {a.id});
  if (t.rg(id))
    t.set_back(id, [a, n](Tape<T>& tp, int self) {
      T g = tp.grad_of(self).data[0] / n;
      if (Tensor<T>* ga = tp.grad_accum(a.id))
        for (auto& v : ga->data) v += g;
    });
  return {&t, id};
}

// Same data, different shape. Copies; tensors are small enough here.
template <typename T>
Var<T> reshape(Var<T> a, std::vector<int> shape) {
  Tape<T>& t = *a.tape;
  const Tensor<T>& av = t.val(a.id);
  Tensor<T> y(std::move(shape), av.data);
  int id = t.emplace(std::move(y), {a.id});
  if (t.rg(id))
    t.set_back(id, [a](Tape<T>& tp, int self) {
      detail::axpy(tp.grad_accum(a.id), tp.grad_of(self));
    });
  return {&t, id};
}

// Concatenate [Ci,H,W] maps along the channel dimension.
template <typename T>
Var<T> concat_ch(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw contract_error("concat_ch: empty input list");
  Tape<T>& t = *xs[0].tape;
  int h = t.val(xs[0].id).extent(1), w = t.val(xs[0].id).extent(2);
  int ctot = 0;
  std::vector<int> pids;
  for (auto& x : xs) {
    detail::check_same_tape(xs[0], x);
    const Tensor<T>& xv = t.val(x.id);
    if (xv.ndim() != 3 || xv.extent(1) != h || xv.extent(2) != w)
      throw dim_error("concat_ch: spatial mismatch");
    ctot += xv.extent(0);
    pids.push_back(x.id);
  }
  Tensor<T> y({ctot, h, w});
  size_t off = 0;
  for (auto& x : xs) {
    const Tensor<T>& xv = t.val(x.id);
    std::copy(xv.data.begin(), xv.data.end(), y.data.begin() + (ptrdiff_t)off);
    off += xv.numel();
  }
  int id = t.emplace(std::move(y), pids);
  if (t.rg(id)) {
    std::vector<Var<T>> parents = xs;
    t.set_back(id, [parents](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      size_t off2 = 0;
      for (auto& x : parents) {
        size_t n = tp.val(x.id).numel();
        if (Tensor<T>* gx = tp.grad_accum(x.id))
          for (size_t i = 0; i < n; ++i) gx->data[i] += g.data[off2 + i];
        off2 += n;
      }
    });
  }
  return {&t, id};
}

template <typename T>
Var<T> concat_ch(Var<T> a, Var<T> b) {
  return concat_ch(std::vector<Var<T>>{a, b});
}

// Concatenate [L,Ci] blocks along the column dimension.
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw contract_error("concat_cols: empty input list");
  Tape<T>& t = *xs[0].tape;
  int l = t.val(xs[0].id).extent(0);
  int ctot = 0;
  std::vector<int> pids;
  for (auto& x : xs) {
    detail::check_same_tape(xs[0], x);
    const Tensor<T>& xv = t.val(x.id);
    if (xv.ndim() != 2 || xv.extent(0) != l) throw dim_error("concat_cols: row mismatch");
    ctot += xv.extent(1);
    pids.push_back(x.id);
  }
  Tensor<T> y({l, ctot});
  int off = 0;
  for (auto& x : xs) {
    const Tensor<T>& xv = t.val(x.id);
    int c = xv.extent(1);
    for (int r = 0; r < l; ++r)
      for (int j = 0; j < c; ++j) y.at2(r, off + j) = xv.at2(r, j);
    off += c;
  }
  int id = t.emplace(std::move(y), pids);
  if (t.rg(id)) {
    std::vector<Var<T>> parents = xs;
    t.set_back(id, [parents, l](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      int off2 = 0;
      for (auto& x : parents) {
        int c = tp.val(x.id).extent(1);
        if (Tensor<T>* gx = tp.grad_accum(x.id))
          for (int r = 0; r < l; ++r)
            for (int j = 0; j < c; ++j) gx->at2(r, j) += g.at2(r, off2 + j);
        off2 += c;
      }
    });
  }
  return {&t, id};
}

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  return concat_cols(std::vector<Var<T>>{a, b});
}

template <typename T>
Var<T> slice_cols(Var<T> x, int start, int len) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = t.val(x.id);
  if (xv.ndim() != 2) throw dim_error("slice_cols: expected 2-d input");
  int l = xv.extent(0), c = xv.extent(1);
  if (start < 0 || len < 1 || start + len > c) throw dim_error("slice_cols: range out of bounds");
  Tensor<T> y({l, len});
  for (int r = 0; r < l; ++r)
    for (int j = 0; j < len; ++j) y.at2(r, j) = xv.at2(r, start + j);
  int id = t.emplace(std::move(y), {x.id});
  if (t.rg(id))
    t.set_back(id, [x, start, len, l](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      if (Tensor<T>* gx = tp.grad_accum(x.id))
        for (int r = 0; r < l; ++r)
          for (int j = 0; j < len; ++j) gx->at2(r, start + j) += g.at2(r, j);
    });
  return {&t, id};
}

// [C,H,W] -> [H*W, C]: row-major pixels become sequence tokens.
template <typename T>
Var<T> chw_to_lc(Var<T> x) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = t.val(x.id);
  if (xv.ndim() != 3) throw dim_error("chw_to_lc: expected [C,H,W]");
  int c = xv.extent(0), h = xv.extent(1), w = xv.extent(2);
  int l = h * w;
  Tensor<T> y({l, c});
  for (int ci = 0; ci < c; ++ci) {
    const T* src = &xv.data[(size_t)ci * l];
    for (int p = 0; p < l; ++p) y.data[(size_t)p * c + ci] = src[p];
  }
  int id = t.emplace(std::move(y), {x.id});
  if (t.rg(id))
    t.set_back(id, [x, c, l](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      if (Tensor<T>* gx = tp.grad_accum(x.id))
        for (int ci = 0; ci < c; ++ci) {
          T* dst = &gx->data[(size_t)ci * l];
          for (int p = 0; p < l; ++p) dst[p] += g.data[(size_t)p * c + ci];
        }
    });
  return {&t, id};
}

// [L,C] -> [C,H,W] with L = H*W.
template <typename T>
Var<T> lc_to_chw(Var<T> x, int h, int w) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = t.val(x.id);
  if (xv.ndim() != 2) throw dim_error("lc_to_chw: expected [L,C]");
  int l = xv.extent(0), c = xv.extent(1);
  if (l != h * w) throw dim_error("lc_to_chw: L != H*W");
  Tensor<T> y({c, h, w});
  for (int ci = 0; ci < c; ++ci) {
    T* dst = &y.data[(size_t)ci * l];
    for (int p = 0; p < l; ++p) dst[p] = xv.data[(size_t)p * c + ci];
  }
  int id = t.emplace(std::move(y), {x.id});
  if (t.rg(id))
    t.set_back(id, [x, c, l](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      if (Tensor<T>* gx = tp.grad_accum(x.id))
        for (int ci = 0; ci < c; ++ci) {
          const T* src = &g.data[(size_t)ci * l];
          for (int p = 0; p < l; ++p) gx->data[(size_t)p * c + ci] += src[p];
        }
    });
  return {&t, id};
}

// y[c,h,w] = x[c,h,w] * s[c]
template <typename T>
Var<T> mul_channel(Var<T> x, Var<T> s) {
  detail::check_same_tape(x, s);
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = t.val(x.id);
  const Tensor<T>& sv = t.val(s.id);
  if (xv.ndim() != 3 || sv.ndim() != 1 || sv.extent(0) != xv.extent(0))
    throw dim_error("mul_channel: expected [C,H,W] and [C]");
  int c = xv.extent(0);
  size_t hw = (size_t)xv.extent(1) * xv.extent(2);
  Tensor<T> y = xv;
  for (int ci = 0; ci < c; ++ci) {
    T f = sv.data[(size_t)ci];
    for (size_t i = 0; i < hw; ++i) y.data[ci * hw + i] *= f;
  }
  int id = t.emplace(std::move(y), {x.id, s.id});
  if (t.rg(id))
    t.set_back(id, [x, s, c, hw](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      const Tensor<T>& xv2 = tp.val(x.id);
      const Tensor<T>& sv2 = tp.val(s.id);
      if (Tensor<T>* gx = tp.grad_accum(x.id))
        for (int ci = 0; ci < c; ++ci) {
          T f = sv2.data[(size_t)ci];
          for (size_t i = 0; i < hw; ++i) gx->data[ci * hw + i] += g.data[ci * hw + i] * f;
        }
      if (Tensor<T>* gs = tp.grad_accum(s.id))
        for (int ci = 0; ci < c; ++ci) {
          T acc = 0;
          for (size_t i = 0; i < hw; ++i) acc += g.data[ci * hw + i] * xv2.data[ci * hw + i];
          gs->data[(size_t)ci] += acc;
        }
    });
  return {&t, id};
}

// y[c,h,w] = x[c,h,w] * m[0,h,w]  (single-channel map broadcast over channels)
template <typename T>
Var<T> mul_spatial(Var<T> x, Var<T> m) {
  detail::check_same_tape(x, m);
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = t.val(x.id);
  const Tensor<T>& mv = t.val(m.id);
  if (xv.ndim() != 3 || mv.ndim() != 3 || mv.extent(0) != 1 || mv.extent(1) != xv.extent(1) ||
      mv.extent(2) != xv.extent(2))
    throw dim_error("mul_spatial: expected [C,H,W] and [1,H,W]");
  int c = xv.extent(0);
  size_t hw = (size_t)xv.extent(1) * xv.extent(2);
  Tensor<T> y = xv;
  for (int ci = 0; ci < c; ++ci)
    for (size_t i = 0; i < hw; ++i) y.data[ci * hw + i] *= mv.data[i];
  int id = t.emplace(std::move(y), {x.id, m.id});
  if (t.rg(id))
    t.set_back(id, [x, m, c, hw](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      const Tensor<T>& xv2 = tp.val(x.id);
      const Tensor<T>& mv2 = tp.val(m.id);
      if (Tensor<T>* gx = tp.grad_accum(x.id))
        for (int ci = 0; ci < c; ++ci)
          for (size_t i = 0; i < hw; ++i) gx->data[ci * hw + i] += g.data[ci * hw + i] * mv2.data[i];
      if (Tensor<T>* gm = tp.grad_accum(m.id))
        for (size_t i = 0; i < hw; ++i) {
          T acc = 0;
          for (int ci = 0; ci < c; ++ci) acc += g.data[ci * hw + i] * xv2.data[ci * hw + i];
          gm->data[i] += acc;
        }
    });
  return {&t, id};
}

// ---- activations ----

namespace detail {

template <typename T, typename F, typename DF>
Var<T> unary_ew(Var<T> x, F fwd, DF dval) {
  Tape<T>& t = *x.tape;
  Tensor<T> y = t.val(x.id);
  for (auto& v : y.data) v = fwd(v);
  int id = t.emplace(std::move(y), {x.id});
  if (t.rg(id))
    t.set_back(id, [x, dval](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      const Tensor<T>& xv = tp.val(x.id);
      const Tensor<T>& yv = tp.val(self);
      if (Tensor<T>* gx = tp.grad_accum(x.id))
        for (size_t i = 0; i < g.data.size(); ++i)
          gx->data[i] += g.data[i] * dval(xv.data[i], yv.data[i]);
    });
  return {&t, id};
}

template <typename T>
inline T sigmoid_scalar(T v) {
  if (v >= T(0)) {
    T e = std::exp(-v);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(v);
  return e / (T(1) + e);
}

}  // namespace detail

template <typename T>
Var<T> relu(Var<T> x) {
  return detail::unary_ew(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T xv, T) { return xv > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return detail::unary_ew(
      x, [](T v) { return detail::sigmoid_scalar(v); },
      [](T, T yv) { return yv * (T(1) - yv); });
}

// Exact erf formulation: x * Phi(x).
template <typename T>
Var<T> gelu(Var<T> x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440084436210485;
  constexpr double inv_sqrt2pi = 0.39894228040143267793994605993438;
  return detail::unary_ew(
      x,
      [=](T v) {
        double d = (double)v;
        return (T)(0.5 * d * (1.0 + std::erf(d * inv_sqrt2)));
      },
      [=](T xv, T) {
        double d = (double)xv;
        double cdf = 0.5 * (1.0 + std::erf(d * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * d * d);
        return (T)(cdf + d * pdf);
      });
}

template <typename T>
Var<T> silu(Var<T> x) {
  return detail::unary_ew(
      x,
      [](T v) { return v * detail::sigmoid_scalar(v); },
      [](T xv, T) {
        T s = detail::sigmoid_scalar(xv);
        return s * (T(1) + xv * (T(1) - s));
      });
}

template <typename T>
Var<T> softplus(Var<T> x) {
  return detail::unary_ew(
      x,
      [](T v) {
        // log(1+exp(v)) without overflow
        if (v > T(30)) return v;
        return (T)std::log1p(std::exp((double)v));
      },
      [](T xv, T) { return detail::sigmoid_scalar(xv); });
}

// y = -exp(x); parameterizes strictly negative state matrices.
template <typename T>
Var<T> negexp(Var<T> x) {
  return detail::unary_ew(
      x, [](T v) { return (T)(-std::exp((double)v)); },
      [](T, T yv) { return yv; });
}

enum class Act { relu, gelu, silu, sigmoid };

inline Act act_from_string(const std::string& s) {
  if (s == "relu") return Act::relu;
  if (s == "gelu") return Act::gelu;
  if (s == "silu") return Act::silu;
  if (s == "sigmoid") return Act::sigmoid;
  throw config_error("unknown activation kind: " + s);
}

template <typename T>
Var<T> activation(Act kind, Var<T> x) {
  switch (kind) {
    case Act::relu: return relu(x);
    case Act::gelu: return gelu(x);
    case Act::silu: return silu(x);
    case Act::sigmoid: return sigmoid(x);
  }
  throw config_error("unknown activation kind");
}

}  // namespace dpgcd
