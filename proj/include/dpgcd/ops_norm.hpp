#pragma once
#include <memory>

#include "dpgcd/ops_basic.hpp"

namespace dpgcd {

// Per-channel normalization over the spatial extent (batch of one, so these
// are instance-style statistics). Train mode uses batch statistics and
// updates the running buffers in place; eval mode reads the running buffers.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>* running_mean,
                  Tensor<T>* running_var, bool train, double eps = 1e-5,
                  double momentum = 0.1) {
  detail::check_same_tape(x, gamma);
  detail::check_same_tape(x, beta);
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = t.val(x.id);
  const Tensor<T>& gv = t.val(gamma.id);
  const Tensor<T>& bv = t.val(beta.id);
  if (xv.ndim() != 3) throw dim_error("batch_norm: expected [C,H,W]");
  int c = xv.extent(0);
  size_t hw = (size_t)xv.extent(1) * xv.extent(2);
  if (hw == 0) throw dim_error("batch_norm: zero spatial extent");
  if (gv.ndim() != 1 || gv.extent(0) != c || bv.ndim() != 1 || bv.extent(0) != c)
    throw dim_error("batch_norm: gamma/beta length != C");

  auto xhat = std::make_shared<Tensor<T>>(xv.shape);
  auto invstd = std::make_shared<std::vector<T>>((size_t)c);
  Tensor<T> y(xv.shape);

  if (train) {
    for (int cc = 0; cc < c; ++cc) {
      const T* m = &xv.data[(size_t)cc * hw];
      T mu = 0;
      for (size_t i = 0; i < hw; ++i) mu += m[i];
      mu /= (T)hw;
      T var = 0;
      for (size_t i = 0; i < hw; ++i) {
        T d = m[i] - mu;
        var += d * d;
      }
      var /= (T)hw;
      T is = T(1) / std::sqrt(var + (T)eps);
      (*invstd)[(size_t)cc] = is;
      T* xh = &xhat->data[(size_t)cc * hw];
      T* yc = &y.data[(size_t)cc * hw];
      T ga = gv.data[(size_t)cc], be = bv.data[(size_t)cc];
      for (size_t i = 0; i < hw; ++i) {
        xh[i] = (m[i] - mu) * is;
        yc[i] = ga * xh[i] + be;
      }
      if (running_mean && running_var) {
        running_mean->data[(size_t)cc] =
            (T)(1.0 - momentum) * running_mean->data[(size_t)cc] + (T)momentum * mu;
        running_var->data[(size_t)cc] =
            (T)(1.0 - momentum) * running_var->data[(size_t)cc] + (T)momentum * var;
      }
    }
  } else {
    if (!running_mean || !running_var)
      throw contract_error("batch_norm: eval mode requires running stats");
    for (int cc = 0; cc < c; ++cc) {
      T mu = running_mean->data[(size_t)cc];
      T is = T(1) / std::sqrt(running_var->data[(size_t)cc] + (T)eps);
      (*invstd)[(size_t)cc] = is;
      const T* m = &xv.data[(size_t)cc * hw];
      T* xh = &xhat->data[(size_t)cc * hw];
      T* yc = &y.data[(size_t)cc * hw];
      T ga = gv.data[(size_t)cc], be = bv.data[(size_t)cc];
      for (size_t i = 0; i < hw; ++i) {
        xh[i] = (m[i] - mu) * is;
        yc[i] = ga * xh[i] + be;
      }
    }
  }

  int id = t.emplace(std::move(y), {x.id, gamma.id, beta.id});
  if (t.rg(id))
    t.set_back(id, [x, gamma, beta, c, hw, train, xhat, invstd](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      const Tensor<T>& gv2 = tp.val(gamma.id);
      Tensor<T>* gx = tp.grad_accum(x.id);
      Tensor<T>* gg = tp.grad_accum(gamma.id);
      Tensor<T>* gb = tp.grad_accum(beta.id);
      for (int cc = 0; cc < c; ++cc) {
        const T* gr = &g.data[(size_t)cc * hw];
        const T* xh = &xhat->data[(size_t)cc * hw];
        T ga = gv2.data[(size_t)cc];
        T is = (*invstd)[(size_t)cc];
        T sum_g = 0, sum_gx = 0;
        for (size_t i = 0; i < hw; ++i) {
          sum_g += gr[i];
          sum_gx += gr[i] * xh[i];
        }
        if (gb) gb->data[(size_t)cc] += sum_g;
        if (gg) gg->data[(size_t)cc] += sum_gx;
        if (gx) {
          T* gxr = &gx->data[(size_t)cc * hw];
          if (train) {
            T mg = sum_g / (T)hw, mgx = sum_gx / (T)hw;
            for (size_t i = 0; i < hw; ++i)
              gxr[i] += ga * is * (gr[i] - mg - xh[i] * mgx);
          } else {
            for (size_t i = 0; i < hw; ++i) gxr[i] += ga * is * gr[i];
          }
        }
      }
    });
  return {&t, id};
}

// Per-token layer normalization over the channel dimension of [L,C].
template <typename T>
Var<T> layer_norm_rows(Var<T> x, Var<T> gamma, Var<T> beta, double eps = 1e-5) {
  detail::check_same_tape(x, gamma);
  detail::check_same_tape(x, beta);
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = t.val(x.id);
  const Tensor<T>& gv = t.val(gamma.id);
  const Tensor<T>& bv = t.val(beta.id);
  if (xv.ndim() != 2) throw dim_error("layer_norm_rows: expected [L,C]");
  int l = xv.extent(0), c = xv.extent(1);
  if (gv.extent(0) != c || bv.extent(0) != c)
    throw dim_error("layer_norm_rows: gamma/beta length != C");
  auto xhat = std::make_shared<Tensor<T>>(xv.shape);
  auto invstd = std::make_shared<std::vector<T>>((size_t)l);
  Tensor<T> y(xv.shape);
  for (int r = 0; r < l; ++r) {
    const T* xr = &xv.data[(size_t)r * c];
    T mu = 0;
    for (int j = 0; j < c; ++j) mu += xr[j];
    mu /= (T)c;
    T var = 0;
    for (int j = 0; j < c; ++j) {
      T d = xr[j] - mu;
      var += d * d;
    }
    var /= (T)c;
    T is = T(1) / std::sqrt(var + (T)eps);
    (*invstd)[(size_t)r] = is;
    T* xh = &xhat->data[(size_t)r * c];
    T* yr = &y.data[(size_t)r * c];
    for (int j = 0; j < c; ++j) {
      xh[j] = (xr[j] - mu) * is;
      yr[j] = gv.data[(size_t)j] * xh[j] + bv.data[(size_t)j];
    }
  }
  int id = t.emplace(std::move(y), {x.id, gamma.id, beta.id});
  if (t.rg(id))
    t.set_back(id, [x, gamma, beta, l, c, xhat, invstd](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      const Tensor<T>& gv2 = tp.val(gamma.id);
      Tensor<T>* gx = tp.grad_accum(x.id);
      Tensor<T>* gg = tp.grad_accum(gamma.id);
      Tensor<T>* gb = tp.grad_accum(beta.id);
      for (int r = 0; r < l; ++r) {
        const T* gr = &g.data[(size_t)r * c];
        const T* xh = &xhat->data[(size_t)r * c];
        T is = (*invstd)[(size_t)r];
        T sum_h = 0, sum_hx = 0;
        for (int j = 0; j < c; ++j) {
          T h = gr[j] * gv2.data[(size_t)j];
          sum_h += h;
          sum_hx += h * xh[j];
        }
        if (gb)
          for (int j = 0; j < c; ++j) gb->data[(size_t)j] += gr[j];
        if (gg)
          for (int j = 0; j < c; ++j) gg->data[(size_t)j] += gr[j] * xh[j];
        if (gx) {
          T* gxr = &gx->data[(size_t)r * c];
          T mh = sum_h / (T)c, mhx = sum_hx / (T)c;
          for (int j = 0; j < c; ++j)
            gxr[j] += is * (gr[j] * gv2.data[(size_t)j] - mh - xh[j] * mhx);
        }
      }
    });
  return {&t, id};
}

// Softmax over the last axis with max-subtraction for stability.
template <typename T>
Var<T> softmax(Var<T> x) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = t.val(x.id);
  int n = xv.shape.back();
  size_t rows = xv.numel() / (size_t)n;
  Tensor<T> y(xv.shape);
  for (size_t r = 0; r < rows; ++r) {
    const T* xr = &xv.data[r * (size_t)n];
    T* yr = &y.data[r * (size_t)n];
    T mx = xr[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    T s = 0;
    for (int j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    T inv = T(1) / s;
    for (int j = 0; j < n; ++j) yr[j] *= inv;
  }
  int id = t.emplace(std::move(y), {x.id});
  if (t.rg(id))
    t.set_back(id, [x, n, rows](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      const Tensor<T>& yv = tp.val(self);
      if (Tensor<T>* gx = tp.grad_accum(x.id))
        for (size_t r = 0; r < rows; ++r) {
          const T* gr = &g.data[r * (size_t)n];
          const T* yr = &yv.data[r * (size_t)n];
          T dot = 0;
          for (int j = 0; j < n; ++j) dot += gr[j] * yr[j];
          T* gxr = &gx->data[r * (size_t)n];
          for (int j = 0; j < n; ++j) gxr[j] += yr[j] * (gr[j] - dot);
        }
    });
  return {&t, id};
}

}  // namespace dpgcd
