#pragma once
#include "dpgcd/ops_basic.hpp"

namespace dpgcd {

// y = x @ w + b, row-wise affine map: x:[L,Cin], w:[Cin,Cout], b:[Cout]
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  detail::check_same_tape(x, w);
  detail::check_same_tape(x, b);
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = t.val(x.id);
  const Tensor<T>& wv = t.val(w.id);
  const Tensor<T>& bv = t.val(b.id);
  if (xv.ndim() != 2 || wv.ndim() != 2 || bv.ndim() != 1)
    throw dim_error("linear: expected x[L,Cin], w[Cin,Cout], b[Cout]");
  int l = xv.extent(0), cin = xv.extent(1), cout = wv.extent(1);
  if (wv.extent(0) != cin || bv.extent(0) != cout)
    throw dim_error("linear: inner dimensions disagree");
  Tensor<T> y({l, cout});
  for (int r = 0; r < l; ++r) {
    T* yr = &y.data[(size_t)r * cout];
    for (int o = 0; o < cout; ++o) yr[o] = bv.data[(size_t)o];
    const T* xr = &xv.data[(size_t)r * cin];
    for (int k = 0; k < cin; ++k) {
      T xk = xr[k];
      const T* wr = &wv.data[(size_t)k * cout];
      for (int o = 0; o < cout; ++o) yr[o] += xk * wr[o];
    }
  }
  int id = t.emplace(std::move(y), {x.id, w.id, b.id});
  if (t.rg(id))
    t.set_back(id, [x, w, b, l, cin, cout](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      const Tensor<T>& xv2 = tp.val(x.id);
      const Tensor<T>& wv2 = tp.val(w.id);
      if (Tensor<T>* gb = tp.grad_accum(b.id))
        for (int r = 0; r < l; ++r)
          for (int o = 0; o < cout; ++o) gb->data[(size_t)o] += g.data[(size_t)r * cout + o];
      if (Tensor<T>* gw = tp.grad_accum(w.id))
        for (int r = 0; r < l; ++r) {
          const T* xr = &xv2.data[(size_t)r * cin];
          const T* gr = &g.data[(size_t)r * cout];
          for (int k = 0; k < cin; ++k) {
            T xk = xr[k];
            T* gwr = &gw->data[(size_t)k * cout];
            for (int o = 0; o < cout; ++o) gwr[o] += xk * gr[o];
          }
        }
      if (Tensor<T>* gx = tp.grad_accum(x.id))
        for (int r = 0; r < l; ++r) {
          const T* gr = &g.data[(size_t)r * cout];
          T* gxr = &gx->data[(size_t)r * cin];
          for (int k = 0; k < cin; ++k) {
            const T* wr = &wv2.data[(size_t)k * cout];
            T acc = 0;
            for (int o = 0; o < cout; ++o) acc += gr[o] * wr[o];
            gxr[k] += acc;
          }
        }
    });
  return {&t, id};
}

// y = a @ b : a[M,K], b[K,N]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  Tape<T>& t = *a.tape;
  const Tensor<T>& av = t.val(a.id);
  const Tensor<T>& bv = t.val(b.id);
  if (av.ndim() != 2 || bv.ndim() != 2 || av.extent(1) != bv.extent(0))
    throw dim_error("matmul: shape mismatch");
  int m = av.extent(0), k = av.extent(1), n = bv.extent(1);
  Tensor<T> y({m, n});
  for (int i = 0; i < m; ++i) {
    T* yr = &y.data[(size_t)i * n];
    const T* ar = &av.data[(size_t)i * k];
    for (int kk = 0; kk < k; ++kk) {
      T av2 = ar[kk];
      const T* br = &bv.data[(size_t)kk * n];
      for (int j = 0; j < n; ++j) yr[j] += av2 * br[j];
    }
  }
  int id = t.emplace(std::move(y), {a.id, b.id});
  if (t.rg(id))
    t.set_back(id, [a, b, m, k, n](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      const Tensor<T>& av2 = tp.val(a.id);
      const Tensor<T>& bv2 = tp.val(b.id);
      if (Tensor<T>* ga = tp.grad_accum(a.id))
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            const T* gr = &g.data[(size_t)i * n];
            const T* br = &bv2.data[(size_t)kk * n];
            T acc = 0;
            for (int j = 0; j < n; ++j) acc += gr[j] * br[j];
            ga->data[(size_t)i * k + kk] += acc;
          }
      if (Tensor<T>* gb = tp.grad_accum(b.id))
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            T av3 = av2.data[(size_t)i * k + kk];
            const T* gr = &g.data[(size_t)i * n];
            T* gbr = &gb->data[(size_t)kk * n];
            for (int j = 0; j < n; ++j) gbr[j] += av3 * gr[j];
          }
    });
  return {&t, id};
}

// y = a^T @ b : a[K,M], b[K,N] -> [M,N]
template <typename T>
Var<T> matmul_tn(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  Tape<T>& t = *a.tape;
  const Tensor<T>& av = t.val(a.id);
  const Tensor<T>& bv = t.val(b.id);
  if (av.ndim() != 2 || bv.ndim() != 2 || av.extent(0) != bv.extent(0))
    throw dim_error("matmul_tn: shape mismatch");
  int k = av.extent(0), m = av.extent(1), n = bv.extent(1);
  Tensor<T> y({m, n});
  for (int kk = 0; kk < k; ++kk) {
    const T* ar = &av.data[(size_t)kk * m];
    const T* br = &bv.data[(size_t)kk * n];
    for (int i = 0; i < m; ++i) {
      T av2 = ar[i];
      T* yr = &y.data[(size_t)i * n];
      for (int j = 0; j < n; ++j) yr[j] += av2 * br[j];
    }
  }
  int id = t.emplace(std::move(y), {a.id, b.id});
  if (t.rg(id))
    t.set_back(id, [a, b, k, m, n](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      const Tensor<T>& av2 = tp.val(a.id);
      const Tensor<T>& bv2 = tp.val(b.id);
      // da[kk,i] += dot(g[i,:], b[kk,:]); db[kk,:] += sum_i a[kk,i]*g[i,:]
      if (Tensor<T>* ga = tp.grad_accum(a.id))
        for (int kk = 0; kk < k; ++kk) {
          const T* br = &bv2.data[(size_t)kk * n];
          T* gar = &ga->data[(size_t)kk * m];
          for (int i = 0; i < m; ++i) {
            const T* gr = &g.data[(size_t)i * n];
            T acc = 0;
            for (int j = 0; j < n; ++j) acc += gr[j] * br[j];
            gar[i] += acc;
          }
        }
      if (Tensor<T>* gb = tp.grad_accum(b.id))
        for (int kk = 0; kk < k; ++kk) {
          const T* ar = &av2.data[(size_t)kk * m];
          T* gbr = &gb->data[(size_t)kk * n];
          for (int i = 0; i < m; ++i) {
            T av3 = ar[i];
            const T* gr = &g.data[(size_t)i * n];
            for (int j = 0; j < n; ++j) gbr[j] += av3 * gr[j];
          }
        }
    });
  return {&t, id};
}

// y = a @ b^T : a[M,K], b[N,K] -> [M,N]
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  Tape<T>& t = *a.tape;
  const Tensor<T>& av = t.val(a.id);
  const Tensor<T>& bv = t.val(b.id);
  if (av.ndim() != 2 || bv.ndim() != 2 || av.extent(1) != bv.extent(1))
    throw dim_error("matmul_nt: shape mismatch");
  int m = av.extent(0), k = av.extent(1), n = bv.extent(0);
  Tensor<T> y({m, n});
  for (int i = 0; i < m; ++i) {
    const T* ar = &av.data[(size_t)i * k];
    T* yr = &y.data[(size_t)i * n];
    for (int j = 0; j < n; ++j) {
      const T* br = &bv.data[(size_t)j * k];
      T acc = 0;
      for (int kk = 0; kk < k; ++kk) acc += ar[kk] * br[kk];
      yr[j] = acc;
    }
  }
  int id = t.emplace(std::move(y), {a.id, b.id});
  if (t.rg(id))
    t.set_back(id, [a, b, m, k, n](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      const Tensor<T>& av2 = tp.val(a.id);
      const Tensor<T>& bv2 = tp.val(b.id);
      if (Tensor<T>* ga = tp.grad_accum(a.id))
        for (int i = 0; i < m; ++i) {
          const T* gr = &g.data[(size_t)i * n];
          T* gar = &ga->data[(size_t)i * k];
          for (int j = 0; j < n; ++j) {
            T gv = gr[j];
            const T* br = &bv2.data[(size_t)j * k];
            for (int kk = 0; kk < k; ++kk) gar[kk] += gv * br[kk];
          }
        }
      if (Tensor<T>* gb = tp.grad_accum(b.id))
        for (int i = 0; i < m; ++i) {
          const T* gr = &g.data[(size_t)i * n];
          const T* ar = &av2.data[(size_t)i * k];
          for (int j = 0; j < n; ++j) {
            T gv = gr[j];
            T* gbr = &gb->data[(size_t)j * k];
            for (int kk = 0; kk < k; ++kk) gbr[kk] += gv * ar[kk];
          }
        }
    });
  return {&t, id};
}

}  // namespace dpgcd
