#pragma once
#include <memory>
#include <sstream>

#include "dpgcd/ops_basic.hpp"

namespace dpgcd {

// Selective state-space recurrence. Per inner channel c with state h in R^N:
//   h_t = exp(delta[t,c] * A[c,:]) (.) h_{t-1} + delta[t,c] * B[t,:] * s[t,c]
//   y[t,c] = <C[t,:], h_t>
// s, delta: [L,D]; B, C: [L,N]; A: [D,N] with A < 0 and delta > 0.
// Sequential in t, independent across channels.
template <typename T>
Var<T> ssm_scan(Var<T> s, Var<T> delta, Var<T> bmat, Var<T> cmat, Var<T> amat) {
  detail::check_same_tape(s, delta);
  detail::check_same_tape(s, bmat);
  detail::check_same_tape(s, cmat);
  detail::check_same_tape(s, amat);
  Tape<T>& t = *s.tape;
  const Tensor<T>& sv = t.val(s.id);
  const Tensor<T>& dv = t.val(delta.id);
  const Tensor<T>& bv = t.val(bmat.id);
  const Tensor<T>& cv = t.val(cmat.id);
  const Tensor<T>& av = t.val(amat.id);
  if (sv.ndim() != 2 || dv.ndim() != 2 || bv.ndim() != 2 || cv.ndim() != 2 || av.ndim() != 2)
    throw dim_error("ssm_scan: expected 2-d operands");
  int l = sv.extent(0), d = sv.extent(1);
  int n = bv.extent(1);
  if (!sv.same_shape(dv)) throw dim_error("ssm_scan: delta shape != s shape");
  if (bv.extent(0) != l || cv.extent(0) != l || cv.extent(1) != n)
    throw dim_error("ssm_scan: B/C shape mismatch");
  if (av.extent(0) != d || av.extent(1) != n) throw dim_error("ssm_scan: A shape mismatch");
  for (T v : av.data)
    if (!(v < T(0))) throw contract_error("ssm_scan: A must be strictly negative");
  for (T v : dv.data)
    if (!(v > T(0))) throw contract_error("ssm_scan: delta must be strictly positive");

  // states saved for backward: hall[t,c,:] after step t
  auto hall = std::make_shared<std::vector<T>>((size_t)l * d * n);
  Tensor<T> y({l, d});
  {
    std::vector<T> h((size_t)n);
    for (int c = 0; c < d; ++c) {
      std::fill(h.begin(), h.end(), T(0));
      const T* arow = &av.data[(size_t)c * n];
      for (int tt = 0; tt < l; ++tt) {
        T dl = dv.data[(size_t)tt * d + c];
        T xin = sv.data[(size_t)tt * d + c];
        const T* brow = &bv.data[(size_t)tt * n];
        const T* crow = &cv.data[(size_t)tt * n];
        T acc = 0;
        T* hsave = &(*hall)[((size_t)tt * d + c) * n];
        for (int j = 0; j < n; ++j) {
          T abar = std::exp(dl * arow[j]);
          h[(size_t)j] = abar * h[(size_t)j] + dl * brow[j] * xin;
          hsave[j] = h[(size_t)j];
          acc += crow[j] * h[(size_t)j];
        }
        if (!std::isfinite((double)acc)) {
          std::ostringstream os;
          os << "ssm_scan: non-finite state at t=" << tt << " channel=" << c;
          throw numeric_error(os.str());
        }
        y.data[(size_t)tt * d + c] = acc;
      }
    }
  }

  int id = t.emplace(std::move(y), {s.id, delta.id, bmat.id, cmat.id, amat.id});
  if (t.rg(id))
    t.set_back(id, [s, delta, bmat, cmat, amat, l, d, n, hall](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      const Tensor<T>& sv2 = tp.val(s.id);
      const Tensor<T>& dv2 = tp.val(delta.id);
      const Tensor<T>& bv2 = tp.val(bmat.id);
      const Tensor<T>& cv2 = tp.val(cmat.id);
      const Tensor<T>& av2 = tp.val(amat.id);
      Tensor<T>* gs = tp.grad_accum(s.id);
      Tensor<T>* gd = tp.grad_accum(delta.id);
      Tensor<T>* gb = tp.grad_accum(bmat.id);
      Tensor<T>* gc = tp.grad_accum(cmat.id);
      Tensor<T>* ga = tp.grad_accum(amat.id);
      std::vector<T> dh((size_t)n);
      for (int c = 0; c < d; ++c) {
        std::fill(dh.begin(), dh.end(), T(0));
        const T* arow = &av2.data[(size_t)c * n];
        for (int tt = l - 1; tt >= 0; --tt) {
          T gy = g.data[(size_t)tt * d + c];
          T dl = dv2.data[(size_t)tt * d + c];
          T xin = sv2.data[(size_t)tt * d + c];
          const T* brow = &bv2.data[(size_t)tt * n];
          const T* crow = &cv2.data[(size_t)tt * n];
          const T* hrow = &(*hall)[((size_t)tt * d + c) * n];
          const T* hprev = tt > 0 ? &(*hall)[((size_t)(tt - 1) * d + c) * n] : nullptr;
          T ddl = 0, dxin = 0;
          for (int j = 0; j < n; ++j) {
            // y contribution
            if (gc) gc->data[(size_t)tt * n + j] += gy * hrow[j];
            T dhj = dh[(size_t)j] + gy * crow[j];
            // h_t = abar*h_prev + dl*B*x
            T abar = std::exp(dl * arow[j]);
            T hp = hprev ? hprev[j] : T(0);
            ddl += dhj * hp * arow[j] * abar;  // through abar
            if (ga) ga->data[(size_t)c * n + j] += dhj * hp * dl * abar;
            if (gb) gb->data[(size_t)tt * n + j] += dhj * dl * xin;
            ddl += dhj * brow[j] * xin;        // through dl*B*x
            dxin += dhj * dl * brow[j];
            dh[(size_t)j] = dhj * abar;        // to h_{t-1}
          }
          if (gd) gd->data[(size_t)tt * d + c] += ddl;
          if (gs) gs->data[(size_t)tt * d + c] += dxin;
        }
      }
    });
  return {&t, id};
}

}  // namespace dpgcd
