#pragma once
#include <algorithm>
#include <memory>

#include "dpgcd/ops_basic.hpp"

namespace dpgcd {

enum class PadMode { zero, replicate };

// Cross-correlation: x[Cin,H,W], w[Cout,Cin,k,k], b[Cout], odd k.
// Output extent (H + 2*pad - k)/stride + 1 must be integral.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride = 1, int pad = 0,
              PadMode mode = PadMode::zero) {
  detail::check_same_tape(x, w);
  detail::check_same_tape(x, b);
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = t.val(x.id);
  const Tensor<T>& wv = t.val(w.id);
  const Tensor<T>& bv = t.val(b.id);
  if (xv.ndim() != 3 || wv.ndim() != 4 || bv.ndim() != 1)
    throw dim_error("conv2d: expected x[Cin,H,W], w[Cout,Cin,k,k], b[Cout]");
  int ci = xv.extent(0), h = xv.extent(1), wdt = xv.extent(2);
  int co = wv.extent(0), k = wv.extent(2);
  if (wv.extent(1) != ci)
    throw dim_error("conv2d: input channels do not match kernel Cin");
  if (wv.extent(3) != k) throw dim_error("conv2d: kernel must be square");
  if (k % 2 == 0) throw config_error("conv2d: kernel extent must be odd");
  if (pad < 0) throw config_error("conv2d: negative padding");
  if (stride < 1) throw config_error("conv2d: stride must be >= 1");
  if (bv.extent(0) != co) throw dim_error("conv2d: bias length != Cout");
  int hn = h + 2 * pad - k, wn = wdt + 2 * pad - k;
  if (hn < 0 || wn < 0 || hn % stride != 0 || wn % stride != 0)
    throw config_error("conv2d: non-integral output extent for " + xv.shape_str());
  int ho = hn / stride + 1, wo = wn / stride + 1;

  Tensor<T> y({co, ho, wo});
  const T* xp = xv.data.data();
  const T* wp = wv.data.data();
  T* yp = y.data.data();
  if (mode == PadMode::zero) {
    for (int o = 0; o < co; ++o) {
      T bias = bv.data[(size_t)o];
      T* ymap = yp + (size_t)o * ho * wo;
      for (int i = 0; i < ho * wo; ++i) ymap[i] = bias;
      for (int c = 0; c < ci; ++c) {
        const T* xmap = xp + (size_t)c * h * wdt;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            T wvv = wp[(((size_t)o * ci + c) * k + ky) * k + kx];
            if (wvv == T(0)) continue;
            int oh_lo = 0, ow_lo = 0;
            while (oh_lo * stride + ky - pad < 0) ++oh_lo;
            while (ow_lo * stride + kx - pad < 0) ++ow_lo;
            int oh_hi = std::min(ho - 1, (h - 1 + pad - ky) / stride);
            int ow_hi = std::min(wo - 1, (wdt - 1 + pad - kx) / stride);
            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
              int ih = oh * stride + ky - pad;
              const T* xrow = xmap + (size_t)ih * wdt + (kx - pad);
              T* yrow = ymap + (size_t)oh * wo;
              if (stride == 1) {
                for (int ow = ow_lo; ow <= ow_hi; ++ow) yrow[ow] += wvv * xrow[ow];
              } else {
                for (int ow = ow_lo; ow <= ow_hi; ++ow) yrow[ow] += wvv * xrow[(size_t)ow * stride];
              }
            }
          }
      }
    }
  } else {
    for (int o = 0; o < co; ++o) {
      T bias = bv.data[(size_t)o];
      T* ymap = yp + (size_t)o * ho * wo;
      for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow) {
          T acc = bias;
          for (int c = 0; c < ci; ++c) {
            const T* xmap = xp + (size_t)c * h * wdt;
            for (int ky = 0; ky < k; ++ky) {
              int ih = std::clamp(oh * stride + ky - pad, 0, h - 1);
              for (int kx = 0; kx < k; ++kx) {
                int iw = std::clamp(ow * stride + kx - pad, 0, wdt - 1);
                acc += wp[(((size_t)o * ci + c) * k + ky) * k + kx] * xmap[(size_t)ih * wdt + iw];
              }
            }
          }
          ymap[(size_t)oh * wo + ow] = acc;
        }
    }
  }

  int id = t.emplace(std::move(y), {x.id, w.id, b.id});
  if (t.rg(id))
    t.set_back(id, [x, w, b, stride, pad, mode, ci, h, wdt, co, k, ho, wo](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      const Tensor<T>& xv2 = tp.val(x.id);
      const Tensor<T>& wv2 = tp.val(w.id);
      const T* gp = g.data.data();
      const T* xp2 = xv2.data.data();
      const T* wp2 = wv2.data.data();
      if (Tensor<T>* gb = tp.grad_accum(b.id))
        for (int o = 0; o < co; ++o) {
          const T* gmap = gp + (size_t)o * ho * wo;
          T acc = 0;
          for (int i = 0; i < ho * wo; ++i) acc += gmap[i];
          gb->data[(size_t)o] += acc;
        }
      Tensor<T>* gw = tp.grad_accum(w.id);
      Tensor<T>* gx = tp.grad_accum(x.id);
      if (!gw && !gx) return;
      if (mode == PadMode::zero) {
        for (int o = 0; o < co; ++o) {
          const T* gmap = gp + (size_t)o * ho * wo;
          for (int c = 0; c < ci; ++c) {
            const T* xmap = xp2 + (size_t)c * h * wdt;
            T* gxmap = gx ? gx->data.data() + (size_t)c * h * wdt : nullptr;
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                int oh_lo = 0, ow_lo = 0;
                while (oh_lo * stride + ky - pad < 0) ++oh_lo;
                while (ow_lo * stride + kx - pad < 0) ++ow_lo;
                int oh_hi = std::min(ho - 1, (h - 1 + pad - ky) / stride);
                int ow_hi = std::min(wo - 1, (wdt - 1 + pad - kx) / stride);
                size_t widx = (((size_t)o * ci + c) * k + ky) * k + kx;
                T wvv = wp2[widx];
                T wacc = 0;
                for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                  int ih = oh * stride + ky - pad;
                  const T* grow = gmap + (size_t)oh * wo;
                  const T* xrow = xmap + (size_t)ih * wdt + (kx - pad);
                  T* gxrow = gxmap ? gxmap + (size_t)ih * wdt + (kx - pad) : nullptr;
                  if (gw)
                    for (int ow = ow_lo; ow <= ow_hi; ++ow)
                      wacc += grow[ow] * xrow[(size_t)ow * stride];
                  if (gxrow)
                    for (int ow = ow_lo; ow <= ow_hi; ++ow)
                      gxrow[(size_t)ow * stride] += wvv * grow[ow];
                }
                if (gw) gw->data[widx] += wacc;
              }
          }
        }
      } else {
        for (int o = 0; o < co; ++o) {
          const T* gmap = gp + (size_t)o * ho * wo;
          for (int oh = 0; oh < ho; ++oh)
            for (int ow = 0; ow < wo; ++ow) {
              T gv = gmap[(size_t)oh * wo + ow];
              if (gv == T(0)) continue;
              for (int c = 0; c < ci; ++c) {
                const T* xmap = xp2 + (size_t)c * h * wdt;
                T* gxmap = gx ? gx->data.data() + (size_t)c * h * wdt : nullptr;
                for (int ky = 0; ky < k; ++ky) {
                  int ih = std::clamp(oh * stride + ky - pad, 0, h - 1);
                  for (int kx = 0; kx < k; ++kx) {
                    int iw = std::clamp(ow * stride + kx - pad, 0, wdt - 1);
                    size_t widx = (((size_t)o * ci + c) * k + ky) * k + kx;
                    if (gw) gw->data[widx] += gv * xmap[(size_t)ih * wdt + iw];
                    if (gxmap) gxmap[(size_t)ih * wdt + iw] += gv * wp2[widx];
                  }
                }
              }
            }
        }
      }
    });
  return {&t, id};
}

// Depthwise 1-d convolution over a token sequence with causal (left) zero
// padding: y[t,c] = b[c] + sum_j w[c,j] * x[t-(k-1)+j, c]
template <typename T>
Var<T> conv1d_dw_causal(Var<T> x, Var<T> w, Var<T> b) {
  detail::check_same_tape(x, w);
  detail::check_same_tape(x, b);
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = t.val(x.id);
  const Tensor<T>& wv = t.val(w.id);
  const Tensor<T>& bv = t.val(b.id);
  if (xv.ndim() != 2 || wv.ndim() != 2 || bv.ndim() != 1)
    throw dim_error("conv1d_dw_causal: expected x[L,C], w[C,k], b[C]");
  int l = xv.extent(0), c = xv.extent(1), k = wv.extent(1);
  if (wv.extent(0) != c || bv.extent(0) != c)
    throw dim_error("conv1d_dw_causal: channel mismatch");
  Tensor<T> y({l, c});
  for (int tt = 0; tt < l; ++tt)
    for (int cc = 0; cc < c; ++cc) {
      T acc = bv.data[(size_t)cc];
      for (int j = 0; j < k; ++j) {
        int src = tt - (k - 1) + j;
        if (src >= 0) acc += wv.at2(cc, j) * xv.at2(src, cc);
      }
      y.at2(tt, cc) = acc;
    }
  int id = t.emplace(std::move(y), {x.id, w.id, b.id});
  if (t.rg(id))
    t.set_back(id, [x, w, b, l, c, k](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      const Tensor<T>& xv2 = tp.val(x.id);
      const Tensor<T>& wv2 = tp.val(w.id);
      Tensor<T>* gx = tp.grad_accum(x.id);
      Tensor<T>* gw = tp.grad_accum(w.id);
      Tensor<T>* gb = tp.grad_accum(b.id);
      for (int tt = 0; tt < l; ++tt)
        for (int cc = 0; cc < c; ++cc) {
          T gv = g.at2(tt, cc);
          if (gb) gb->data[(size_t)cc] += gv;
          for (int j = 0; j < k; ++j) {
            int src = tt - (k - 1) + j;
            if (src < 0) continue;
            if (gw) gw->at2(cc, j) += gv * xv2.at2(src, cc);
            if (gx) gx->at2(src, cc) += gv * wv2.at2(cc, j);
          }
        }
    });
  return {&t, id};
}

// Exact f x f mean pooling with stride f; the downsampling primitive used
// between encoder stages.
template <typename T>
Var<T> avg_pool2d(Var<T> x, int f) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = t.val(x.id);
  if (xv.ndim() != 3) throw dim_error("avg_pool2d: expected [C,H,W]");
  int c = xv.extent(0), h = xv.extent(1), w = xv.extent(2);
  if (f < 1 || h % f != 0 || w % f != 0)
    throw config_error("avg_pool2d: extent not divisible by factor");
  int ho = h / f, wo = w / f;
  T inv = T(1) / (T)(f * f);
  Tensor<T> y({c, ho, wo});
  for (int cc = 0; cc < c; ++cc)
    for (int oh = 0; oh < ho; ++oh)
      for (int ow = 0; ow < wo; ++ow) {
        T acc = 0;
        for (int dy = 0; dy < f; ++dy)
          for (int dx = 0; dx < f; ++dx) acc += xv.at3(cc, oh * f + dy, ow * f + dx);
        y.at3(cc, oh, ow) = acc * inv;
      }
  int id = t.emplace(std::move(y), {x.id});
  if (t.rg(id))
    t.set_back(id, [x, c, ho, wo, f, inv](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      if (Tensor<T>* gx = tp.grad_accum(x.id))
        for (int cc = 0; cc < c; ++cc)
          for (int oh = 0; oh < ho; ++oh)
            for (int ow = 0; ow < wo; ++ow) {
              T gv = g.at3(cc, oh, ow) * inv;
              for (int dy = 0; dy < f; ++dy)
                for (int dx = 0; dx < f; ++dx) gx->at3(cc, oh * f + dy, ow * f + dx) += gv;
            }
    });
  return {&t, id};
}

// Adaptive mean pooling to an arbitrary output grid. Bin i covers input rows
// [floor(i*H/oh), ceil((i+1)*H/oh)); for oh > H bins duplicate source cells.
template <typename T>
Var<T> adaptive_avg_pool2d(Var<T> x, int oh, int ow) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = t.val(x.id);
  if (xv.ndim() != 3) throw dim_error("adaptive_avg_pool2d: expected [C,H,W]");
  if (oh < 1 || ow < 1) throw config_error("adaptive_avg_pool2d: bad target size");
  int c = xv.extent(0), h = xv.extent(1), w = xv.extent(2);
  auto lo = [](int i, int n, int on) { return (int)(((int64_t)i * n) / on); };
  auto hi = [](int i, int n, int on) { return (int)(((int64_t)(i + 1) * n + on - 1) / on); };
  Tensor<T> y({c, oh, ow});
  for (int cc = 0; cc < c; ++cc)
    for (int i = 0; i < oh; ++i) {
      int y0 = lo(i, h, oh), y1 = hi(i, h, oh);
      for (int j = 0; j < ow; ++j) {
        int x0 = lo(j, w, ow), x1 = hi(j, w, ow);
        T acc = 0;
        for (int yy = y0; yy < y1; ++yy)
          for (int xx = x0; xx < x1; ++xx) acc += xv.at3(cc, yy, xx);
        y.at3(cc, i, j) = acc / (T)((y1 - y0) * (x1 - x0));
      }
    }
  int id = t.emplace(std::move(y), {x.id});
  if (t.rg(id))
    t.set_back(id, [x, c, h, w, oh, ow, lo, hi](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      if (Tensor<T>* gx = tp.grad_accum(x.id))
        for (int cc = 0; cc < c; ++cc)
          for (int i = 0; i < oh; ++i) {
            int y0 = lo(i, h, oh), y1 = hi(i, h, oh);
            for (int j = 0; j < ow; ++j) {
              int x0 = lo(j, w, ow), x1 = hi(j, w, ow);
              T gv = g.at3(cc, i, j) / (T)((y1 - y0) * (x1 - x0));
              for (int yy = y0; yy < y1; ++yy)
                for (int xx = x0; xx < x1; ++xx) gx->at3(cc, yy, xx) += gv;
            }
          }
    });
  return {&t, id};
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = t.val(x.id);
  if (xv.ndim() != 3) throw dim_error("global_avg_pool: expected [C,H,W]");
  int c = xv.extent(0);
  size_t hw = (size_t)xv.extent(1) * xv.extent(2);
  Tensor<T> y({c});
  for (int cc = 0; cc < c; ++cc) {
    T acc = 0;
    const T* m = &xv.data[(size_t)cc * hw];
    for (size_t i = 0; i < hw; ++i) acc += m[i];
    y.data[(size_t)cc] = acc / (T)hw;
  }
  int id = t.emplace(std::move(y), {x.id});
  if (t.rg(id))
    t.set_back(id, [x, c, hw](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      if (Tensor<T>* gx = tp.grad_accum(x.id))
        for (int cc = 0; cc < c; ++cc) {
          T gv = g.data[(size_t)cc] / (T)hw;
          T* m = &gx->data[(size_t)cc * hw];
          for (size_t i = 0; i < hw; ++i) m[i] += gv;
        }
    });
  return {&t, id};
}

namespace detail {
struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<double> frac;
};
inline LerpAxis make_lerp(int in, int out) {
  LerpAxis a;
  a.i0.resize((size_t)out);
  a.i1.resize((size_t)out);
  a.frac.resize((size_t)out);
  double scale = (double)in / (double)out;
  for (int o = 0; o < out; ++o) {
    double src = ((double)o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int lo = (int)src;
    if (lo > in - 1) lo = in - 1;
    a.i0[(size_t)o] = lo;
    a.i1[(size_t)o] = std::min(lo + 1, in - 1);
    a.frac[(size_t)o] = src - (double)lo;
  }
  return a;
}
}  // namespace detail

// Bilinear interpolation, align_corners = false. Upscaling only.
template <typename T>
Var<T> upsample_bilinear(Var<T> x, int oh, int ow) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = t.val(x.id);
  if (xv.ndim() != 3) throw dim_error("upsample_bilinear: expected [C,H,W]");
  int c = xv.extent(0), h = xv.extent(1), w = xv.extent(2);
  if (oh < h || ow < w)
    throw config_error("upsample_bilinear: target smaller than source");
  auto ay = detail::make_lerp(h, oh);
  auto ax = detail::make_lerp(w, ow);
  Tensor<T> y({c, oh, ow});
  for (int cc = 0; cc < c; ++cc)
    for (int i = 0; i < oh; ++i) {
      int y0 = ay.i0[(size_t)i], y1 = ay.i1[(size_t)i];
      T fy = (T)ay.frac[(size_t)i];
      for (int j = 0; j < ow; ++j) {
        int x0 = ax.i0[(size_t)j], x1 = ax.i1[(size_t)j];
        T fx = (T)ax.frac[(size_t)j];
        T v00 = xv.at3(cc, y0, x0), v01 = xv.at3(cc, y0, x1);
        T v10 = xv.at3(cc, y1, x0), v11 = xv.at3(cc, y1, x1);
        y.at3(cc, i, j) = (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) +
                          fy * ((T(1) - fx) * v10 + fx * v11);
      }
    }
  int id = t.emplace(std::move(y), {x.id});
  if (t.rg(id))
    t.set_back(id, [x, c, oh, ow, ay, ax](Tape<T>& tp, int self) {
      const Tensor<T>& g = tp.grad_of(self);
      if (Tensor<T>* gx = tp.grad_accum(x.id))
        for (int cc = 0; cc < c; ++cc)
          for (int i = 0; i < oh; ++i) {
            int y0 = ay.i0[(size_t)i], y1 = ay.i1[(size_t)i];
            T fy = (T)ay.frac[(size_t)i];
            for (int j = 0; j < ow; ++j) {
              int x0 = ax.i0[(size_t)j], x1 = ax.i1[(size_t)j];
              T fx = (T)ax.frac[(size_t)j];
              T gv = g.at3(cc, i, j);
              gx->at3(cc, y0, x0) += gv * (T(1) - fy) * (T(1) - fx);
              gx->at3(cc, y0, x1) += gv * (T(1) - fy) * fx;
              gx->at3(cc, y1, x0) += gv * fy * (T(1) - fx);
              gx->at3(cc, y1, x1) += gv * fy * fx;
            }
          }
    });
  return {&t, id};
}

// Resize helper for decoder interior paths: bilinear when growing,
// adaptive mean pooling when shrinking.
template <typename T>
Var<T> resize_to(Var<T> x, int oh, int ow) {
  const Tensor<T>& xv = x.tape->val(x.id);
  int h = xv.extent(1), w = xv.extent(2);
  if (oh == h && ow == w) return x;
  if (oh >= h && ow >= w) return upsample_bilinear(x, oh, ow);
  return adaptive_avg_pool2d(x, oh, ow);
}

}  // namespace dpgcd
