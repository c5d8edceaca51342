#pragma once
#include <memory>
#include <vector>

#include "dpgcd/ops_basic.hpp"

namespace dpgcd {

// Pixels where the 2-d label is not "unchanged", plus the counts the
// change-restricted losses and metrics divide by.
struct ChangeMask {
  int h = 0, w = 0;
  std::vector<uint8_t> in_change;  // 1 = change-region pixel
  size_t n_total = 0;
  size_t n_change = 0;

  static ChangeMask from_labels(const std::vector<int>& labels, int h, int w) {
    if (labels.size() != (size_t)h * w) throw dim_error("change mask: label size mismatch");
    ChangeMask m;
    m.h = h;
    m.w = w;
    m.n_total = (size_t)h * w;
    m.in_change.resize(m.n_total, 0);
    for (size_t i = 0; i < m.n_total; ++i)
      if (labels[i] != 0) {
        m.in_change[i] = 1;
        ++m.n_change;
      }
    return m;
  }
};

// Weighted cross entropy over per-pixel class logits [C,H,W]:
//   -(1/N) sum_n w[l_n] * log softmax(z_n)[l_n]
// The denominator is the unweighted pixel count.
template <typename T>
Var<T> weighted_ce(Var<T> logits, const std::vector<int>& labels,
                   const std::vector<double>& class_weights) {
  Tape<T>& t = *logits.tape;
  const Tensor<T>& zv = t.val(logits.id);
  if (zv.ndim() != 3) throw dim_error("weighted_ce: expected logits [C,H,W]");
  int c = zv.extent(0);
  size_t npix = (size_t)zv.extent(1) * zv.extent(2);
  if (c < 2) throw config_error("weighted_ce: need at least 2 classes");
  if (labels.size() != npix) throw dim_error("weighted_ce: label count != pixel count");
  if (class_weights.size() != (size_t)c)
    throw dim_error("weighted_ce: class weight count != classes");
  for (int lv : labels)
    if (lv < 0 || lv >= c) throw data_error("weighted_ce: label out of range");

  auto probs = std::make_shared<std::vector<T>>((size_t)c * npix);
  double loss = 0;
  for (size_t p = 0; p < npix; ++p) {
    T mx = zv.data[p];
    for (int k = 1; k < c; ++k) mx = std::max(mx, zv.data[(size_t)k * npix + p]);
    double se = 0;
    for (int k = 0; k < c; ++k) {
      double e = std::exp((double)(zv.data[(size_t)k * npix + p] - mx));
      (*probs)[(size_t)k * npix + p] = (T)e;
      se += e;
    }
    double inv = 1.0 / se;
    for (int k = 0; k < c; ++k) (*probs)[(size_t)k * npix + p] *= (T)inv;
    int l = labels[p];
    double logp = (double)(zv.data[(size_t)l * npix + p] - mx) - std::log(se);
    loss -= class_weights[(size_t)l] * logp;
  }
  loss /= (double)npix;

  int id = t.emplace(Tensor<T>({1}, std::vector<T>{(T)loss}), {logits.id});
  if (t.rg(id)) {
    auto lab = std::make_shared<std::vector<int>>(labels);
    auto wts = std::make_shared<std::vector<double>>(class_weights);
    t.set_back(id, [logits, probs, lab, wts, c, npix](Tape<T>& tp, int self) {
      T g = tp.grad_of(self).data[0];
      if (Tensor<T>* gz = tp.grad_accum(logits.id)) {
        T invn = (T)(1.0 / (double)npix);
        for (size_t p = 0; p < npix; ++p) {
          int l = (*lab)[p];
          T wl = (T)(*wts)[(size_t)l];
          for (int k = 0; k < c; ++k) {
            T soft = (*probs)[(size_t)k * npix + p];
            T onehot = (k == l) ? T(1) : T(0);
            gz->data[(size_t)k * npix + p] += g * wl * (soft - onehot) * invn;
          }
        }
      }
    });
  }
  return {&t, id};
}

// Mean squared error against a fixed target, over all pixels.
template <typename T>
Var<T> mse_loss(Var<T> pred, const Tensor<T>& gt) {
  Tape<T>& t = *pred.tape;
  const Tensor<T>& pv = t.val(pred.id);
  if (!pv.same_shape(gt)) throw dim_error("mse: shape mismatch");
  size_t n = pv.numel();
  double acc = 0;
  for (size_t i = 0; i < n; ++i) {
    double d = (double)pv.data[i] - (double)gt.data[i];
    acc += d * d;
  }
  acc /= (double)n;
  int id = t.emplace(Tensor<T>({1}, std::vector<T>{(T)acc}), {pred.id});
  if (t.rg(id)) {
    auto gts = std::make_shared<Tensor<T>>(gt);
    t.set_back(id, [pred, gts, n](Tape<T>& tp, int self) {
      T g = tp.grad_of(self).data[0];
      const Tensor<T>& pv2 = tp.val(pred.id);
      if (Tensor<T>* gp = tp.grad_accum(pred.id)) {
        T s = g * (T)(2.0 / (double)n);
        for (size_t i = 0; i < n; ++i) gp->data[i] += s * (pv2.data[i] - gts->data[i]);
      }
    });
  }
  return {&t, id};
}

// Gradient loss restricted to change-region pixels, forward differences:
// a pixel contributes its horizontal term iff it is in the mask and j+1 < W,
// its vertical term iff i+1 < H. Divides by the change-pixel count; zero
// when the mask is empty.
template <typename T>
Var<T> grad_loss(Var<T> pred, const Tensor<T>& gt, const ChangeMask& mask) {
  Tape<T>& t = *pred.tape;
  const Tensor<T>& pv = t.val(pred.id);
  if (pv.ndim() != 3 || pv.extent(0) != 1) throw dim_error("grad_loss: expected [1,H,W]");
  if (!pv.same_shape(gt)) throw dim_error("grad_loss: shape mismatch");
  int h = pv.extent(1), w = pv.extent(2);
  if (mask.h != h || mask.w != w) throw dim_error("grad_loss: mask extent mismatch");
  if (mask.n_change == 0) return t.constant(Tensor<T>({1}, T(0)));

  double inv = 1.0 / (double)mask.n_change;
  double acc = 0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      if (!mask.in_change[(size_t)i * w + j]) continue;
      if (j + 1 < w) {
        double d = ((double)pv.at3(0, i, j + 1) - pv.at3(0, i, j)) -
                   ((double)gt.at3(0, i, j + 1) - gt.at3(0, i, j));
        acc += std::abs(d);
      }
      if (i + 1 < h) {
        double d = ((double)pv.at3(0, i + 1, j) - pv.at3(0, i, j)) -
                   ((double)gt.at3(0, i + 1, j) - gt.at3(0, i, j));
        acc += std::abs(d);
      }
    }
  acc *= inv;

  int id = t.emplace(Tensor<T>({1}, std::vector<T>{(T)acc}), {pred.id});
  if (t.rg(id)) {
    auto gts = std::make_shared<Tensor<T>>(gt);
    auto msk = std::make_shared<std::vector<uint8_t>>(mask.in_change);
    t.set_back(id, [pred, gts, msk, h, w, inv](Tape<T>& tp, int self) {
      T g = tp.grad_of(self).data[0];
      const Tensor<T>& pv2 = tp.val(pred.id);
      if (Tensor<T>* gp = tp.grad_accum(pred.id)) {
        T s = g * (T)inv;
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j) {
            if (!(*msk)[(size_t)i * w + j]) continue;
            if (j + 1 < w) {
              double d = ((double)pv2.at3(0, i, j + 1) - pv2.at3(0, i, j)) -
                         ((double)gts->at3(0, i, j + 1) - gts->at3(0, i, j));
              T sg = d > 0 ? s : (d < 0 ? -s : T(0));
              gp->at3(0, i, j + 1) += sg;
              gp->at3(0, i, j) -= sg;
            }
            if (i + 1 < h) {
              double d = ((double)pv2.at3(0, i + 1, j) - pv2.at3(0, i, j)) -
                         ((double)gts->at3(0, i + 1, j) - gts->at3(0, i, j));
              T sg = d > 0 ? s : (d < 0 ? -s : T(0));
              gp->at3(0, i + 1, j) += sg;
              gp->at3(0, i, j) -= sg;
            }
          }
      }
    });
  }
  return {&t, id};
}

}  // namespace dpgcd
