#pragma once
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dpgcd/common.hpp"
#include "dpgcd/ops_loss.hpp"  // ChangeMask
#include "dpgcd/tensor.hpp"

namespace dpgcd {

struct ClassCounts {
  long long tp = 0, fp = 0, fn = 0, tn = 0;
};

struct ClassScore {
  double iou = 0, f1 = 0;
  bool absent = false;  // class missing from both prediction and ground truth
};

inline std::vector<ClassCounts> confusion_counts(const std::vector<int>& pred,
                                                 const std::vector<int>& gt, int num_classes) {
  if (pred.size() != gt.size()) throw dim_error("confusion: size mismatch");
  std::vector<ClassCounts> c((size_t)num_classes);
  for (size_t i = 0; i < pred.size(); ++i) {
    int p = pred[i], g = gt[i];
    if (p < 0 || p >= num_classes || g < 0 || g >= num_classes)
      throw data_error("confusion: label out of range");
    for (int k = 0; k < num_classes; ++k) {
      bool pp = p == k, gg = g == k;
      if (pp && gg)
        ++c[(size_t)k].tp;
      else if (pp)
        ++c[(size_t)k].fp;
      else if (gg)
        ++c[(size_t)k].fn;
      else
        ++c[(size_t)k].tn;
    }
  }
  return c;
}

// IoU = TP/(TP+FP+FN), F1 = 2TP/(2TP+FP+FN). A class absent from both pred
// and gt scores 1 by convention and is flagged.
inline std::vector<ClassScore> scores_from_counts(const std::vector<ClassCounts>& c) {
  std::vector<ClassScore> out(c.size());
  for (size_t k = 0; k < c.size(); ++k) {
    long long denom = c[k].tp + c[k].fp + c[k].fn;
    if (denom == 0) {
      out[k].iou = out[k].f1 = 1.0;
      out[k].absent = true;
    } else {
      out[k].iou = (double)c[k].tp / (double)denom;
      out[k].f1 = 2.0 * (double)c[k].tp / (double)(2 * c[k].tp + c[k].fp + c[k].fn);
    }
  }
  return out;
}

inline std::vector<ClassScore> class_iou_f1(const std::vector<int>& pred,
                                            const std::vector<int>& gt, int num_classes) {
  return scores_from_counts(confusion_counts(pred, gt, num_classes));
}

// mIoU_ch averages changed classes only (class 0 is "unchanged"); mF1
// averages all classes unless mf1_changed_only is set.
struct Aggregate2d {
  double miou_ch = 0, mf1 = 0;
};

inline Aggregate2d aggregate_2d(const std::vector<ClassScore>& per_class,
                                bool mf1_changed_only = false) {
  if (per_class.size() < 2) throw config_error("aggregate_2d: need >= 2 classes");
  Aggregate2d a;
  double si = 0;
  for (size_t k = 1; k < per_class.size(); ++k) si += per_class[k].iou;
  a.miou_ch = si / (double)(per_class.size() - 1);
  double sf = 0;
  size_t k0 = mf1_changed_only ? 1 : 0;
  for (size_t k = k0; k < per_class.size(); ++k) sf += per_class[k].f1;
  a.mf1 = sf / (double)(per_class.size() - k0);
  return a;
}

// 3-d height metrics. MAE/RMSE over all pixels; cRMSE/cRel over change-region
// pixels only. cRel skips |H| < 1e-6 denominators and reports the skip count;
// an empty change region leaves the change metrics undefined.
struct HeightMetrics {
  double mae = 0, rmse = 0;
  std::optional<double> crmse, crel;
  long long crel_skipped = 0;
};

inline HeightMetrics height_metrics(const Tensor<float>& pred, const Tensor<float>& gt,
                                    const ChangeMask& mask) {
  if (!pred.same_shape(gt)) throw dim_error("height_metrics: shape mismatch");
  if (pred.numel() != mask.n_total) throw dim_error("height_metrics: mask size mismatch");
  HeightMetrics m;
  double sa = 0, sq = 0, cq = 0, rel = 0;
  long long nrel = 0;
  for (size_t i = 0; i < pred.numel(); ++i) {
    double e = (double)pred.data[i] - (double)gt.data[i];
    sa += std::abs(e);
    sq += e * e;
    if (mask.in_change[i]) {
      cq += e * e;
      double h = std::abs((double)gt.data[i]);
      if (h < 1e-6)
        ++m.crel_skipped;
      else {
        rel += std::abs(e) / h;
        ++nrel;
      }
    }
  }
  double n = (double)pred.numel();
  m.mae = sa / n;
  m.rmse = std::sqrt(sq / n);
  if (mask.n_change > 0) {
    m.crmse = std::sqrt(cq / (double)mask.n_change);
    m.crel = nrel > 0 ? std::optional<double>(rel / (double)nrel) : std::nullopt;
  }
  return m;
}

// Split-level accumulation with pixel-count weighting: confusion counts and
// height error sums are pooled globally before the final ratios.
struct MetricAccumulator {
  int num_classes = 0;
  std::vector<ClassCounts> counts;
  double abs_sum = 0, sq_sum = 0;
  long long n_all = 0;
  double c_sq_sum = 0;
  long long n_change = 0;
  double rel_sum = 0;
  long long rel_n = 0, rel_skipped = 0;
  std::vector<std::pair<float, float>> scatter;  // (gt, pred) over change pixels

  explicit MetricAccumulator(int nc) : num_classes(nc), counts((size_t)nc) {}

  void add_tile(const std::vector<int>& pred_lab, const std::vector<int>& gt_lab,
                const Tensor<float>& pred_h, const Tensor<float>& gt_h) {
    auto c = confusion_counts(pred_lab, gt_lab, num_classes);
    for (size_t k = 0; k < c.size(); ++k) {
      counts[k].tp += c[k].tp;
      counts[k].fp += c[k].fp;
      counts[k].fn += c[k].fn;
      counts[k].tn += c[k].tn;
    }
    ChangeMask mask = ChangeMask::from_labels(gt_lab, pred_h.extent(1), pred_h.extent(2));
    for (size_t i = 0; i < pred_h.numel(); ++i) {
      double e = (double)pred_h.data[i] - (double)gt_h.data[i];
      abs_sum += std::abs(e);
      sq_sum += e * e;
      ++n_all;
      if (mask.in_change[i]) {
        c_sq_sum += e * e;
        ++n_change;
        scatter.emplace_back(gt_h.data[i], pred_h.data[i]);
        double h = std::abs((double)gt_h.data[i]);
        if (h < 1e-6)
          ++rel_skipped;
        else {
          rel_sum += std::abs(e) / h;
          ++rel_n;
        }
      }
    }
  }
};

struct MetricReport {
  int num_classes = 0;
  std::vector<ClassScore> per_class;
  double miou_ch = 0, mf1 = 0;
  double mae = 0, rmse = 0;
  std::optional<double> crmse, crel;
  long long crel_skipped = 0;
  long long n_pixels = 0, n_change_pixels = 0;
  std::vector<std::pair<float, float>> scatter;
};

inline MetricReport finalize_report(const MetricAccumulator& acc, bool mf1_changed_only = false) {
  MetricReport r;
  r.num_classes = acc.num_classes;
  r.per_class = scores_from_counts(acc.counts);
  auto agg = aggregate_2d(r.per_class, mf1_changed_only);
  r.miou_ch = agg.miou_ch;
  r.mf1 = agg.mf1;
  double n = (double)acc.n_all;
  r.mae = n > 0 ? acc.abs_sum / n : 0;
  r.rmse = n > 0 ? std::sqrt(acc.sq_sum / n) : 0;
  if (acc.n_change > 0) {
    r.crmse = std::sqrt(acc.c_sq_sum / (double)acc.n_change);
    r.crel = acc.rel_n > 0 ? std::optional<double>(acc.rel_sum / (double)acc.rel_n) : std::nullopt;
  }
  r.crel_skipped = acc.rel_skipped;
  r.n_pixels = acc.n_all;
  r.n_change_pixels = acc.n_change;
  r.scatter = acc.scatter;
  return r;
}

}  // namespace dpgcd
