#pragma once
#include <vector>

#include "dpgcd/metrics.hpp"
#include "dpgcd/model.hpp"

namespace dpgcd {

// Full pipeline per tile in eval mode (running batch-norm statistics, no
// gradient recording), 2-d labels by argmax, metrics pooled over the split.
template <typename T>
MetricReport evaluate(Model<T>& model, const std::vector<SampleData>& split,
                      bool mf1_changed_only = false) {
  if (split.empty()) throw data_error("evaluate: empty split");
  MetricAccumulator acc(model.cfg.dec.num_classes);
  for (const auto& s : split) {
    ModelInputs<T> in = prepare_inputs<T>(s);
    Tape<T> tape;
    GradGuard<T> guard(tape, false);
    Binding<T> bind(tape, model.params);
    ModelForward<T> fwd = model_forward(bind, model.cfg, in, /*train=*/false);

    const Tensor<T>& logits = fwd.logits_2d.val();
    int classes = logits.extent(0);
    size_t npix = (size_t)s.h * s.w;
    std::vector<int> pred_lab(npix);
    for (size_t p = 0; p < npix; ++p) {
      int best = 0;
      T bv = logits.data[p];
      for (int k = 1; k < classes; ++k) {
        T v = logits.data[(size_t)k * npix + p];
        if (v > bv) {
          bv = v;
          best = k;
        }
      }
      pred_lab[p] = best;
    }
    Tensor<float> pred_h = fwd.height_3d.val().template cast<float>();
    acc.add_tile(pred_lab, s.label, pred_h, s.delta_h);
  }
  return finalize_report(acc, mf1_changed_only);
}

// Closed-form cRMSE of the all-unchanged zero predictor: with height
// prediction identically zero, cRMSE = RMS of |delta_h| over change pixels.
inline double zero_predictor_crmse(const std::vector<SampleData>& split) {
  double sq = 0;
  long long n = 0;
  for (const auto& s : split)
    for (size_t i = 0; i < s.delta_h.numel(); ++i)
      if (s.label[i] != 0) {
        sq += (double)s.delta_h.data[i] * (double)s.delta_h.data[i];
        ++n;
      }
  if (n == 0) throw data_error("zero_predictor_crmse: split has no change pixels");
  return std::sqrt(sq / (double)n);
}

}  // namespace dpgcd
