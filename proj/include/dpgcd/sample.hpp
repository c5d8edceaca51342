#pragma once
#include <string>
#include <vector>

#include "dpgcd/common.hpp"
#include "dpgcd/tensor.hpp"

namespace dpgcd {

// One training/eval unit: pre-event DSM, post-event image, post-event depth
// prior, 2-d change labels and signed height change. All rasters share H x W.
struct SampleData {
  std::string id;
  int h = 0, w = 0;
  Tensor<float> dsm_t1;    // [1,H,W] meters
  Tensor<float> img_t2;    // [3,H,W] in [0,1]
  Tensor<float> prior;     // [1,H,W] relative depth
  std::vector<int> label;  // H*W row-major, 0 = unchanged
  Tensor<float> delta_h;   // [1,H,W] signed meters
  std::string split = "train";
  double mpp = 0.3;

  void validate(int num_classes) const {
    if (dsm_t1.shape != std::vector<int>({1, h, w}) ||
        prior.shape != std::vector<int>({1, h, w}) ||
        delta_h.shape != std::vector<int>({1, h, w}) ||
        img_t2.shape != std::vector<int>({3, h, w}))
      throw data_error("sample " + id + ": raster extents disagree");
    if (label.size() != (size_t)h * w) throw data_error("sample " + id + ": label size mismatch");
    for (int v : label)
      if (v < 0 || v >= num_classes)
        throw data_error("sample " + id + ": label value out of range");
  }
};

// Ground-truth T2 DSM is derived, never acquired: dsm_t2 = dsm_t1 + delta_h.
template <typename T>
Tensor<T> derive_dsm_gt(const Tensor<T>& dsm_t1, const Tensor<T>& delta_h) {
  if (!dsm_t1.same_shape(delta_h)) throw dim_error("derive_dsm_gt: shape mismatch");
  Tensor<T> out = dsm_t1;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += delta_h.data[i];
  return out;
}

}  // namespace dpgcd
