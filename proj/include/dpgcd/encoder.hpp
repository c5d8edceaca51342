#pragma once
#include <array>
#include <cmath>
#include <string>

#include "dpgcd/ops.hpp"
#include "dpgcd/params.hpp"

namespace dpgcd {

// Shared-weight hierarchical backbone. Four stages at 1/4 .. 1/32 of the
// input with channel widths C, 2C, 4C, 8C. Downsampling is exact mean
// pooling; each stage applies residual conv-norm-GELU blocks.
struct EncoderConfig {
  int stem_channels = 16;
  int blocks_per_stage = 2;

  int stage_channels(int i) const { return stem_channels << i; }  // i in 0..3
};

template <typename T>
struct FeaturePyramid {
  std::array<Var<T>, 4> level;
};

// Per-tile min-max normalization of a single-channel raster into [0,1].
// Degenerate range maps to all zeros. Non-finite values are ignored for the
// range and mapped to zero; an all-non-finite raster is an error.
template <typename T>
Tensor<T> normalize_raster_to_gray(const Tensor<T>& r) {
  if (r.ndim() != 3 || r.extent(0) != 1)
    throw dim_error("normalize_raster_to_gray: expected [1,H,W]");
  double lo = 0, hi = 0;
  bool seen = false;
  for (T v : r.data) {
    if (!std::isfinite((double)v)) continue;
    if (!seen) {
      lo = hi = (double)v;
      seen = true;
    } else {
      lo = std::min(lo, (double)v);
      hi = std::max(hi, (double)v);
    }
  }
  if (!seen) throw data_error("normalize_raster_to_gray: no finite values");
  Tensor<T> out(r.shape);
  double range = hi - lo;
  if (range <= 0) return out;  // all zeros
  for (size_t i = 0; i < r.data.size(); ++i) {
    double v = (double)r.data[i];
    out.data[i] = std::isfinite(v) ? (T)((v - lo) / range) : T(0);
  }
  return out;
}

// Single-channel modalities are replicated to 3 channels so one stem serves
// image, DSM and depth-prior inputs alike.
template <typename T>
Tensor<T> replicate3(const Tensor<T>& x) {
  if (x.ndim() != 3 || x.extent(0) != 1) throw dim_error("replicate3: expected [1,H,W]");
  Tensor<T> out({3, x.extent(1), x.extent(2)});
  size_t hw = x.data.size();
  for (int c = 0; c < 3; ++c)
    std::copy(x.data.begin(), x.data.end(), out.data.begin() + (ptrdiff_t)(c * hw));
  return out;
}

template <typename T>
void build_encoder_params(ParamFactory<T>& f, const EncoderConfig& cfg,
                          const std::string& p = "enc") {
  f.conv(p + ".stem.conv", cfg.stem_channels, 3, 3);
  f.bn(p + ".stem.bn", cfg.stem_channels);
  for (int s = 0; s < 4; ++s) {
    int c = cfg.stage_channels(s);
    if (s > 0) {
      f.conv(p + ".t" + std::to_string(s) + ".conv", c, cfg.stage_channels(s - 1), 3);
      f.bn(p + ".t" + std::to_string(s) + ".bn", c);
    }
    for (int b = 0; b < cfg.blocks_per_stage; ++b) {
      std::string bp = p + ".s" + std::to_string(s) + ".b" + std::to_string(b);
      f.conv(bp + ".conv", c, c, 3);
      f.bn(bp + ".bn", c);
    }
  }
}

namespace detail {

template <typename T>
Var<T> conv_bn_gelu(Binding<T>& p, const std::string& name, Var<T> x, bool train) {
  Var<T> y = conv2d(x, p(name + ".conv.w"), p(name + ".conv.b"), 1, 1);
  y = batch_norm(y, p(name + ".bn.gamma"), p(name + ".bn.beta"), &p.state(name + ".bn.rmean"),
                 &p.state(name + ".bn.rvar"), train);
  return gelu(y);
}

}  // namespace detail

// Hierarchical feature extraction with one shared parameter set for every
// modality. Input spatial extents must be divisible by 32.
template <typename T>
FeaturePyramid<T> encode(Binding<T>& p, Var<T> x, const EncoderConfig& cfg, bool train,
                         const std::string& pre = "enc") {
  const Tensor<T>& xv = x.val();
  if (xv.ndim() != 3 || xv.extent(0) != 3) throw dim_error("encode: expected [3,H,W]");
  if (xv.extent(1) % 32 != 0 || xv.extent(2) % 32 != 0)
    throw config_error("encode: extents must be divisible by 32, got " + xv.shape_str());
  FeaturePyramid<T> pyr;
  Var<T> y = detail::conv_bn_gelu(p, pre + ".stem", x, train);
  y = avg_pool2d(y, 4);
  for (int s = 0; s < 4; ++s) {
    if (s > 0) {
      y = avg_pool2d(y, 2);
      y = detail::conv_bn_gelu(p, pre + ".t" + std::to_string(s), y, train);
    }
    for (int b = 0; b < cfg.blocks_per_stage; ++b) {
      std::string bp = pre + ".s" + std::to_string(s) + ".b" + std::to_string(b);
      y = add(y, detail::conv_bn_gelu(p, bp, y, train));
    }
    pyr.level[(size_t)s] = y;
  }
  return pyr;
}

// Identical forward math, but gradient never reaches the encoder parameters
// through this call: ops recorded under a disabled guard carry no backward.
template <typename T>
FeaturePyramid<T> encode_frozen(Binding<T>& p, Var<T> x, const EncoderConfig& cfg, bool train,
                                const std::string& pre = "enc") {
  GradGuard<T> guard(p.tape, false);
  return encode(p, x, cfg, train, pre);
}

}  // namespace dpgcd
