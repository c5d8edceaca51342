#pragma once
#include <string>

#include "dpgcd/encoder.hpp"

namespace dpgcd {

// Gated injection of depth-prior features into image features, per level:
//   F~img = Conv(Fimg), F~edm = Conv(Fedm)
//   M     = sigmoid(phi_m(concat(F~edm, F~img)))        (single channel)
//   Ffused = F~img + M (.) F~edm
//   out    = phi_r(Ffused) + Fimg                        (residual to raw)
// phi_m is conv(2C -> C/2, 3x3) -> BN -> GELU -> conv(C/2 -> 1, 1x1);
// phi_r is conv(C -> C, 3x3) -> BN -> ReLU.

template <typename T>
void build_fusion_params(ParamFactory<T>& f, const EncoderConfig& enc,
                         const std::string& p = "fuse") {
  for (int i = 0; i < 4; ++i) {
    int c = enc.stage_channels(i);
    int cm = std::max(1, c / 2);
    std::string lp = p + ".l" + std::to_string(i + 1);
    f.conv(lp + ".timg", c, c, 3);
    f.conv(lp + ".tedm", c, c, 3);
    f.conv(lp + ".gate.c1", cm, 2 * c, 3);
    f.bn(lp + ".gate.bn", cm);
    f.conv(lp + ".gate.c2", 1, cm, 1);
    f.conv(lp + ".refine.conv", c, c, 3);
    f.bn(lp + ".refine.bn", c);
  }
}

template <typename T>
std::pair<Var<T>, Var<T>> transform_level(Binding<T>& p, const std::string& lp, Var<T> f_img,
                                          Var<T> f_edm) {
  if (!f_img.val().same_shape(f_edm.val()))
    throw dim_error("transform_level: modality shapes disagree");
  Var<T> ti = conv2d(f_img, p(lp + ".timg.w"), p(lp + ".timg.b"), 1, 1);
  Var<T> te = conv2d(f_edm, p(lp + ".tedm.w"), p(lp + ".tedm.b"), 1, 1);
  return {ti, te};
}

// Spatial weighting map M in (0,1)^{1 x H x W}; depth features concatenated
// first, as the gate is written.
template <typename T>
Var<T> gate_map(Binding<T>& p, const std::string& lp, Var<T> f_img_t, Var<T> f_edm_t,
                bool train) {
  Var<T> x = concat_ch(f_edm_t, f_img_t);
  Var<T> y = conv2d(x, p(lp + ".gate.c1.w"), p(lp + ".gate.c1.b"), 1, 1);
  y = batch_norm(y, p(lp + ".gate.bn.gamma"), p(lp + ".gate.bn.beta"),
                 &p.state(lp + ".gate.bn.rmean"), &p.state(lp + ".gate.bn.rvar"), train);
  y = gelu(y);
  y = conv2d(y, p(lp + ".gate.c2.w"), p(lp + ".gate.c2.b"), 1, 0);
  return sigmoid(y);
}

template <typename T>
Var<T> fuse_level(Binding<T>& p, const std::string& lp, Var<T> f_img, Var<T> f_edm, bool train) {
  auto [ti, te] = transform_level(p, lp, f_img, f_edm);
  Var<T> m = gate_map(p, lp, ti, te, train);
  Var<T> fused = add(ti, mul_spatial(te, m));
  Var<T> r = conv2d(fused, p(lp + ".refine.conv.w"), p(lp + ".refine.conv.b"), 1, 1);
  r = batch_norm(r, p(lp + ".refine.bn.gamma"), p(lp + ".refine.bn.beta"),
                 &p.state(lp + ".refine.bn.rmean"), &p.state(lp + ".refine.bn.rvar"), train);
  r = relu(r);
  return add(r, f_img);
}

// enabled = false bypasses the module entirely (the --no-edp ablation): the
// raw image pyramid passes through untouched.
template <typename T>
FeaturePyramid<T> fuse_pyramid(Binding<T>& p, const FeaturePyramid<T>& img,
                               const FeaturePyramid<T>& edm, bool train, bool enabled = true,
                               const std::string& pre = "fuse") {
  if (!enabled) return img;
  FeaturePyramid<T> out;
  for (int i = 0; i < 4; ++i) {
    if (!img.level[(size_t)i].val().same_shape(edm.level[(size_t)i].val()))
      throw dim_error("fuse_pyramid: level shape mismatch");
    out.level[(size_t)i] = fuse_level(p, pre + ".l" + std::to_string(i + 1),
                                      img.level[(size_t)i], edm.level[(size_t)i], train);
  }
  return out;
}

}  // namespace dpgcd
