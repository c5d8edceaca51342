#pragma once
#include <array>
#include <string>
#include <vector>

#include "dpgcd/encoder.hpp"

namespace dpgcd {

// UPerNet-style fusion of the four change-feature levels, the 2D/3D heads,
// and the lightweight FPN decoder feeding the auxiliary DSM head.
struct DecoderConfig {
  int fusion_width = 64;
  int head_width = 16;
  int dsm_width = 32;
  int num_classes = 3;
  std::array<int, 4> ppm_scales{1, 2, 3, 6};

  void validate() const {
    if (num_classes < 2) throw config_error("decoder: num_2d_classes must be >= 2");
  }
};

template <typename T>
void build_decoder_params(ParamFactory<T>& f, const EncoderConfig& enc, const DecoderConfig& cfg,
                          const std::string& p = "dec") {
  cfg.validate();
  int fw = cfg.fusion_width;
  for (int s : cfg.ppm_scales) {
    f.conv(p + ".ppm.s" + std::to_string(s), fw, enc.stage_channels(3), 1);
    f.bn(p + ".ppm.s" + std::to_string(s) + ".bn", fw);
  }
  f.conv(p + ".ppm.fuse", fw, enc.stage_channels(3) + 4 * fw, 1);
  f.bn(p + ".ppm.fuse.bn", fw);
  for (int i = 0; i < 3; ++i) {
    f.conv(p + ".lat" + std::to_string(i + 1), fw, enc.stage_channels(i), 1);
    f.bn(p + ".lat" + std::to_string(i + 1) + ".bn", fw);
  }
  f.conv(p + ".fuse", fw, 4 * fw, 3);
  f.bn(p + ".fuse.bn", fw);
  f.conv(p + ".h2d.c1", cfg.head_width, fw, 3);
  f.conv(p + ".h2d.c2", cfg.num_classes, cfg.head_width, 1);
  f.conv(p + ".h3d.c1", cfg.head_width, fw, 3);
  f.conv(p + ".h3d.c2", 1, cfg.head_width, 1);
  int dw = cfg.dsm_width;
  for (int i = 0; i < 4; ++i) {
    f.conv(p + ".dsm.al" + std::to_string(i + 1), dw, enc.stage_channels(i), 1);
    f.bn(p + ".dsm.al" + std::to_string(i + 1) + ".bn", dw);
  }
  f.conv(p + ".dsm.fuse", dw, 4 * dw, 3);
  f.bn(p + ".dsm.fuse.bn", dw);
  f.conv(p + ".dsm.head", 1, dw, 1);
}

namespace detail {
template <typename T>
Var<T> conv_bn_relu(Binding<T>& p, const std::string& name, Var<T> x, int pad, bool train,
                    PadMode mode = PadMode::zero) {
  Var<T> y = conv2d(x, p(name + ".w"), p(name + ".b"), 1, pad, mode);
  y = batch_norm(y, p(name + ".bn.gamma"), p(name + ".bn.beta"), &p.state(name + ".bn.rmean"),
                 &p.state(name + ".bn.rvar"), train);
  return relu(y);
}
}  // namespace detail

// PPM over the deepest level, 1x1 laterals, top-down upsample-and-add, then
// everything resized to 1/4 scale is concatenated and fused by a 3x3 conv.
// The fuse conv uses replicate padding so constant inputs stay constant.
template <typename T>
Var<T> uper_fuse(Binding<T>& p, const std::array<Var<T>, 4>& change, const DecoderConfig& cfg,
                 bool train, const std::string& pre = "dec") {
  for (int i = 1; i < 4; ++i) {
    if (change[(size_t)i].val().extent(1) * 2 != change[(size_t)i - 1].val().extent(1) ||
        change[(size_t)i].val().extent(2) * 2 != change[(size_t)i - 1].val().extent(2))
      throw dim_error("uper_fuse: levels are not a 2x pyramid");
  }
  int h4 = change[3].val().extent(1), w4 = change[3].val().extent(2);
  std::vector<Var<T>> ppm_cat{change[3]};
  for (int s : cfg.ppm_scales) {
    Var<T> b = adaptive_avg_pool2d(change[3], s, s);
    b = detail::conv_bn_relu(p, pre + ".ppm.s" + std::to_string(s), b, 0, train);
    b = resize_to(b, h4, w4);
    ppm_cat.push_back(b);
  }
  Var<T> top = detail::conv_bn_relu(p, pre + ".ppm.fuse", concat_ch(ppm_cat), 0, train);

  std::array<Var<T>, 4> fpn;
  fpn[3] = top;
  for (int i = 2; i >= 0; --i) {
    Var<T> lat = detail::conv_bn_relu(p, pre + ".lat" + std::to_string(i + 1),
                                      change[(size_t)i], 0, train);
    int hh = change[(size_t)i].val().extent(1), ww = change[(size_t)i].val().extent(2);
    fpn[(size_t)i] = add(lat, upsample_bilinear(fpn[(size_t)i + 1], hh, ww));
  }
  int h1 = change[0].val().extent(1), w1 = change[0].val().extent(2);
  std::vector<Var<T>> cat;
  for (int i = 0; i < 4; ++i) cat.push_back(resize_to(fpn[(size_t)i], h1, w1));
  return detail::conv_bn_relu(p, pre + ".fuse", concat_ch(cat), 1, train, PadMode::replicate);
}

// Upsample first, then head convs; logits are unconstrained.
template <typename T>
Var<T> head_2d(Binding<T>& p, Var<T> f, int out_h, int out_w, const std::string& pre = "dec") {
  Var<T> y = upsample_bilinear(f, out_h, out_w);
  y = relu(conv2d(y, p(pre + ".h2d.c1.w"), p(pre + ".h2d.c1.b"), 1, 1));
  return conv2d(y, p(pre + ".h2d.c2.w"), p(pre + ".h2d.c2.b"), 1, 0);
}

// Single-channel signed output: height changes are meters and may be
// negative, so there is no activation and no clamping.
template <typename T>
Var<T> head_3d(Binding<T>& p, Var<T> f, int out_h, int out_w, const std::string& pre = "dec") {
  Var<T> y = upsample_bilinear(f, out_h, out_w);
  y = relu(conv2d(y, p(pre + ".h3d.c1.w"), p(pre + ".h3d.c1.b"), 1, 1));
  return conv2d(y, p(pre + ".h3d.c2.w"), p(pre + ".h3d.c2.b"), 1, 0);
}

// Lightweight FPN over the fused image pyramid: 1x1 channel alignment,
// top-down fusion, multi-scale concatenation, 3x3 fuse, upsample, 1x1 head.
template <typename T>
Var<T> dsm_decode(Binding<T>& p, const FeaturePyramid<T>& img_fused, const DecoderConfig& cfg,
                  bool train, const std::string& pre = "dec") {
  std::array<Var<T>, 4> al;
  for (int i = 0; i < 4; ++i)
    al[(size_t)i] = detail::conv_bn_relu(p, pre + ".dsm.al" + std::to_string(i + 1),
                                         img_fused.level[(size_t)i], 0, train);
  for (int i = 2; i >= 0; --i) {
    int hh = al[(size_t)i].val().extent(1), ww = al[(size_t)i].val().extent(2);
    al[(size_t)i] = add(al[(size_t)i], upsample_bilinear(al[(size_t)i + 1], hh, ww));
  }
  int h1 = al[0].val().extent(1), w1 = al[0].val().extent(2);
  std::vector<Var<T>> cat;
  for (int i = 0; i < 4; ++i) cat.push_back(resize_to(al[(size_t)i], h1, w1));
  Var<T> y = detail::conv_bn_relu(p, pre + ".dsm.fuse", concat_ch(cat), 1, train);
  y = upsample_bilinear(y, 4 * h1, 4 * w1);
  return conv2d(y, p(pre + ".dsm.head.w"), p(pre + ".dsm.head.b"), 1, 0);
  (void)cfg;
}

}  // namespace dpgcd
