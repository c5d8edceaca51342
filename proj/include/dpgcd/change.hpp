#pragma once
#include <cmath>
#include <string>
#include <vector>

#include "dpgcd/fusion.hpp"

namespace dpgcd {

// Cross-temporal cross-modal change feature extraction. Level 1 keeps full
// spatial detail through a convolutional channel attention block; levels 2-4
// run the hierarchical block: difference-aware state-space mixer and
// cross-channel attention, each followed by an MLP, pre-norm residuals.
struct ChangeConfig {
  int ssm_state = 8;       // N
  int d_inner_factor = 2;  // d_inner = factor * 2C
  int cca_heads = 4;
  int ccab_ratio = 4;      // channel-attention bottleneck
  bool use_ccab = true;
  bool use_dssm = true;
  bool use_cca = true;
};

template <typename T>
void build_change_params(ParamFactory<T>& f, const EncoderConfig& enc, const ChangeConfig& cfg,
                         const std::string& p = "chg") {
  {  // level 1
    int c = enc.stage_channels(0), c2 = 2 * c;
    std::string lp = p + ".l1";
    if (cfg.use_ccab) {
      if (c2 % cfg.ccab_ratio != 0)
        throw config_error("change: ccab bottleneck ratio must divide 2*C1");
      f.conv(lp + ".ccab.enhance", c2, c2, 3);
      f.bn(lp + ".ccab.bn", c2);
      f.lin(lp + ".ccab.w1", c2, c2 / cfg.ccab_ratio);
      f.lin(lp + ".ccab.w2", c2 / cfg.ccab_ratio, c2);
    } else {
      f.conv(lp + ".plain.conv", c2, c2, 3);
      f.bn(lp + ".plain.bn", c2);
    }
    f.conv(lp + ".reduce", c, c2, 1);
  }
  for (int i = 1; i < 4; ++i) {
    int c = enc.stage_channels(i), c2 = 2 * c;
    int d = cfg.d_inner_factor * c2;
    std::string lp = p + ".l" + std::to_string(i + 1);
    if (cfg.use_dssm) {
      std::string dp = lp + ".dssm";
      f.lin(dp + ".inproj", c2, d);
      f.conv1d_dw(dp + ".dconv", d, 3);
      f.lin(dp + ".dproj", d, d);
      // bias such that softplus(bias) ~ 0.1: stable slow dynamics at init
      f.store.at(dp + ".dproj.b").value =
          Tensor<T>({d}, (T)std::log(std::expm1(0.1)));
      f.lin(dp + ".bproj", d, cfg.ssm_state);
      f.lin(dp + ".cproj", d, cfg.ssm_state);
      Tensor<T> alog({d, cfg.ssm_state});
      for (int ch = 0; ch < d; ++ch)
        for (int j = 0; j < cfg.ssm_state; ++j)
          alog.at2(ch, j) = (T)std::log((double)(j + 1));  // A = -(1..N)
      f.store.add(dp + ".alog", std::move(alog), true);
      f.lin(dp + ".diffproj", c, d);
      f.conv1d_dw(dp + ".diffconv", d, 3);
      f.lin(dp + ".outproj", 2 * d, c2);
    } else {
      f.lin(lp + ".dsub.fc1", c2, d);
      f.lin(lp + ".dsub.fc2", d, c2);
    }
    f.ln(lp + ".ln1", c2);
    f.lin(lp + ".mlp1.fc1", c2, 4 * c);
    f.lin(lp + ".mlp1.fc2", 4 * c, c2);
    f.ln(lp + ".ln2", c2);
    if (cfg.use_cca) {
      if (c2 % cfg.cca_heads != 0) throw config_error("change: heads must divide channels");
      f.lin(lp + ".cca.qkv", c2, 3 * c2);
      f.lin(lp + ".cca.out", c2, c2);
    } else {
      f.lin(lp + ".csub.fc1", c2, 2 * c2);
      f.lin(lp + ".csub.fc2", 2 * c2, c2);
    }
    f.ln(lp + ".ln3", c2);
    f.lin(lp + ".mlp2.fc1", c2, 4 * c);
    f.lin(lp + ".mlp2.fc2", 4 * c, c2);
    f.conv(lp + ".reduce", c, c2, 1);
  }
}

// ---- CCAB ----

template <typename T>
Var<T> ccab_channel_weights(Binding<T>& p, const std::string& lp, Var<T> enhanced) {
  int c2 = enhanced.val().extent(0);
  Var<T> g = reshape(global_avg_pool(enhanced), {1, c2});
  Var<T> a = linear(g, p(lp + ".ccab.w1.w"), p(lp + ".ccab.w1.b"));
  a = gelu(a);
  a = linear(a, p(lp + ".ccab.w2.w"), p(lp + ".ccab.w2.b"));
  return reshape(sigmoid(a), {c2});
}

// X + X~ (.) a before the final channel reduction; X~ = GELU(BN(Conv(X))),
// a = sigmoid(W2 GELU(W1 GAP(X~))).
template <typename T>
Var<T> ccab_core(Binding<T>& p, const std::string& lp, Var<T> f_dsm, Var<T> f_img, bool train) {
  if (!f_dsm.val().same_shape(f_img.val())) throw dim_error("ccab: modality shapes disagree");
  Var<T> x = concat_ch(f_dsm, f_img);  // DSM first
  Var<T> xt = conv2d(x, p(lp + ".ccab.enhance.w"), p(lp + ".ccab.enhance.b"), 1, 1);
  xt = batch_norm(xt, p(lp + ".ccab.bn.gamma"), p(lp + ".ccab.bn.beta"),
                  &p.state(lp + ".ccab.bn.rmean"), &p.state(lp + ".ccab.bn.rvar"), train);
  xt = gelu(xt);
  Var<T> a = ccab_channel_weights(p, lp, xt);
  return add(x, mul_channel(xt, a));
}

template <typename T>
Var<T> ccab(Binding<T>& p, const std::string& lp, Var<T> f_dsm, Var<T> f_img, bool train) {
  Var<T> y = ccab_core(p, lp, f_dsm, f_img, train);
  return conv2d(y, p(lp + ".reduce.w"), p(lp + ".reduce.b"), 1, 0);
}

// Plain conv fusion of the concat; parameter-matched stand-in when the
// channel attention block is ablated.
template <typename T>
Var<T> ccab_substitute(Binding<T>& p, const std::string& lp, Var<T> f_dsm, Var<T> f_img,
                       bool train) {
  Var<T> x = concat_ch(f_dsm, f_img);
  Var<T> y = conv2d(x, p(lp + ".plain.conv.w"), p(lp + ".plain.conv.b"), 1, 1);
  y = batch_norm(y, p(lp + ".plain.bn.gamma"), p(lp + ".plain.bn.beta"),
                 &p.state(lp + ".plain.bn.rmean"), &p.state(lp + ".plain.bn.rvar"), train);
  y = gelu(y);
  y = add(x, y);
  return conv2d(y, p(lp + ".reduce.w"), p(lp + ".reduce.b"), 1, 0);
}

// ---- DSSM ----

// Data-dependent (delta, B, C) projections of S plus the negative state
// matrix, feeding the sequential recurrence.
template <typename T>
Var<T> selective_scan(Binding<T>& p, const std::string& dp, Var<T> s) {
  Var<T> delta = softplus(linear(s, p(dp + ".dproj.w"), p(dp + ".dproj.b")));
  Var<T> bm = linear(s, p(dp + ".bproj.w"), p(dp + ".bproj.b"));
  Var<T> cm = linear(s, p(dp + ".cproj.w"), p(dp + ".cproj.b"));
  Var<T> a = negexp(p(dp + ".alog"));
  return ssm_scan(s, delta, bm, cm, a);
}

// Main branch scans the concatenated bi-temporal sequence; the difference
// branch enhances image-minus-DSM explicitly. Output [L, 2C].
template <typename T>
Var<T> dssm(Binding<T>& p, const std::string& lp, Var<T> f_dsm, Var<T> f_img) {
  if (!f_dsm.val().same_shape(f_img.val())) throw dim_error("dssm: modality shapes disagree");
  std::string dp = lp + ".dssm";
  Var<T> xseq = chw_to_lc(concat_ch(f_dsm, f_img));
  Var<T> s = linear(xseq, p(dp + ".inproj.w"), p(dp + ".inproj.b"));
  s = conv1d_dw_causal(s, p(dp + ".dconv.w"), p(dp + ".dconv.b"));
  s = silu(s);
  Var<T> st = selective_scan(p, dp, s);
  Var<T> d = chw_to_lc(sub(f_img, f_dsm));  // image minus DSM
  d = linear(d, p(dp + ".diffproj.w"), p(dp + ".diffproj.b"));
  d = conv1d_dw_causal(d, p(dp + ".diffconv.w"), p(dp + ".diffconv.b"));
  d = silu(d);
  return linear(concat_cols(st, d), p(dp + ".outproj.w"), p(dp + ".outproj.b"));
}

template <typename T>
Var<T> dssm_substitute(Binding<T>& p, const std::string& lp, Var<T> f_dsm, Var<T> f_img) {
  Var<T> x = chw_to_lc(concat_ch(f_dsm, f_img));
  Var<T> y = silu(linear(x, p(lp + ".dsub.fc1.w"), p(lp + ".dsub.fc1.b")));
  return linear(y, p(lp + ".dsub.fc2.w"), p(lp + ".dsub.fc2.b"));
}

// ---- CCA ----

// Channel attention: per head the d x d attention matrix aggregates over
// tokens, so the block is equivariant to any spatial permutation.
template <typename T>
Var<T> cca_core(Binding<T>& p, const std::string& cp, Var<T> x, int heads) {
  const Tensor<T>& xv = x.val();
  if (xv.ndim() != 2) throw dim_error("cca: expected [L,C]");
  int c = xv.extent(1);
  if (heads < 1 || c % heads != 0) throw config_error("cca: heads must divide channels");
  int d = c / heads;
  Var<T> qkv = linear(x, p(cp + ".qkv.w"), p(cp + ".qkv.b"));
  double scale = 1.0 / std::sqrt((double)d);
  std::vector<Var<T>> outs;
  outs.reserve((size_t)heads);
  for (int h = 0; h < heads; ++h) {
    Var<T> q = slice_cols(qkv, h * d, d);
    Var<T> k = slice_cols(qkv, c + h * d, d);
    Var<T> v = slice_cols(qkv, 2 * c + h * d, d);
    Var<T> att = softmax(mul_scalar(matmul_tn(q, k), scale));  // [d,d]
    outs.push_back(matmul_nt(v, att));                         // (att v^T)^T
  }
  return linear(concat_cols(outs), p(cp + ".out.w"), p(cp + ".out.b"));
}

template <typename T>
Var<T> cca(Binding<T>& p, const std::string& cp, Var<T> x, int heads) {
  return add(x, cca_core(p, cp, x, heads));
}

template <typename T>
Var<T> cca_substitute(Binding<T>& p, const std::string& lp, Var<T> x) {
  Var<T> y = gelu(linear(x, p(lp + ".csub.fc1.w"), p(lp + ".csub.fc1.b")));
  return linear(y, p(lp + ".csub.fc2.w"), p(lp + ".csub.fc2.b"));
}

// ---- HCFEB ----

namespace detail {
template <typename T>
Var<T> mlp_block(Binding<T>& p, const std::string& mp, Var<T> x) {
  Var<T> y = gelu(linear(x, p(mp + ".fc1.w"), p(mp + ".fc1.b")));
  return linear(y, p(mp + ".fc2.w"), p(mp + ".fc2.b"));
}
template <typename T>
Var<T> ln_block(Binding<T>& p, const std::string& np, Var<T> x) {
  return layer_norm_rows(x, p(np + ".gamma"), p(np + ".beta"));
}
}  // namespace detail

// Residual chain on the flattened concat x:
//   u = x + dssm;  v = u + MLP(ln(u));  w = v + cca(ln(v));  z = w + MLP(ln(w))
template <typename T>
Var<T> hcfeb_core(Binding<T>& p, const std::string& lp, Var<T> f_dsm, Var<T> f_img,
                  const ChangeConfig& cfg) {
  Var<T> x = chw_to_lc(concat_ch(f_dsm, f_img));
  Var<T> mix = cfg.use_dssm ? dssm(p, lp, f_dsm, f_img) : dssm_substitute(p, lp, f_dsm, f_img);
  Var<T> u = add(x, mix);
  Var<T> v = add(u, detail::mlp_block(p, lp + ".mlp1", detail::ln_block(p, lp + ".ln1", u)));
  Var<T> attended = cfg.use_cca ? cca_core(p, lp + ".cca", detail::ln_block(p, lp + ".ln2", v),
                                           cfg.cca_heads)
                                : cca_substitute(p, lp, detail::ln_block(p, lp + ".ln2", v));
  Var<T> w = add(v, attended);
  Var<T> z = add(w, detail::mlp_block(p, lp + ".mlp2", detail::ln_block(p, lp + ".ln3", w)));
  return z;  // [L, 2C]
}

template <typename T>
Var<T> hcfeb(Binding<T>& p, const std::string& lp, Var<T> f_dsm, Var<T> f_img,
             const ChangeConfig& cfg) {
  int h = f_dsm.val().extent(1), w = f_dsm.val().extent(2);
  Var<T> z = hcfeb_core(p, lp, f_dsm, f_img, cfg);
  Var<T> y = lc_to_chw(z, h, w);
  return conv2d(y, p(lp + ".reduce.w"), p(lp + ".reduce.b"), 1, 0);
}

// Level 1 via CCAB, levels 2-4 via HCFEB; change widths equal stage widths.
template <typename T>
std::array<Var<T>, 4> change_pyramid(Binding<T>& p, const FeaturePyramid<T>& dsm,
                                     const FeaturePyramid<T>& img_fused, const ChangeConfig& cfg,
                                     bool train, const std::string& pre = "chg") {
  std::array<Var<T>, 4> out;
  out[0] = cfg.use_ccab ? ccab(p, pre + ".l1", dsm.level[0], img_fused.level[0], train)
                        : ccab_substitute(p, pre + ".l1", dsm.level[0], img_fused.level[0], train);
  for (int i = 1; i < 4; ++i)
    out[(size_t)i] = hcfeb(p, pre + ".l" + std::to_string(i + 1), dsm.level[(size_t)i],
                           img_fused.level[(size_t)i], cfg);
  return out;
}

}  // namespace dpgcd
