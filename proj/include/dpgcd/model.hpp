#pragma once
#include <sstream>
#include <string>

#include "dpgcd/change.hpp"
#include "dpgcd/decoder.hpp"
#include "dpgcd/encoder.hpp"
#include "dpgcd/fusion.hpp"
#include "dpgcd/sample.hpp"

namespace dpgcd {

struct ModelConfig {
  EncoderConfig enc;
  ChangeConfig chg;
  DecoderConfig dec;
  bool use_edp = true;  // depth-prior branch + gated fusion

  std::string serialize() const {
    std::ostringstream os;
    os << "stem_channels=" << enc.stem_channels << "\n";
    os << "blocks_per_stage=" << enc.blocks_per_stage << "\n";
    os << "ssm_state=" << chg.ssm_state << "\n";
    os << "d_inner_factor=" << chg.d_inner_factor << "\n";
    os << "cca_heads=" << chg.cca_heads << "\n";
    os << "ccab_ratio=" << chg.ccab_ratio << "\n";
    os << "fusion_width=" << dec.fusion_width << "\n";
    os << "head_width=" << dec.head_width << "\n";
    os << "dsm_width=" << dec.dsm_width << "\n";
    os << "num_classes=" << dec.num_classes << "\n";
    os << "use_edp=" << (use_edp ? 1 : 0) << "\n";
    os << "use_ccab=" << (chg.use_ccab ? 1 : 0) << "\n";
    os << "use_dssm=" << (chg.use_dssm ? 1 : 0) << "\n";
    os << "use_cca=" << (chg.use_cca ? 1 : 0) << "\n";
    return os.str();
  }

  static ModelConfig parse(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) throw config_error("model config: malformed line: " + line);
      std::string k = line.substr(0, eq);
      long v = std::strtol(line.c_str() + eq + 1, nullptr, 10);
      if (k == "stem_channels") c.enc.stem_channels = (int)v;
      else if (k == "blocks_per_stage") c.enc.blocks_per_stage = (int)v;
      else if (k == "ssm_state") c.chg.ssm_state = (int)v;
      else if (k == "d_inner_factor") c.chg.d_inner_factor = (int)v;
      else if (k == "cca_heads") c.chg.cca_heads = (int)v;
      else if (k == "ccab_ratio") c.chg.ccab_ratio = (int)v;
      else if (k == "fusion_width") c.dec.fusion_width = (int)v;
      else if (k == "head_width") c.dec.head_width = (int)v;
      else if (k == "dsm_width") c.dec.dsm_width = (int)v;
      else if (k == "num_classes") c.dec.num_classes = (int)v;
      else if (k == "use_edp") c.use_edp = v != 0;
      else if (k == "use_ccab") c.chg.use_ccab = v != 0;
      else if (k == "use_dssm") c.chg.use_dssm = v != 0;
      else if (k == "use_cca") c.chg.use_cca = v != 0;
      else throw config_error("model config: unknown key: " + k);
    }
    return c;
  }
};

template <typename T>
struct Model {
  ModelConfig cfg;
  ParamStore<T> params;

  static Model create(const ModelConfig& cfg, uint64_t init_seed) {
    Model m;
    m.cfg = cfg;
    Prng rng(Prng::mix(init_seed ^ 0x706172616d73ULL));
    ParamFactory<T> f{m.params, rng};
    build_encoder_params(f, cfg.enc);
    if (cfg.use_edp) build_fusion_params(f, cfg.enc);
    build_change_params(f, cfg.enc, cfg.chg);
    build_decoder_params(f, cfg.enc, cfg.dec);
    return m;
  }
};

// Raw rasters -> encoder-ready tensors. DSM and depth prior are min-max
// normalized per tile and replicated to 3 channels; the image passes through.
template <typename T>
struct ModelInputs {
  Tensor<T> img, dsm_gray3, prior_gray3;
};

template <typename T>
ModelInputs<T> prepare_inputs(const SampleData& s) {
  ModelInputs<T> in;
  in.img = s.img_t2.template cast<T>();
  in.dsm_gray3 = replicate3(normalize_raster_to_gray(s.dsm_t1.template cast<T>()));
  in.prior_gray3 = replicate3(normalize_raster_to_gray(s.prior.template cast<T>()));
  return in;
}

template <typename T>
struct ModelForward {
  Var<T> logits_2d;   // [classes,H,W]
  Var<T> height_3d;   // [1,H,W] signed meters
  Var<T> dsm_t2;      // [1,H,W] meters
  FeaturePyramid<T> fused;
  std::array<Var<T>, 4> change;
};

template <typename T>
ModelForward<T> model_forward(Binding<T>& bind, const ModelConfig& cfg, const ModelInputs<T>& in,
                              bool train) {
  Tape<T>& tape = bind.tape;
  Var<T> img = tape.constant(in.img);
  Var<T> dsm = tape.constant(in.dsm_gray3);
  int out_h = in.img.extent(1), out_w = in.img.extent(2);

  FeaturePyramid<T> pyr_img = encode(bind, img, cfg.enc, train);
  FeaturePyramid<T> pyr_dsm = encode(bind, dsm, cfg.enc, train);
  ModelForward<T> out;
  if (cfg.use_edp) {
    Var<T> prior = tape.constant(in.prior_gray3);
    FeaturePyramid<T> pyr_edm = encode_frozen(bind, prior, cfg.enc, train);
    out.fused = fuse_pyramid(bind, pyr_img, pyr_edm, train, true);
  } else {
    out.fused = pyr_img;
  }
  out.change = change_pyramid(bind, pyr_dsm, out.fused, cfg.chg, train);
  Var<T> f = uper_fuse(bind, out.change, cfg.dec, train);
  out.logits_2d = head_2d(bind, f, out_h, out_w);
  out.height_3d = head_3d(bind, f, out_h, out_w);
  out.dsm_t2 = dsm_decode(bind, out.fused, cfg.dec, train);
  return out;
}

}  // namespace dpgcd
