#pragma once
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dpgcd/prng.hpp"
#include "dpgcd/sample.hpp"

namespace dpgcd {

// Deterministic procedural scenes standing in for the aerial datasets:
// a gently sloped ground plane, axis-aligned rectangular buildings with
// uniform heights, and per-building change events between the epochs.
struct SyntheticSceneConfig {
  int tile = 64;
  uint64_t seed = 42;
  int min_buildings = 2, max_buildings = 3;
  double min_height = 3.0, max_height = 30.0;  // meters
  double p_new = 0.22, p_demolish = 0.22;
  double image_noise = 0.015;
  double prior_gamma = 1.2;
  double prior_noise = 0.015;
  int num_classes = 3;  // {unchanged, newly built, demolition} or binary
  int retry_budget = 500;

  void validate() const {
    if (tile < 32 || tile % 32 != 0) throw config_error("synthetic: tile must be a multiple of 32");
    if (p_new < 0 || p_new > 1 || p_demolish < 0 || p_demolish > 1)
      throw config_error("synthetic: probabilities must be in [0,1]");
    if (min_buildings < 0 || max_buildings < min_buildings)
      throw config_error("synthetic: bad building count range");
    if (num_classes != 2 && num_classes != 3)
      throw config_error("synthetic: num_classes must be 2 or 3");
  }
};

namespace detail {

struct Box {
  int x0, y0, x1, y1;  // half-open
  double height;
  double albedo_jitter;
  bool covers(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool intersects(const Box& o, int margin) const {
    return !(x1 + margin <= o.x0 || o.x1 + margin <= x0 || y1 + margin <= o.y0 ||
             o.y1 + margin <= y0);
  }
};

inline bool place_box(Prng& rng, int tile, const std::vector<Box>& existing, int& retries,
                      int budget, Box& out) {
  int smin = std::max(4, tile / 5), smax = std::max(smin, tile / 3);
  while (true) {
    if (retries >= budget)
      throw generation_error("synthetic: overlapping-boxes retry budget exceeded");
    ++retries;
    int bw = rng.uniform_int(smin, smax);
    int bh = rng.uniform_int(smin, smax);
    int x0 = rng.uniform_int(1, tile - bw - 1);
    int y0 = rng.uniform_int(1, tile - bh - 1);
    Box b{x0, y0, x0 + bw, y0 + bh, 0.0, 0.0};
    bool ok = true;
    for (const auto& e : existing)
      if (b.intersects(e, 1)) {
        ok = false;
        break;
      }
    if (ok) {
      out = b;
      return true;
    }
  }
}

}  // namespace detail

// One tile, fully determined by (seed, index) through a derived PRNG stream.
inline SampleData gen_tile(const SyntheticSceneConfig& cfg, uint64_t index) {
  cfg.validate();
  Prng rng = Prng::derive(cfg.seed, index);
  const int n = cfg.tile;

  SampleData s;
  s.h = n;
  s.w = n;
  s.dsm_t1 = Tensor<float>({1, n, n});
  s.img_t2 = Tensor<float>({3, n, n});
  s.prior = Tensor<float>({1, n, n});
  s.delta_h = Tensor<float>({1, n, n});
  s.label.assign((size_t)n * n, 0);

  // ground plane
  double base = rng.uniform(0.0, 4.0);
  double gx = rng.uniform(-0.025, 0.025), gy = rng.uniform(-0.025, 0.025);

  // epoch-1 buildings and their change events
  int retries = 0;
  std::vector<detail::Box> all;
  int n1 = rng.uniform_int(cfg.min_buildings, cfg.max_buildings);
  std::vector<int> state;  // 0 = standing both epochs, 1 = demolished; 2 = new at T2
  for (int i = 0; i < n1; ++i) {
    detail::Box b{};
    detail::place_box(rng, n, all, retries, cfg.retry_budget, b);
    b.height = rng.uniform(cfg.min_height, cfg.max_height);
    b.albedo_jitter = rng.uniform(-0.06, 0.06);
    bool demolished = rng.bernoulli(cfg.p_demolish);
    all.push_back(b);
    state.push_back(demolished ? 1 : 0);
  }
  int n2 = rng.uniform_int(cfg.min_buildings, cfg.max_buildings);
  for (int i = 0; i < n2; ++i) {
    if (!rng.bernoulli(cfg.p_new)) continue;
    detail::Box b{};
    detail::place_box(rng, n, all, retries, cfg.retry_budget, b);
    b.height = rng.uniform(cfg.min_height, cfg.max_height);
    b.albedo_jitter = rng.uniform(-0.06, 0.06);
    all.push_back(b);
    state.push_back(2);
  }

  // rasterize DSMs and labels; buildings sit on the sloped ground so the
  // height change over a footprint is exactly +/- the building height
  std::vector<float> dsm2((size_t)n * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      size_t p = (size_t)y * n + x;
      double g = base + gx * x + gy * y;
      double t1 = g, dh = 0.0;
      int lab = 0;
      for (size_t bi = 0; bi < all.size(); ++bi) {
        if (!all[bi].covers(x, y)) continue;
        if (state[bi] == 0) {
          t1 += all[bi].height;
        } else if (state[bi] == 1) {
          t1 += all[bi].height;
          dh = -all[bi].height;
          lab = cfg.num_classes == 3 ? 2 : 1;
        } else {
          dh = +all[bi].height;
          lab = 1;
        }
        break;  // boxes do not overlap
      }
      s.dsm_t1.data[p] = (float)t1;
      s.delta_h.data[p] = (float)dh;
      s.label[p] = lab;
      dsm2[p] = (float)(t1 + dh);
    }

  // image: per-class albedo + slope shading of DSM_T2 + noise, clamped
  auto albedo_at = [&](int x, int y, double rgb[3]) {
    for (size_t bi = 0; bi < all.size(); ++bi) {
      if (!all[bi].covers(x, y)) continue;
      double j = all[bi].albedo_jitter;
      if (state[bi] == 1) {  // rubble after demolition
        rgb[0] = 0.46 + j;
        rgb[1] = 0.43 + j;
        rgb[2] = 0.41 + j;
      } else {  // standing roof
        rgb[0] = 0.70 + j;
        rgb[1] = 0.68 + j;
        rgb[2] = 0.66 + j;
      }
      return;
    }
    rgb[0] = 0.28;
    rgb[1] = 0.38;
    rgb[2] = 0.26;
  };
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      size_t p = (size_t)y * n + x;
      double dzx = x + 1 < n ? dsm2[p + 1] - dsm2[p] : 0.0;
      double dzy = y + 1 < n ? dsm2[p + (size_t)n] - dsm2[p] : 0.0;
      double sh = std::clamp(0.08 * (dzx + dzy), -0.22, 0.22);
      double noise = rng.normal(0.0, cfg.image_noise);
      double rgb[3];
      albedo_at(x, y, rgb);
      for (int c = 0; c < 3; ++c)
        s.img_t2.data[(size_t)c * n * n + p] = (float)std::clamp(rgb[c] + sh + noise, 0.0, 1.0);
    }

  // depth prior: monotone gamma distortion of normalized DSM_T2 plus noise,
  // the synthetic proxy for a relative-depth foundation model output
  float lo = dsm2[0], hi = dsm2[0];
  for (float v : dsm2) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double range = (double)hi - lo;
  for (size_t p = 0; p < dsm2.size(); ++p) {
    double nrm = range > 0 ? ((double)dsm2[p] - lo) / range : 0.0;
    s.prior.data[p] = (float)(std::pow(nrm, cfg.prior_gamma) + rng.normal(0.0, cfg.prior_noise));
  }

  char buf[32];
  std::snprintf(buf, sizeof(buf), "tile_%05llu", (unsigned long long)index);
  s.id = buf;
  return s;
}

// Split sizes are explicit; tile index determines content, so regenerating
// with different split counts never changes tile content.
inline std::vector<SampleData> gen_synthetic(const SyntheticSceneConfig& cfg, int n_train,
                                             int n_val, int n_test) {
  cfg.validate();
  std::vector<SampleData> out;
  int total = n_train + n_val + n_test;
  out.reserve((size_t)total);
  for (int i = 0; i < total; ++i) {
    SampleData s = gen_tile(cfg, (uint64_t)i);
    s.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace dpgcd
