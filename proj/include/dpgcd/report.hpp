#pragma once
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dpgcd/metrics.hpp"
#include "dpgcd/prng.hpp"

namespace dpgcd {

struct HistogramBins {
  double bin_width = 0.5;
  double threshold = 0.5;  // |value| below this is dropped
  double lo = 0;           // left edge of first bin
  std::vector<long long> counts;
};

// Histogram of height changes with the |v| >= 0.5 m threshold applied and a
// fixed 0.5 m bin width. Empty input still yields a (zero) bin range.
inline HistogramBins height_histogram(const std::vector<float>& values, double threshold = 0.5,
                                      double bin_width = 0.5) {
  HistogramBins h;
  h.bin_width = bin_width;
  h.threshold = threshold;
  std::vector<float> kept;
  for (float v : values)
    if (std::abs((double)v) >= threshold) kept.push_back(v);
  if (kept.empty()) {
    h.lo = -1.0;
    h.counts.assign(4, 0);
    return h;
  }
  double mn = kept[0], mx = kept[0];
  for (float v : kept) {
    mn = std::min(mn, (double)v);
    mx = std::max(mx, (double)v);
  }
  h.lo = std::floor(mn / bin_width) * bin_width;
  int nbins = (int)std::floor((mx - h.lo) / bin_width) + 1;
  h.counts.assign((size_t)nbins, 0);
  for (float v : kept) {
    int b = (int)std::floor(((double)v - h.lo) / bin_width);
    b = std::clamp(b, 0, nbins - 1);
    ++h.counts[(size_t)b];
  }
  return h;
}

struct KdeGrid {
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  int nx = 0, ny = 0;
  std::vector<double> density;  // row-major [ny][nx]

  double riemann_sum() const {
    if (nx < 1 || ny < 1) return 0;
    double cell = (x1 - x0) / nx * (y1 - y0) / ny;
    double s = 0;
    for (double d : density) s += d;
    return s * cell;
  }
};

// Gaussian product-kernel KDE over (gt, pred) scatter points, bandwidth by
// Scott's rule per dimension. Points are deterministically subsampled to keep
// the grid evaluation cheap.
inline KdeGrid scatter_kde(const std::vector<std::pair<float, float>>& points, int grid = 64,
                           size_t max_points = 2000) {
  KdeGrid g;
  g.nx = g.ny = grid;
  if (points.empty()) return g;
  std::vector<std::pair<float, float>> pts;
  if (points.size() <= max_points) {
    pts = points;
  } else {
    Prng rng(0x6b6465ULL);
    pts.reserve(max_points);
    for (size_t i = 0; i < max_points; ++i)
      pts.push_back(points[(size_t)(rng.unit() * (double)points.size())]);
  }
  size_t n = pts.size();
  double mx = 0, my = 0;
  for (auto& p : pts) {
    mx += p.first;
    my += p.second;
  }
  mx /= (double)n;
  my /= (double)n;
  double vx = 0, vy = 0;
  for (auto& p : pts) {
    vx += ((double)p.first - mx) * ((double)p.first - mx);
    vy += ((double)p.second - my) * ((double)p.second - my);
  }
  vx /= (double)n;
  vy /= (double)n;
  double scott = std::pow((double)n, -1.0 / 6.0);  // d = 2
  double hx = std::max(std::sqrt(vx) * scott, 1e-3);
  double hy = std::max(std::sqrt(vy) * scott, 1e-3);
  double lox = pts[0].first, hix = pts[0].first, loy = pts[0].second, hiy = pts[0].second;
  for (auto& p : pts) {
    lox = std::min(lox, (double)p.first);
    hix = std::max(hix, (double)p.first);
    loy = std::min(loy, (double)p.second);
    hiy = std::max(hiy, (double)p.second);
  }
  g.x0 = lox - 3.5 * hx;
  g.x1 = hix + 3.5 * hx;
  g.y0 = loy - 3.5 * hy;
  g.y1 = hiy + 3.5 * hy;
  g.density.assign((size_t)grid * grid, 0.0);
  double norm = 1.0 / ((double)n * 2.0 * 3.14159265358979323846 * hx * hy);
  for (int iy = 0; iy < grid; ++iy) {
    double y = g.y0 + (iy + 0.5) * (g.y1 - g.y0) / grid;
    for (int ix = 0; ix < grid; ++ix) {
      double x = g.x0 + (ix + 0.5) * (g.x1 - g.x0) / grid;
      double acc = 0;
      for (auto& p : pts) {
        double dx = (x - (double)p.first) / hx;
        double dy = (y - (double)p.second) / hy;
        acc += std::exp(-0.5 * (dx * dx + dy * dy));
      }
      g.density[(size_t)iy * grid + ix] = acc * norm;
    }
  }
  return g;
}

namespace detail {
inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}
}  // namespace detail

// Flat key-value metrics text; keys follow the evaluation table columns.
inline std::string report_text(const MetricReport& r) {
  std::string s;
  auto kv = [&](const std::string& k, const std::string& v) { s += k + " " + v + "\n"; };
  const char* suffix3[] = {"un", "n", "d"};
  for (int k = 0; k < r.num_classes; ++k) {
    std::string name = r.num_classes == 3 ? suffix3[k] : (k == 0 ? "un" : "ch");
    kv("IoU_" + name, detail::fmt_g(r.per_class[(size_t)k].iou));
    kv("F1_" + name, detail::fmt_g(r.per_class[(size_t)k].f1));
    if (r.per_class[(size_t)k].absent) kv("absent_" + name, "1");
  }
  kv("miou_ch", detail::fmt_g(r.miou_ch));
  kv("mF1", detail::fmt_g(r.mf1));
  kv("MAE", detail::fmt_g(r.mae));
  kv("RMSE", detail::fmt_g(r.rmse));
  kv("cRMSE", r.crmse ? detail::fmt_g(*r.crmse) : "undefined");
  kv("cRel", r.crel ? detail::fmt_g(*r.crel) : "undefined");
  kv("cRel_skipped", std::to_string(r.crel_skipped));
  kv("pixels", std::to_string(r.n_pixels));
  kv("change_pixels", std::to_string(r.n_change_pixels));
  return s;
}

// Writes metrics.txt, metrics.csv, scatter.csv, kde.csv, hist_gt.csv and
// hist_pred.csv under out_dir.
inline void emit_report(const MetricReport& r, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  auto open = [&](const std::string& name) {
    std::ofstream os((fs::path(out_dir) / name).string());
    if (!os) throw io_error("report: cannot write " + name + " in " + out_dir);
    return os;
  };
  {
    auto os = open("metrics.txt");
    os << report_text(r);
  }
  {
    auto os = open("metrics.csv");
    const char* suffix3[] = {"un", "n", "d"};
    std::string hdr, row;
    for (int k = 0; k < r.num_classes; ++k) {
      std::string name = r.num_classes == 3 ? suffix3[k] : (k == 0 ? "un" : "ch");
      hdr += "IoU_" + name + ",";
      row += detail::fmt_g(r.per_class[(size_t)k].iou) + ",";
    }
    hdr += "miou_ch,mF1,MAE,RMSE,cRMSE,cRel";
    row += detail::fmt_g(r.miou_ch) + "," + detail::fmt_g(r.mf1) + "," + detail::fmt_g(r.mae) +
           "," + detail::fmt_g(r.rmse) + "," + (r.crmse ? detail::fmt_g(*r.crmse) : "nan") + "," +
           (r.crel ? detail::fmt_g(*r.crel) : "nan");
    os << hdr << "\n" << row << "\n";
  }
  {
    auto os = open("scatter.csv");
    os << "gt,pred\n";
    char buf[80];
    for (auto& p : r.scatter) {
      std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", (double)p.first, (double)p.second);
      os << buf;
    }
  }
  {
    KdeGrid g = scatter_kde(r.scatter);
    auto os = open("kde.csv");
    char buf[200];
    std::snprintf(buf, sizeof(buf), "# x0=%.9g x1=%.9g y0=%.9g y1=%.9g nx=%d ny=%d\n", g.x0, g.x1,
                  g.y0, g.y1, g.nx, g.ny);
    os << buf;
    for (int iy = 0; iy < g.ny; ++iy) {
      for (int ix = 0; ix < g.nx; ++ix) {
        if (ix) os << ",";
        os << detail::fmt_g(g.density.empty() ? 0.0 : g.density[(size_t)iy * g.nx + ix]);
      }
      os << "\n";
    }
  }
  auto write_hist = [&](const std::string& name, const std::vector<float>& vals) {
    HistogramBins h = height_histogram(vals);
    auto os = open(name);
    os << "bin_lo,bin_hi,count\n";
    char buf[100];
    for (size_t b = 0; b < h.counts.size(); ++b) {
      std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%lld\n", h.lo + (double)b * h.bin_width,
                    h.lo + (double)(b + 1) * h.bin_width, h.counts[b]);
      os << buf;
    }
  };
  std::vector<float> gts, preds;
  gts.reserve(r.scatter.size());
  preds.reserve(r.scatter.size());
  for (auto& p : r.scatter) {
    gts.push_back(p.first);
    preds.push_back(p.second);
  }
  write_hist("hist_gt.csv", gts);
  write_hist("hist_pred.csv", preds);
}

}  // namespace dpgcd
