#pragma once
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dpgcd/raster.hpp"
#include "dpgcd/sample.hpp"

namespace dpgcd {

struct ManifestEntry {
  std::string id;
  std::string dsm_t1, img_t2, depth_prior, label_2d, delta_h;  // paths, relative to manifest
  std::string split = "train";
  double mpp = 0.3;
};

inline void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw io_error("manifest: cannot open for write: " + path);
  os << "# dpgcd-manifest v1\n";
  os << "# id\tdsm_t1\timg_t2\tdepth_prior\tlabel_2d\tdelta_h\tsplit\tmpp\n";
  char buf[64];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof(buf), "%.6g", e.mpp);
    os << e.id << '\t' << e.dsm_t1 << '\t' << e.img_t2 << '\t' << e.depth_prior << '\t'
       << e.label_2d << '\t' << e.delta_h << '\t' << e.split << '\t' << buf << '\n';
  }
  if (!os) throw io_error("manifest: write failed: " + path);
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("manifest: cannot open: " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string mpp;
    if (!std::getline(ls, e.id, '\t') || !std::getline(ls, e.dsm_t1, '\t') ||
        !std::getline(ls, e.img_t2, '\t') || !std::getline(ls, e.depth_prior, '\t') ||
        !std::getline(ls, e.label_2d, '\t') || !std::getline(ls, e.delta_h, '\t') ||
        !std::getline(ls, e.split, '\t') || !std::getline(ls, mpp, '\t'))
      throw data_error("manifest: malformed line: " + line);
    e.mpp = std::strtod(mpp.c_str(), nullptr);
    out.push_back(std::move(e));
  }
  return out;
}

// Loads an externally produced relative-depth raster. The estimation model
// itself runs outside this artifact; when the file is absent a caller-supplied
// synthetic proxy may stand in.
inline Tensor<float> ingest_depth_prior(
    const std::string& path,
    const std::function<Tensor<float>()>& fallback = nullptr) {
  if (!std::filesystem::exists(path)) {
    if (fallback) return fallback();
    throw data_error("depth prior missing and no fallback configured: " + path);
  }
  Raster r = read_raster(path);
  if (r.channels != 1) throw data_error("depth prior must be single-channel: " + path);
  return r.to_tensor<float>();
}

inline SampleData load_sample(const ManifestEntry& e, const std::string& base_dir,
                              int num_classes) {
  namespace fs = std::filesystem;
  auto full = [&](const std::string& rel) { return (fs::path(base_dir) / rel).string(); };
  SampleData s;
  s.id = e.id;
  s.split = e.split;
  s.mpp = e.mpp;
  Raster dsm = read_raster(full(e.dsm_t1));
  Raster img = read_raster(full(e.img_t2));
  Raster lab = read_raster(full(e.label_2d));
  Raster dh = read_raster(full(e.delta_h));
  s.h = dsm.height;
  s.w = dsm.width;
  s.dsm_t1 = dsm.to_tensor<float>();
  s.img_t2 = img.to_tensor<float>();
  s.delta_h = dh.to_tensor<float>();
  s.prior = ingest_depth_prior(full(e.depth_prior));
  if (lab.dtype != Raster::u8 || lab.channels != 1)
    throw data_error("label raster must be single-channel uint8: " + e.label_2d);
  s.label.assign(lab.udata.begin(), lab.udata.end());
  if (s.prior.ndim() != 3 || s.prior.extent(0) != 1 || s.prior.extent(1) != s.h ||
      s.prior.extent(2) != s.w)
    throw data_error("sample " + e.id + ": prior extent mismatch");
  if (lab.height != s.h || lab.width != s.w)
    throw data_error("sample " + e.id + ": label extent mismatch");
  s.validate(num_classes);
  return s;
}

// Writes a sample set as rasters plus a manifest; inverse of load_sample.
inline void write_samples(const std::vector<SampleData>& samples, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "rasters");
  std::vector<ManifestEntry> entries;
  for (const auto& s : samples) {
    ManifestEntry e;
    e.id = s.id;
    e.split = s.split;
    e.mpp = s.mpp;
    e.dsm_t1 = "rasters/" + s.id + "_dsm1.dpgr";
    e.img_t2 = "rasters/" + s.id + "_img2.dpgr";
    e.depth_prior = "rasters/" + s.id + "_prior.dpgr";
    e.label_2d = "rasters/" + s.id + "_label.dpgr";
    e.delta_h = "rasters/" + s.id + "_dh.dpgr";
    auto full = [&](const std::string& rel) { return (fs::path(out_dir) / rel).string(); };
    write_raster(Raster::from_f32(1, s.h, s.w, s.dsm_t1.data), full(e.dsm_t1));
    write_raster(Raster::from_f32(3, s.h, s.w, s.img_t2.data), full(e.img_t2));
    write_raster(Raster::from_f32(1, s.h, s.w, s.prior.data), full(e.depth_prior));
    std::vector<uint8_t> lab(s.label.begin(), s.label.end());
    write_raster(Raster::from_u8(1, s.h, s.w, std::move(lab)), full(e.label_2d));
    write_raster(Raster::from_f32(1, s.h, s.w, s.delta_h.data), full(e.delta_h));
    entries.push_back(std::move(e));
  }
  write_manifest(entries, (fs::path(out_dir) / "manifest.tsv").string());
}

inline std::vector<SampleData> load_split(const std::string& manifest_path,
                                          const std::string& split, int num_classes) {
  namespace fs = std::filesystem;
  auto entries = read_manifest(manifest_path);
  std::string base = fs::path(manifest_path).parent_path().string();
  if (base.empty()) base = ".";
  std::vector<SampleData> out;
  for (const auto& e : entries)
    if (split.empty() || e.split == split) out.push_back(load_sample(e, base, num_classes));
  return out;
}

// Non-overlapping grid tiling (stride defaults to tile size); edge remainders
// are dropped and reported.
struct TileReport {
  int tiles_y = 0, tiles_x = 0;
  int dropped_rows = 0, dropped_cols = 0;
};

inline std::vector<SampleData> tile_sample(const SampleData& big, int tile_size, int stride,
                                           TileReport* report = nullptr) {
  if (tile_size < 32 || tile_size % 32 != 0)
    throw config_error("tile: size must be a multiple of 32");
  if (stride <= 0) stride = tile_size;
  if (big.h < tile_size || big.w < tile_size)
    throw data_error("tile: raster smaller than tile size");
  int ty = (big.h - tile_size) / stride + 1;
  int tx = (big.w - tile_size) / stride + 1;
  if (report) {
    report->tiles_y = ty;
    report->tiles_x = tx;
    report->dropped_rows = big.h - ((ty - 1) * stride + tile_size);
    report->dropped_cols = big.w - ((tx - 1) * stride + tile_size);
  }
  std::vector<SampleData> out;
  for (int iy = 0; iy < ty; ++iy)
    for (int ix = 0; ix < tx; ++ix) {
      int oy = iy * stride, ox = ix * stride;
      SampleData s;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s_y%03d_x%03d", big.id.c_str(), iy, ix);
      s.id = buf;
      s.split = big.split;
      s.mpp = big.mpp;
      s.h = tile_size;
      s.w = tile_size;
      auto crop1 = [&](const Tensor<float>& src, int ch) {
        Tensor<float> dst({ch, tile_size, tile_size});
        for (int c = 0; c < ch; ++c)
          for (int y = 0; y < tile_size; ++y)
            for (int x = 0; x < tile_size; ++x)
              dst.at3(c, y, x) = src.at3(c, oy + y, ox + x);
        return dst;
      };
      s.dsm_t1 = crop1(big.dsm_t1, 1);
      s.img_t2 = crop1(big.img_t2, 3);
      s.prior = crop1(big.prior, 1);
      s.delta_h = crop1(big.delta_h, 1);
      s.label.resize((size_t)tile_size * tile_size);
      for (int y = 0; y < tile_size; ++y)
        for (int x = 0; x < tile_size; ++x)
          s.label[(size_t)y * tile_size + x] = big.label[(size_t)(oy + y) * big.w + (ox + x)];
      out.push_back(std::move(s));
    }
  return out;
}

}  // namespace dpgcd
