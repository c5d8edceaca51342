#pragma once
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dpgcd/common.hpp"
#include "dpgcd/tensor.hpp"

namespace dpgcd {

// On-disk raster container. Little-endian header:
//   magic "DPGR" | version u8 | dtype u8 (0 = float32, 1 = uint8)
//   channels u16 | height u32 | width u32
// followed by the row-major channel-major payload.
struct Raster {
  static constexpr uint8_t kVersion = 1;
  enum Dtype : uint8_t { f32 = 0, u8 = 1 };

  Dtype dtype = f32;
  int channels = 0, height = 0, width = 0;
  std::vector<float> fdata;
  std::vector<uint8_t> udata;

  size_t pixels() const { return (size_t)channels * height * width; }

  static Raster from_f32(int c, int h, int w, std::vector<float> d) {
    Raster r;
    r.dtype = f32;
    r.channels = c;
    r.height = h;
    r.width = w;
    if (d.size() != r.pixels()) throw dim_error("raster: payload length mismatch");
    r.fdata = std::move(d);
    return r;
  }
  static Raster from_u8(int c, int h, int w, std::vector<uint8_t> d) {
    Raster r;
    r.dtype = u8;
    r.channels = c;
    r.height = h;
    r.width = w;
    if (d.size() != r.pixels()) throw dim_error("raster: payload length mismatch");
    r.udata = std::move(d);
    return r;
  }

  template <typename T>
  Tensor<T> to_tensor() const {
    Tensor<T> t({channels, height, width});
    if (dtype == f32)
      for (size_t i = 0; i < fdata.size(); ++i) t.data[i] = (T)fdata[i];
    else
      for (size_t i = 0; i < udata.size(); ++i) t.data[i] = (T)udata[i];
    return t;
  }
};

namespace detail {
inline void put_u16(std::string& s, uint16_t v) {
  s.push_back((char)(v & 0xff));
  s.push_back((char)((v >> 8) & 0xff));
}
inline void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back((char)((v >> (8 * i)) & 0xff));
}
inline uint16_t get_u16(const uint8_t* p) { return (uint16_t)(p[0] | (p[1] << 8)); }
inline uint32_t get_u32(const uint8_t* p) {
  return (uint32_t)p[0] | ((uint32_t)p[1] << 8) | ((uint32_t)p[2] << 16) | ((uint32_t)p[3] << 24);
}
}  // namespace detail

inline void write_raster(const Raster& r, const std::string& path) {
  std::string hdr = "DPGR";
  hdr.push_back((char)Raster::kVersion);
  hdr.push_back((char)r.dtype);
  detail::put_u16(hdr, (uint16_t)r.channels);
  detail::put_u32(hdr, (uint32_t)r.height);
  detail::put_u32(hdr, (uint32_t)r.width);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("raster: cannot open for write: " + path);
  os.write(hdr.data(), (std::streamsize)hdr.size());
  if (r.dtype == Raster::f32) {
    static_assert(sizeof(float) == 4);
    for (float v : r.fdata) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      char b[4] = {(char)(bits & 0xff), (char)((bits >> 8) & 0xff), (char)((bits >> 16) & 0xff),
                   (char)((bits >> 24) & 0xff)};
      os.write(b, 4);
    }
  } else {
    os.write((const char*)r.udata.data(), (std::streamsize)r.udata.size());
  }
  if (!os) throw io_error("raster: write failed: " + path);
}

inline Raster read_raster(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("raster: cannot open: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 16) throw data_error("raster: truncated header: " + path);
  if (std::memcmp(buf.data(), "DPGR", 4) != 0) throw data_error("raster: bad magic: " + path);
  if (buf[4] != Raster::kVersion) throw data_error("raster: unsupported version: " + path);
  uint8_t dt = buf[5];
  if (dt > 1) throw data_error("raster: unknown dtype: " + path);
  Raster r;
  r.dtype = (Raster::Dtype)dt;
  r.channels = detail::get_u16(&buf[6]);
  r.height = (int)detail::get_u32(&buf[8]);
  r.width = (int)detail::get_u32(&buf[12]);
  size_t n = r.pixels();
  size_t esz = r.dtype == Raster::f32 ? 4 : 1;
  if (buf.size() != 16 + n * esz) throw data_error("raster: payload length mismatch: " + path);
  if (r.dtype == Raster::f32) {
    r.fdata.resize(n);
    for (size_t i = 0; i < n; ++i) {
      uint32_t bits = detail::get_u32(&buf[16 + 4 * i]);
      float v;
      std::memcpy(&v, &bits, 4);
      r.fdata[i] = v;
    }
  } else {
    r.udata.assign(buf.begin() + 16, buf.end());
  }
  return r;
}

}  // namespace dpgcd
