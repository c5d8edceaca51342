#pragma once
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dpgcd/model.hpp"

namespace dpgcd {

// Flat named-parameter file: "DPGC" | version u8 | config text (u32 + bytes) |
// count u32 | per entry: name (u16 + bytes), trainable u8, ndim u8,
// extents i32[], values f64[]. Values are stored widened to f64 so float and
// double models round-trip bit-exactly.
namespace detail {
inline void put_u32f(std::ofstream& os, uint32_t v) {
  char b[4] = {(char)(v & 0xff), (char)((v >> 8) & 0xff), (char)((v >> 16) & 0xff),
               (char)((v >> 24) & 0xff)};
  os.write(b, 4);
}
inline void put_u16f(std::ofstream& os, uint16_t v) {
  char b[2] = {(char)(v & 0xff), (char)((v >> 8) & 0xff)};
  os.write(b, 2);
}
inline void put_f64(std::ofstream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (char)((bits >> (8 * i)) & 0xff);
  os.write(b, 8);
}
inline uint32_t rd_u32(std::ifstream& is) {
  unsigned char b[4];
  is.read((char*)b, 4);
  return (uint32_t)b[0] | ((uint32_t)b[1] << 8) | ((uint32_t)b[2] << 16) | ((uint32_t)b[3] << 24);
}
inline uint16_t rd_u16(std::ifstream& is) {
  unsigned char b[2];
  is.read((char*)b, 2);
  return (uint16_t)(b[0] | (b[1] << 8));
}
inline double rd_f64(std::ifstream& is) {
  unsigned char b[8];
  is.read((char*)b, 8);
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= (uint64_t)b[i] << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}
}  // namespace detail

template <typename T>
void save_checkpoint(const Model<T>& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("checkpoint: cannot open for write: " + path);
  os.write("DPGC", 4);
  os.put((char)1);
  std::string cfg = m.cfg.serialize();
  detail::put_u32f(os, (uint32_t)cfg.size());
  os.write(cfg.data(), (std::streamsize)cfg.size());
  detail::put_u32f(os, (uint32_t)m.params.order.size());
  for (const auto& name : m.params.order) {
    const auto& e = m.params.at(name);
    detail::put_u16f(os, (uint16_t)name.size());
    os.write(name.data(), (std::streamsize)name.size());
    os.put((char)(e.trainable ? 1 : 0));
    os.put((char)e.value.ndim());
    for (int d : e.value.shape) detail::put_u32f(os, (uint32_t)d);
    for (T v : e.value.data) detail::put_f64(os, (double)v);
  }
  if (!os) throw io_error("checkpoint: write failed: " + path);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path, uint64_t init_seed = 0) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DPGC", 4) != 0)
    throw checkpoint_error("checkpoint: bad magic: " + path);
  if (is.get() != 1) throw checkpoint_error("checkpoint: unsupported version");
  uint32_t clen = detail::rd_u32(is);
  std::string cfg_text((size_t)clen, '\0');
  is.read(cfg_text.data(), clen);
  ModelConfig cfg = ModelConfig::parse(cfg_text);
  Model<T> m = Model<T>::create(cfg, init_seed);
  uint32_t count = detail::rd_u32(is);
  if (count != m.params.order.size())
    throw checkpoint_error("checkpoint: parameter count does not match model config");
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t nlen = detail::rd_u16(is);
    std::string name((size_t)nlen, '\0');
    is.read(name.data(), nlen);
    int trainable = is.get();
    int ndim = is.get();
    std::vector<int> shape((size_t)ndim);
    for (int d = 0; d < ndim; ++d) shape[(size_t)d] = (int)detail::rd_u32(is);
    if (!m.params.has(name))
      throw checkpoint_error("checkpoint: unknown parameter for this config: " + name);
    auto& e = m.params.at(name);
    if (e.value.shape != shape)
      throw checkpoint_error("checkpoint: shape mismatch for " + name);
    if (e.trainable != (trainable != 0))
      throw checkpoint_error("checkpoint: trainable flag mismatch for " + name);
    for (auto& v : e.value.data) v = (T)detail::rd_f64(is);
    if (!is) throw checkpoint_error("checkpoint: truncated file: " + path);
  }
  return m;
}

}  // namespace dpgcd
