#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "tta/errors.hpp"
#include "tta/network.hpp"

namespace tta {

// Binary checkpoint container, little-endian regardless of host order:
//
//   u32   magic "TTCK" (0x4B435454)
//   u32   version (1)
//   u32   input_dim
//   u32   hidden_count, then u32 hidden_dims[hidden_count]
//   u32   class_count
//   f64   bn_epsilon
//   u32   input_groups
//   u32   tensor_count
//   per tensor: u32 name_len, name bytes, u32 rank, u64 dims[rank],
//               f64 values[prod(dims)]
//
// Round-trips are bit-exact; f64 payloads are stored as their raw IEEE-754
// bit patterns.

inline constexpr std::uint32_t kCheckpointMagic = 0x4B435454u;
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("checkpoint: truncated read");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw IoError("checkpoint: truncated read");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace detail

inline void save_container(const std::string& path, const ArchSpec& arch,
                           const std::vector<Tensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open for write: " + path);
  detail::put_u32(os, kCheckpointMagic);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(arch.input_dim));
  detail::put_u32(os, static_cast<std::uint32_t>(arch.hidden_dims.size()));
  for (std::size_t h : arch.hidden_dims) detail::put_u32(os, static_cast<std::uint32_t>(h));
  detail::put_u32(os, static_cast<std::uint32_t>(arch.class_count));
  detail::put_f64(os, arch.bn_epsilon);
  detail::put_u32(os, static_cast<std::uint32_t>(arch.input_groups));
  detail::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor& t : tensors) {
    detail::put_u32(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(t.dims.size()));
    std::size_t count = 1;
    for (std::size_t d : t.dims) {
      detail::put_u64(os, d);
      count *= d;
    }
    if (count != t.values.size()) throw ContractError("checkpoint: tensor dims/value mismatch");
    for (double v : t.values) detail::put_f64(os, v);
  }
  if (!os) throw IoError("checkpoint: write failed: " + path);
}

struct Container {
  ArchSpec arch;
  std::vector<Tensor> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

inline Container load_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open: " + path);
  if (detail::get_u32(is) != kCheckpointMagic) throw IoError("checkpoint: bad magic: " + path);
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  Container c;
  c.arch.input_dim = detail::get_u32(is);
  const std::uint32_t hidden = detail::get_u32(is);
  c.arch.hidden_dims.resize(hidden);
  for (auto& h : c.arch.hidden_dims) h = detail::get_u32(is);
  c.arch.class_count = detail::get_u32(is);
  c.arch.bn_epsilon = detail::get_f64(is);
  c.arch.input_groups = detail::get_u32(is);
  const std::uint32_t count = detail::get_u32(is);
  c.tensors.resize(count);
  for (auto& t : c.tensors) {
    const std::uint32_t name_len = detail::get_u32(is);
    t.name.resize(name_len);
    is.read(t.name.data(), name_len);
    const std::uint32_t rank = detail::get_u32(is);
    t.dims.resize(rank);
    std::size_t n = 1;
    for (auto& d : t.dims) {
      d = static_cast<std::size_t>(detail::get_u64(is));
      n *= d;
    }
    t.values.resize(n);
    for (auto& v : t.values) v = detail::get_f64(is);
  }
  if (!is) throw IoError("checkpoint: truncated file: " + path);
  return c;
}

inline void save_params(const std::string& path, const ParamSet& params) {
  save_container(path, params.arch(), params.tensors());
}

inline ParamSet load_params(const std::string& path) {
  Container c = load_container(path);
  Rng scratch(0);
  ParamSet params = ParamSet::init(c.arch, scratch);
  if (c.tensors.size() != params.tensors().size())
    throw IoError("checkpoint: tensor count does not match architecture");
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    Tensor& dst = params.tensors()[i];
    Tensor& src = c.tensors[i];
    if (src.name != dst.name || src.dims != dst.dims)
      throw IoError("checkpoint: unexpected tensor " + src.name);
    dst.values = std::move(src.values);
  }
  return params;
}

}  // namespace tta
