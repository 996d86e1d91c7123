#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "tta/checkpoint.hpp"
#include "tta/errors.hpp"
#include "tta/shiftgen.hpp"

namespace tta {

// Stream container, little-endian:
//   u32 magic "TTST" (0x54535454), u32 version (1)
//   u32 input_dim, u32 class_count, u64 sample_count, u32 batch
//   u64 manifest_len, manifest JSON bytes
//   f64 features[N * d], u32 labels[N], u16 tags[N]
// The embedded manifest alone reconstructs the identical stream.

inline constexpr std::uint32_t kStreamMagic = 0x54535454u;
inline constexpr std::uint32_t kStreamVersion = 1;

using OrderedJson = nlohmann::ordered_json;

inline OrderedJson manifest_to_json(const StreamManifest& m) {
  OrderedJson j;
  j["version"] = m.version;
  j["source"] = {{"class_count", m.source.class_count},
                 {"input_dim", m.source.input_dim},
                 {"samples_per_class", m.source.samples_per_class},
                 {"center_scale", m.source.center_scale},
                 {"within_stddev", m.source.within_stddev},
                 {"seed", m.source.seed}};
  j["shifts"] = OrderedJson::array();
  for (const auto& s : m.shifts)
    j["shifts"].push_back({{"kind", std::string(shift_kind_name(s.kind))},
                           {"severity", s.severity},
                           {"seed", s.seed}});
  j["order"] = std::string(stream_order_name(m.order));
  j["length"] = m.length;
  j["batch"] = m.batch;
  j["allow_repeats"] = m.allow_repeats;
  j["seed"] = m.seed;
  return j;
}

inline StreamManifest manifest_from_json(const OrderedJson& j) {
  StreamManifest m;
  m.version = j.at("version").get<int>();
  const auto& s = j.at("source");
  m.source.class_count = s.at("class_count").get<std::size_t>();
  m.source.input_dim = s.at("input_dim").get<std::size_t>();
  m.source.samples_per_class = s.at("samples_per_class").get<std::size_t>();
  m.source.center_scale = s.at("center_scale").get<double>();
  m.source.within_stddev = s.at("within_stddev").get<double>();
  m.source.seed = s.at("seed").get<std::uint64_t>();
  for (const auto& sj : j.at("shifts")) {
    ShiftSpec spec;
    spec.kind = shift_kind_from(sj.at("kind").get<std::string>());
    spec.severity = sj.at("severity").get<int>();
    spec.seed = sj.at("seed").get<std::uint64_t>();
    m.shifts.push_back(spec);
  }
  m.order = stream_order_from(j.at("order").get<std::string>());
  m.length = j.at("length").get<std::size_t>();
  m.batch = j.at("batch").get<std::size_t>();
  m.allow_repeats = j.at("allow_repeats").get<bool>();
  m.seed = j.at("seed").get<std::uint64_t>();
  return m;
}

inline void save_stream(const std::string& path, const ShiftStream& stream) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("stream: cannot open for write: " + path);
  const StreamManifest& m = stream.manifest();
  detail::put_u32(os, kStreamMagic);
  detail::put_u32(os, kStreamVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(stream.input_dim()));
  detail::put_u32(os, static_cast<std::uint32_t>(m.source.class_count));
  detail::put_u64(os, stream.raw_sample_count());
  detail::put_u32(os, static_cast<std::uint32_t>(m.batch));
  const std::string manifest = manifest_to_json(m).dump();
  detail::put_u64(os, manifest.size());
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  const std::size_t n = stream.raw_sample_count();
  for (std::size_t i = 0; i < n; ++i)
    for (double v : stream.sample(i)) detail::put_f64(os, v);
  for (std::size_t i = 0; i < n; ++i) detail::put_u32(os, stream.eval_labels(i, i + 1)[0]);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint16_t t = stream.tag(i);
    unsigned char b[2] = {static_cast<unsigned char>(t & 0xFF),
                          static_cast<unsigned char>(t >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!os) throw IoError("stream: write failed: " + path);
}

inline ShiftStream load_stream(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("stream: cannot open: " + path);
  if (detail::get_u32(is) != kStreamMagic) throw IoError("stream: bad magic: " + path);
  if (detail::get_u32(is) != kStreamVersion) throw IoError("stream: unsupported version");
  const std::uint32_t d = detail::get_u32(is);
  detail::get_u32(is);  // class_count, redundant with the manifest
  const std::uint64_t n = detail::get_u64(is);
  detail::get_u32(is);  // batch, redundant with the manifest
  const std::uint64_t mlen = detail::get_u64(is);
  std::string mtext(mlen, '\0');
  is.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!is) throw IoError("stream: truncated manifest");
  StreamManifest manifest = manifest_from_json(OrderedJson::parse(mtext));

  Matrix features(n, d);
  for (auto& v : features.data()) v = detail::get_f64(is);
  std::vector<std::uint32_t> labels(n);
  for (auto& l : labels) l = detail::get_u32(is);
  std::vector<std::uint16_t> tags(n);
  for (auto& t : tags) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    t = static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  if (!is) throw IoError("stream: truncated file: " + path);
  return ShiftStream(std::move(manifest), std::move(features), std::move(labels), std::move(tags));
}

// Plain-text view for inspection.
inline void export_stream_csv(const std::string& path, const ShiftStream& stream) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("stream csv: cannot open for write: " + path);
  os << "index,label,tag";
  for (std::size_t j = 0; j < stream.input_dim(); ++j) os << ",f" << j;
  os << "\n";
  os.precision(17);
  for (std::size_t i = 0; i < stream.raw_sample_count(); ++i) {
    os << i << "," << stream.eval_labels(i, i + 1)[0] << ","
       << stream.tag_name(stream.tag(i));
    for (double v : stream.sample(i)) os << "," << v;
    os << "\n";
  }
  if (!os) throw IoError("stream csv: write failed: " + path);
}

}  // namespace tta
