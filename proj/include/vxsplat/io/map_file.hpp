#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vxsplat/io/binary.hpp"
#include "vxsplat/splat_init.hpp"

namespace vxsplat::io {

// Layout, little-endian:
//   "VXSPLAT1" | u32 version | u64 count | u32 config bytes | config text
//   count x 136-byte records:
//     position 3 f64, scale 3 f64, rotation w x y z f64, opacity f64,
//     sh0 3 f64, source voxel key 3 i64
inline constexpr char kMapMagic[8] = {'V', 'X', 'S', 'P', 'L', 'A', 'T', '1'};
inline constexpr std::uint32_t kMapVersion = 1;
inline constexpr std::size_t kMapRecordBytes = 136;

struct MapFile {
  /// Echo of the configuration that produced the map.
  std::string config;
  std::vector<GaussianPrimitive> primitives;
};

inline std::string encode_map(std::span<const GaussianPrimitive> map, std::string_view config = {}) {
  std::string out(kMapMagic, sizeof kMapMagic);
  put_le<std::uint32_t>(out, kMapVersion);
  put_le<std::uint64_t>(out, map.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(config.size()));
  out.append(config);
  out.reserve(out.size() + map.size() * kMapRecordBytes);
  for (const auto& g : map) {
    for (int k = 0; k < 3; ++k) put_le<double>(out, g.position[k]);
    for (int k = 0; k < 3; ++k) put_le<double>(out, g.scale[k]);
    put_le<double>(out, g.rotation.w());
    put_le<double>(out, g.rotation.x());
    put_le<double>(out, g.rotation.y());
    put_le<double>(out, g.rotation.z());
    put_le<double>(out, g.opacity);
    for (int k = 0; k < 3; ++k) put_le<double>(out, g.sh0[k]);
    put_le<std::int64_t>(out, g.source.ix);
    put_le<std::int64_t>(out, g.source.iy);
    put_le<std::int64_t>(out, g.source.iz);
  }
  return out;
}

inline MapFile decode_map(std::string_view b, const std::string& name = "<map>") {
  auto fail = [&](std::uint64_t at, const std::string& why) {
    throw ParseError(name, ParseError::Location::Offset, at, why);
  };
  constexpr std::size_t fixed = sizeof kMapMagic + 4 + 8 + 4;
  if (b.size() < sizeof kMapMagic || b.substr(0, sizeof kMapMagic) != std::string_view(kMapMagic, sizeof kMapMagic)) {
    fail(0, "not a VXSPLAT1 map file");
  }
  if (b.size() < fixed) fail(b.size(), "truncated header");
  const auto version = get_le<std::uint32_t>(b.data() + 8);
  if (version != kMapVersion) fail(8, "unsupported version " + std::to_string(version));
  const auto count = get_le<std::uint64_t>(b.data() + 12);
  const auto clen = get_le<std::uint32_t>(b.data() + 20);
  if (clen > b.size() - fixed) fail(20, "config echo runs past end of file");
  MapFile m;
  m.config.assign(b.substr(fixed, clen));
  std::size_t pos = fixed + clen;
  const std::uint64_t left = b.size() - pos;
  if (left % kMapRecordBytes != 0 || left / kMapRecordBytes != count) {
    fail(pos, "expected " + std::to_string(count) + " records, found " + std::to_string(left) + " bytes");
  }
  m.primitives.resize(count);
  auto f64 = [&] {
    const double v = get_le<double>(b.data() + pos);
    pos += 8;
    return v;
  };
  for (auto& g : m.primitives) {
    for (int k = 0; k < 3; ++k) g.position[k] = f64();
    for (int k = 0; k < 3; ++k) g.scale[k] = f64();
    const double w = f64(), x = f64(), y = f64(), z = f64();
    g.rotation = Quat(w, x, y, z);
    g.opacity = f64();
    for (int k = 0; k < 3; ++k) g.sh0[k] = f64();
    g.source.ix = get_le<std::int64_t>(b.data() + pos);
    g.source.iy = get_le<std::int64_t>(b.data() + pos + 8);
    g.source.iz = get_le<std::int64_t>(b.data() + pos + 16);
    pos += 24;
  }
  return m;
}

inline void write_map(const std::filesystem::path& path, std::span<const GaussianPrimitive> map,
                      std::string_view config = {}) {
  write_file_bytes(path, encode_map(map, config));
}

inline MapFile read_map(const std::filesystem::path& path) { return decode_map(read_file_bytes(path), path.string()); }

}  // namespace vxsplat::io
