#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vxsplat/io/binary.hpp"
#include "vxsplat/io/config.hpp"
#include "vxsplat/scene_synth.hpp"

namespace vxsplat::io {

/// Largest accepted deviation of a pose quaternion from unit norm.
inline constexpr double kQuatNormTolerance = 1e-3;

// One pose per line: timestamp tx ty tz qx qy qz qw (world from camera).
inline std::vector<TimedPose> parse_trajectory(std::string_view text, const std::string& name = "<trajectory>") {
  std::vector<TimedPose> out;
  std::uint64_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 8) {
      throw ParseError(name, ParseError::Location::Line, line_no,
                       "expected 8 fields (timestamp tx ty tz qx qy qz qw), got " + std::to_string(tok.size()));
    }
    double v[8];
    for (int i = 0; i < 8; ++i) v[i] = detail::to_double(tok[i], name, line_no, "trajectory");
    const Quat q(v[7], v[4], v[5], v[6]);
    if (std::abs(q.norm() - 1.0) > kQuatNormTolerance) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "quaternion norm %.6g is not 1", q.norm());
      throw ParseError(name, ParseError::Location::Line, line_no, buf);
    }
    if (!out.empty() && !(v[0] >= out.back().t)) {
      throw ParseError(name, ParseError::Location::Line, line_no, "timestamps must not decrease");
    }
    TimedPose p;
    p.t = v[0];
    p.world_from_camera.linear() = q.normalized().toRotationMatrix();
    p.world_from_camera.translation() = Vec3(v[1], v[2], v[3]);
    out.push_back(p);
  }
  return out;
}

inline std::string format_trajectory(std::span<const TimedPose> poses) {
  std::string out;
  char buf[256];
  for (const TimedPose& p : poses) {
    const Quat q(p.world_from_camera.linear());
    const Vec3 t = p.world_from_camera.translation();
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", p.t, t.x(), t.y(), t.z(), q.x(),
                  q.y(), q.z(), q.w());
    out += buf;
  }
  return out;
}

inline std::vector<TimedPose> read_trajectory(const std::filesystem::path& path) {
  return parse_trajectory(read_file_bytes(path), path.string());
}

inline void write_trajectory(const std::filesystem::path& path, std::span<const TimedPose> poses) {
  write_file_bytes(path, format_trajectory(poses));
}

}  // namespace vxsplat::io
