#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vxsplat/common.hpp"
#include "vxsplat/pipeline.hpp"
#include "vxsplat/scene_synth.hpp"

namespace vxsplat::io {

struct ConfigEntry {
  std::string key;
  std::string value;
  std::uint64_t line = 0;
};

/// Line-oriented key = value text; '#' starts a comment.
struct ConfigFile {
  std::string path;
  std::vector<ConfigEntry> entries;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

inline double to_double(std::string_view tok, const std::string& file, std::uint64_t line, std::string_view what) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size() || !std::isfinite(v)) {
    throw ParseError(file, ParseError::Location::Line, line, "bad number '" + std::string(tok) + "' for " + std::string(what));
  }
  return v;
}

inline std::int64_t to_int(std::string_view tok, const std::string& file, std::uint64_t line, std::string_view what) {
  std::int64_t v = 0;
  const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size()) {
    throw ParseError(file, ParseError::Location::Line, line, "bad integer '" + std::string(tok) + "' for " + std::string(what));
  }
  return v;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline ConfigFile parse_config_text(std::string_view text, const std::string& path = "<config>") {
  ConfigFile cfg;
  cfg.path = path;
  std::uint64_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(path, ParseError::Location::Line, line_no, "expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(path, ParseError::Location::Line, line_no, "empty key");
    cfg.entries.push_back({std::string(key), std::string(value), line_no});
  }
  return cfg;
}

inline ConfigFile read_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

inline bool is_scene_key(std::string_view key) { return key.rfind("scene.", 0) == 0; }

/// Pipeline settings; missing keys keep their defaults, unknown keys are
/// reported in `warnings`. Scene keys are ignored here.
inline PipelineConfig pipeline_config_from(const ConfigFile& cf, std::vector<std::string>* warnings = nullptr) {
  PipelineConfig c;
  for (const ConfigEntry& e : cf.entries) {
    if (is_scene_key(e.key)) continue;
    auto num = [&] { return detail::to_double(e.value, cf.path, e.line, e.key); };
    auto count = [&] {
      const auto v = detail::to_int(e.value, cf.path, e.line, e.key);
      if (v < 0) throw ParseError(cf.path, ParseError::Location::Line, e.line, e.key + " must be non-negative");
      return v;
    };
    const std::string& k = e.key;
    if (k == "voxel_size") c.voxel_size = num();
    else if (k == "tau") c.tau = static_cast<std::size_t>(count());
    else if (k == "n_s") c.n_s = static_cast<int>(count());
    else if (k == "n_r") c.n_r = static_cast<int>(count());
    else if (k == "eta") c.eta = num();
    else if (k == "sensor_var") c.sensor_var = num();
    else if (k == "kernel_lambda") c.kernel_lambda = num();
    else if (k == "planarity_factor") c.planarity_factor = num();
    else if (k == "lambda_ssim") c.weights.lambda_ssim = num();
    else if (k == "lambda_d") c.weights.lambda_d = num();
    else if (k == "lambda_p") c.weights.lambda_p = num();
    else if (k == "s_thresh") c.s_thresh = num();
    else if (k == "structure_hinge") c.structure_hinge = count() != 0;
    else if (k == "window") c.window = static_cast<std::size_t>(count());
    else if (k == "k_curr") c.k_curr = static_cast<int>(count());
    else if (k == "k_hist") c.k_hist = static_cast<int>(count());
    else if (k == "lr_position") c.lr.position = num();
    else if (k == "lr_color") c.lr.color = num();
    else if (k == "lr_opacity") c.lr.opacity = num();
    else if (k == "lr_scale") c.lr.scale = num();
    else if (k == "lr_rotation") c.lr.rotation = num();
    else if (k == "iterations") c.iterations = static_cast<int>(count());
    else if (k == "initial_opacity") c.initial_opacity = num();
    else if (k == "expansion_threshold") c.expansion_threshold = static_cast<std::size_t>(count());
    else if (k == "workers") c.workers = static_cast<unsigned>(count());
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(count());
    else if (k == "scale_mode") {
      if (e.value == "stddev") c.scale_mode = ScaleMode::StdDev;
      else if (e.value == "variance") c.scale_mode = ScaleMode::Variance;
      else throw ParseError(cf.path, ParseError::Location::Line, e.line, "scale_mode must be stddev or variance");
    } else if (warnings) {
      warnings->push_back(cf.path + ":line " + std::to_string(e.line) + ": unknown key '" + k + "'");
    }
  }
  c.validate();
  return c;
}

/// Every pipeline key with its current value, one per line.
inline std::string to_config_text(const PipelineConfig& c) {
  using detail::fmt;
  std::ostringstream o;
  o << "voxel_size = " << fmt(c.voxel_size) << "\n"
    << "tau = " << c.tau << "\n"
    << "n_s = " << c.n_s << "\n"
    << "n_r = " << c.n_r << "\n"
    << "eta = " << fmt(c.eta) << "\n"
    << "sensor_var = " << fmt(c.sensor_var) << "\n"
    << "kernel_lambda = " << fmt(c.kernel_lambda) << "\n"
    << "planarity_factor = " << fmt(c.planarity_factor) << "\n"
    << "lambda_ssim = " << fmt(c.weights.lambda_ssim) << "\n"
    << "lambda_d = " << fmt(c.weights.lambda_d) << "\n"
    << "lambda_p = " << fmt(c.weights.lambda_p) << "\n"
    << "s_thresh = " << fmt(c.s_thresh) << "\n"
    << "structure_hinge = " << (c.structure_hinge ? 1 : 0) << "\n"
    << "window = " << c.window << "\n"
    << "k_curr = " << c.k_curr << "\n"
    << "k_hist = " << c.k_hist << "\n"
    << "lr_position = " << fmt(c.lr.position) << "\n"
    << "lr_color = " << fmt(c.lr.color) << "\n"
    << "lr_opacity = " << fmt(c.lr.opacity) << "\n"
    << "lr_scale = " << fmt(c.lr.scale) << "\n"
    << "lr_rotation = " << fmt(c.lr.rotation) << "\n"
    << "iterations = " << c.iterations << "\n"
    << "initial_opacity = " << fmt(c.initial_opacity) << "\n"
    << "scale_mode = " << (c.scale_mode == ScaleMode::StdDev ? "stddev" : "variance") << "\n"
    << "expansion_threshold = " << c.expansion_threshold << "\n"
    << "workers = " << c.workers << "\n"
    << "seed = " << c.seed << "\n";
  return o.str();
}

// Scene description.
//
//   scene.seed = 7
//   scene.camera = fx fy cx cy width height
//   scene.lidar = uniform|line-scan|rosette rays rows noise hfov_deg vfov_deg
//   scene.surface = plane nx ny nz d TEXTURE
//   scene.surface = sphere cx cy cz r TEXTURE
//   scene.surface = box x0 y0 z0 x1 y1 z1 TEXTURE
//   scene.trajectory = line x0 y0 z0 x1 y1 z1 tx ty tz frames
//   scene.trajectory = orbit cx cy cz radius height frames arc_deg
//   scene.pose = t tx ty tz qx qy qz qw
// with TEXTURE one of "solid r g b", "checker r g b r g b period",
// "waves r g b r g b period".

namespace detail {

struct Tokens {
  const ConfigFile& cf;
  const ConfigEntry& e;
  std::vector<std::string> tok;
  std::size_t at = 0;

  [[noreturn]] void fail(const std::string& why) const {
    throw ParseError(cf.path, ParseError::Location::Line, e.line, e.key + ": " + why);
  }
  const std::string& word() {
    if (at >= tok.size()) fail("too few fields");
    return tok[at++];
  }
  double num() { return to_double(word(), cf.path, e.line, e.key); }
  std::int64_t integer() { return to_int(word(), cf.path, e.line, e.key); }
  Vec3 vec() {
    const double x = num(), y = num(), z = num();
    return {x, y, z};
  }
  void finish() const {
    if (at != tok.size()) fail("unexpected trailing fields");
  }
};

inline Texture parse_texture(Tokens& t) {
  Texture tex;
  const std::string kind = t.word();
  if (kind == "solid") {
    tex.kind = Texture::Kind::Solid;
    tex.a = tex.b = t.vec();
  } else if (kind == "checker" || kind == "waves") {
    tex.kind = kind == "checker" ? Texture::Kind::Checker : Texture::Kind::Waves;
    tex.a = t.vec();
    tex.b = t.vec();
    tex.period = t.num();
    if (!(tex.period > 0.0)) t.fail("texture period must be positive");
  } else {
    t.fail("unknown texture '" + kind + "'");
  }
  return tex;
}

inline std::string texture_text(const Texture& t) {
  auto v = [](const Vec3& c) { return fmt(c.x()) + " " + fmt(c.y()) + " " + fmt(c.z()); };
  switch (t.kind) {
    case Texture::Kind::Solid:
      return "solid " + v(t.a);
    case Texture::Kind::Checker:
      return "checker " + v(t.a) + " " + v(t.b) + " " + fmt(t.period);
    case Texture::Kind::Waves:
      return "waves " + v(t.a) + " " + v(t.b) + " " + fmt(t.period);
  }
  return {};
}

inline const char* pattern_name(LidarPattern p) {
  switch (p) {
    case LidarPattern::Uniform:
      return "uniform";
    case LidarPattern::LineScan:
      return "line-scan";
    case LidarPattern::Rosette:
      return "rosette";
  }
  return "uniform";
}

}  // namespace detail

/// Scene keys of a config. Non-scene keys are ignored; unknown scene keys
/// are reported in `warnings`.
inline SceneSpec scene_spec_from(const ConfigFile& cf, std::vector<std::string>* warnings = nullptr) {
  SceneSpec s;
  bool have_camera = false;
  for (const ConfigEntry& e : cf.entries) {
    if (!is_scene_key(e.key)) continue;
    detail::Tokens t{cf, e, detail::split_ws(e.value)};
    const std::string k = e.key.substr(6);
    if (k == "seed") {
      const auto v = t.integer();
      if (v < 0) t.fail("seed must be non-negative");
      s.seed = static_cast<std::uint64_t>(v);
    } else if (k == "camera") {
      s.intrinsics.fx = t.num();
      s.intrinsics.fy = t.num();
      s.intrinsics.cx = t.num();
      s.intrinsics.cy = t.num();
      s.intrinsics.width = static_cast<int>(t.integer());
      s.intrinsics.height = static_cast<int>(t.integer());
      have_camera = true;
    } else if (k == "lidar") {
      const std::string pat = t.word();
      if (pat == "uniform") s.lidar.pattern = LidarPattern::Uniform;
      else if (pat == "line-scan") s.lidar.pattern = LidarPattern::LineScan;
      else if (pat == "rosette") s.lidar.pattern = LidarPattern::Rosette;
      else t.fail("unknown lidar pattern '" + pat + "'");
      s.lidar.rays = static_cast<int>(t.integer());
      s.lidar.rows = static_cast<int>(t.integer());
      s.lidar.noise = t.num();
      s.lidar.hfov_deg = t.num();
      s.lidar.vfov_deg = t.num();
    } else if (k == "surface") {
      const std::string kind = t.word();
      if (kind == "plane") {
        const Vec3 n = t.vec();
        const double d = t.num();
        if (!(n.norm() > 0.0)) t.fail("plane normal is zero");
        s.surfaces.push_back(Surface::plane(n, d, {}));
      } else if (kind == "sphere") {
        const Vec3 c = t.vec();
        const double r = t.num();
        if (!(r > 0.0)) t.fail("sphere radius must be positive");
        s.surfaces.push_back(Surface::sphere(c, r));
      } else if (kind == "box") {
        const Vec3 lo = t.vec();
        const Vec3 hi = t.vec();
        s.surfaces.push_back(Surface::box(lo, hi));
      } else {
        t.fail("unknown surface '" + kind + "'");
      }
      s.surfaces.back().texture = detail::parse_texture(t);
    } else if (k == "trajectory") {
      const std::string kind = t.word();
      if (kind == "line") {
        const Vec3 a = t.vec(), b = t.vec(), target = t.vec();
        const auto n = t.integer();
        if (n < 1) t.fail("frame count must be positive");
        const auto more = line_trajectory(a, b, target, static_cast<int>(n));
        s.trajectory.insert(s.trajectory.end(), more.begin(), more.end());
      } else if (kind == "orbit") {
        const Vec3 c = t.vec();
        const double radius = t.num(), height = t.num();
        const auto n = t.integer();
        const double arc = t.num();
        if (n < 1) t.fail("frame count must be positive");
        const auto more = orbit_trajectory(c, radius, height, static_cast<int>(n), arc);
        s.trajectory.insert(s.trajectory.end(), more.begin(), more.end());
      } else {
        t.fail("unknown trajectory '" + kind + "'");
      }
    } else if (k == "pose") {
      const double ts = t.num();
      const Vec3 p = t.vec();
      const double qx = t.num(), qy = t.num(), qz = t.num(), qw = t.num();
      Quat q(qw, qx, qy, qz);
      if (std::abs(q.norm() - 1.0) > 1e-3) t.fail("quaternion is not unit length");
      TimedPose tp;
      tp.t = ts;
      tp.world_from_camera.linear() = q.normalized().toRotationMatrix();
      tp.world_from_camera.translation() = p;
      s.trajectory.push_back(tp);
    } else {
      if (warnings) warnings->push_back(cf.path + ":line " + std::to_string(e.line) + ": unknown key '" + e.key + "'");
      continue;
    }
    t.finish();
  }
  if (!have_camera) throw ParseError(cf.path, ParseError::Location::Line, 0, "scene.camera is required");
  return s;
}

/// Scene keys without the trajectory, which streams keep separately.
inline std::string scene_to_config_text(const SceneSpec& s) {
  using detail::fmt;
  std::ostringstream o;
  const Camera& c = s.intrinsics;
  o << "scene.seed = " << s.seed << "\n";
  o << "scene.camera = " << fmt(c.fx) << " " << fmt(c.fy) << " " << fmt(c.cx) << " " << fmt(c.cy) << " " << c.width
    << " " << c.height << "\n";
  o << "scene.lidar = " << detail::pattern_name(s.lidar.pattern) << " " << s.lidar.rays << " " << s.lidar.rows << " "
    << fmt(s.lidar.noise) << " " << fmt(s.lidar.hfov_deg) << " " << fmt(s.lidar.vfov_deg) << "\n";
  for (const Surface& f : s.surfaces) {
    o << "scene.surface = ";
    switch (f.kind) {
      case Surface::Kind::Plane:
        o << "plane " << fmt(f.normal.x()) << " " << fmt(f.normal.y()) << " " << fmt(f.normal.z()) << " " << fmt(f.offset);
        break;
      case Surface::Kind::Sphere:
        o << "sphere " << fmt(f.center.x()) << " " << fmt(f.center.y()) << " " << fmt(f.center.z()) << " "
          << fmt(f.radius);
        break;
      case Surface::Kind::Box:
        o << "box " << fmt(f.lo.x()) << " " << fmt(f.lo.y()) << " " << fmt(f.lo.z()) << " " << fmt(f.hi.x()) << " "
          << fmt(f.hi.y()) << " " << fmt(f.hi.z());
        break;
    }
    o << " " << detail::texture_text(f.texture) << "\n";
  }
  return o.str();
}

}  // namespace vxsplat::io
