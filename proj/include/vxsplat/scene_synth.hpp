#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "vxsplat/camera.hpp"
#include "vxsplat/common.hpp"
#include "vxsplat/frame.hpp"

namespace vxsplat {

struct Texture {
  enum class Kind { Solid, Checker, Waves };
  Kind kind = Kind::Solid;
  Vec3 a = Vec3::Constant(0.5);
  Vec3 b = Vec3::Constant(0.5);
  double period = 0.2;  // meters

  Vec3 color(const Vec3& p) const {
    switch (kind) {
      case Kind::Solid:
        return a;
      case Kind::Checker: {
        const auto cell = [&](double v) { return static_cast<std::int64_t>(std::floor(v / period)); };
        return ((cell(p.x()) + cell(p.y()) + cell(p.z())) & 1) ? b : a;
      }
      case Kind::Waves: {
        const double k = 2.0 * M_PI / period;
        const double t = 0.5 + 0.25 * (std::sin(k * p.x()) + std::sin(k * p.y() + 0.5 * k * p.z()));
        return (1.0 - t) * a + t * b;
      }
    }
    return a;
  }
};

struct Surface {
  enum class Kind { Plane, Sphere, Box };
  Kind kind = Kind::Plane;
  // Plane n . x = offset
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
  // Sphere
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  // Axis-aligned box
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();
  Texture texture;

  static Surface plane(const Vec3& n, double offset, Texture t = {}) {
    Surface s;
    s.kind = Kind::Plane;
    s.normal = n.normalized();
    s.offset = offset / n.norm();
    s.texture = t;
    return s;
  }
  static Surface sphere(const Vec3& c, double r, Texture t = {}) {
    Surface s;
    s.kind = Kind::Sphere;
    s.center = c;
    s.radius = r;
    s.texture = t;
    return s;
  }
  static Surface box(const Vec3& lo, const Vec3& hi, Texture t = {}) {
    Surface s;
    s.kind = Kind::Box;
    s.lo = lo.cwiseMin(hi);
    s.hi = lo.cwiseMax(hi);
    s.texture = t;
    return s;
  }

  /// Ray parameter of the first hit with t > t_min along a unit direction.
  std::optional<double> intersect(const Vec3& o, const Vec3& d, double t_min = 1e-9) const {
    switch (kind) {
      case Kind::Plane: {
        const double den = normal.dot(d);
        if (den == 0.0) return std::nullopt;
        const double t = (offset - normal.dot(o)) / den;
        if (t > t_min) return t;
        return std::nullopt;
      }
      case Kind::Sphere: {
        const Vec3 oc = o - center;
        const double b = oc.dot(d);
        const double c = oc.squaredNorm() - radius * radius;
        const double disc = b * b - c;
        if (disc < 0.0) return std::nullopt;
        const double sq = std::sqrt(disc);
        if (-b - sq > t_min) return -b - sq;
        if (-b + sq > t_min) return -b + sq;
        return std::nullopt;
      }
      case Kind::Box: {
        double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
        for (int a = 0; a < 3; ++a) {
          if (d(a) == 0.0) {
            if (o(a) < lo(a) || o(a) > hi(a)) return std::nullopt;
            continue;
          }
          double ta = (lo(a) - o(a)) / d(a), tb = (hi(a) - o(a)) / d(a);
          if (ta > tb) std::swap(ta, tb);
          t0 = std::max(t0, ta);
          t1 = std::min(t1, tb);
        }
        if (t0 > t1) return std::nullopt;
        if (t0 > t_min) return t0;
        if (t1 > t_min) return t1;
        return std::nullopt;
      }
    }
    return std::nullopt;
  }

  /// Unsigned distance from p to the surface.
  double distance(const Vec3& p) const {
    switch (kind) {
      case Kind::Plane:
        return std::abs(normal.dot(p) - offset);
      case Kind::Sphere:
        return std::abs((p - center).norm() - radius);
      case Kind::Box: {
        const Vec3 q = (p - lo).cwiseMin(hi - p);  // > 0 inside along each axis
        const Vec3 out = (lo - p).cwiseMax(p - hi).cwiseMax(0.0);
        if (out.squaredNorm() > 0.0) return out.norm();
        return q.minCoeff();
      }
    }
    return std::numeric_limits<double>::infinity();
  }
};

enum class LidarPattern { Uniform, LineScan, Rosette };

struct LidarSpec {
  LidarPattern pattern = LidarPattern::Uniform;
  int rays = 4000;
  /// Number of scan rows for the line-scan pattern.
  int rows = 8;
  /// Range noise standard deviation, meters.
  double noise = 0.0;
  double hfov_deg = 90.0;
  double vfov_deg = 60.0;
};

struct TimedPose {
  double t = 0.0;
  Pose world_from_camera = Pose::Identity();
};

struct SceneSpec {
  std::vector<Surface> surfaces;
  LidarSpec lidar;
  std::vector<TimedPose> trajectory;
  /// Intrinsics and image size; the pose is taken from the trajectory.
  Camera intrinsics;
  std::uint64_t seed = 1;

  void validate() const {
    if (surfaces.empty()) throw InputError("scene needs at least one surface");
    if (trajectory.empty()) throw InputError("scene trajectory is empty");
    if (!(lidar.noise >= 0.0)) throw InputError("lidar noise must be non-negative");
    if (lidar.rays < 0 || lidar.rows < 1) throw InputError("lidar rays/rows out of range");
    intrinsics.validate();
  }
};

struct RayHit {
  double t = 0.0;
  const Surface* surface = nullptr;
};

inline std::optional<RayHit> cast_ray(const SceneSpec& spec, const Vec3& o, const Vec3& d) {
  std::optional<RayHit> best;
  for (const auto& s : spec.surfaces) {
    if (auto t = s.intersect(o, d)) {
      if (!best || *t < best->t) best = RayHit{*t, &s};
    }
  }
  return best;
}

inline Camera camera_at(const SceneSpec& spec, std::size_t index) {
  Camera c = spec.intrinsics;
  c.camera_from_world = spec.trajectory.at(index).world_from_camera.inverse();
  return c;
}

/// Unit ray directions of one sweep in the sensor frame (z forward, x right,
/// y down). `phase` shifts the rosette so consecutive sweeps differ.
inline std::vector<Vec3> lidar_directions(const LidarSpec& l, double phase = 0.0) {
  std::vector<Vec3> out;
  const double hf = l.hfov_deg * M_PI / 180.0;
  const double vf = l.vfov_deg * M_PI / 180.0;
  auto dir = [](double az, double el) { return Vec3(std::tan(az), std::tan(el), 1.0).normalized(); };
  switch (l.pattern) {
    case LidarPattern::Uniform: {
      const double aspect = hf / vf;
      const int cols = std::max(1, static_cast<int>(std::round(std::sqrt(l.rays * aspect))));
      const int rows = std::max(1, l.rays / cols);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
          out.push_back(dir(-hf / 2 + hf * (c + 0.5) / cols, -vf / 2 + vf * (r + 0.5) / rows));
      break;
    }
    case LidarPattern::LineScan: {
      const int per_row = std::max(1, l.rays / l.rows);
      for (int r = 0; r < l.rows; ++r) {
        const double el = -vf / 2 + vf * (r + 0.5) / l.rows;
        for (int c = 0; c < per_row; ++c) out.push_back(dir(-hf / 2 + hf * (c + 0.5) / per_row, el));
      }
      break;
    }
    case LidarPattern::Rosette: {
      // Two incommensurate angular frequencies.
      const double w1 = 1.0, w2 = std::sqrt(2.0) * 7.0;
      for (int i = 0; i < l.rays; ++i) {
        const double t = phase + 0.37 * i;
        const double u = 0.5 * (std::cos(w1 * t) + std::cos(w2 * t));
        const double v = 0.5 * (std::sin(w1 * t) - std::sin(w2 * t));
        out.push_back(dir(0.5 * hf * u, 0.5 * vf * v));
      }
      break;
    }
  }
  return out;
}

/// Per-pixel ray-cast color from the camera; black where nothing is hit.
inline RgbImage render_ground_truth(const SceneSpec& spec, const Camera& cam) {
  RgbImage img(cam.width, cam.height);
  const Pose wc = cam.camera_from_world.inverse();
  const Vec3 o = wc.translation();
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Vec3 d = (wc.linear() * cam.backproject(x, y, 1.0)).normalized();
      if (auto hit = cast_ray(spec, o, d)) set_pixel_rgb(img, x, y, hit->surface->texture.color(o + hit->t * d));
    }
  }
  return img;
}

/// Exact camera-frame depth per pixel; 0 where the ray misses.
inline ScalarImage analytic_depth(const SceneSpec& spec, const Camera& cam) {
  ScalarImage d(cam.width, cam.height);
  const Pose wc = cam.camera_from_world.inverse();
  const Vec3 o = wc.translation();
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Vec3 ray = cam.backproject(x, y, 1.0);  // camera z = 1
      const double len = ray.norm();
      if (auto hit = cast_ray(spec, o, wc.linear() * ray / len)) d.at(x, y) = hit->t / len;
    }
  }
  return d;
}

/// Generator for frame `index`, seeded from (seed, index) only.
inline std::mt19937_64 frame_rng(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(static_cast<std::uint64_t>(index) >> 32)};
  return std::mt19937_64(seq);
}

inline FrameSample simulate_frame(const SceneSpec& spec, std::size_t index) {
  spec.validate();
  if (index >= spec.trajectory.size()) throw InputError("frame index beyond trajectory");
  FrameSample f;
  f.timestamp = spec.trajectory[index].t;
  f.camera = camera_at(spec, index);
  const Pose& wc = spec.trajectory[index].world_from_camera;
  const Vec3 o = wc.translation();
  std::mt19937_64 rng = frame_rng(spec.seed, index);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (const Vec3& dc : lidar_directions(spec.lidar, 0.731 * static_cast<double>(index))) {
    const Vec3 d = wc.linear() * dc;
    const double eps = noise(rng);  // drawn for every ray so misses do not shift the stream
    const auto hit = cast_ray(spec, o, d);
    if (!hit) continue;
    const Vec3 surface_point = o + hit->t * d;
    ColoredPoint p;
    p.position = o + (hit->t + spec.lidar.noise * eps) * d;
    p.color = hit->surface->texture.color(surface_point).cwiseMax(0.0).cwiseMin(1.0);
    f.points.push_back(p);
  }
  f.image = render_ground_truth(spec, f.camera);
  return f;
}

// Trajectory generators.

inline std::vector<TimedPose> line_trajectory(const Vec3& start, const Vec3& end, const Vec3& target, int frames,
                                              const Vec3& up = Vec3::UnitZ(), double dt = 0.1) {
  std::vector<TimedPose> out;
  for (int i = 0; i < frames; ++i) {
    const double s = frames > 1 ? static_cast<double>(i) / (frames - 1) : 0.0;
    const Vec3 eye = (1.0 - s) * start + s * end;
    out.push_back({dt * i, look_at(eye, target, up).inverse()});
  }
  return out;
}

inline std::vector<TimedPose> orbit_trajectory(const Vec3& center, double radius, double height, int frames,
                                               double arc_deg = 360.0, double dt = 0.1) {
  std::vector<TimedPose> out;
  for (int i = 0; i < frames; ++i) {
    const double a = arc_deg * M_PI / 180.0 * i / std::max(frames, 1);
    const Vec3 eye = center + Vec3(radius * std::cos(a), radius * std::sin(a), height);
    out.push_back({dt * i, look_at(eye, center, Vec3::UnitZ()).inverse()});
  }
  return out;
}

}  // namespace vxsplat
