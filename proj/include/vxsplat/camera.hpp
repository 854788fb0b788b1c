#pragma once

#include <cmath>
#include <optional>

#include "vxsplat/common.hpp"

namespace vxsplat {

/// Pinhole camera. Camera frame looks down +z with x right and y down; pixel
/// (i, j) is centered at image coordinates (i, j).
struct Camera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;
  Pose camera_from_world = Pose::Identity();

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw InputError("camera focal lengths must be positive");
    if (width < 1 || height < 1) throw InputError("camera image must be at least 1x1");
    const Mat3 r = camera_from_world.linear();
    if (!((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-9)) {
      throw InputError("camera rotation is not orthonormal");
    }
  }

  Vec3 to_camera(const Vec3& world) const { return camera_from_world * world; }

  /// Image coordinates of a camera-frame point (no visibility check).
  Vec2 project(const Vec3& cam) const { return {fx * cam.x() / cam.z() + cx, fy * cam.y() / cam.z() + cy}; }

  /// Camera-frame point at image coordinates (u, v) with z = depth.
  Vec3 backproject(double u, double v, double depth) const {
    return {(u - cx) / fx * depth, (v - cy) / fy * depth, depth};
  }

  /// Nearest pixel of a world point, if it lies in front of the camera and
  /// inside the image.
  std::optional<Eigen::Vector2i> nearest_pixel(const Vec3& world, double near = 1e-9) const {
    const Vec3 c = to_camera(world);
    if (!(c.z() > near)) return std::nullopt;
    const Vec2 uv = project(c);
    const double px = std::round(uv.x());
    const double py = std::round(uv.y());
    if (px < 0 || py < 0 || px > width - 1 || py > height - 1) return std::nullopt;
    return Eigen::Vector2i(static_cast<int>(px), static_cast<int>(py));
  }
};

/// Camera-from-world pose for a camera at `eye` looking at `target`, with
/// world `up` mapped towards image -y.
inline Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ()) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-9) x = z.cross(Vec3::UnitY());
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r_wc;
  r_wc.col(0) = x;
  r_wc.col(1) = y;
  r_wc.col(2) = z;
  Pose world_from_camera = Pose::Identity();
  world_from_camera.linear() = r_wc;
  world_from_camera.translation() = eye;
  return world_from_camera.inverse();
}

}  // namespace vxsplat
