#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <tuple>
#include <vector>

#include "vxsplat/camera.hpp"
#include "vxsplat/common.hpp"
#include "vxsplat/splat_init.hpp"

namespace vxsplat {

// Conventional splatting constants.
inline constexpr double kNearPlane = 0.01;
inline constexpr double kDilation = 0.3;
inline constexpr double kAlphaMax = 0.99;
inline constexpr double kAlphaMin = 1.0 / 255.0;
inline constexpr double kTransmittanceCutoff = 1e-4;

struct SplatProjection {
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();
  double depth = 0.0;
  double radius = 0.0;
};

/// World-frame covariance R diag(S^2) R^T.
inline Mat3 world_covariance(const GaussianPrimitive& g) {
  const Mat3 r = g.rotation.normalized().toRotationMatrix();
  return r * g.scale.cwiseProduct(g.scale).asDiagonal() * r.transpose();
}

/// Perspective splat of one primitive: cov2d = J W Phi W^T J^T plus a 0.3 px
/// dilation, radius = 3 sqrt(max eigenvalue). Empty when the mean is in front
/// of the near plane or the bounding square misses the image.
inline std::optional<SplatProjection> project_gaussian(const GaussianPrimitive& g, const Camera& cam) {
  const Vec3 pc = cam.to_camera(g.position);
  if (!(pc.z() > kNearPlane)) return std::nullopt;

  const double iz = 1.0 / pc.z();
  Eigen::Matrix<double, 2, 3> j;
  j << cam.fx * iz, 0.0, -cam.fx * pc.x() * iz * iz,  //
      0.0, cam.fy * iz, -cam.fy * pc.y() * iz * iz;
  const Eigen::Matrix<double, 2, 3> t = j * cam.camera_from_world.linear();

  SplatProjection sp;
  sp.cov2d = t * world_covariance(g) * t.transpose();
  sp.cov2d(0, 1) = sp.cov2d(1, 0) = 0.5 * (sp.cov2d(0, 1) + sp.cov2d(1, 0));
  sp.cov2d(0, 0) += kDilation;
  sp.cov2d(1, 1) += kDilation;
  sp.mean2d = cam.project(pc);
  sp.depth = pc.z();

  const double mid = 0.5 * (sp.cov2d(0, 0) + sp.cov2d(1, 1));
  const double half = 0.5 * (sp.cov2d(0, 0) - sp.cov2d(1, 1));
  const double lmax = mid + std::sqrt(half * half + sp.cov2d(0, 1) * sp.cov2d(0, 1));
  sp.radius = 3.0 * std::sqrt(lmax);

  if (!std::isfinite(sp.radius) || !sp.mean2d.allFinite()) return std::nullopt;
  if (sp.mean2d.x() + sp.radius < 0.0 || sp.mean2d.x() - sp.radius > cam.width - 1 ||
      sp.mean2d.y() + sp.radius < 0.0 || sp.mean2d.y() - sp.radius > cam.height - 1) {
    return std::nullopt;
  }
  return sp;
}

/// Projected splat prepared for rasterization.
struct RasterSplat {
  int id = 0;
  Vec2 mean = Vec2::Zero();
  double conic_a = 0.0;  // inverse 2D covariance entries
  double conic_b = 0.0;
  double conic_c = 0.0;
  double depth = 0.0;
  double opacity = 0.0;
  Vec3 rgb = Vec3::Zero();
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bounds

  bool covers(int px, int py) const { return px >= x0 && px <= x1 && py >= y0 && py <= y1; }
};

inline std::optional<RasterSplat> make_raster_splat(const GaussianPrimitive& g, int id, const Camera& cam) {
  const auto proj = project_gaussian(g, cam);
  if (!proj) return std::nullopt;
  const double det = proj->cov2d.determinant();
  if (!(det > 0.0)) return std::nullopt;
  RasterSplat s;
  s.id = id;
  s.mean = proj->mean2d;
  s.conic_a = proj->cov2d(1, 1) / det;
  s.conic_b = -proj->cov2d(0, 1) / det;
  s.conic_c = proj->cov2d(0, 0) / det;
  s.depth = proj->depth;
  s.opacity = g.opacity;
  s.rgb = sh0_to_rgb(g.sh0);
  s.x0 = std::max(0, static_cast<int>(std::ceil(s.mean.x() - proj->radius)));
  s.x1 = std::min(cam.width - 1, static_cast<int>(std::floor(s.mean.x() + proj->radius)));
  s.y0 = std::max(0, static_cast<int>(std::ceil(s.mean.y() - proj->radius)));
  s.y1 = std::min(cam.height - 1, static_cast<int>(std::floor(s.mean.y() + proj->radius)));
  if (s.x0 > s.x1 || s.y0 > s.y1) return std::nullopt;
  return s;
}

/// Front-to-back order: depth, then the splat's own projected parameters,
/// then primitive index. Only bit-identical splats fall through to the index,
/// so reordering equal-depth primitives cannot change the image.
inline bool front_of(const RasterSplat& a, const RasterSplat& b) {
  auto key = [](const RasterSplat& s) {
    return std::tie(s.depth, s.mean.x(), s.mean.y(), s.conic_a, s.conic_b, s.conic_c, s.opacity, s.rgb.x(),
                    s.rgb.y(), s.rgb.z());
  };
  const auto ka = key(a);
  const auto kb = key(b);
  if (ka != kb) return ka < kb;
  return a.id < b.id;
}

/// min(0.99, opacity * exp(-0.5 d^T cov^-1 d)) at pixel center (px, py).
inline double splat_alpha(const RasterSplat& s, int px, int py) {
  const double dx = px - s.mean.x();
  const double dy = py - s.mean.y();
  const double power = -0.5 * (s.conic_a * dx * dx + 2.0 * s.conic_b * dx * dy + s.conic_c * dy * dy);
  return std::min(kAlphaMax, s.opacity * std::exp(std::min(power, 0.0)));
}

struct PixelAccum {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  double silhouette = 0.0;
  double transmittance = 1.0;

  bool done() const { return transmittance < kTransmittanceCutoff; }

  /// One front-to-back compositing term with weight alpha * T.
  void add(double alpha, const Vec3& rgb, double z) {
    const double w = alpha * transmittance;
    color += w * rgb;
    depth += w * z;
    silhouette += w;
    transmittance *= 1.0 - alpha;
  }

  /// Adds the splat's contribution at (px, py) unless below the skip threshold.
  void add(const RasterSplat& s, int px, int py) {
    const double a = splat_alpha(s, px, py);
    if (a >= kAlphaMin) add(a, s.rgb, s.depth);
  }
};

struct BlendSample {
  double alpha = 0.0;
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
};

/// Compositing of already-ordered samples with the raw alphas given.
inline PixelAccum blend_samples(std::span<const BlendSample> samples) {
  PixelAccum acc;
  for (const auto& s : samples) {
    acc.add(s.alpha, s.color, s.depth);
    if (acc.done()) break;
  }
  return acc;
}

struct RenderBuffers {
  RgbImage color;
  ScalarImage depth;
  ScalarImage silhouette;
};

/// Depth-sorted splats with per-pixel front-to-back lists (CSR layout).
class SplatRaster {
 public:
  SplatRaster() = default;

  SplatRaster(std::span<const GaussianPrimitive> map, const Camera& cam) : width_(cam.width), height_(cam.height) {
    cam.validate();
    for (std::size_t i = 0; i < map.size(); ++i) {
      if (auto s = make_raster_splat(map[i], static_cast<int>(i), cam)) splats_.push_back(*s);
    }
    std::sort(splats_.begin(), splats_.end(), front_of);

    offsets_.assign(static_cast<std::size_t>(width_) * height_ + 1, 0);
    for (const auto& s : splats_) {
      for (int y = s.y0; y <= s.y1; ++y) {
        for (int x = s.x0; x <= s.x1; ++x) ++offsets_[pixel(x, y) + 1];
      }
    }
    for (std::size_t i = 1; i < offsets_.size(); ++i) offsets_[i] += offsets_[i - 1];
    lists_.resize(offsets_.back());
    std::vector<std::uint32_t> fill(offsets_.begin(), offsets_.end() - 1);
    for (std::uint32_t k = 0; k < splats_.size(); ++k) {
      const auto& s = splats_[k];
      for (int y = s.y0; y <= s.y1; ++y) {
        for (int x = s.x0; x <= s.x1; ++x) lists_[fill[pixel(x, y)]++] = k;
      }
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::span<const RasterSplat> splats() const { return splats_; }

  /// Sorted-splat positions covering pixel (x, y), front to back.
  std::span<const std::uint32_t> pixel_list(int x, int y) const {
    const std::size_t p = pixel(x, y);
    return {lists_.data() + offsets_[p], lists_.data() + offsets_[p + 1]};
  }

  /// Index of the first entry of pixel (x, y) in the flattened lists.
  std::size_t list_offset(int x, int y) const { return offsets_[pixel(x, y)]; }
  std::size_t entry_count() const { return lists_.size(); }

  PixelAccum shade(int x, int y) const {
    PixelAccum acc;
    for (std::uint32_t k : pixel_list(x, y)) {
      acc.add(splats_[k], x, y);
      if (acc.done()) break;
    }
    return acc;
  }

  RenderBuffers render() const {
    RenderBuffers out{RgbImage(width_, height_), ScalarImage(width_, height_), ScalarImage(width_, height_)};
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        const PixelAccum acc = shade(x, y);
        set_pixel_rgb(out.color, x, y, acc.color);
        out.depth.at(x, y) = acc.depth;
        out.silhouette.at(x, y) = acc.silhouette;
      }
    }
    return out;
  }

 private:
  std::size_t pixel(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

  int width_ = 0;
  int height_ = 0;
  std::vector<RasterSplat> splats_;
  std::vector<std::uint32_t> offsets_;
  std::vector<std::uint32_t> lists_;
};

/// Alpha-blended color, depth and silhouette of the map seen from cam.
inline RenderBuffers render(std::span<const GaussianPrimitive> map, const Camera& cam) {
  return SplatRaster(map, cam).render();
}

}  // namespace vxsplat
