#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "vxsplat/camera.hpp"
#include "vxsplat/common.hpp"
#include "vxsplat/voxel_map.hpp"

namespace vxsplat {

/// Zero-degree spherical-harmonic basis constant.
inline constexpr double kShC0 = 0.28209479177387814;
/// Floor on splat axis standard deviations (m).
inline constexpr double kScaleFloor = 1e-4;
/// Floor on per-point posterior variance before taking 1/variance.
inline constexpr double kWeightVarianceFloor = 1e-8;

struct GaussianPrimitive {
  Vec3 position = Vec3::Zero();
  Vec3 scale = Vec3::Constant(kScaleFloor);
  Quat rotation = Quat::Identity();
  double opacity = 0.5;
  Vec3 sh0 = Vec3::Zero();
  VoxelKey source;
};

inline Vec3 rgb_to_sh0(const Vec3& rgb) { return (rgb.array() - 0.5).matrix() / kShC0; }
inline Vec3 sh0_to_rgb(const Vec3& sh) { return (kShC0 * sh.array() + 0.5).matrix(); }

struct Subgrid {
  std::vector<Vec3> points;
  std::vector<double> weights;
  std::vector<Vec3> colors;
};

/// Splits a prediction laid out in mesh-grid order into n_s^2 subgrids of
/// n_r^2 points; weights are 1 / max(variance, 1e-8).
inline std::vector<Subgrid> partition_subgrids(const VoxelPrediction& pred, int n_s, int n_r) {
  const std::size_t per = static_cast<std::size_t>(n_r) * n_r;
  const std::size_t count = static_cast<std::size_t>(n_s) * n_s;
  if (n_s < 1 || n_r < 1 || pred.points.size() != per * count || pred.variances.size() != pred.points.size() ||
      pred.colors.size() != pred.points.size()) {
    throw ContractError("prediction size does not match (n_s*n_r)^2 grid");
  }
  std::vector<Subgrid> grids(count);
  for (std::size_t g = 0; g < count; ++g) {
    Subgrid& sg = grids[g];
    sg.points.reserve(per);
    sg.weights.reserve(per);
    sg.colors.reserve(per);
    for (std::size_t i = g * per; i < (g + 1) * per; ++i) {
      sg.points.push_back(pred.points[i]);
      sg.weights.push_back(1.0 / std::max(pred.variances[i], kWeightVarianceFloor));
      sg.colors.push_back(pred.colors[i]);
    }
  }
  return grids;
}

/// Inverse-variance weighted mean of the subgrid points.
inline Vec3 init_position(const Subgrid& g) {
  Vec3 acc = Vec3::Zero();
  double wsum = 0.0;
  for (std::size_t i = 0; i < g.points.size(); ++i) {
    acc += g.weights[i] * g.points[i];
    wsum += g.weights[i];
  }
  if (!(wsum > 0.0)) throw ContractError("subgrid weights must sum to a positive value");
  return acc / wsum;
}

enum class ScaleMode {
  /// S = sqrt(diag(Phi)): axis standard deviations.
  StdDev,
  /// S = diag(Phi) taken literally as the scale vector.
  Variance,
};

struct CovarianceInit {
  Mat3 phi = Mat3::Zero();
  Vec3 scale = Vec3::Constant(kScaleFloor);
  Quat rotation = Quat::Identity();
};

/// Weighted covariance Q^T diag(w) Q / sum(w) about p; scale from its
/// diagonal, rotation fixed to identity.
inline CovarianceInit init_covariance(const Subgrid& g, const Vec3& p, ScaleMode mode = ScaleMode::StdDev) {
  CovarianceInit out;
  double wsum = 0.0;
  for (std::size_t i = 0; i < g.points.size(); ++i) {
    const Vec3 q = g.points[i] - p;
    out.phi.noalias() += g.weights[i] * (q * q.transpose());
    wsum += g.weights[i];
  }
  if (!(wsum > 0.0)) throw ContractError("subgrid weights must sum to a positive value");
  out.phi /= wsum;
  out.phi = 0.5 * (out.phi + out.phi.transpose()).eval();
  for (int a = 0; a < 3; ++a) {
    const double d = std::max(out.phi(a, a), 0.0);
    out.scale(a) = std::max(mode == ScaleMode::StdDev ? std::sqrt(d) : d, kScaleFloor);
  }
  return out;
}

/// SH0 color sampled at the nearest pixel of p's projection, or derived from
/// `fallback` when p is behind the camera or outside the image.
inline Vec3 init_color(const Vec3& p, const Camera& camera, const RgbImage& image, const Vec3& fallback) {
  if (image.width == camera.width && image.height == camera.height) {
    if (auto px = camera.nearest_pixel(p)) return rgb_to_sh0(pixel_rgb(image, px->x(), px->y()));
  }
  return rgb_to_sh0(fallback);
}

struct SplatInitConfig {
  int n_s = 3;
  int n_r = 3;
  double initial_opacity = 0.5;
  ScaleMode scale_mode = ScaleMode::StdDev;
};

/// n_s^2 primitives representing one solved voxel.
inline std::vector<GaussianPrimitive> init_gaussians_for_voxel(const VoxelPrediction& pred, const Camera& camera,
                                                               const RgbImage& image, const SplatInitConfig& cfg) {
  if (!(cfg.initial_opacity > 0.0 && cfg.initial_opacity <= 1.0)) throw InputError("initial opacity must be in (0,1]");
  std::vector<GaussianPrimitive> out;
  for (const Subgrid& g : partition_subgrids(pred, cfg.n_s, cfg.n_r)) {
    GaussianPrimitive prim;
    prim.position = init_position(g);
    const CovarianceInit cov = init_covariance(g, prim.position, cfg.scale_mode);
    prim.scale = cov.scale;
    prim.rotation = cov.rotation;
    prim.opacity = cfg.initial_opacity;

    Vec3 fallback = Vec3::Zero();
    double wsum = 0.0;
    for (std::size_t i = 0; i < g.colors.size(); ++i) {
      fallback += g.weights[i] * g.colors[i];
      wsum += g.weights[i];
    }
    prim.sh0 = init_color(prim.position, camera, image, fallback / wsum);
    prim.source = pred.key;
    out.push_back(prim);
  }
  return out;
}

}  // namespace vxsplat
