#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "vxsplat/camera.hpp"
#include "vxsplat/common.hpp"
#include "vxsplat/renderer.hpp"
#include "vxsplat/spatial_index.hpp"
#include "vxsplat/splat_init.hpp"

namespace vxsplat {

inline void require_same_size(const RgbImage& a, const RgbImage& b, const char* what) {
  if (!a.same_size(b)) throw InputError(std::string(what) + ": image dimensions differ");
}

/// Mean absolute difference over all pixels and channels.
inline double l1_photometric(const RgbImage& c, const RgbImage& c_gt) {
  require_same_size(c, c_gt, "l1_photometric");
  if (c.data.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < c.data.size(); ++i) sum += std::abs(c.data[i] - c_gt.data[i]);
  return sum / static_cast<double>(c.data.size());
}

/// Peak signal-to-noise ratio for [0,1] images, MSE over all channels,
/// capped at 100 dB.
inline double psnr(const RgbImage& a, const RgbImage& b) {
  require_same_size(a, b, "psnr");
  if (a.data.empty()) return 100.0;
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.data.size());
  if (mse <= 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

// ---------------------------------------------------------------------------
// SSIM: Gaussian window (11x11, sigma 1.5), C1 = 0.01^2, C2 = 0.03^2, valid
// region only (window fully inside the image), mean over pixels and channels.

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

struct SsimWindow {
  int radius = 5;
  std::vector<double> weights;
};

/// 11-tap window, shrunk to the largest odd size that fits small images.
inline SsimWindow ssim_window(int width, int height) {
  int size = std::min({11, width, height});
  if (size % 2 == 0) --size;
  SsimWindow w;
  w.radius = std::max(size, 1) / 2;
  double sum = 0.0;
  for (int i = -w.radius; i <= w.radius; ++i) {
    w.weights.push_back(std::exp(-(i * i) / (2.0 * 1.5 * 1.5)));
    sum += w.weights.back();
  }
  for (double& v : w.weights) v /= sum;
  return w;
}

/// Inclusive pixel rectangle.
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;

  bool empty() const { return x1 < x0 || y1 < y0; }
  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  std::size_t area() const { return empty() ? 0 : static_cast<std::size_t>(width()) * height(); }

  PixelRect dilated(int r) const { return {x0 - r, y0 - r, x1 + r, y1 + r}; }
  PixelRect intersect(const PixelRect& o) const {
    return {std::max(x0, o.x0), std::max(y0, o.y0), std::min(x1, o.x1), std::min(y1, o.y1)};
  }
  PixelRect unite(const PixelRect& o) const {
    if (empty()) return o;
    if (o.empty()) return *this;
    return {std::min(x0, o.x0), std::min(y0, o.y0), std::max(x1, o.x1), std::max(y1, o.y1)};
  }

  bool operator==(const PixelRect&) const = default;
};

inline PixelRect ssim_valid_region(int width, int height, const SsimWindow& w) {
  return {w.radius, w.radius, width - 1 - w.radius, height - 1 - w.radius};
}

/// Sum of per-pixel SSIM over `out` (inside the valid region) for one
/// channel. `a(x, y)` and `b(x, y)` read the two images. Horizontal pass
/// first, then vertical; every caller uses this routine so that partial and
/// full evaluations share their arithmetic.
/// Windowed means and second moments of one output pixel.
struct SsimMoments {
  double ma = 0, mb = 0, eaa = 0, ebb = 0, eab = 0;
};

inline double ssim_from_moments(const SsimMoments& m) {
  const double va = m.eaa - m.ma * m.ma;
  const double vb = m.ebb - m.mb * m.mb;
  const double cov = m.eab - m.ma * m.mb;
  return ((2.0 * m.ma * m.mb + kSsimC1) * (2.0 * cov + kSsimC2)) /
         ((m.ma * m.ma + m.mb * m.mb + kSsimC1) * (va + vb + kSsimC2));
}

template <class ReadA, class ReadB>
double ssim_region_sum(const ReadA& a, const ReadB& b, const SsimWindow& win, const PixelRect& out,
                       std::vector<double>* per_pixel = nullptr, std::vector<SsimMoments>* moments = nullptr) {
  if (out.empty()) return 0.0;
  const int r = win.radius;
  const int w = out.width();
  const int rows = out.height() + 2 * r;
  // Horizontal moments for rows out.y0 - r .. out.y1 + r.
  std::vector<double> ha(static_cast<std::size_t>(rows) * w), hb(ha.size()), haa(ha.size()), hbb(ha.size()),
      hab(ha.size());
  for (int ry = 0; ry < rows; ++ry) {
    const int y = out.y0 - r + ry;
    for (int cx = 0; cx < w; ++cx) {
      const int x = out.x0 + cx;
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int k = -r; k <= r; ++k) {
        const double wk = win.weights[k + r];
        const double va = a(x + k, y);
        const double vb = b(x + k, y);
        sa += wk * va;
        sb += wk * vb;
        saa += wk * va * va;
        sbb += wk * vb * vb;
        sab += wk * va * vb;
      }
      const std::size_t i = static_cast<std::size_t>(ry) * w + cx;
      ha[i] = sa;
      hb[i] = sb;
      haa[i] = saa;
      hbb[i] = sbb;
      hab[i] = sab;
    }
  }
  double total = 0.0;
  for (int oy = 0; oy < out.height(); ++oy) {
    for (int cx = 0; cx < w; ++cx) {
      SsimMoments m;
      for (int k = -r; k <= r; ++k) {
        const double wk = win.weights[k + r];
        const std::size_t i = static_cast<std::size_t>(oy + r + k) * w + cx;
        m.ma += wk * ha[i];
        m.mb += wk * hb[i];
        m.eaa += wk * haa[i];
        m.ebb += wk * hbb[i];
        m.eab += wk * hab[i];
      }
      const double s = ssim_from_moments(m);
      if (per_pixel) per_pixel->push_back(s);
      if (moments) moments->push_back(m);
      total += s;
    }
  }
  return total;
}

/// Mean SSIM over the valid region, averaged across channels.
inline double ssim(const RgbImage& a, const RgbImage& b) {
  require_same_size(a, b, "ssim");
  if (a.width == 0 || a.height == 0) throw InputError("ssim: empty image");
  const SsimWindow win = ssim_window(a.width, a.height);
  const PixelRect valid = ssim_valid_region(a.width, a.height, win);
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    total += ssim_region_sum([&](int x, int y) { return a.at(x, y, c); },
                             [&](int x, int y) { return b.at(x, y, c); }, win, valid);
  }
  return total / (3.0 * static_cast<double>(valid.area()));
}

// ---------------------------------------------------------------------------

/// Camera, observed image and rendered buffers of one training frame.
struct FrameCamera {
  Camera camera;
  RgbImage observed;
  RenderBuffers rendered;
};

/// Rigid transform taking frame-a camera coordinates into frame b. Exactly
/// identity when the poses are identical.
inline Pose relative_pose(const Camera& a, const Camera& b) {
  if (a.camera_from_world.matrix() == b.camera_from_world.matrix()) return Pose::Identity();
  return b.camera_from_world * a.camera_from_world.inverse();
}

struct DepthWarp {
  bool valid = false;
  double value = 0.0;
};

struct Landing {
  int x = 0, y = 0;
  double z = 0.0;  // depth of the warped point in frame b
};

/// Where pixel (x, y) of frame a at depth `depth` lands in frame b: the
/// nearest pixel, if the point is in front of b and inside its image.
inline std::optional<Landing> warp_landing(int x, int y, double depth, const Camera& ca, const Camera& cb,
                                           const Pose& b_from_a) {
  const Vec3 pb = b_from_a * ca.backproject(x, y, depth);
  if (!(pb.z() > 0.0)) return std::nullopt;
  const Vec2 uv = cb.project(pb);
  const double qx = std::round(uv.x());
  const double qy = std::round(uv.y());
  if (!(qx >= 0 && qy >= 0 && qx <= cb.width - 1 && qy <= cb.height - 1)) return std::nullopt;
  return Landing{static_cast<int>(qx), static_cast<int>(qy), pb.z()};
}

/// Warps pixel (x, y) of frame a into frame b and compares depths. Valid when
/// both silhouettes exceed s_thresh and the landing pixel is inside b.
template <class ReadDa, class ReadSa, class ReadDb, class ReadSb>
DepthWarp warp_depth_pixel(int x, int y, const Camera& ca, const Camera& cb, const Pose& b_from_a, double s_thresh,
                           const ReadDa& da, const ReadSa& sa, const ReadDb& db, const ReadSb& sb) {
  if (!(sa(x, y) > s_thresh)) return {};
  const auto hit = warp_landing(x, y, da(x, y), ca, cb, b_from_a);
  if (!hit || !(sb(hit->x, hit->y) > s_thresh)) return {};
  return {true, std::abs(hit->z - db(hit->x, hit->y))};
}

/// Mean |warped depth - target depth| over pixels of fc that land on
/// informative pixels of fc1; 0 when none do.
inline double delta_depth_loss(const FrameCamera& fc, const FrameCamera& fc1, double s_thresh = 0.5) {
  const auto& da = fc.rendered.depth;
  const auto& sa = fc.rendered.silhouette;
  const auto& db = fc1.rendered.depth;
  const auto& sb = fc1.rendered.silhouette;
  if (da.width != fc.camera.width || da.height != fc.camera.height || db.width != fc1.camera.width ||
      db.height != fc1.camera.height) {
    throw InputError("delta_depth_loss: buffers do not match camera dimensions");
  }
  const Pose b_from_a = relative_pose(fc.camera, fc1.camera);
  double sum = 0.0;
  std::size_t count = 0;
  for (int y = 0; y < da.height; ++y) {
    for (int x = 0; x < da.width; ++x) {
      const DepthWarp w = warp_depth_pixel(
          x, y, fc.camera, fc1.camera, b_from_a, s_thresh, [&](int u, int v) { return da.at(u, v); },
          [&](int u, int v) { return sa.at(u, v); }, [&](int u, int v) { return db.at(u, v); },
          [&](int u, int v) { return sb.at(u, v); });
      if (w.valid) {
        sum += w.value;
        ++count;
      }
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

struct StructureLossOptions {
  NearestMode mode = NearestMode::FullExpression;
  /// Clamp each per-point term at zero.
  bool hinge = false;
};

inline double mean_scale(const GaussianPrimitive& g) { return g.scale.mean(); }

inline SplatIndex build_splat_index(std::span<const GaussianPrimitive> map) {
  std::vector<Vec3> centers;
  std::vector<double> scales;
  centers.reserve(map.size());
  scales.reserve(map.size());
  for (const auto& g : map) {
    centers.push_back(g.position);
    scales.push_back(mean_scale(g));
  }
  return SplatIndex(centers, scales);
}

/// Mean over points of min_k (|p - c_k| - mean(S_k)), signed unless hinged.
inline double structure_similarity_loss(std::span<const Vec3> points, const SplatIndex& index,
                                        const StructureLossOptions& opt = {}) {
  if (points.empty() || index.size() == 0) throw InputError("structure loss undefined for empty points or map");
  double sum = 0.0;
  for (const auto& p : points) {
    const double v = index.nearest(p, opt.mode).value;
    sum += opt.hinge ? std::max(v, 0.0) : v;
  }
  return sum / static_cast<double>(points.size());
}

inline double structure_similarity_loss(std::span<const Vec3> points, std::span<const GaussianPrimitive> map,
                                        const StructureLossOptions& opt = {}) {
  if (points.empty() || map.empty()) throw InputError("structure loss undefined for empty points or map");
  return structure_similarity_loss(points, build_splat_index(map), opt);
}

struct LossWeights {
  double lambda_ssim = 0.2;
  double lambda_d = 0.1;
  double lambda_p = 0.1;
};

struct LossBreakdown {
  double l1 = 0.0;
  /// Mean SSIM value; the objective uses 1 - ssim.
  double ssim = 1.0;
  /// Sum over consecutive frame pairs.
  double l_d = 0.0;
  double l_p = 0.0;
  double total = 0.0;
};

inline double combine_loss(const LossBreakdown& b, const LossWeights& w) {
  return (1.0 - w.lambda_ssim) * b.l1 + w.lambda_ssim * (1.0 - b.ssim) + w.lambda_d * b.l_d + w.lambda_p * b.l_p;
}

struct LossOptions {
  double s_thresh = 0.5;
  StructureLossOptions structure;
};

/// Training objective over the selected frames. Photometric terms are
/// averaged over frames, depth terms summed over consecutive pairs, and the
/// structure term is skipped when there are no points or no splats.
inline LossBreakdown total_loss(std::span<const FrameCamera> frames, std::span<const Vec3> points,
                                std::span<const GaussianPrimitive> map, const LossWeights& weights,
                                const LossOptions& opt = {}) {
  if (frames.empty()) throw InputError("total_loss needs at least one frame");
  LossBreakdown b;
  b.l1 = 0.0;
  b.ssim = 0.0;
  for (const auto& f : frames) {
    b.l1 += l1_photometric(f.rendered.color, f.observed);
    b.ssim += ssim(f.rendered.color, f.observed);
  }
  b.l1 /= static_cast<double>(frames.size());
  b.ssim /= static_cast<double>(frames.size());
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) b.l_d += delta_depth_loss(frames[i], frames[i + 1], opt.s_thresh);
  if (!points.empty() && !map.empty()) b.l_p = structure_similarity_loss(points, map, opt.structure);
  b.total = combine_loss(b, weights);
  return b;
}

}  // namespace vxsplat
