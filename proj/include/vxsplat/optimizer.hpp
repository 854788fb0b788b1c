#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "vxsplat/losses.hpp"
#include "vxsplat/renderer.hpp"

namespace vxsplat {

// Parameter layout of one primitive: position (0-2), SH0 color (3-5),
// opacity (6), scale (7-9), rotation quaternion w, x, y, z (10-13).
inline constexpr int kSplatParams = 14;

enum class ParamGroup { Position, Color, Opacity, Scale, Rotation };

inline constexpr ParamGroup param_group(int j) {
  if (j < 3) return ParamGroup::Position;
  if (j < 6) return ParamGroup::Color;
  if (j < 7) return ParamGroup::Opacity;
  if (j < 10) return ParamGroup::Scale;
  return ParamGroup::Rotation;
}

inline double get_param(const GaussianPrimitive& g, int j) {
  switch (param_group(j)) {
    case ParamGroup::Position: return g.position(j);
    case ParamGroup::Color: return g.sh0(j - 3);
    case ParamGroup::Opacity: return g.opacity;
    case ParamGroup::Scale: return g.scale(j - 7);
    case ParamGroup::Rotation: break;
  }
  switch (j) {
    case 10: return g.rotation.w();
    case 11: return g.rotation.x();
    case 12: return g.rotation.y();
    default: return g.rotation.z();
  }
}

inline void set_param(GaussianPrimitive& g, int j, double v) {
  switch (param_group(j)) {
    case ParamGroup::Position: g.position(j) = v; return;
    case ParamGroup::Color: g.sh0(j - 3) = v; return;
    case ParamGroup::Opacity: g.opacity = v; return;
    case ParamGroup::Scale: g.scale(j - 7) = v; return;
    case ParamGroup::Rotation: break;
  }
  switch (j) {
    case 10: g.rotation.w() = v; return;
    case 11: g.rotation.x() = v; return;
    case 12: g.rotation.y() = v; return;
    default: g.rotation.z() = v; return;
  }
}

struct LearningRates {
  double position = 0.0005;
  double color = 0.0025;
  double opacity = 0.025;
  double scale = 0.0025;
  double rotation = 0.0025;

  double of(ParamGroup g) const {
    switch (g) {
      case ParamGroup::Position: return position;
      case ParamGroup::Color: return color;
      case ParamGroup::Opacity: return opacity;
      case ParamGroup::Scale: return scale;
      case ParamGroup::Rotation: return rotation;
    }
    return 0.0;
  }
};

struct OptimizerConfig {
  LearningRates lr;
  LossWeights weights;
  LossOptions loss;
  /// Central-difference step per parameter unit.
  double h = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-15;
  double min_opacity = 0.001;
  /// Threads for gradient evaluation; each primitive's gradient is written to
  /// its own slot, so the result does not depend on this.
  unsigned workers = 1;
};

/// Camera and observed image of a frame selected for training.
struct TrainingFrame {
  Camera camera;
  RgbImage observed;
};

/// First and second moment estimates per primitive parameter.
class AdamState {
 public:
  void resize(std::size_t n) {
    m_.resize(n, {});
    v_.resize(n, {});
    t_.resize(n, 0);
  }
  std::size_t size() const { return t_.size(); }

  /// Advances primitive k's step count; call once per step before direction().
  void tick(std::size_t k) { ++t_[k]; }

  /// Bias-corrected Adam direction for parameter j of primitive k.
  double direction(std::size_t k, int j, double grad, const OptimizerConfig& cfg) {
    double& m = m_[k][static_cast<std::size_t>(j)];
    double& v = v_[k][static_cast<std::size_t>(j)];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
    const double t = static_cast<double>(t_[k]);
    const double mh = m / (1.0 - std::pow(cfg.beta1, t));
    const double vh = v / (1.0 - std::pow(cfg.beta2, t));
    return mh / (std::sqrt(vh) + cfg.epsilon);
  }

 private:
  std::vector<std::array<double, kSplatParams>> m_;
  std::vector<std::array<double, kSplatParams>> v_;
  std::vector<std::int64_t> t_;
};

/// Renders the map into every frame and evaluates the full objective.
inline LossBreakdown evaluate_loss(std::span<const GaussianPrimitive> map, std::span<const TrainingFrame> frames,
                                   std::span<const Vec3> points, const OptimizerConfig& cfg) {
  std::vector<FrameCamera> fc;
  fc.reserve(frames.size());
  for (const auto& f : frames) fc.push_back({f.camera, f.observed, render(map, f.camera)});
  return total_loss(fc, points, map, cfg.weights, cfg.loss);
}

/// Loss of the base map plus cheap evaluation of how the loss changes when a
/// single primitive is replaced. Only the pixels the primitive can touch are
/// re-shaded; photometric, SSIM, depth and structure terms are updated from
/// cached per-pixel and per-point state.
class LocalLossModel {
 public:
  LocalLossModel(std::span<const GaussianPrimitive> map, std::span<const TrainingFrame> frames,
                 std::span<const Vec3> points, const OptimizerConfig& cfg)
      : map_(map), frames_(frames), points_(points), cfg_(cfg) {
    if (frames.empty()) throw InputError("optimizer needs at least one frame");
    views_.reserve(frames.size());
    std::vector<FrameCamera> fc;
    for (const auto& f : frames) {
      require_same_size(f.observed, RgbImage(f.camera.width, f.camera.height), "training frame");
      View v;
      v.raster = SplatRaster(map, f.camera);
      v.buffers = v.raster.render();
      v.slot.assign(map.size(), -1);
      const auto splats = v.raster.splats();
      for (std::size_t i = 0; i < splats.size(); ++i) v.slot[static_cast<std::size_t>(splats[i].id)] = static_cast<int>(i);
      cache_pixel_states(v);
      v.win = ssim_window(f.camera.width, f.camera.height);
      v.valid = ssim_valid_region(f.camera.width, f.camera.height, v.win);
      for (int c = 0; c < 3; ++c) {
        ssim_region_sum([&](int x, int y) { return v.buffers.color.at(x, y, c); },
                        [&](int x, int y) { return f.observed.at(x, y, c); }, v.win, v.valid, &v.ssim_px[c],
                        &v.moments[c]);
      }
      fc.push_back({f.camera, f.observed, v.buffers});
      views_.push_back(std::move(v));
    }
    base_ = total_loss(fc, points, map, cfg.weights, cfg.loss);

    for (std::size_t i = 0; i + 1 < frames.size(); ++i) pairs_.push_back(make_pair_cache(i));

    use_points_ = !points.empty() && !map.empty();
    if (use_points_) {
      index_ = build_splat_index(map);
      nearest_.reserve(points.size());
      for (const auto& p : points) nearest_.push_back(index_.nearest2(p, cfg.loss.structure.mode));
    }
  }

  const LossBreakdown& base() const { return base_; }

  /// Primitives that project into at least one frame.
  std::vector<int> visible() const {
    std::vector<char> seen(map_.size(), 0);
    for (const auto& v : views_)
      for (const auto& s : v.raster.splats()) seen[static_cast<std::size_t>(s.id)] = 1;
    std::vector<int> out;
    for (std::size_t i = 0; i < seen.size(); ++i)
      if (seen[i]) out.push_back(static_cast<int>(i));
    return out;
  }

  /// Total-loss change when primitive `id` is replaced by `g`. `group`
  /// names the only parameter group that differs, which lets unaffected
  /// terms be skipped; pass std::nullopt when unknown.
  double delta(int id, const GaussianPrimitive& g, std::optional<ParamGroup> group = std::nullopt,
               int color_channel = -1) const {
    const bool color_only = group == ParamGroup::Color;
    const bool geometry = !color_only;
    std::array<bool, 3> channels{true, true, true};
    if (color_only && color_channel >= 0) channels = {color_channel == 0, color_channel == 1, color_channel == 2};

    const double nf = static_cast<double>(views_.size());
    double d_l1 = 0.0, d_ssim = 0.0;
    std::vector<Patch> patches(views_.size());
    for (std::size_t f = 0; f < views_.size(); ++f) {
      patches[f] = shade_patch(f, id, g);
      const Patch& p = patches[f];
      if (p.rect.empty()) continue;
      const View& v = views_[f];
      const RgbImage& obs = frames_[f].observed;
      const double npx = 3.0 * static_cast<double>(obs.pixel_count());

      double l1 = 0.0;
      for (int y = p.rect.y0; y <= p.rect.y1; ++y) {
        for (int x = p.rect.x0; x <= p.rect.x1; ++x) {
          const std::size_t i = p.index(x, y);
          for (int c = 0; c < 3; ++c) {
            if (!channels[c]) continue;
            l1 += std::abs(p.color[i * 3 + c] - obs.at(x, y, c)) - std::abs(v.buffers.color.at(x, y, c) - obs.at(x, y, c));
          }
        }
      }
      d_l1 += l1 / npx;

      const PixelRect r = p.rect.dilated(v.win.radius).intersect(v.valid);
      if (!r.empty()) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c)
          if (channels[c]) s += ssim_patch_delta(f, p, c, r);
        d_ssim += s / (3.0 * static_cast<double>(v.valid.area()));
      }
    }
    d_l1 /= nf;
    d_ssim /= nf;

    double d_ld = 0.0;
    if (geometry) {
      for (std::size_t i = 0; i < pairs_.size(); ++i) d_ld += pair_delta(i, patches[i], patches[i + 1]);
    }

    double d_lp = 0.0;
    if (use_points_ && (!group || *group == ParamGroup::Position || *group == ParamGroup::Scale)) d_lp = structure_delta(id, g);

    const LossWeights& w = cfg_.weights;
    return (1.0 - w.lambda_ssim) * d_l1 - w.lambda_ssim * d_ssim + w.lambda_d * d_ld + w.lambda_p * d_lp;
  }

 private:
  struct View {
    SplatRaster raster;
    RenderBuffers buffers;
    std::vector<int> slot;  // primitive id -> position in raster.splats(), or -1
    // Per list entry: its alpha, and the accumulator before it (one extra
    // state per pixel after the last entry). Frozen once the walk terminates.
    std::vector<double> alpha;
    std::vector<PixelAccum> before;
    SsimWindow win;
    PixelRect valid;
    // Per channel, over the valid region in row-major order.
    std::array<std::vector<double>, 3> ssim_px;
    std::array<std::vector<SsimMoments>, 3> moments;

    std::size_t valid_index(int x, int y) const {
      return static_cast<std::size_t>(y - valid.y0) * static_cast<std::size_t>(valid.width()) + (x - valid.x0);
    }
  };

  /// Re-shaded pixels of one frame.
  struct Patch {
    PixelRect rect;
    std::vector<double> color, depth, sil;

    bool contains(int x, int y) const { return x >= rect.x0 && x <= rect.x1 && y >= rect.y0 && y <= rect.y1; }
    std::size_t index(int x, int y) const {
      return static_cast<std::size_t>(y - rect.y0) * static_cast<std::size_t>(rect.width()) + (x - rect.x0);
    }
  };

  struct PairCache {
    Pose b_from_a;
    double sum = 0.0;
    std::size_t count = 0;
    std::vector<char> valid;            // per pixel of frame a
    std::vector<double> value;          // per pixel of frame a
    std::vector<std::uint32_t> offsets;  // CSR: pixel of b -> pixels of a landing there
    std::vector<std::uint32_t> sources;
  };

  static void cache_pixel_states(View& v) {
    const SplatRaster& r = v.raster;
    v.alpha.resize(r.entry_count());
    v.before.resize(r.entry_count() + static_cast<std::size_t>(r.width()) * r.height());
    for (int y = 0; y < r.height(); ++y) {
      for (int x = 0; x < r.width(); ++x) {
        const auto list = r.pixel_list(x, y);
        const std::size_t off = r.list_offset(x, y);
        const std::size_t pb = off + static_cast<std::size_t>(y) * r.width() + x;
        PixelAccum acc;
        for (std::size_t j = 0; j < list.size(); ++j) {
          v.before[pb + j] = acc;
          const RasterSplat& s = r.splats()[list[j]];
          const double a = splat_alpha(s, x, y);
          v.alpha[off + j] = a;
          if (!acc.done() && a >= kAlphaMin) acc.add(a, s.rgb, s.depth);
        }
        v.before[pb + list.size()] = acc;
      }
    }
  }

  // Re-composites the pixels under the old and new footprint of `id`. Each
  // pixel resumes from the cached state before the first entry that differs.
  Patch shade_patch(std::size_t f, int id, const GaussianPrimitive& g) const {
    const View& v = views_[f];
    const Camera& cam = frames_[f].camera;
    const auto splats = v.raster.splats();
    Patch p;
    const int slot = v.slot[static_cast<std::size_t>(id)];
    const RasterSplat* old = slot >= 0 ? &splats[static_cast<std::size_t>(slot)] : nullptr;
    const std::optional<RasterSplat> now = make_raster_splat(g, id, cam);
    if (old) p.rect = p.rect.unite({old->x0, old->y0, old->x1, old->y1});
    if (now) p.rect = p.rect.unite({now->x0, now->y0, now->x1, now->y1});
    if (p.rect.empty()) return p;
    const std::size_t n_px = p.rect.area();
    p.color.resize(n_px * 3);
    p.depth.resize(n_px);
    p.sil.resize(n_px);
    for (int y = p.rect.y0; y <= p.rect.y1; ++y) {
      for (int x = p.rect.x0; x <= p.rect.x1; ++x) {
        const auto list = v.raster.pixel_list(x, y);
        const std::size_t n = list.size();
        const std::size_t off = v.raster.list_offset(x, y);
        const std::size_t pb = off + static_cast<std::size_t>(y) * cam.width + x;
        std::size_t k = n;
        if (old && old->covers(x, y)) {
          k = static_cast<std::size_t>(std::lower_bound(list.begin(), list.end(), static_cast<std::uint32_t>(slot)) -
                                       list.begin());
        }
        const bool insert = now && now->covers(x, y);
        std::size_t m = n;
        if (insert) {
          m = static_cast<std::size_t>(
              std::partition_point(list.begin(), list.end(), [&](std::uint32_t e) { return !front_of(*now, splats[e]); }) -
              list.begin());
        }
        const std::size_t start = std::min(k, m);
        PixelAccum acc = v.before[pb + start];
        if (!acc.done()) {
          bool stopped = false;
          for (std::size_t j = start; j < n && !stopped; ++j) {
            if (insert && j == m) {
              acc.add(*now, x, y);
              if (acc.done()) break;
            }
            if (j == k) continue;
            const RasterSplat& s = splats[list[j]];
            const double a = v.alpha[off + j];
            if (a >= kAlphaMin) acc.add(a, s.rgb, s.depth);
            stopped = acc.done();
          }
          if (insert && m == n && !acc.done()) acc.add(*now, x, y);
        }
        const std::size_t i = p.index(x, y);
        p.color[i * 3 + 0] = acc.color.x();
        p.color[i * 3 + 1] = acc.color.y();
        p.color[i * 3 + 2] = acc.color.z();
        p.depth[i] = acc.depth;
        p.sil[i] = acc.silhouette;
      }
    }
    return tighten(std::move(p), v.buffers);
  }

  // Crops a patch to the pixels that differ from the base render.
  static Patch tighten(Patch p, const RenderBuffers& base) {
    PixelRect t;
    for (int y = p.rect.y0; y <= p.rect.y1; ++y) {
      for (int x = p.rect.x0; x <= p.rect.x1; ++x) {
        const std::size_t i = p.index(x, y);
        if (p.color[i * 3] != base.color.at(x, y, 0) || p.color[i * 3 + 1] != base.color.at(x, y, 1) ||
            p.color[i * 3 + 2] != base.color.at(x, y, 2) || p.depth[i] != base.depth.at(x, y) ||
            p.sil[i] != base.silhouette.at(x, y)) {
          t = t.unite({x, y, x, y});
        }
      }
    }
    if (t == p.rect) return p;
    Patch out;
    out.rect = t;
    if (t.empty()) return out;
    out.color.resize(t.area() * 3);
    out.depth.resize(t.area());
    out.sil.resize(t.area());
    for (int y = t.y0; y <= t.y1; ++y) {
      for (int x = t.x0; x <= t.x1; ++x) {
        const std::size_t i = p.index(x, y), j = out.index(x, y);
        for (int c = 0; c < 3; ++c) out.color[j * 3 + c] = p.color[i * 3 + c];
        out.depth[j] = p.depth[i];
        out.sil[j] = p.sil[i];
      }
    }
    return out;
  }

  // SSIM change of channel c over output rect r. The window moments are
  // linear in a, a^2 and a*b, so only the patch's changes are convolved and
  // added to the cached moments.
  double ssim_patch_delta(std::size_t f, const Patch& p, int c, const PixelRect& r) const {
    const View& v = views_[f];
    const RgbImage& obs = frames_[f].observed;
    const PixelRect& q = p.rect;
    const int rad = v.win.radius;
    const auto pw = static_cast<std::size_t>(q.width()), ph = static_cast<std::size_t>(q.height());
    const auto rw = static_cast<std::size_t>(r.width());

    std::vector<double> d1(pw * ph), d2(pw * ph), d3(pw * ph);
    for (int y = q.y0; y <= q.y1; ++y) {
      for (int x = q.x0; x <= q.x1; ++x) {
        const std::size_t i = p.index(x, y);
        const double now = p.color[i * 3 + static_cast<std::size_t>(c)];
        const double was = v.buffers.color.at(x, y, c);
        d1[i] = now - was;
        d2[i] = now * now - was * was;
        d3[i] = (now - was) * obs.at(x, y, c);
      }
    }
    std::vector<double> h1(ph * rw), h2(ph * rw), h3(ph * rw);
    for (std::size_t py = 0; py < ph; ++py) {
      for (std::size_t cx = 0; cx < rw; ++cx) {
        const int x = r.x0 + static_cast<int>(cx);
        const int k0 = std::max(-rad, q.x0 - x), k1 = std::min(rad, q.x1 - x);
        double s1 = 0, s2 = 0, s3 = 0;
        for (int k = k0; k <= k1; ++k) {
          const double wk = v.win.weights[static_cast<std::size_t>(k + rad)];
          const std::size_t i = py * pw + static_cast<std::size_t>(x + k - q.x0);
          s1 += wk * d1[i];
          s2 += wk * d2[i];
          s3 += wk * d3[i];
        }
        h1[py * rw + cx] = s1;
        h2[py * rw + cx] = s2;
        h3[py * rw + cx] = s3;
      }
    }
    double total = 0.0;
    for (int y = r.y0; y <= r.y1; ++y) {
      const int k0 = std::max(-rad, q.y0 - y), k1 = std::min(rad, q.y1 - y);
      for (std::size_t cx = 0; cx < rw; ++cx) {
        const int x = r.x0 + static_cast<int>(cx);
        double s1 = 0, s2 = 0, s3 = 0;
        for (int k = k0; k <= k1; ++k) {
          const double wk = v.win.weights[static_cast<std::size_t>(k + rad)];
          const std::size_t i = static_cast<std::size_t>(y + k - q.y0) * rw + cx;
          s1 += wk * h1[i];
          s2 += wk * h2[i];
          s3 += wk * h3[i];
        }
        const std::size_t vi = v.valid_index(x, y);
        SsimMoments m = v.moments[static_cast<std::size_t>(c)][vi];
        m.ma += s1;
        m.eaa += s2;
        m.eab += s3;
        total += ssim_from_moments(m) - v.ssim_px[static_cast<std::size_t>(c)][vi];
      }
    }
    return total;
  }

  template <class Da, class Sa, class Db, class Sb>
  DepthWarp warp(std::size_t a, int x, int y, const PairCache& pc, const Da& da, const Sa& sa, const Db& db,
                 const Sb& sb) const {
    return warp_depth_pixel(x, y, frames_[a].camera, frames_[a + 1].camera, pc.b_from_a, cfg_.loss.s_thresh, da, sa, db,
                            sb);
  }

  PairCache make_pair_cache(std::size_t a) const {
    const Camera& ca = frames_[a].camera;
    const Camera& cb = frames_[a + 1].camera;
    const RenderBuffers& ba = views_[a].buffers;
    const RenderBuffers& bb = views_[a + 1].buffers;
    PairCache pc;
    pc.b_from_a = relative_pose(ca, cb);
    const std::size_t na = static_cast<std::size_t>(ca.width) * ca.height;
    const std::size_t nb = static_cast<std::size_t>(cb.width) * cb.height;
    pc.valid.assign(na, 0);
    pc.value.assign(na, 0.0);
    std::vector<std::int64_t> target(na, -1);
    for (int y = 0; y < ca.height; ++y) {
      for (int x = 0; x < ca.width; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * ca.width + x;
        const DepthWarp w = warp(
            a, x, y, pc, [&](int u, int v) { return ba.depth.at(u, v); }, [&](int u, int v) { return ba.silhouette.at(u, v); },
            [&](int u, int v) { return bb.depth.at(u, v); }, [&](int u, int v) { return bb.silhouette.at(u, v); });
        if (w.valid) {
          pc.valid[i] = 1;
          pc.value[i] = w.value;
          pc.sum += w.value;
          ++pc.count;
        }
        // Landing pixel regardless of b's silhouette, so that changes in b
        // can be traced back.
        if (ba.silhouette.at(x, y) > cfg_.loss.s_thresh) {
          if (const auto hit = warp_landing(x, y, ba.depth.at(x, y), ca, cb, pc.b_from_a))
            target[i] = static_cast<std::int64_t>(hit->y) * cb.width + hit->x;
        }
      }
    }
    pc.offsets.assign(nb + 1, 0);
    for (std::size_t i = 0; i < na; ++i)
      if (target[i] >= 0) ++pc.offsets[static_cast<std::size_t>(target[i]) + 1];
    for (std::size_t i = 1; i < pc.offsets.size(); ++i) pc.offsets[i] += pc.offsets[i - 1];
    pc.sources.resize(pc.offsets.back());
    std::vector<std::uint32_t> fill(pc.offsets.begin(), pc.offsets.end() - 1);
    for (std::size_t i = 0; i < na; ++i)
      if (target[i] >= 0) pc.sources[fill[static_cast<std::size_t>(target[i])]++] = static_cast<std::uint32_t>(i);
    return pc;
  }

  static double pair_mean(double sum, std::size_t count) { return count ? sum / static_cast<double>(count) : 0.0; }

  double pair_delta(std::size_t a, const Patch& pa, const Patch& pb) const {
    if (pa.rect.empty() && pb.rect.empty()) return 0.0;
    const PairCache& pc = pairs_[a];
    const Camera& ca = frames_[a].camera;
    const RenderBuffers& ba = views_[a].buffers;
    const RenderBuffers& bb = views_[a + 1].buffers;
    auto da = [&](int u, int v) { return pa.contains(u, v) ? pa.depth[pa.index(u, v)] : ba.depth.at(u, v); };
    auto sa = [&](int u, int v) { return pa.contains(u, v) ? pa.sil[pa.index(u, v)] : ba.silhouette.at(u, v); };
    auto db = [&](int u, int v) { return pb.contains(u, v) ? pb.depth[pb.index(u, v)] : bb.depth.at(u, v); };
    auto sb = [&](int u, int v) { return pb.contains(u, v) ? pb.sil[pb.index(u, v)] : bb.silhouette.at(u, v); };

    double d_sum = 0.0;
    std::int64_t d_count = 0;
    auto redo = [&](int x, int y) {
      const std::size_t i = static_cast<std::size_t>(y) * ca.width + x;
      const DepthWarp w = warp(a, x, y, pc, da, sa, db, sb);
      if (pc.valid[i]) {
        d_sum -= pc.value[i];
        --d_count;
      }
      if (w.valid) {
        d_sum += w.value;
        ++d_count;
      }
    };
    for (int y = pa.rect.y0; y <= pa.rect.y1 && !pa.rect.empty(); ++y)
      for (int x = pa.rect.x0; x <= pa.rect.x1; ++x) redo(x, y);
    if (!pb.rect.empty()) {
      const int wb = frames_[a + 1].camera.width;
      for (int y = pb.rect.y0; y <= pb.rect.y1; ++y) {
        for (int x = pb.rect.x0; x <= pb.rect.x1; ++x) {
          const std::size_t q = static_cast<std::size_t>(y) * wb + x;
          for (std::uint32_t k = pc.offsets[q]; k < pc.offsets[q + 1]; ++k) {
            const int px = static_cast<int>(pc.sources[k] % static_cast<std::uint32_t>(ca.width));
            const int py = static_cast<int>(pc.sources[k] / static_cast<std::uint32_t>(ca.width));
            if (!pa.contains(px, py)) redo(px, py);
          }
        }
      }
    }
    const auto count = static_cast<std::size_t>(static_cast<std::int64_t>(pc.count) + d_count);
    return pair_mean(pc.sum + d_sum, count) - pair_mean(pc.sum, pc.count);
  }

  double structure_delta(int id, const GaussianPrimitive& g) const {
    const NearestMode mode = cfg_.loss.structure.mode;
    const bool hinge = cfg_.loss.structure.hinge;
    const double s = mean_scale(g);
    double d = 0.0;
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const auto& best = nearest_[i];
      const SplatIndex::Hit& other = best[0].index == id ? best[1] : best[0];
      const double dist = (points_[i] - g.position).norm();
      SplatIndex::Hit mine{mode == NearestMode::FullExpression ? dist - s : dist, dist - s, id};
      const bool mine_wins = other.index < 0 || mine.key < other.key || (mine.key == other.key && id < other.index);
      const double now = mine_wins ? mine.value : other.value;
      const double was = best[0].value;
      d += (hinge ? std::max(now, 0.0) : now) - (hinge ? std::max(was, 0.0) : was);
    }
    return d / static_cast<double>(points_.size());
  }

  std::span<const GaussianPrimitive> map_;
  std::span<const TrainingFrame> frames_;
  std::span<const Vec3> points_;
  OptimizerConfig cfg_;
  std::vector<View> views_;
  std::vector<PairCache> pairs_;
  LossBreakdown base_;
  bool use_points_ = false;
  SplatIndex index_;
  std::vector<std::array<SplatIndex::Hit, 2>> nearest_;
};

struct StepResult {
  /// Loss before the step.
  LossBreakdown loss;
  std::size_t optimized = 0;
  bool applied = false;
  std::string error;
};

/// One Adam step on central-difference gradients of the training objective,
/// over the primitives visible in the frames. Opacity is clamped to
/// (min_opacity, 1], scales floored, quaternions renormalized.
inline StepResult optimize_step(std::vector<GaussianPrimitive>& map, std::span<const TrainingFrame> frames,
                                std::span<const Vec3> points, const OptimizerConfig& cfg, AdamState& adam) {
  StepResult out;
  if (map.empty()) throw InputError("optimize_step needs a non-empty map");
  adam.resize(map.size());
  const LocalLossModel model(map, frames, points, cfg);
  out.loss = model.base();
  if (!std::isfinite(out.loss.total)) {
    out.error = "non-finite loss; step rejected";
    return out;
  }

  const std::vector<int> ids = model.visible();
  std::vector<std::array<double, kSplatParams>> grads(ids.size());
  auto gradient = [&](std::size_t n) {
    const int id = ids[n];
    GaussianPrimitive g = map[static_cast<std::size_t>(id)];
    for (int j = 0; j < kSplatParams; ++j) {
      const ParamGroup grp = param_group(j);
      if (cfg.lr.of(grp) == 0.0) {
        grads[n][static_cast<std::size_t>(j)] = 0.0;
        continue;
      }
      const double x = get_param(g, j);
      const int ch = grp == ParamGroup::Color ? j - 3 : -1;
      set_param(g, j, x + cfg.h);
      const double up = model.delta(id, g, grp, ch);
      set_param(g, j, x - cfg.h);
      const double down = model.delta(id, g, grp, ch);
      set_param(g, j, x);
      grads[n][static_cast<std::size_t>(j)] = (up - down) / (2.0 * cfg.h);
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(cfg.workers, static_cast<unsigned>(ids.size())));
  if (workers == 1) {
    for (std::size_t n = 0; n < ids.size(); ++n) gradient(n);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t n = next++; n < ids.size(); n = next++) gradient(n);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& gr : grads) {
    for (double v : gr) {
      if (!std::isfinite(v)) {
        out.error = "non-finite gradient; step rejected";
        return out;
      }
    }
  }

  for (std::size_t n = 0; n < ids.size(); ++n) {
    const auto k = static_cast<std::size_t>(ids[n]);
    GaussianPrimitive& g = map[k];
    bool rotated = false;
    adam.tick(k);
    for (int j = 0; j < kSplatParams; ++j) {
      const double rate = cfg.lr.of(param_group(j));
      if (rate == 0.0) continue;
      const double step = adam.direction(k, j, grads[n][static_cast<std::size_t>(j)], cfg);
      set_param(g, j, get_param(g, j) - rate * step);
      if (param_group(j) == ParamGroup::Rotation) rotated = true;
    }
    if (cfg.lr.opacity != 0.0) g.opacity = std::clamp(g.opacity, cfg.min_opacity, 1.0);
    if (cfg.lr.scale != 0.0) g.scale = g.scale.cwiseMax(kScaleFloor);
    if (rotated) g.rotation.normalize();
  }
  out.optimized = ids.size();
  out.applied = true;
  return out;
}

}  // namespace vxsplat
