#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "vxsplat/frame.hpp"
#include "vxsplat/gpr.hpp"
#include "vxsplat/losses.hpp"
#include "vxsplat/optimizer.hpp"
#include "vxsplat/renderer.hpp"
#include "vxsplat/splat_init.hpp"
#include "vxsplat/voxel_map.hpp"

namespace vxsplat {

struct PipelineConfig {
  double voxel_size = 0.2;
  std::size_t tau = 10;
  int n_s = 3;
  int n_r = 3;
  double eta = 0.3;
  double sensor_var = 1e-4;
  double kernel_lambda = 1.0;
  double planarity_factor = 2.0;
  LossWeights weights;
  double s_thresh = 0.5;
  bool structure_hinge = false;
  std::size_t window = 50;
  int k_curr = 1;
  int k_hist = 1;
  LearningRates lr;
  int iterations = 5;
  double initial_opacity = 0.5;
  ScaleMode scale_mode = ScaleMode::StdDev;
  /// Newly solved voxels needed before the map is expanded.
  std::size_t expansion_threshold = 1;
  unsigned workers = 1;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(voxel_size > 0.0)) throw InputError("voxel_size must be positive");
    if (tau < 1) throw InputError("tau must be at least 1");
    if (n_s < 1 || n_r < 1) throw InputError("n_s and n_r must be at least 1");
    if (!(eta > 0.0)) throw InputError("eta must be positive");
    if (!(sensor_var > 0.0)) throw InputError("sensor_var must be positive");
    if (!(kernel_lambda > 0.0)) throw InputError("kernel lambda must be positive");
    for (double w : {weights.lambda_ssim, weights.lambda_d, weights.lambda_p}) {
      if (!(w >= 0.0 && w <= 1.0)) throw InputError("loss weights must lie in [0,1]");
    }
    if (k_curr < 1 || k_hist < 0) throw InputError("k_curr must be >= 1 and k_hist >= 0");
    if (window < static_cast<std::size_t>(k_curr)) throw InputError("window T must be at least k_curr");
    if (iterations < 0) throw InputError("iterations must be non-negative");
    if (!(initial_opacity > 0.0 && initial_opacity <= 1.0)) throw InputError("initial opacity must be in (0,1]");
    if (expansion_threshold < 1) throw InputError("expansion threshold must be at least 1");
    for (double r : {lr.position, lr.color, lr.opacity, lr.scale, lr.rotation}) {
      if (!(r >= 0.0)) throw InputError("learning rates must be non-negative");
    }
  }

  DensifyConfig densify() const {
    DensifyConfig d;
    d.tau = tau;
    d.n_s = n_s;
    d.n_r = n_r;
    d.eta = eta;
    d.kernel_lambda = kernel_lambda;
    d.workers = workers;
    d.planarity_factor = planarity_factor;
    return d;
  }

  SplatInitConfig init() const { return {n_s, n_r, initial_opacity, scale_mode}; }

  OptimizerConfig optimizer() const {
    OptimizerConfig o;
    o.lr = lr;
    o.weights = weights;
    o.loss.s_thresh = s_thresh;
    o.loss.structure.hinge = structure_hinge;
    o.workers = workers;
    return o;
  }
};

using FramePtr = std::shared_ptr<const FrameSample>;

/// Sliding window of the T most recent frames; older frames spill into the
/// history queue.
class CameraQueues {
 public:
  explicit CameraQueues(std::size_t window = 50) : window_(window) {
    if (window < 1) throw InputError("camera window must be at least 1");
  }

  void push(FramePtr f) {
    current_.push_back(std::move(f));
    if (current_.size() > window_) {
      history_.push_back(std::move(current_.front()));
      current_.pop_front();
    }
  }

  const std::deque<FramePtr>& current() const { return current_; }
  const std::vector<FramePtr>& history() const { return history_; }
  std::size_t window() const { return window_; }

 private:
  std::size_t window_;
  std::deque<FramePtr> current_;
  std::vector<FramePtr> history_;
};

/// The k_curr most recent frames (oldest first) followed by up to k_hist
/// distinct history frames drawn uniformly.
inline std::vector<FramePtr> select_training_frames(const CameraQueues& q, int k_curr, int k_hist,
                                                    std::mt19937_64& rng) {
  if (q.current().empty()) throw InputError("select_training_frames: current queue is empty");
  std::vector<FramePtr> out;
  const std::size_t nc = std::min<std::size_t>(static_cast<std::size_t>(std::max(k_curr, 0)), q.current().size());
  out.insert(out.end(), q.current().end() - static_cast<std::ptrdiff_t>(nc), q.current().end());

  const std::size_t nh = q.history().size();
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(std::max(k_hist, 0)), nh);
  std::vector<std::size_t> idx(nh);
  for (std::size_t i = 0; i < nh; ++i) idx[i] = i;
  // partial Fisher-Yates
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, nh - 1);
    std::swap(idx[i], idx[pick(rng)]);
    out.push_back(q.history()[idx[i]]);
  }
  return out;
}

struct IngestReport {
  std::uint64_t frame = 0;
  double timestamp = 0.0;
  std::size_t points = 0;
  std::size_t touched_voxels = 0;
  std::size_t solved_voxels = 0;
  std::size_t first_solves = 0;
  std::size_t primitives_added = 0;
  std::size_t pending_expansion = 0;
  std::vector<StateTransition> transitions;
  std::vector<std::string> warnings;
  std::vector<std::string> errors;
  double store_ms = 0.0;
  double densify_ms = 0.0;
  double expand_ms = 0.0;
};

struct FrameReport {
  IngestReport ingest;
  std::size_t training_frames = 0;
  int steps = 0;
  /// Objective over the selected frames before the first and after the last step.
  LossBreakdown loss_before;
  LossBreakdown loss_after;
  double psnr = 0.0;
  double ssim = 0.0;
  std::size_t primitives = 0;
  double optimize_ms = 0.0;
  /// The frame was rejected before ingestion.
  bool failed = false;
  std::vector<std::string> errors;
};

class MappingPipeline {
 public:
  explicit MappingPipeline(PipelineConfig cfg)
      : cfg_(std::move(cfg)), voxels_((cfg_.validate(), cfg_.voxel_size), cfg_.sensor_var),
        queues_(cfg_.window), rng_(cfg_.seed) {}

  const PipelineConfig& config() const { return cfg_; }
  const VoxelMap& voxels() const { return voxels_; }
  const std::vector<GaussianPrimitive>& gaussians() const { return map_; }
  std::vector<GaussianPrimitive>& gaussians() { return map_; }
  const CameraQueues& queues() const { return queues_; }
  std::uint64_t frames_seen() const { return frame_; }

  /// Stores, densifies, expands the map with newly solved voxels and pushes the
  /// frame into the camera window.
  IngestReport ingest_frame(const FrameSample& frame) {
    frame.validate();
    IngestReport r;
    r.frame = frame_;
    r.timestamp = frame.timestamp;
    r.points = frame.points.size();
    voxels_.log().frame = frame_;
    const std::size_t log_mark = voxels_.log().transitions.size();
    auto held = std::make_shared<const FrameSample>(frame);

    auto t0 = Clock::now();
    const FrameUpdateSet touched = voxels_.store_frame(frame.points);
    r.touched_voxels = touched.size();
    auto t1 = Clock::now();
    DensifyOutput d = densify_frame(touched, voxels_, cfg_.densify());
    auto t2 = Clock::now();
    r.solved_voxels = d.voxels.size();
    r.warnings = std::move(d.warnings);
    for (auto& [key, msg] : d.errors) r.errors.push_back("voxel " + to_string(key) + ": " + msg);
    for (auto& v : d.voxels) {
      if (!v.first_solve) continue;
      ++r.first_solves;
      pending_.push_back({std::move(v.prediction), held});
    }
    if (pending_.size() >= cfg_.expansion_threshold) {
      for (const Pending& p : pending_) {
        try {
          const auto prims = init_gaussians_for_voxel(p.prediction, p.frame->camera, p.frame->image, cfg_.init());
          map_.insert(map_.end(), prims.begin(), prims.end());
          r.primitives_added += prims.size();
        } catch (const std::exception& e) {
          r.errors.push_back("voxel " + to_string(p.prediction.key) + " init: " + e.what());
        }
      }
      pending_.clear();
    }
    r.pending_expansion = pending_.size();
    auto t3 = Clock::now();

    const auto& log = voxels_.log().transitions;
    r.transitions.assign(log.begin() + static_cast<std::ptrdiff_t>(log_mark), log.end());
    queues_.push(std::move(held));
    ++frame_;
    r.store_ms = ms(t0, t1);
    r.densify_ms = ms(t1, t2);
    r.expand_ms = ms(t2, t3);
    return r;
  }

  /// Ingest, then the configured optimization iterations on the selected
  /// frames, then metrics of the frame's own view.
  FrameReport process(const FrameSample& frame) {
    FrameReport r;
    r.ingest = ingest_frame(frame);
    const auto t0 = Clock::now();
    const std::vector<FramePtr> chosen = select_training_frames(queues_, cfg_.k_curr, cfg_.k_hist, rng_);
    r.training_frames = chosen.size();
    std::vector<TrainingFrame> train;
    for (const auto& f : chosen) train.push_back({f->camera, f->image});
    std::vector<Vec3> pts;
    pts.reserve(frame.points.size());
    for (const auto& p : frame.points) pts.push_back(p.position);

    const OptimizerConfig oc = cfg_.optimizer();
    if (!map_.empty() && cfg_.iterations > 0) {
      for (int it = 0; it < cfg_.iterations; ++it) {
        const StepResult s = optimize_step(map_, train, pts, oc, adam_);
        if (it == 0) r.loss_before = s.loss;
        if (!s.applied) {
          r.errors.push_back(s.error);
          break;
        }
        ++r.steps;
      }
      r.loss_after = evaluate_loss(map_, train, pts, oc);
      if (r.steps == 0 && r.errors.empty()) r.loss_before = r.loss_after;
    } else if (!map_.empty()) {
      r.loss_before = r.loss_after = evaluate_loss(map_, train, pts, oc);
    }
    r.optimize_ms = ms(t0, Clock::now());

    const RgbImage rendered = render(map_, frame.camera).color;
    r.psnr = psnr(rendered, frame.image);
    r.ssim = ssim(rendered, frame.image);
    r.primitives = map_.size();
    return r;
  }

 private:
  using Clock = std::chrono::steady_clock;
  static double ms(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
  }

  struct Pending {
    VoxelPrediction prediction;
    FramePtr frame;
  };

  PipelineConfig cfg_;
  VoxelMap voxels_;
  CameraQueues queues_;
  std::mt19937_64 rng_;
  std::vector<GaussianPrimitive> map_;
  AdamState adam_;
  std::vector<Pending> pending_;
  std::uint64_t frame_ = 0;
};

struct RunSummary {
  std::size_t frames = 0;
  std::size_t primitives = 0;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double final_loss = 0.0;
  std::size_t frame_errors = 0;
};

struct RunResult {
  std::vector<GaussianPrimitive> map;
  std::vector<FrameReport> reports;
  RunSummary summary;
};

/// Processes a stream; a frame that throws is recorded and skipped.
inline RunResult run(std::span<const FrameSample> stream, const PipelineConfig& cfg,
                     const std::function<void(const FrameReport&)>& on_report = {}) {
  if (stream.empty()) throw InputError("run: stream is empty");
  MappingPipeline p(cfg);
  RunResult out;
  for (const FrameSample& f : stream) {
    FrameReport rep;
    try {
      rep = p.process(f);
    } catch (const InputError& e) {
      rep.ingest.frame = p.frames_seen();
      rep.ingest.timestamp = f.timestamp;
      rep.failed = true;
      rep.errors.push_back(e.what());
      ++out.summary.frame_errors;
    }
    if (on_report) on_report(rep);
    out.reports.push_back(std::move(rep));
  }
  out.map = p.gaussians();
  RunSummary& s = out.summary;
  s.frames = out.reports.size();
  s.primitives = out.map.size();
  std::size_t ok = 0;
  for (const auto& r : out.reports) {
    if (r.failed) continue;
    s.mean_psnr += r.psnr;
    s.mean_ssim += r.ssim;
    ++ok;
  }
  if (ok) {
    s.mean_psnr /= static_cast<double>(ok);
    s.mean_ssim /= static_cast<double>(ok);
  }
  s.final_loss = out.reports.back().loss_after.total;
  return out;
}

}  // namespace vxsplat
