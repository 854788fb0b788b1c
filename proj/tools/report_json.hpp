#pragma once

#include "json.hpp"
#include "vxsplat/vxsplat.hpp"

namespace vxsplat::report {

using json = nlohmann::ordered_json;

inline json key_json(const VoxelKey& k) { return json::array({k.ix, k.iy, k.iz}); }

inline json loss_json(const LossBreakdown& l) {
  return {{"l1", l.l1}, {"ssim", l.ssim}, {"l_d", l.l_d}, {"l_p", l.l_p}, {"total", l.total}};
}

inline json frame_json(const FrameReport& r) {
  const IngestReport& in = r.ingest;
  json transitions = json::array();
  for (const auto& t : in.transitions) {
    transitions.push_back({{"voxel", key_json(t.key)}, {"from", to_string(t.from)}, {"to", to_string(t.to)}});
  }
  json errors = json::array();
  for (const auto& e : in.errors) errors.push_back(e);
  for (const auto& e : r.errors) errors.push_back(e);
  return {{"type", "frame"},
          {"frame", in.frame},
          {"timestamp", in.timestamp},
          {"failed", r.failed},
          {"points", in.points},
          {"touched_voxels", in.touched_voxels},
          {"solved_voxels", in.solved_voxels},
          {"first_solves", in.first_solves},
          {"primitives_added", in.primitives_added},
          {"pending_expansion", in.pending_expansion},
          {"primitives", r.primitives},
          {"training_frames", r.training_frames},
          {"steps", r.steps},
          {"loss_before", loss_json(r.loss_before)},
          {"loss_after", loss_json(r.loss_after)},
          {"psnr", r.psnr},
          {"ssim", r.ssim},
          {"timing_ms",
           {{"store", in.store_ms}, {"densify", in.densify_ms}, {"expand", in.expand_ms}, {"optimize", r.optimize_ms}}},
          {"transitions", transitions},
          {"warnings", in.warnings},
          {"errors", errors}};
}

inline json summary_json(const RunSummary& s) {
  return {{"type", "summary"},       {"frames", s.frames},          {"primitives", s.primitives},
          {"mean_psnr", s.mean_psnr}, {"mean_ssim", s.mean_ssim},    {"final_loss", s.final_loss},
          {"frame_errors", s.frame_errors}};
}

inline json voxel_json(const VoxelPrediction& p, const VoxelCell& cell) {
  return {{"type", "voxel"},
          {"voxel", key_json(p.key)},
          {"value_axis", to_string(p.value_axis)},
          {"raw_points", cell.points.size()},
          {"predicted_points", p.points.size()},
          {"mean_variance", p.mean_variance()},
          {"state", to_string(cell.state)}};
}

}  // namespace vxsplat::report
