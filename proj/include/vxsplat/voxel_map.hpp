#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vxsplat/common.hpp"

namespace vxsplat {

/// One LiDAR return. noise_var starts at the sensor variance and is replaced
/// by the posterior variance once the point becomes a pseudo-observation.
struct ColoredPoint {
  Vec3 position = Vec3::Zero();
  Vec3 color = Vec3::Zero();
  double noise_var = 0.0;
};

struct VoxelKey {
  std::int64_t ix = 0;
  std::int64_t iy = 0;
  std::int64_t iz = 0;

  auto operator<=>(const VoxelKey&) const = default;
};

inline std::string to_string(const VoxelKey& k) {
  return "(" + std::to_string(k.ix) + "," + std::to_string(k.iy) + "," + std::to_string(k.iz) + ")";
}

/// Floor-lattice key of the voxel containing p.
inline VoxelKey voxel_key(const Vec3& p, double voxel_size) {
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) throw InputError("voxel_size must be positive");
  if (!all_finite(p)) throw InputError("voxel_key: non-finite point");
  return {static_cast<std::int64_t>(std::floor(p.x() / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.y() / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.z() / voxel_size))};
}

inline Vec3 voxel_min_corner(const VoxelKey& k, double voxel_size) {
  return Vec3(static_cast<double>(k.ix), static_cast<double>(k.iy), static_cast<double>(k.iz)) * voxel_size;
}

enum class VoxelState : std::uint8_t { Unready = 0, Ready = 1, Active = 2, Converged = 3 };

inline const char* to_string(VoxelState s) {
  switch (s) {
    case VoxelState::Unready: return "Unready";
    case VoxelState::Ready: return "Ready";
    case VoxelState::Active: return "Active";
    case VoxelState::Converged: return "Converged";
  }
  return "?";
}

enum class Axis : std::uint8_t { X = 0, Y = 1, Z = 2 };

inline const char* to_string(Axis a) {
  static constexpr const char* kNames[] = {"X", "Y", "Z"};
  return kNames[static_cast<int>(a)];
}

/// Densified output of one voxel solve, in make_mesh_grid order.
struct VoxelPrediction {
  VoxelKey key;
  Axis value_axis = Axis::Z;
  int n_s = 0;
  int n_r = 0;
  std::vector<Vec3> points;
  std::vector<Vec3> colors;
  std::vector<double> variances;

  double mean_variance() const {
    if (variances.empty()) return 0.0;
    return std::accumulate(variances.begin(), variances.end(), 0.0) / static_cast<double>(variances.size());
  }
};

struct VoxelCell {
  VoxelKey key;
  /// Raw scanned points, each carrying the sensor variance.
  std::vector<ColoredPoint> points;
  /// Previous prediction grid re-used as heteroscedastic training data.
  std::vector<ColoredPoint> pseudo_points;
  VoxelState state = VoxelState::Unready;
  std::optional<Axis> value_axis;
  std::optional<VoxelPrediction> last_prediction;
  int solve_count = 0;

  /// Training set for the next solve: raw points stacked with pseudo-observations.
  std::vector<ColoredPoint> training_points() const {
    std::vector<ColoredPoint> out;
    out.reserve(points.size() + pseudo_points.size());
    out.insert(out.end(), points.begin(), points.end());
    out.insert(out.end(), pseudo_points.begin(), pseudo_points.end());
    return out;
  }
};

/// Keys touched by one frame, in first-touch order, without duplicates.
struct FrameUpdateSet {
  std::vector<VoxelKey> keys;

  std::size_t size() const { return keys.size(); }
  bool empty() const { return keys.empty(); }
};

struct StateTransition {
  std::uint64_t frame = 0;
  VoxelKey key;
  VoxelState from = VoxelState::Unready;
  VoxelState to = VoxelState::Unready;
};

struct SolveSubmission {
  std::uint64_t frame = 0;
  VoxelKey key;
  VoxelState state_at_submission = VoxelState::Unready;
};

/// Append-only audit trail of lifecycle events.
struct LifecycleLog {
  std::uint64_t frame = 0;
  std::vector<StateTransition> transitions;
  std::vector<SolveSubmission> submissions;
};

inline bool is_legal_transition(VoxelState from, VoxelState to) {
  return static_cast<int>(to) == static_cast<int>(from) + 1;
}

/// Moves a cell one step along Unready -> Ready -> Active -> Converged.
inline void advance_state(VoxelCell& cell, VoxelState to, LifecycleLog* log) {
  if (!is_legal_transition(cell.state, to)) {
    throw ContractError(std::string("illegal voxel transition ") + to_string(cell.state) + " -> " +
                        to_string(to) + " at " + to_string(cell.key));
  }
  if (log) log->transitions.push_back({log->frame, cell.key, cell.state, to});
  cell.state = to;
}

/// Pure classification from cell contents.
inline VoxelState classify_voxel(const VoxelCell& cell, std::size_t tau, double eta) {
  if (!cell.last_prediction) {
    return cell.points.size() >= tau ? VoxelState::Ready : VoxelState::Unready;
  }
  return cell.last_prediction->mean_variance() <= eta ? VoxelState::Converged : VoxelState::Active;
}

/// Folds a solve back into the cell: the prediction grid becomes the
/// pseudo-observation set with its posterior variances, and the state moves
/// to Active, then to Converged once the mean variance is at most eta.
inline void update_voxel_variances(VoxelCell& cell, const VoxelPrediction& posterior, double eta,
                                   LifecycleLog* log = nullptr) {
  if (posterior.key != cell.key) {
    throw ContractError("posterior for " + to_string(posterior.key) + " applied to cell " + to_string(cell.key));
  }
  if (cell.state != VoxelState::Ready && cell.state != VoxelState::Active) {
    throw ContractError(std::string("cannot update variances of a ") + to_string(cell.state) + " cell");
  }
  if (posterior.points.size() != posterior.variances.size() || posterior.points.size() != posterior.colors.size()) {
    throw ContractError("posterior points/colors/variances size mismatch");
  }

  cell.pseudo_points.clear();
  cell.pseudo_points.reserve(posterior.points.size());
  for (std::size_t i = 0; i < posterior.points.size(); ++i) {
    cell.pseudo_points.push_back({posterior.points[i], posterior.colors[i], std::max(posterior.variances[i], 0.0)});
  }
  cell.value_axis = posterior.value_axis;
  cell.last_prediction = posterior;
  ++cell.solve_count;

  if (cell.state == VoxelState::Ready) advance_state(cell, VoxelState::Active, log);
  if (classify_voxel(cell, 0, eta) == VoxelState::Converged) advance_state(cell, VoxelState::Converged, log);
}

/// Open-addressed spatial hash of voxels. Cells live in insertion order in a
/// dense array; the probe table stores indices into it.
class VoxelMap {
 public:
  explicit VoxelMap(double voxel_size = 0.2, double sensor_var = 1e-4)
      : voxel_size_(voxel_size), sensor_var_(sensor_var) {
    if (!(voxel_size > 0.0)) throw InputError("voxel_size must be positive");
    if (!(sensor_var >= 0.0)) throw InputError("sensor variance must be non-negative");
    slots_.assign(64, kEmpty);
  }

  double voxel_size() const { return voxel_size_; }
  double sensor_var() const { return sensor_var_; }

  std::size_t size() const { return cells_.size(); }
  std::span<const VoxelCell> cells() const { return cells_; }
  std::span<VoxelCell> cells() { return cells_; }

  VoxelCell* find(const VoxelKey& key) {
    const std::size_t slot = probe(key);
    return slots_[slot] == kEmpty ? nullptr : &cells_[slots_[slot]];
  }
  const VoxelCell* find(const VoxelKey& key) const {
    const std::size_t slot = probe(key);
    return slots_[slot] == kEmpty ? nullptr : &cells_[slots_[slot]];
  }

  VoxelCell& at(const VoxelKey& key) {
    VoxelCell* c = find(key);
    if (!c) throw ContractError("no voxel at " + to_string(key));
    return *c;
  }

  std::size_t total_points() const {
    std::size_t n = 0;
    for (const auto& c : cells_) n += c.points.size();
    return n;
  }

  LifecycleLog& log() { return log_; }
  const LifecycleLog& log() const { return log_; }

  /// Appends every point to its cell with the configured sensor variance and
  /// returns the touched keys. Converged cells keep accumulating points; the
  /// solver skips them by state.
  FrameUpdateSet store_frame(std::span<const ColoredPoint> frame_points) {
    for (const auto& p : frame_points) {
      if (!all_finite(p.position)) throw InputError("store_frame: non-finite point position");
    }
    FrameUpdateSet touched;
    std::vector<std::uint32_t> touched_cells;
    for (const auto& p : frame_points) {
      const VoxelKey key = voxel_key(p.position, voxel_size_);
      const std::uint32_t idx = find_or_insert(key);
      VoxelCell& cell = cells_[idx];
      if (last_touch_.size() < cells_.size()) last_touch_.resize(cells_.size(), 0);
      if (last_touch_[idx] != stamp_ + 1) {
        last_touch_[idx] = stamp_ + 1;
        touched.keys.push_back(key);
      }
      ColoredPoint stored = p;
      stored.noise_var = sensor_var_;
      cell.points.push_back(stored);
    }
    ++stamp_;
    return touched;
  }

 private:
  static constexpr std::uint32_t kEmpty = 0xffffffffu;

  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  static std::uint64_t hash(const VoxelKey& k) {
    std::uint64_t h = mix(static_cast<std::uint64_t>(k.ix));
    h = mix(h ^ static_cast<std::uint64_t>(k.iy));
    return mix(h ^ static_cast<std::uint64_t>(k.iz));
  }

  // Returns the slot holding key, or the empty slot where it would go.
  std::size_t probe(const VoxelKey& key) const {
    const std::size_t mask = slots_.size() - 1;
    std::size_t slot = static_cast<std::size_t>(hash(key)) & mask;
    while (slots_[slot] != kEmpty && cells_[slots_[slot]].key != key) slot = (slot + 1) & mask;
    return slot;
  }

  std::uint32_t find_or_insert(const VoxelKey& key) {
    std::size_t slot = probe(key);
    if (slots_[slot] != kEmpty) return slots_[slot];
    if (2 * (cells_.size() + 1) > slots_.size()) {
      grow();
      slot = probe(key);
    }
    const auto idx = static_cast<std::uint32_t>(cells_.size());
    VoxelCell cell;
    cell.key = key;
    cells_.push_back(std::move(cell));
    slots_[slot] = idx;
    return idx;
  }

  void grow() {
    std::vector<std::uint32_t> old = std::move(slots_);
    slots_.assign(old.size() * 2, kEmpty);
    const std::size_t mask = slots_.size() - 1;
    for (std::uint32_t idx : old) {
      if (idx == kEmpty) continue;
      std::size_t slot = static_cast<std::size_t>(hash(cells_[idx].key)) & mask;
      while (slots_[slot] != kEmpty) slot = (slot + 1) & mask;
      slots_[slot] = idx;
    }
  }

  double voxel_size_;
  double sensor_var_;
  std::vector<VoxelCell> cells_;
  std::vector<std::uint32_t> slots_;
  std::vector<std::uint64_t> last_touch_;
  std::uint64_t stamp_ = 0;
  LifecycleLog log_;
};

}  // namespace vxsplat
