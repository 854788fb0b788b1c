#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "vxsplat/common.hpp"

namespace vxsplat {

/// How the nearest splat of a point is chosen for the structure term.
enum class NearestMode {
  /// argmin_k (|p - c_k| - s_k)
  FullExpression,
  /// argmin_k |p - c_k|, then subtract that splat's s_k
  PureDistance,
};

/// KD-tree over splat centers carrying a per-node maximum of the mean scale,
/// so that distance-minus-scale queries can be pruned exactly.
class SplatIndex {
 public:
  struct Hit {
    double key = std::numeric_limits<double>::infinity();    // ranking quantity
    double value = std::numeric_limits<double>::infinity();  // |p - c| - s
    int index = -1;
  };

  SplatIndex() = default;

  SplatIndex(std::span<const Vec3> centers, std::span<const double> mean_scales)
      : centers_(centers.begin(), centers.end()), scales_(mean_scales.begin(), mean_scales.end()) {
    if (centers_.size() != scales_.size()) throw InputError("SplatIndex: centers and scales differ in size");
    order_.resize(centers_.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (!centers_.empty()) build(0, static_cast<int>(order_.size()));
  }

  std::size_t size() const { return centers_.size(); }

  Hit nearest(const Vec3& q, NearestMode mode) const { return nearest2(q, mode)[0]; }

  /// Best and second-best hits by the mode's ranking key.
  std::array<Hit, 2> nearest2(const Vec3& q, NearestMode mode) const {
    std::array<Hit, 2> best;
    if (!nodes_.empty()) search(0, q, mode, best);
    return best;
  }

 private:
  struct Node {
    Vec3 lo, hi;
    double max_scale = 0.0;
    int begin = 0, end = 0;
    int left = -1, right = -1;
  };

  static constexpr int kLeafSize = 8;

  int build(int begin, int end) {
    Node node;
    node.begin = begin;
    node.end = end;
    node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    node.hi = -node.lo;
    node.max_scale = -std::numeric_limits<double>::infinity();
    for (int i = begin; i < end; ++i) {
      node.lo = node.lo.cwiseMin(centers_[order_[i]]);
      node.hi = node.hi.cwiseMax(centers_[order_[i]]);
      node.max_scale = std::max(node.max_scale, scales_[order_[i]]);
    }
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin > kLeafSize) {
      int axis = 0;
      (node.hi - node.lo).maxCoeff(&axis);
      const int mid = begin + (end - begin) / 2;
      std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                       [&](int a, int b) { return centers_[a](axis) < centers_[b](axis); });
      const int l = build(begin, mid);
      const int r = build(mid, end);
      nodes_[id].left = l;
      nodes_[id].right = r;
    }
    return id;
  }

  double lower_bound(const Node& n, const Vec3& q, NearestMode mode) const {
    const Vec3 d = (n.lo - q).cwiseMax(q - n.hi).cwiseMax(0.0);
    return mode == NearestMode::FullExpression ? d.norm() - n.max_scale : d.norm();
  }

  static bool better(const Hit& a, const Hit& b) {
    return a.key < b.key || (a.key == b.key && a.index < b.index);
  }

  void offer(std::array<Hit, 2>& best, const Hit& h) const {
    if (better(h, best[0])) {
      best[1] = best[0];
      best[0] = h;
    } else if (better(h, best[1])) {
      best[1] = h;
    }
  }

  void search(int id, const Vec3& q, NearestMode mode, std::array<Hit, 2>& best) const {
    const Node& n = nodes_[id];
    if (lower_bound(n, q, mode) > best[1].key) return;
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int k = order_[i];
        const double dist = (q - centers_[k]).norm();
        const double value = dist - scales_[k];
        offer(best, {mode == NearestMode::FullExpression ? value : dist, value, k});
      }
      return;
    }
    const double bl = lower_bound(nodes_[n.left], q, mode);
    const double br = lower_bound(nodes_[n.right], q, mode);
    if (bl <= br) {
      search(n.left, q, mode, best);
      search(n.right, q, mode, best);
    } else {
      search(n.right, q, mode, best);
      search(n.left, q, mode, best);
    }
  }

  std::vector<Vec3> centers_;
  std::vector<double> scales_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace vxsplat
