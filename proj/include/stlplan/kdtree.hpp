#ifndef STLPLAN_KDTREE_HPP
#define STLPLAN_KDTREE_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <vector>

namespace stlplan::geo {

using Vec2 = Eigen::Vector2d;

// Static 2D KD-tree with exact nearest-neighbor queries. Built once from a
// point set; nodes are stored as a flat array ordered by a median split.
class KdTree2d {
 public:
  struct Hit {
    int payload = -1;
    double dist2 = std::numeric_limits<double>::infinity();
  };

  KdTree2d() = default;

  void build(std::vector<Vec2> points, std::vector<int> payloads) {
    pts_ = std::move(points);
    payloads_ = std::move(payloads);
    order_.resize(pts_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    if (!pts_.empty()) build_rec(0, static_cast<int>(pts_.size()), 0);
  }

  bool empty() const { return pts_.empty(); }
  std::size_t size() const { return pts_.size(); }

  // Exact nearest stored point (squared Euclidean distance).
  Hit nearest(const Vec2& q) const {
    Hit best;
    if (!pts_.empty()) search(0, static_cast<int>(pts_.size()), 0, q, best);
    return best;
  }

  const Vec2& point_at(int payload_index) const { return pts_[static_cast<std::size_t>(payload_index)]; }

 private:
  std::vector<Vec2> pts_;
  std::vector<int> payloads_;
  std::vector<int> order_;

  void build_rec(int lo, int hi, int axis) {
    if (hi - lo <= 1) return;
    int mid = (lo + hi) / 2;
    std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                     [&](int a, int b) { return pts_[static_cast<std::size_t>(a)](axis) <
                                                pts_[static_cast<std::size_t>(b)](axis); });
    build_rec(lo, mid, 1 - axis);
    build_rec(mid + 1, hi, 1 - axis);
  }

  void search(int lo, int hi, int axis, const Vec2& q, Hit& best) const {
    if (lo >= hi) return;
    int mid = (lo + hi) / 2;
    int idx = order_[static_cast<std::size_t>(mid)];
    const Vec2& p = pts_[static_cast<std::size_t>(idx)];
    double d2 = (q - p).squaredNorm();
    if (d2 < best.dist2) {
      best.dist2 = d2;
      best.payload = idx;
    }
    double diff = q(axis) - p(axis);
    int near_lo = diff < 0 ? lo : mid + 1;
    int near_hi = diff < 0 ? mid : hi;
    int far_lo = diff < 0 ? mid + 1 : lo;
    int far_hi = diff < 0 ? hi : mid;
    search(near_lo, near_hi, 1 - axis, q, best);
    if (diff * diff < best.dist2) search(far_lo, far_hi, 1 - axis, q, best);
  }

 public:
  int payload(int idx) const { return payloads_[static_cast<std::size_t>(idx)]; }
  const Vec2& point(int idx) const { return pts_[static_cast<std::size_t>(idx)]; }
};

}  // namespace stlplan::geo

#endif
