#ifndef STLPLAN_ORACLE_HPP
#define STLPLAN_ORACLE_HPP

#include "stlplan/errors.hpp"
#include "stlplan/sdf.hpp"
#include "stlplan/stl_ast.hpp"
#include "stlplan/tasks.hpp"

#include <algorithm>
#include <optional>
#include <vector>

namespace stlplan::train {

using sdf::MapData;
using Vec2 = Eigen::Vector2d;

// Oracle instances are windowed region conjunctions (optionally a
// disjunction of two branches) over a coarse grid: the shape of the
// Sequence / Cover / Branch tasks. Loop-structured formulas are outside
// this oracle's class.
struct OracleInstance {
  struct Goal {
    sim::Disc region;
    stl::Interval window;
  };
  std::vector<std::vector<Goal>> branches;  // satisfy every goal of one branch
  int horizon = 10;
};

inline OracleInstance oracle_instance_for(const task::TaskSpec& t) {
  OracleInstance inst;
  inst.horizon = t.horizon;
  int T = t.horizon;
  if (t.name == "Cover") {
    std::vector<OracleInstance::Goal> b;
    for (const auto& [n, d] : t.regions) b.push_back({d, {0, T}});
    inst.branches.push_back(b);
  } else if (t.name == "Sequence") {
    int t2 = T / 3, t3 = 2 * T / 3;
    std::vector<stl::Interval> w = {{0, t2}, {t2, t3}, {t3, T}};
    std::vector<OracleInstance::Goal> b;
    for (std::size_t i = 0; i < t.regions.size(); ++i) b.push_back({t.regions[i].second, w[i]});
    inst.branches.push_back(b);
  } else if (t.name == "Branch") {
    inst.branches.push_back({{t.region("A"), {0, T}}, {t.region("C"), {0, T}}});
    inst.branches.push_back({{t.region("B"), {0, T}}, {t.region("D"), {0, T}}});
  } else {
    throw UsageError("oracle_plan: task class not supported: " + t.name);
  }
  return inst;
}

struct OracleResult {
  stl::Trajectory path;
  double robustness = 0;
};

namespace detail {

struct OracleDp {
  const MapData& map;
  const std::vector<OracleInstance::Goal>& goals;
  int grid_n, T;
  std::vector<Vec2> centers;
  std::vector<double> clearance;                 // sdf at cell centers
  std::vector<std::vector<double>> goal_margin;  // [goal][cell]

  OracleDp(const MapData& m, const std::vector<OracleInstance::Goal>& g, int n, int horizon)
      : map(m), goals(g), grid_n(n), T(horizon) {
    double ex = m.mask.extent_x, ey = m.mask.extent_y;
    centers.reserve(static_cast<std::size_t>(n) * n);
    for (int gy = 0; gy < n; ++gy)
      for (int gx = 0; gx < n; ++gx)
        centers.emplace_back((gx + 0.5) * ex / n, (gy + 0.5) * ey / n);
    clearance.resize(centers.size());
    for (std::size_t i = 0; i < centers.size(); ++i) clearance[i] = map.value(centers[i]);
    goal_margin.resize(goals.size());
    for (std::size_t j = 0; j < goals.size(); ++j) {
      goal_margin[j].resize(centers.size());
      for (std::size_t i = 0; i < centers.size(); ++i)
        goal_margin[j][i] = goals[j].region.radius - (centers[i] - goals[j].region.center).norm();
    }
  }

  int collect_mask(int cell, int t, double theta) const {
    int m = 0;
    for (std::size_t j = 0; j < goals.size(); ++j) {
      const auto& w = goals[j].window;
      if (t >= w.a && t <= std::min(w.b, T) && goal_margin[j][static_cast<std::size_t>(cell)] > theta)
        m |= 1 << j;
    }
    return m;
  }

  // Cell containing a world point, or -1 outside the grid.
  int cell_of(const Vec2& p) const {
    double ex = map.mask.extent_x, ey = map.mask.extent_y;
    int gx = static_cast<int>(std::floor(p.x() / ex * grid_n));
    int gy = static_cast<int>(std::floor(p.y() / ey * grid_n));
    if (gx < 0 || gx >= grid_n || gy < 0 || gy >= grid_n) return -1;
    return gy * grid_n + gx;
  }

  // feasible(theta): does a grid path with bottleneck robustness > theta
  // exist?  Exact for this instance class (bottleneck argument).
  std::optional<stl::Trajectory> solve(double theta, int start_cell) const {
    int cells = grid_n * grid_n;
    int masks = 1 << goals.size();
    int full = masks - 1;
    auto idx = [&](int c, int m) { return c * masks + m; };
    std::vector<std::uint8_t> cur(static_cast<std::size_t>(cells) * masks, 0);
    // parent cell and mask per (t, cell, mask) for witness reconstruction
    std::vector<std::vector<int>> parent(static_cast<std::size_t>(T) + 1);

    for (int c = 0; c < cells; ++c) {
      if (start_cell >= 0 && c != start_cell) continue;
      if (clearance[static_cast<std::size_t>(c)] <= theta) continue;
      cur[static_cast<std::size_t>(idx(c, collect_mask(c, 0, theta)))] = 1;
    }
    std::vector<std::uint8_t> nxt(cur.size());
    for (int t = 1; t <= T; ++t) {
      parent[static_cast<std::size_t>(t)].assign(cur.size(), -1);
      std::fill(nxt.begin(), nxt.end(), 0);
      for (int c = 0; c < cells; ++c) {
        int cx = c % grid_n, cy = c / grid_n;
        for (int m = 0; m < masks; ++m) {
          if (!cur[static_cast<std::size_t>(idx(c, m))]) continue;
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              int nx = cx + dx, ny = cy + dy;
              if (nx < 0 || nx >= grid_n || ny < 0 || ny >= grid_n) continue;
              int nc = ny * grid_n + nx;
              if (clearance[static_cast<std::size_t>(nc)] <= theta) continue;
              int nm = m | collect_mask(nc, t, theta);
              std::size_t key = static_cast<std::size_t>(idx(nc, nm));
              if (!nxt[key]) {
                nxt[key] = 1;
                parent[static_cast<std::size_t>(t)][key] = idx(c, m);
              }
            }
          }
        }
      }
      std::swap(cur, nxt);
    }

    // find a full-mask end state and walk parents back
    int end = -1;
    for (int c = 0; c < cells && end < 0; ++c)
      if (cur[static_cast<std::size_t>(idx(c, full))]) end = idx(c, full);
    if (end < 0) return std::nullopt;

    std::vector<int> cells_seq(static_cast<std::size_t>(T) + 1);
    int state = end;
    for (int t = T; t >= 1; --t) {
      cells_seq[static_cast<std::size_t>(t)] = state / masks;
      state = parent[static_cast<std::size_t>(t)][static_cast<std::size_t>(state)];
    }
    cells_seq[0] = state / masks;
    stl::Trajectory tau;
    for (int t = 0; t <= T; ++t)
      tau.waypoints.push_back(centers[static_cast<std::size_t>(cells_seq[static_cast<std::size_t>(t)])]);
    return tau;
  }

  std::vector<double> candidate_thetas() const {
    std::vector<double> cand;
    for (double c : clearance)
      if (std::isfinite(c)) cand.push_back(c);
    for (const auto& gm : goal_margin) cand.insert(cand.end(), gm.begin(), gm.end());
    cand.push_back(0.0);
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    return cand;
  }
};

}  // namespace detail

// Exhaustive product-space search over grid-waypoint sequences (kings moves
// plus stay) maximizing hard robustness. Returns a path only when a
// positive-robustness grid path exists; the returned path maximizes the
// bottleneck margin over the grid class. With a start given, paths are
// anchored there (g0 = x0), matching the trajectory convention.
inline std::optional<OracleResult> oracle_plan(const OracleInstance& inst, const MapData& map,
                                               int grid_n,
                                               std::optional<Vec2> start = std::nullopt) {
  if (grid_n > 12 || inst.horizon > 12) throw UsageError("oracle_plan: instance-size cap exceeded");
  for (const auto& b : inst.branches)
    if (b.size() > 3) throw UsageError("oracle_plan: instance-size cap exceeded");

  std::optional<OracleResult> best;
  for (const auto& branch : inst.branches) {
    detail::OracleDp dp(map, branch, grid_n, inst.horizon);
    int start_cell = -1;
    if (start) {
      start_cell = dp.cell_of(*start);
      if (start_cell < 0) continue;
    }
    // positive-robustness certificate first
    if (!dp.solve(0.0, start_cell)) continue;
    auto cand = dp.candidate_thetas();
    cand.erase(std::remove_if(cand.begin(), cand.end(), [](double c) { return c <= 0.0; }),
               cand.end());
    // binary search the largest candidate with a feasible path just below it
    int lo = 0, hi = static_cast<int>(cand.size()) - 1, found = -1;
    const double eps = 1e-12;
    while (lo <= hi) {
      int mid = (lo + hi) / 2;
      if (dp.solve(cand[static_cast<std::size_t>(mid)] - eps, start_cell)) {
        found = mid;
        lo = mid + 1;
      } else {
        hi = mid - 1;
      }
    }
    if (found < 0) continue;
    auto tau = dp.solve(cand[static_cast<std::size_t>(found)] - eps, start_cell);
    OracleResult res;
    res.path = *tau;
    res.robustness = cand[static_cast<std::size_t>(found)];
    if (!best || res.robustness > best->robustness) best = res;
  }
  return best;
}

inline std::optional<OracleResult> oracle_plan(const task::TaskSpec& t, const MapData& map,
                                               int grid_n, int horizon,
                                               std::optional<Vec2> start = std::nullopt) {
  OracleInstance inst = oracle_instance_for(t);
  inst.horizon = horizon;
  return oracle_plan(inst, map, grid_n, start);
}

}  // namespace stlplan::train

#endif
