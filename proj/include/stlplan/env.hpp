#ifndef STLPLAN_ENV_HPP
#define STLPLAN_ENV_HPP

#include "stlplan/rng.hpp"
#include "stlplan/sdf.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

namespace stlplan::sim {

using Vec2 = Eigen::Vector2d;
using sdf::MapData;
using sdf::OccupancyMask;

struct Disc {
  Vec2 center;
  double radius;
};

struct Rect {
  double x, y, w, h;  // world meters, bottom-left anchored
};

struct EnvConfig {
  double dt = 0.1;          // s
  double v_max = 0.22;      // m/s (TurtleBot3 Burger linear limit)
  double w_max = 2.84;      // rad/s (TurtleBot3 Burger angular limit)
  int rays = 36;
  double ray_range = 2.0;   // m
  double goal_tol = 0.1;    // m
  int max_steps = 400;
  double extent_x = 2.42;   // m
  double extent_y = 2.42;
  int mask_w = 64;
  int mask_h = 64;
  int obstacle_count = 5;
  double obs_min_size = 0.2;  // m
  double obs_max_size = 0.5;
  std::vector<Disc> keep_free;  // start/goal regions the generator must not cover
  std::uint64_t seed = 0;

  int obs_dim() const { return 4 + rays; }

  void validate() const {
    if (dt <= 0 || v_max <= 0 || w_max <= 0 || rays < 1 || ray_range <= 0 || goal_tol <= 0 ||
        max_steps < 1 || extent_x <= 0 || extent_y <= 0 || mask_w < 1 || mask_h < 1 ||
        obstacle_count < 0 || obs_min_size <= 0 || obs_max_size < obs_min_size)
      throw std::invalid_argument("invalid environment configuration");
  }
};

struct RobotState {
  double x = 0, y = 0, theta = 0;
  int clock = 0;

  Vec2 pos() const { return {x, y}; }
};

struct Action {
  double v = 0, omega = 0;
};

using Observation = Eigen::VectorXd;  // [x, y, sin, cos, rays...]

inline double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0) a += 2.0 * M_PI;
  return a - M_PI;
}

// ---- map generation ----

namespace detail {
inline bool rect_overlaps_disc(const Rect& r, const Disc& d, double margin) {
  double cx = std::clamp(d.center.x(), r.x, r.x + r.w);
  double cy = std::clamp(d.center.y(), r.y, r.y + r.h);
  double dx = d.center.x() - cx, dy = d.center.y() - cy;
  return dx * dx + dy * dy < (d.radius + margin) * (d.radius + margin);
}
}  // namespace detail

struct GeneratedMap {
  OccupancyMask mask;
  std::vector<Rect> rects;
};

// Random axis-aligned rectangular obstacles rasterized at pixel centers.
// Keep-free discs (start region, task regions) are never covered.
inline GeneratedMap generate_map(const EnvConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  RngStream rng(seed);
  GeneratedMap out;
  out.mask.width = cfg.mask_w;
  out.mask.height = cfg.mask_h;
  out.mask.extent_x = cfg.extent_x;
  out.mask.extent_y = cfg.extent_y;
  out.mask.occ.assign(static_cast<std::size_t>(cfg.mask_w) * cfg.mask_h, 0);

  const double margin = 0.05;
  for (int i = 0; i < cfg.obstacle_count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      Rect r;
      r.w = rng.uniform(cfg.obs_min_size, cfg.obs_max_size);
      r.h = rng.uniform(cfg.obs_min_size, cfg.obs_max_size);
      r.x = rng.uniform(0.0, cfg.extent_x - r.w);
      r.y = rng.uniform(0.0, cfg.extent_y - r.h);
      bool blocked = false;
      for (const auto& d : cfg.keep_free)
        if (detail::rect_overlaps_disc(r, d, margin)) {
          blocked = true;
          break;
        }
      if (blocked) continue;
      out.rects.push_back(r);
      placed = true;
    }
    if (!placed)
      throw std::runtime_error("generate_map: cannot place obstacle clear of reserved regions");
  }

  sdf::WorldTransform tf = sdf::WorldTransform::from(out.mask);
  for (int iy = 0; iy < cfg.mask_h; ++iy) {
    for (int ix = 0; ix < cfg.mask_w; ++ix) {
      Vec2 c = tf.pixel_center(ix, iy);
      for (const auto& r : out.rects) {
        if (c.x() >= r.x && c.x() <= r.x + r.w && c.y() >= r.y && c.y() <= r.y + r.h) {
          out.mask.set(ix, iy, true);
          break;
        }
      }
    }
  }
  return out;
}

// ---- kinematics, sensing, reward ----

// Unicycle Euler step. On collision (signed distance at the attempted
// position <= 0) the position reverts; heading still integrates, so the
// robot can turn in place to recover.
inline std::pair<RobotState, bool> step_state(const RobotState& s, Action a, const EnvConfig& cfg,
                                              const MapData& map) {
  a.v = std::clamp(a.v, -cfg.v_max, cfg.v_max);
  a.omega = std::clamp(a.omega, -cfg.w_max, cfg.w_max);
  RobotState n = s;
  n.x = s.x + a.v * std::cos(s.theta) * cfg.dt;
  n.y = s.y + a.v * std::sin(s.theta) * cfg.dt;
  n.theta = wrap_angle(s.theta + a.omega * cfg.dt);
  n.clock = s.clock + 1;
  bool collided = map.value(n.pos()) <= 0.0;
  if (collided) {
    n.x = s.x;
    n.y = s.y;
  }
  return {n, collided};
}

// Distance to the first obstacle pixel along one bearing, clipped to
// range. Marches at quarter-pixel pitch, sphere-skipping through wide-open
// space using the cached cell distances.
inline double ray_distance(const Vec2& origin, double bearing, const EnvConfig& cfg,
                           const MapData& map) {
  const double pitch = map.tf.pitch() / 4.0;
  const double diag = std::hypot(map.tf.sx, map.tf.sy);
  const Vec2 dir(std::cos(bearing), std::sin(bearing));
  double dist = 0.0;
  while (dist < cfg.ray_range) {
    Vec2 p = origin + dist * dir;
    auto [ix, iy] = map.tf.pixel_of(p);
    if (!map.tf.in_bounds(ix, iy) || map.mask.occupied(ix, iy)) return dist;
    // the map border acts as an obstacle too, so cap the skip by it
    double border = std::min(std::min(p.x(), map.mask.extent_x - p.x()),
                             std::min(p.y(), map.mask.extent_y - p.y()));
    double skip = map.has_cell_grid() ? map.cell_value(ix, iy) - 2.0 * diag : pitch;
    dist += std::max(pitch, std::min(skip, border));
  }
  return cfg.ray_range;
}

inline void fill_rays(const RobotState& s, const EnvConfig& cfg, const MapData& map,
                      Observation& obs, int offset) {
  for (int k = 0; k < cfg.rays; ++k) {
    double bearing = s.theta + 2.0 * M_PI * k / cfg.rays;
    obs[offset + k] = ray_distance(s.pos(), bearing, cfg, map);
  }
}

inline Observation observe(const RobotState& s, const EnvConfig& cfg, const MapData& map) {
  Observation obs(cfg.obs_dim());
  obs[0] = s.x;
  obs[1] = s.y;
  obs[2] = std::sin(s.theta);
  obs[3] = std::cos(s.theta);
  fill_rays(s, cfg, map, obs, 4);
  return obs;
}

inline Vec2 obs_position(const Observation& o) { return {o[0], o[1]}; }

// r = ||g - pos_t|| - ||g - pos_{t+1}||: positive iff the robot got closer.
inline double control_reward(const Observation& o_t, const Observation& o_next, const Vec2& g) {
  return (g - obs_position(o_t)).norm() - (g - obs_position(o_next)).norm();
}

// Owns robot state for one episode stream and audits every transition.
class Env {
 public:
  Env(std::shared_ptr<const MapData> map, EnvConfig cfg) : map_(std::move(map)), cfg_(std::move(cfg)) {
    cfg_.validate();
  }

  const EnvConfig& config() const { return cfg_; }
  const MapData& map() const { return *map_; }
  std::shared_ptr<const MapData> map_ptr() const { return map_; }
  const RobotState& state() const { return state_; }
  long steps_taken() const { return steps_taken_; }

  Observation reset(const Vec2& pos, double theta) {
    state_ = RobotState{pos.x(), pos.y(), wrap_angle(theta), 0};
    return observe(state_, cfg_, *map_);
  }

  struct StepResult {
    Observation obs;
    bool collided = false;
  };

  StepResult step(const Action& a) {
    auto [n, collided] = step_state(state_, a, cfg_, *map_);
    state_ = n;
    ++steps_taken_;
    return {observe(state_, cfg_, *map_), collided};
  }

 private:
  std::shared_ptr<const MapData> map_;
  EnvConfig cfg_;
  RobotState state_;
  long steps_taken_ = 0;
};

// Rejection-sample a point with clearance; throws after the retry budget.
inline Vec2 sample_free_point(const MapData& map, const EnvConfig& cfg, double clearance,
                              RngStream& rng, int max_tries = 1000) {
  for (int i = 0; i < max_tries; ++i) {
    Vec2 p(rng.uniform(0.0, cfg.extent_x), rng.uniform(0.0, cfg.extent_y));
    if (map.value(p) > clearance) return p;
  }
  throw std::runtime_error("sample_free_point: no free space found (map too crowded)");
}

}  // namespace stlplan::sim

#endif
