#ifndef STLPLAN_CONTROLLER_HPP
#define STLPLAN_CONTROLLER_HPP

#include "stlplan/checkpoint.hpp"
#include "stlplan/env.hpp"
#include "stlplan/log.hpp"
#include "stlplan/mlp.hpp"
#include "stlplan/planner.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <optional>
#include <vector>

namespace stlplan::ctrl {

using ad::Mat;
using ad::Tape;
using ad::Var;
using sdf::MapData;
using Vec2 = Eigen::Vector2d;

struct ControllerConfig {
  std::vector<int> pi_hidden{128, 128};
  std::vector<int> vf_hidden{128, 128};
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_ratio = 0.2;
  int epochs = 4;
  int minibatches = 4;
  double ent_coef = 0.01;
  double vf_coef = 0.5;
  double lr = 3e-4;
  double sigma_init = 0.5;        // exploration stddev in normalized action space
  int rollout_steps = 2048;
  int episode_max_steps = 150;

  void validate() const {
    if (!(gamma > 0 && gamma < 1) || !(clip_ratio > 0 && clip_ratio < 1) || gae_lambda < 0 ||
        gae_lambda > 1 || epochs < 1 || minibatches < 1 || lr <= 0 || sigma_init <= 0 ||
        rollout_steps < 8 || episode_max_steps < 1)
      throw std::invalid_argument("invalid controller configuration");
  }
};

// Goal-conditioned Gaussian policy in normalized action space plus a value
// head. Goals are fed as robot-frame (range, sin bearing, cos bearing).
class Controller {
 public:
  Controller(ControllerConfig cfg, const sim::EnvConfig& env_cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)), env_cfg_(env_cfg) {
    cfg_.validate();
    feat_dim_ = env_cfg.obs_dim() + 3;
    std::vector<int> pi_sizes{feat_dim_};
    for (int hsize : cfg_.pi_hidden) pi_sizes.push_back(hsize);
    pi_sizes.push_back(2);
    pi_ = ad::Mlp("pi", pi_sizes);
    std::vector<int> vf_sizes{feat_dim_};
    for (int hsize : cfg_.vf_hidden) vf_sizes.push_back(hsize);
    vf_sizes.push_back(1);
    vf_ = ad::Mlp("vf", vf_sizes);

    RngStream rng(seed);
    pi_.init_params(params_, rng);
    vf_.init_params(params_, rng);
    params_.add("log_sigma", Mat::Constant(1, 2, std::log(cfg_.sigma_init)));
  }

  const ControllerConfig& config() const { return cfg_; }
  const sim::EnvConfig& env_config() const { return env_cfg_; }
  ad::ParamSet& params() { return params_; }
  const ad::ParamSet& params() const { return params_; }
  int feature_dim() const { return feat_dim_; }

  // Normalized observation + robot-frame goal features.
  Mat features(const sim::Observation& obs, const Vec2& goal) const {
    Mat f(1, feat_dim_);
    f(0, 0) = 2.0 * obs[0] / env_cfg_.extent_x - 1.0;
    f(0, 1) = 2.0 * obs[1] / env_cfg_.extent_y - 1.0;
    f(0, 2) = obs[2];
    f(0, 3) = obs[3];
    for (int k = 0; k < env_cfg_.rays; ++k) f(0, 4 + k) = obs[4 + k] / env_cfg_.ray_range;
    Vec2 d = goal - sim::obs_position(obs);
    double range = d.norm();
    double bearing = std::atan2(d.y(), d.x());
    double heading = std::atan2(obs[2], obs[3]);
    f(0, 4 + env_cfg_.rays) = range;
    f(0, 5 + env_cfg_.rays) = std::sin(bearing - heading);
    f(0, 6 + env_cfg_.rays) = std::cos(bearing - heading);
    return f;
  }

  sim::Action to_action(const Mat& z) const {
    return {std::clamp(z(0, 0), -1.0, 1.0) * env_cfg_.v_max,
            std::clamp(z(0, 1), -1.0, 1.0) * env_cfg_.w_max};
  }

  struct ActResult {
    sim::Action action;
    Mat z;          // 1x2 pre-clip sample in normalized space
    double log_prob;
  };

  double log_prob_of(const Mat& mean, const Mat& z) const {
    const Mat& ls = params_.get("log_sigma");
    double lp = 0;
    for (int j = 0; j < 2; ++j) {
      double sig = std::exp(ls(0, j));
      double zz = (z(0, j) - mean(0, j)) / sig;
      lp += -0.5 * std::log(2 * M_PI) - ls(0, j) - 0.5 * zz * zz;
    }
    return lp;
  }

  ActResult act_from_features(const Mat& f, RngStream& rng) const {
    Mat mean = pi_.forward(f, params_);
    Mat sig = params_.get("log_sigma").array().exp();
    Mat z(1, 2);
    for (int j = 0; j < 2; ++j) z(0, j) = mean(0, j) + sig(0, j) * rng.normal();
    return {to_action(z), z, log_prob_of(mean, z)};
  }

  ActResult act(const sim::Observation& obs, const Vec2& goal, RngStream& rng) const {
    if (obs.size() != env_cfg_.obs_dim()) throw std::invalid_argument("observation dimension mismatch");
    return act_from_features(features(obs, goal), rng);
  }

  sim::Action act_mean(const sim::Observation& obs, const Vec2& goal) const {
    if (obs.size() != env_cfg_.obs_dim()) throw std::invalid_argument("observation dimension mismatch");
    return to_action(pi_.forward(features(obs, goal), params_));
  }

  double value(const Mat& feat) const { return vf_.forward(feat, params_)(0, 0); }

  void save(ad::Checkpoint& ck, const std::string& prefix = "controller.") {
    ad::pack_params(ck, params_, prefix);
    ad::pack_adam(ck, params_, prefix + "adam.");
  }

  void load(const ad::Checkpoint& ck, const std::string& prefix = "controller.") {
    ad::unpack_params(ck, params_, prefix);
    ad::unpack_adam(ck, params_, prefix + "adam.");
  }

  ad::Mlp& policy_net() { return pi_; }
  ad::Mlp& value_net() { return vf_; }
  const ad::Mlp& policy_net() const { return pi_; }
  const ad::Mlp& value_net() const { return vf_; }

 private:
  ControllerConfig cfg_;
  sim::EnvConfig env_cfg_;
  int feat_dim_ = 0;
  ad::ParamSet params_;
  ad::Mlp pi_, vf_;
};

// Per-step rollout storage; episodes are contiguous runs closed by either a
// terminal flag or a bootstrap value at truncation.
struct RolloutBuffer {
  std::vector<Mat> feats;       // each 1 x F
  std::vector<Mat> actions;     // each 1 x 2 (normalized, pre-clip)
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<bool> episode_end;
  std::vector<bool> terminal;        // true terminal (goal / collision)
  std::vector<double> bootstrap;     // V(s_next) when truncated

  std::size_t size() const { return feats.size(); }

  void push(Mat f, Mat a, double lp, double r, double v) {
    feats.push_back(std::move(f));
    actions.push_back(std::move(a));
    log_probs.push_back(lp);
    rewards.push_back(r);
    values.push_back(v);
    episode_end.push_back(false);
    terminal.push_back(false);
    bootstrap.push_back(0.0);
  }

  void close_episode(bool is_terminal, double boot_value) {
    episode_end.back() = true;
    terminal.back() = is_terminal;
    bootstrap.back() = boot_value;
  }

  // Discounted returns (value targets) and GAE advantages.
  void compute_targets(double gamma, double lam, std::vector<double>& returns,
                       std::vector<double>& advantages) const {
    std::size_t n = size();
    returns.assign(n, 0.0);
    advantages.assign(n, 0.0);
    double next_ret = 0, next_val = 0, next_adv = 0;
    for (std::size_t i = n; i-- > 0;) {
      if (episode_end[i]) {
        next_val = terminal[i] ? 0.0 : bootstrap[i];
        next_ret = next_val;
        next_adv = 0;
      }
      double delta = rewards[i] + gamma * next_val - values[i];
      next_adv = delta + gamma * lam * next_adv;
      next_ret = rewards[i] + gamma * next_ret;
      advantages[i] = next_adv;
      returns[i] = next_ret;
      next_val = values[i];
    }
  }
};

struct PpoStats {
  bool skipped = false;
  double policy_loss = 0;
  double value_loss = 0;
  double entropy = 0;
  double max_ratio_dev_first_minibatch = 0;  // |ratio - 1| before any update
};

inline void clamp_log_sigma(Controller& c) {
  Mat& ls = c.params().get("log_sigma");
  ls = ls.cwiseMax(-4.0).cwiseMin(0.5);
}

inline Var leaf_named(const Controller& c, const std::vector<Var>& leaves, const std::string& name) {
  for (std::size_t i = 0; i < c.params().count(); ++i)
    if (c.params().names()[i] == name) return leaves[i];
  throw std::logic_error("missing controller leaf: " + name);
}

// Clipped-surrogate PPO update over the buffer: GAE advantages, multiple
// minibatch epochs, entropy bonus, value regression on discounted returns.
inline PpoStats ppo_update(Controller& c, const RolloutBuffer& buf, RngStream& rng) {
  const ControllerConfig& cfg = c.config();
  std::size_t n = buf.size();
  if (n == 0) throw std::invalid_argument("ppo_update: empty buffer");

  std::vector<double> returns, advantages;
  buf.compute_targets(cfg.gamma, cfg.gae_lambda, returns, advantages);

  // advantage normalization
  double mean = 0, sq = 0;
  for (double a : advantages) mean += a;
  mean /= static_cast<double>(n);
  for (double a : advantages) sq += (a - mean) * (a - mean);
  double stddev = std::sqrt(sq / static_cast<double>(n));

  // degenerate buffer: no informative signal, skip with a notice
  double fvar = 0;
  for (std::size_t i = 1; i < n; ++i) fvar += (buf.feats[i] - buf.feats[0]).cwiseAbs().sum();
  if (stddev < 1e-12 && fvar < 1e-12) {
    STLPLAN_LOG_WARN("ppo_update skipped: degenerate buffer (identical states, zero advantage)");
    return {true, 0, 0, 0, 0};
  }
  double adv_scale = stddev > 1e-12 ? stddev : 1.0;
  for (double& a : advantages) a = (a - mean) / adv_scale;

  // pack the buffer into matrices once
  int fdim = c.feature_dim();
  Mat feats(static_cast<Eigen::Index>(n), fdim);
  Mat acts(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    feats.row(static_cast<Eigen::Index>(i)) = buf.feats[i].row(0);
    acts.row(static_cast<Eigen::Index>(i)) = buf.actions[i].row(0);
  }

  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);

  PpoStats stats;
  ad::AdamConfig adam{cfg.lr};
  bool first = true;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // seeded Fisher-Yates shuffle
    for (std::size_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i)))]);
    std::size_t mb_size = (n + static_cast<std::size_t>(cfg.minibatches) - 1) /
                          static_cast<std::size_t>(cfg.minibatches);
    for (int mb = 0; mb < cfg.minibatches; ++mb) {
      std::size_t lo = static_cast<std::size_t>(mb) * mb_size;
      if (lo >= n) break;
      std::size_t hi = std::min(n, lo + mb_size);
      Eigen::Index m = static_cast<Eigen::Index>(hi - lo);

      Mat mb_feat(m, fdim), mb_act(m, 2), mb_adv(m, 1), mb_ret(m, 1), mb_lp(m, 1);
      for (Eigen::Index r = 0; r < m; ++r) {
        int src = order[lo + static_cast<std::size_t>(r)];
        mb_feat.row(r) = feats.row(src);
        mb_act.row(r) = acts.row(src);
        mb_adv(r, 0) = advantages[static_cast<std::size_t>(src)];
        mb_ret(r, 0) = returns[static_cast<std::size_t>(src)];
        mb_lp(r, 0) = buf.log_probs[static_cast<std::size_t>(src)];
      }

      Tape tp;
      auto leaves = c.params().attach(tp);
      Var feat_in = tp.input(mb_feat);
      Var mu = c.policy_net().forward(tp, feat_in, c.params(), leaves);
      Var log_sigma = leaf_named(c, leaves, "log_sigma");
      Var logp_new = tp.row_sum(tp.gaussian_logpdf(tp.input(mb_act), mu, log_sigma));
      Var ratio = tp.exp(tp.sub(logp_new, tp.input(mb_lp)));
      if (first) {
        stats.max_ratio_dev_first_minibatch =
            (ratio.value().array() - 1.0).abs().maxCoeff();
        first = false;
      }
      Var adv_in = tp.input(mb_adv);
      Var surr = tp.minimum(tp.mul(ratio, adv_in),
                            tp.mul(tp.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio), adv_in));
      Var policy_loss = tp.neg(tp.mean(surr));

      Var v = c.value_net().forward(tp, feat_in, c.params(), leaves);
      Var value_loss = tp.mean(tp.square(tp.sub(v, tp.input(mb_ret))));

      // diagonal Gaussian entropy: sum(log sigma) + d/2 (1 + ln 2pi)
      Var entropy = tp.add_scalar(tp.sum(log_sigma), 0.5 * 2 * (1.0 + std::log(2 * M_PI)));

      Var loss = tp.add(policy_loss, tp.sub(tp.mul_scalar(value_loss, cfg.vf_coef),
                                            tp.mul_scalar(entropy, cfg.ent_coef)));
      if (!std::isfinite(loss.scalar())) throw NumericError("ppo loss is non-finite");
      tp.backward(loss);
      c.params().apply_gradients(leaves, adam);
      clamp_log_sigma(c);

      stats.policy_loss = policy_loss.scalar();
      stats.value_loss = value_loss.scalar();
      stats.entropy = entropy.scalar();
    }
  }
  return stats;
}

// ---- goal sampling (the planner induces the goal distribution) ----

struct GoalContext {
  std::shared_ptr<const MapData> map;
  Vec2 start;
  double start_theta;
  Vec2 goal;
};

enum class GoalMode { PlannerWaypoints, UniformRandom };

// Draws (map, start, goal) contexts either from the current planner's path
// distribution or uniformly over free space.
class GoalSampler {
 public:
  GoalSampler(GoalMode mode, const sim::EnvConfig& env_cfg, const plan::Planner* planner)
      : mode_(mode), env_cfg_(env_cfg), planner_(planner) {
    if (mode == GoalMode::PlannerWaypoints && !planner_)
      throw std::invalid_argument("planner-waypoint goal sampling requires a planner snapshot");
  }

  GoalContext sample(std::shared_ptr<const MapData> map, RngStream& rng) const {
    const double clearance = env_cfg_.goal_tol;
    for (int attempt = 0; attempt < 200; ++attempt) {
      if (mode_ == GoalMode::UniformRandom) {
        Vec2 s = sim::sample_free_point(*map, env_cfg_, clearance + 0.05, rng);
        Vec2 g = sim::sample_free_point(*map, env_cfg_, clearance, rng);
        return {map, s, rng.uniform(-M_PI, M_PI), g};
      }
      Vec2 x0 = sim::sample_free_point(*map, env_cfg_, clearance + 0.05, rng);
      plan::PlannedPath p = planner_->sample_path(map->mask, x0, rng);
      int idx = rng.uniform_int(0, static_cast<int>(p.waypoints.size()) - 2);
      Vec2 s = p.waypoints[static_cast<std::size_t>(idx)];
      Vec2 g = p.waypoints[static_cast<std::size_t>(idx) + 1];
      if (map->value(s) > clearance && map->value(g) > clearance)
        return {map, s, rng.uniform(-M_PI, M_PI), g};
    }
    throw std::runtime_error("sample_goals: retry budget exhausted (map too crowded)");
  }

  GoalMode mode() const { return mode_; }

 private:
  GoalMode mode_;
  sim::EnvConfig env_cfg_;
  const plan::Planner* planner_;
};

// ---- waypoint tracking (shared by plan_return and evaluation) ----

struct StepRecord {
  int t = 0;
  double x = 0, y = 0, theta = 0;
  double v = 0, omega = 0;
  double reward = 0;
  bool collided = false;
};

struct TrackResult {
  int steps = 0;
  bool reached_goal = false;   // final waypoint genuinely reached
  bool collided = false;       // any collision along the way
  std::vector<sim::RobotState> trace;
  std::vector<StepRecord> records;
};

// Follows waypoints sequentially: advance on arrival within goal_tol or
// after 3x the kinematic lower bound for the hop (plus a small turn margin),
// so a blocked waypoint cannot stall the whole episode.
inline TrackResult track_path(const Controller& c, sim::Env& env, const std::vector<Vec2>& waypoints,
                              int max_steps, RngStream* rng, bool record_trace = false) {
  const sim::EnvConfig& cfg = env.config();
  TrackResult out;
  if (waypoints.size() < 2) {
    out.reached_goal = true;
    return out;
  }
  sim::Observation obs = sim::observe(env.state(), cfg, env.map());
  if (record_trace) out.trace.push_back(env.state());

  std::size_t wp = 1;
  Vec2 pos = env.state().pos();
  auto hop_budget = [&](const Vec2& from, const Vec2& to) {
    double d = (to - from).norm();
    return 3 * static_cast<int>(std::ceil(d / (cfg.v_max * cfg.dt))) + 5;
  };
  int budget = hop_budget(pos, waypoints[wp]);

  while (out.steps < max_steps) {
    const Vec2& target = waypoints[wp];
    sim::Action a = rng ? c.act(obs, target, *rng).action : c.act_mean(obs, target);
    sim::Observation prev = obs;
    auto res = env.step(a);
    ++out.steps;
    --budget;
    obs = res.obs;
    if (res.collided) out.collided = true;
    if (record_trace) {
      out.trace.push_back(env.state());
      out.records.push_back({env.state().clock, env.state().x, env.state().y, env.state().theta,
                             a.v, a.omega, sim::control_reward(prev, obs, target), res.collided});
    }

    pos = env.state().pos();
    bool arrived = (pos - target).norm() <= cfg.goal_tol;
    if (arrived && wp + 1 == waypoints.size()) {
      out.reached_goal = true;
      return out;
    }
    if (arrived || budget <= 0) {
      if (wp + 1 == waypoints.size()) return out;  // final waypoint stalled out
      ++wp;
      budget = hop_budget(pos, waypoints[wp]);
    }
  }
  return out;
}

// r^h: negative steps to reach the path's end when following it with the
// controller; worst case is the full budget.
struct PlanReturn {
  double r = 0;             // raw negative steps
  double r_normalized = 0;  // divided by the step budget, in [-1, 0]
  bool reached = false;
  bool collided = false;
  long steps_taken = 0;     // env transitions actually consumed
};

inline PlanReturn plan_return(const plan::PlannedPath& path, const Controller& c,
                              std::shared_ptr<const MapData> map, double start_theta, int max_steps,
                              RngStream* rng) {
  sim::Env env(map, c.env_config());
  env.reset(path.waypoints.front(), start_theta);
  TrackResult tr = track_path(c, env, path.waypoints, max_steps, rng);
  PlanReturn out;
  out.reached = tr.reached_goal;
  out.collided = tr.collided;
  out.r = tr.reached_goal ? -static_cast<double>(tr.steps) : -static_cast<double>(max_steps);
  out.r_normalized = out.r / static_cast<double>(max_steps);
  out.steps_taken = env.steps_taken();
  return out;
}

}  // namespace stlplan::ctrl

#endif
