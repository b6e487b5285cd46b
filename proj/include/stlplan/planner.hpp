#ifndef STLPLAN_PLANNER_HPP
#define STLPLAN_PLANNER_HPP

#include "stlplan/checkpoint.hpp"
#include "stlplan/env.hpp"
#include "stlplan/mlp.hpp"
#include "stlplan/params.hpp"
#include "stlplan/rng.hpp"
#include "stlplan/sdf.hpp"
#include "stlplan/stl_semantics.hpp"
#include "stlplan/tape.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

namespace stlplan::plan {

using ad::Mat;
using ad::Tape;
using ad::Var;
using sdf::MapData;
using Vec2 = Eigen::Vector2d;

enum class TrainMode { DSCRL, RS, RM };

inline const char* mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::DSCRL: return "dscrl";
    case TrainMode::RS: return "rs";
    case TrainMode::RM: return "rm";
  }
  return "?";
}

struct PlannerConfig {
  int grid = 32;            // occupancy downsample resolution
  int embed_dim = 64;
  std::vector<int> enc_hidden{256};
  std::vector<int> dec_hidden{256, 256, 256};
  int horizon = 20;         // T: waypoints beyond the start
  double max_dev = 0.3;     // max per-axis deviation between subgoals (m)
  double sigma_init = 0.4;  // initial stddev of the raw-sample distribution
  double extent_x = 2.42;   // world rectangle, for input normalization
  double extent_y = 2.42;
  double lr = 3e-4;

  void validate() const {
    if (grid < 1 || embed_dim < 1 || horizon < 1 || max_dev <= 0 || sigma_init <= 0 ||
        extent_x <= 0 || extent_y <= 0 || lr <= 0)
      throw std::invalid_argument("invalid planner configuration");
  }
};

// Lagrangian multiplier on the specification constraint, updated toward a
// target robustness margin delta.
struct LagrangeState {
  double lambda = 1.0;
  double eta = 0.05;
  double delta = 0.05;
  double lo = 0.0;
  double hi = 100.0;
};

inline LagrangeState update_lambda(LagrangeState s, double mean_robustness) {
  s.lambda = std::clamp(s.lambda + s.eta * (s.delta - mean_robustness), s.lo, s.hi);
  return s;
}

struct PlannedPath {
  std::vector<Vec2> waypoints;  // T+1 points, waypoints[0] = x0
  Mat raw_u;                    // T x 2 pre-tanh samples
  double log_prob = 0.0;
};

// One sampled path plus everything needed to rebuild its training graph.
struct TrainPath {
  std::shared_ptr<const MapData> map;
  Vec2 x0;
  Mat grid_feat;  // 1 x grid^2
  Mat xi;         // T x 2 fixed noise (reparameterization)
  PlannedPath path;
  double advantage = 0.0;   // baseline-subtracted normalized return (constant in the loss)
  double shaped_value = 0.0;  // RS: soft robustness value; RM: milestone reward
  double hard_robustness = 0.0;
};

struct LossBreakdown {
  double total = 0;
  double pg_term = 0;      // mean log-prob * advantage
  double phi_term = 0;     // mean soft robustness (DSCRL) / shaped value (RS, RM)
};

// Stochastic planning policy: grid encoder -> map embedding E, MLP decoder
// on [E; x0] -> per-step deviation means, tanh-squashed Gaussian sampling,
// deviations integrated into a path.
class Planner {
 public:
  Planner(PlannerConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::vector<int> enc_sizes;
    enc_sizes.push_back(cfg_.grid * cfg_.grid);
    for (int hsize : cfg_.enc_hidden) enc_sizes.push_back(hsize);
    enc_sizes.push_back(cfg_.embed_dim);
    enc_ = ad::Mlp("enc", enc_sizes);

    std::vector<int> dec_sizes;
    dec_sizes.push_back(cfg_.embed_dim + 2);
    for (int hsize : cfg_.dec_hidden) dec_sizes.push_back(hsize);
    dec_sizes.push_back(2 * cfg_.horizon);
    dec_ = ad::Mlp("dec", dec_sizes);

    RngStream rng(seed);
    enc_.init_params(params_, rng);
    dec_.init_params(params_, rng);
    params_.add("log_sigma", Mat::Constant(1, 2, std::log(cfg_.sigma_init)));
  }

  const PlannerConfig& config() const { return cfg_; }
  ad::ParamSet& params() { return params_; }
  const ad::ParamSet& params() const { return params_; }

  // Occupancy fraction per grid cell, flattened row-major.
  Mat grid_features(const sdf::OccupancyMask& mask) const {
    int g = cfg_.grid;
    Mat out(1, g * g);
    for (int gy = 0; gy < g; ++gy) {
      int y0 = gy * mask.height / g, y1 = (gy + 1) * mask.height / g;
      if (y1 == y0) y1 = y0 + 1;
      for (int gx = 0; gx < g; ++gx) {
        int x0 = gx * mask.width / g, x1 = (gx + 1) * mask.width / g;
        if (x1 == x0) x1 = x0 + 1;
        double acc = 0;
        for (int iy = y0; iy < y1 && iy < mask.height; ++iy)
          for (int ix = x0; ix < x1 && ix < mask.width; ++ix)
            acc += mask.occupied(ix, iy) ? 1.0 : 0.0;
        out(0, gy * g + gx) = acc / ((y1 - y0) * (x1 - x0));
      }
    }
    return out;
  }

  // occupancy fractions are sparse and small; the encoder sees a centered,
  // amplified version so the map signal is alive at initialization
  static Mat enc_input(const Mat& grid_feat) { return 4.0 * grid_feat.array() - 0.2; }

  Mat embed(const sdf::OccupancyMask& mask) const {
    return enc_.forward(enc_input(grid_features(mask)), params_);
  }

  Mat x0_features(const Vec2& x0) const {
    Mat f(1, 2);
    f(0, 0) = 2.0 * x0.x() / cfg_.extent_x - 1.0;
    f(0, 1) = 2.0 * x0.y() / cfg_.extent_y - 1.0;
    return f;
  }

  // Decoder means for the deviation sequence, T x 2.
  Mat decode_means(const Mat& embedding, const Vec2& x0) const {
    Mat in(1, embedding.cols() + 2);
    in << embedding, x0_features(x0);
    Mat flat = dec_.forward(in, params_);
    Mat mu(cfg_.horizon, 2);
    for (int t = 0; t < cfg_.horizon; ++t) {
      mu(t, 0) = flat(0, 2 * t);
      mu(t, 1) = flat(0, 2 * t + 1);
    }
    return mu;
  }

  Mat sigma_row() const { return params_.get("log_sigma").array().exp(); }

  static constexpr double kTanhEps = 1e-6;

  // log pi(u) with the tanh change-of-variables correction.
  double log_prob_of_raw(const Mat& mu, const Mat& u) const {
    const Mat& ls = params_.get("log_sigma");
    double lp = 0;
    for (Eigen::Index t = 0; t < u.rows(); ++t) {
      for (Eigen::Index j = 0; j < 2; ++j) {
        double sig = std::exp(ls(0, j));
        double z = (u(t, j) - mu(t, j)) / sig;
        lp += -0.5 * std::log(2 * M_PI) - ls(0, j) - 0.5 * z * z;
        double th = std::tanh(u(t, j));
        lp -= std::log(1.0 - th * th + kTanhEps);
      }
    }
    return lp;
  }

  PlannedPath integrate(const Vec2& x0, const Mat& u) const {
    PlannedPath p;
    p.raw_u = u;
    p.waypoints.reserve(static_cast<std::size_t>(cfg_.horizon) + 1);
    p.waypoints.push_back(x0);
    Vec2 g = x0;
    for (int t = 0; t < cfg_.horizon; ++t) {
      g.x() += std::tanh(u(t, 0)) * cfg_.max_dev;
      g.y() += std::tanh(u(t, 1)) * cfg_.max_dev;
      p.waypoints.push_back(g);
    }
    return p;
  }

  PlannedPath sample_path(const sdf::OccupancyMask& mask, const Vec2& x0, RngStream& rng) const {
    Mat mu = decode_means(embed(mask), x0);
    if (!mu.allFinite()) throw NumericError("planner decoder produced non-finite output");
    Mat sig = sigma_row();
    Mat u(cfg_.horizon, 2);
    for (int t = 0; t < cfg_.horizon; ++t)
      for (int j = 0; j < 2; ++j) u(t, j) = mu(t, j) + sig(0, j) * rng.normal();
    PlannedPath p = integrate(x0, u);
    p.log_prob = log_prob_of_raw(mu, u);
    return p;
  }

  // Deterministic path through the means (the sigma -> 0 limit).
  PlannedPath mode_path(const sdf::OccupancyMask& mask, const Vec2& x0) const {
    Mat mu = decode_means(embed(mask), x0);
    if (!mu.allFinite()) throw NumericError("planner decoder produced non-finite output");
    PlannedPath p = integrate(x0, mu);
    p.log_prob = log_prob_of_raw(mu, mu);
    return p;
  }

  TrainPath sample_train_path(std::shared_ptr<const MapData> map, const Vec2& x0,
                              RngStream& rng) const {
    TrainPath tp;
    tp.map = std::move(map);
    tp.x0 = x0;
    tp.grid_feat = grid_features(tp.map->mask);
    Mat mu = decode_means(enc_.forward(enc_input(tp.grid_feat), params_), x0);
    if (!mu.allFinite()) throw NumericError("planner decoder produced non-finite output");
    Mat sig = sigma_row();
    tp.xi = Mat(cfg_.horizon, 2);
    Mat u(cfg_.horizon, 2);
    for (int t = 0; t < cfg_.horizon; ++t) {
      for (int j = 0; j < 2; ++j) {
        tp.xi(t, j) = rng.normal();
        u(t, j) = mu(t, j) + sig(0, j) * tp.xi(t, j);
      }
    }
    tp.path = integrate(x0, u);
    tp.path.log_prob = log_prob_of_raw(mu, u);
    return tp;
  }

  // Same, with zero noise (mode path as a training sample).
  TrainPath mode_train_path(std::shared_ptr<const MapData> map, const Vec2& x0) const {
    TrainPath tp;
    tp.map = std::move(map);
    tp.x0 = x0;
    tp.grid_feat = grid_features(tp.map->mask);
    tp.xi = Mat::Zero(cfg_.horizon, 2);
    Mat mu = decode_means(enc_.forward(enc_input(tp.grid_feat), params_), x0);
    tp.path = integrate(x0, mu);
    tp.path.log_prob = log_prob_of_raw(mu, mu);
    return tp;
  }

  // ---- training graph ----

  struct PathGraph {
    Var log_prob;             // log pi of the stored raw sample (REINFORCE view)
    Var soft_robustness;      // smoothed spec value on reparameterized waypoints
    stl::DiffTrajectory traj; // waypoints on the tape
  };

  // Rebuilds the sampled path on a tape. The raw sample enters twice: as a
  // constant for the log-probability term, and reparameterized
  // (mu + sigma * xi with xi fixed) so the specification term can
  // backpropagate into the decoder and encoder.
  PathGraph build_path_graph(Tape& tp, const std::vector<Var>& leaves, const TrainPath& sample,
                             const stl::FormulaPtr& formula, const stl::BindingTable& bindings,
                             stl::SmoothingConfig smoothing, bool need_soft) const {
    Var grid_in = tp.input(enc_input(sample.grid_feat));
    Var emb = enc_.forward(tp, grid_in, params_, leaves);
    Var dec_in = tp.concat_cols(emb, tp.input(x0_features(sample.x0)));
    Var mu = tp.reshape(dec_.forward(tp, dec_in, params_, leaves), cfg_.horizon, 2);

    Var log_sigma = leaf_named(leaves, "log_sigma");
    Var sigma = tp.exp(log_sigma);

    // REINFORCE view: log pi(u_const)
    Var u_const = tp.input(sample.path.raw_u);
    Var lp = tp.sum(tp.gaussian_logpdf(u_const, mu, log_sigma));
    Var th_c = tp.tanh(u_const);
    Var jac = tp.sum(tp.log(tp.add_scalar(tp.neg(tp.square(th_c)), 1.0 + kTanhEps)));
    Var log_prob = tp.sub(lp, jac);

    PathGraph out;
    out.log_prob = log_prob;

    if (need_soft) {
      // reparameterized view: waypoints as a function of the parameters
      Var u_rep = tp.add(mu, tp.mul(tp.input(sample.xi), sigma));
      Var dev = tp.mul_scalar(tp.tanh(u_rep), cfg_.max_dev);
      Var offsets = tp.cumsum_rows(dev);
      out.traj.waypoints.emplace_back(tp.input(sample.x0.x()), tp.input(sample.x0.y()));
      for (int t = 0; t < cfg_.horizon; ++t) {
        Var gx = tp.add_scalar(tp.get_element(offsets, t, 0), sample.x0.x());
        Var gy = tp.add_scalar(tp.get_element(offsets, t, 1), sample.x0.y());
        out.traj.waypoints.emplace_back(gx, gy);
      }
      out.soft_robustness = stl::soft_robustness(tp, formula, out.traj, 0, bindings, smoothing);
    }
    return out;
  }

  // bindings_for(path) supplies the per-map predicate table (regions plus
  // that path's avoid_map).
  template <typename BindingsFor>
  Var build_loss(Tape& tp, const std::vector<Var>& leaves, const std::vector<TrainPath>& batch,
                 TrainMode mode, const stl::FormulaPtr& formula, BindingsFor&& bindings_for,
                 stl::SmoothingConfig smoothing, double lambda, LossBreakdown* stats = nullptr) const {
    if (batch.empty()) throw std::invalid_argument("empty planner batch");
    // RS/RM shaped rewards are centered by their batch mean (their baseline),
    // so a constant shaped signal contributes no gradient.
    double shaped_mean = 0;
    for (const auto& sample : batch) shaped_mean += sample.shaped_value;
    shaped_mean /= static_cast<double>(batch.size());

    std::vector<Var> terms;
    double pg_acc = 0, phi_acc = 0;
    for (const auto& sample : batch) {
      const stl::BindingTable& bindings = bindings_for(sample);
      bool need_soft = mode == TrainMode::DSCRL;
      PathGraph g = build_path_graph(tp, leaves, sample, formula, bindings, smoothing, need_soft);
      Var term;
      if (mode == TrainMode::DSCRL) {
        // L = -E[ logpi * adv + lambda * phi ]; phi differentiated analytically
        term = tp.add(tp.mul_scalar(g.log_prob, sample.advantage),
                      tp.mul_scalar(g.soft_robustness, lambda));
        phi_acc += g.soft_robustness.scalar();
      } else {
        // RS / RM: the shaped value rides inside the policy-gradient reward
        // as a constant; nothing backpropagates through the waypoints.
        term = tp.mul_scalar(g.log_prob,
                             sample.advantage + lambda * (sample.shaped_value - shaped_mean));
        phi_acc += sample.shaped_value;
      }
      pg_acc += g.log_prob.scalar() * sample.advantage;
      terms.push_back(term);
    }
    Var loss = tp.neg(tp.mean(tp.concat_scalars(terms)));
    if (stats) {
      stats->total = loss.scalar();
      stats->pg_term = pg_acc / static_cast<double>(batch.size());
      stats->phi_term = phi_acc / static_cast<double>(batch.size());
    }
    if (!std::isfinite(loss.scalar())) throw NumericError("planner loss is non-finite");
    return loss;
  }

  void save(ad::Checkpoint& ck, const std::string& prefix = "planner.") {
    ad::pack_params(ck, params_, prefix);
    ad::pack_adam(ck, params_, prefix + "adam.");
  }

  void load(const ad::Checkpoint& ck, const std::string& prefix = "planner.") {
    ad::unpack_params(ck, params_, prefix);
    ad::unpack_adam(ck, params_, prefix + "adam.");
  }

 private:
  PlannerConfig cfg_;
  ad::ParamSet params_;
  ad::Mlp enc_, dec_;

  Var leaf_named(const std::vector<Var>& leaves, const std::string& name) const {
    for (std::size_t i = 0; i < params_.count(); ++i)
      if (params_.names()[i] == name) return leaves[i];
    throw std::logic_error("missing leaf: " + name);
  }
};

// Reward-machine milestone shaping: tier for ordered progression plus a
// normalized pull toward the first unreached milestone.
inline double rm_reward(const std::vector<Vec2>& waypoints, const std::vector<sim::Disc>& milestones,
                        double norm_scale) {
  if (milestones.empty()) throw std::invalid_argument("rm_reward: empty milestone list");
  std::size_t pos = 0;
  std::size_t reached = 0;
  for (const auto& m : milestones) {
    bool hit = false;
    for (std::size_t i = pos; i < waypoints.size(); ++i) {
      if ((waypoints[i] - m.center).norm() <= m.radius) {
        hit = true;
        pos = i;
        break;
      }
    }
    if (!hit) break;
    ++reached;
  }
  double tier = static_cast<double>(reached);
  if (reached == milestones.size()) return tier;
  const auto& next = milestones[reached];
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = pos; i < waypoints.size(); ++i)
    best = std::min(best, (waypoints[i] - next.center).norm());
  return tier - best / norm_scale;
}

// Running exponential-moving-average baseline for the planner return.
struct RunningBaseline {
  double value = 0.0;
  double decay = 0.99;
  bool primed = false;

  void update(double x) {
    if (!primed) {
      value = x;
      primed = true;
    } else {
      value = decay * value + (1.0 - decay) * x;
    }
  }
};

}  // namespace stlplan::plan

#endif
