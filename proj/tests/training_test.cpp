// Behavioral tests that involve actual training runs. Slower than the unit
// suite; kept in their own binary so ctest can schedule them separately.

#include "stlplan/oracle.hpp"
#include "stlplan/trainer.hpp"

#include "test_helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace stlplan;
using ctrl::Controller;
using ctrl::ControllerConfig;
using sdf::MapData;
using Vec2 = Eigen::Vector2d;

namespace {

sim::EnvConfig desk_env(int obstacles) {
  sim::EnvConfig e;
  e.obstacle_count = obstacles;
  return e;
}

std::shared_ptr<const MapData> empty_map(const sim::EnvConfig& e) {
  sdf::OccupancyMask m;
  m.width = e.mask_w;
  m.height = e.mask_h;
  m.extent_x = e.extent_x;
  m.extent_y = e.extent_y;
  m.occ.assign(static_cast<std::size_t>(m.width) * m.height, 0);
  return MapData::build(m);
}

// Train a goal-conditioned controller on goals from a fixed sampler.
void train_controller(Controller& c, const ctrl::GoalSampler& sampler, const sim::EnvConfig& e,
                      long steps_target, std::uint64_t seed) {
  const ControllerConfig& cc = c.config();
  long steps = 0, ep_counter = 0, update = 0;
  while (steps < steps_target) {
    ctrl::RolloutBuffer buf;
    while (buf.size() < static_cast<std::size_t>(cc.rollout_steps)) {
      RngStream rng(derive_seed(seed, "tc-ep", static_cast<std::uint64_t>(ep_counter)));
      auto gm = sim::generate_map(e, derive_seed(seed, "tc-map", static_cast<std::uint64_t>(ep_counter)));
      ++ep_counter;
      auto map = MapData::build(std::move(gm.mask));
      auto ctx = sampler.sample(map, rng);
      sim::Env env(map, e);
      auto obs = env.reset(ctx.start, ctx.start_theta);
      bool terminal = false;
      for (int s = 0; s < cc.episode_max_steps; ++s) {
        ad::Mat f = c.features(obs, ctx.goal);
        auto ar = c.act_from_features(f, rng);
        double v = c.value(f);
        auto res = env.step(ar.action);
        buf.push(std::move(f), std::move(ar.z), ar.log_prob, sim::control_reward(obs, res.obs, ctx.goal), v);
        obs = res.obs;
        bool reached = (env.state().pos() - ctx.goal).norm() <= e.goal_tol;
        if (reached || res.collided) {
          buf.close_episode(true, 0);
          terminal = true;
          break;
        }
        if (buf.size() >= static_cast<std::size_t>(cc.rollout_steps)) break;
      }
      if (!terminal) buf.close_episode(false, c.value(c.features(obs, ctx.goal)));
      steps += env.steps_taken();
    }
    RngStream urng(derive_seed(seed, "tc-ppo", static_cast<std::uint64_t>(update++)));
    ctrl::ppo_update(c, buf, urng);
  }
}

// Deterministic point-goal evaluation: fraction of start-goal distance the
// policy closes, averaged over episodes.
struct PointGoalScore {
  double mean_closed_frac = 0;
  double reach_rate = 0;
  double mean_return = 0;
};

PointGoalScore eval_point_goal(const Controller& c, const sim::EnvConfig& e,
                               const ctrl::GoalSampler& sampler, int episodes, std::uint64_t seed) {
  PointGoalScore out;
  for (int i = 0; i < episodes; ++i) {
    RngStream rng(derive_seed(seed, "pg-ep", static_cast<std::uint64_t>(i)));
    auto gm = sim::generate_map(e, derive_seed(seed, "pg-map", static_cast<std::uint64_t>(i)));
    auto map = MapData::build(std::move(gm.mask));
    auto ctx = sampler.sample(map, rng);
    sim::Env env(map, e);
    auto obs = env.reset(ctx.start, ctx.start_theta);
    double d0 = (ctx.goal - ctx.start).norm();
    double ep_ret = 0;
    for (int s = 0; s < c.config().episode_max_steps; ++s) {
      auto a = c.act_mean(obs, ctx.goal);
      auto res = env.step(a);
      ep_ret += sim::control_reward(obs, res.obs, ctx.goal);
      obs = res.obs;
      if ((env.state().pos() - ctx.goal).norm() <= e.goal_tol) break;
      if (res.collided) break;
    }
    bool reached = (env.state().pos() - ctx.goal).norm() <= e.goal_tol;
    out.mean_closed_frac += ep_ret / std::max(d0, 1e-9);
    out.reach_rate += reached ? 1.0 : 0.0;
    out.mean_return += ep_ret;
  }
  out.mean_closed_frac /= episodes;
  out.reach_rate /= episodes;
  out.mean_return /= episodes;
  return out;
}

}  // namespace

TEST_CASE("ppo closes at least 90% of the start-goal distance on empty maps") {
  // training smoke run over 5 seeds, 200k transitions each
  sim::EnvConfig e = desk_env(0);
  std::vector<double> fracs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Controller c(ControllerConfig{}, e, derive_seed(seed, "pg-init"));
    ctrl::GoalSampler sampler(ctrl::GoalMode::UniformRandom, e, nullptr);
    train_controller(c, sampler, e, 200000, seed);
    auto score = eval_point_goal(c, e, sampler, 100, 999);
    INFO("seed " << seed << " closed " << score.mean_closed_frac << " reach " << score.reach_rate);
    fracs.push_back(score.mean_closed_frac);
  }
  std::sort(fracs.begin(), fracs.end());
  double median = fracs[2];
  REQUIRE(median > 0.9);
}

TEST_CASE("a policy trained on one goal cluster scores lower on the other") {
  // two disjoint goal clusters; the optimal policy shifts with the goal
  // distribution, tested behaviorally
  sim::EnvConfig e = desk_env(0);

  struct ClusterSampler {
    Vec2 lo, hi;
    Vec2 start_lo, start_hi;
    ctrl::GoalContext sample(std::shared_ptr<const MapData> map, RngStream& rng) const {
      Vec2 s(rng.uniform(start_lo.x(), start_hi.x()), rng.uniform(start_lo.y(), start_hi.y()));
      Vec2 g(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()));
      return {std::move(map), s, rng.uniform(-M_PI, M_PI), g};
    }
  };
  // starts in the middle band; cluster A: far north, cluster B: far south
  ClusterSampler cluster_a{{0.3, 2.0}, {2.1, 2.3}, {0.3, 1.1}, {2.1, 1.3}};
  ClusterSampler cluster_b{{0.3, 0.1}, {2.1, 0.4}, {0.3, 1.1}, {2.1, 1.3}};

  auto train_on = [&](const ClusterSampler& cs, std::uint64_t seed) {
    Controller c(ControllerConfig{}, e, derive_seed(seed, "cl-init"));
    const ControllerConfig& cc = c.config();
    long steps = 0, ep = 0, upd = 0;
    while (steps < 80000) {
      ctrl::RolloutBuffer buf;
      while (buf.size() < static_cast<std::size_t>(cc.rollout_steps)) {
        RngStream rng(derive_seed(seed, "cl-ep", static_cast<std::uint64_t>(ep++)));
        auto map = empty_map(e);
        auto ctx = cs.sample(map, rng);
        sim::Env env(map, e);
        auto obs = env.reset(ctx.start, ctx.start_theta);
        bool terminal = false;
        for (int s = 0; s < cc.episode_max_steps; ++s) {
          ad::Mat f = c.features(obs, ctx.goal);
          auto ar = c.act_from_features(f, rng);
          double v = c.value(f);
          auto res = env.step(ar.action);
          buf.push(std::move(f), std::move(ar.z), ar.log_prob,
                   sim::control_reward(obs, res.obs, ctx.goal), v);
          obs = res.obs;
          if ((env.state().pos() - ctx.goal).norm() <= e.goal_tol || res.collided) {
            buf.close_episode(true, 0);
            terminal = true;
            break;
          }
          if (buf.size() >= static_cast<std::size_t>(cc.rollout_steps)) break;
        }
        if (!terminal) buf.close_episode(false, c.value(c.features(obs, ctx.goal)));
        steps += env.steps_taken();
      }
      RngStream urng(derive_seed(seed, "cl-ppo", static_cast<std::uint64_t>(upd++)));
      ctrl::ppo_update(c, buf, urng);
    }
    return c;
  };

  auto eval_on = [&](const Controller& c, const ClusterSampler& cs) {
    double total = 0;
    for (int i = 0; i < 60; ++i) {
      RngStream rng(derive_seed(4242, "cl-ev", static_cast<std::uint64_t>(i)));
      auto map = empty_map(e);
      auto ctx = cs.sample(map, rng);
      sim::Env env(map, e);
      auto obs = env.reset(ctx.start, ctx.start_theta);
      for (int s = 0; s < c.config().episode_max_steps; ++s) {
        auto res = env.step(c.act_mean(obs, ctx.goal));
        total += sim::control_reward(obs, res.obs, ctx.goal);
        obs = res.obs;
        if ((env.state().pos() - ctx.goal).norm() <= e.goal_tol || res.collided) break;
      }
    }
    return total / 60.0;
  };

  Controller pa = train_on(cluster_a, 31);
  Controller pb = train_on(cluster_b, 32);

  double a_on_a = eval_on(pa, cluster_a);
  double a_on_b = eval_on(pa, cluster_b);
  double b_on_b = eval_on(pb, cluster_b);
  double b_on_a = eval_on(pb, cluster_a);
  INFO("A: on-A " << a_on_a << " on-B " << a_on_b << " | B: on-B " << b_on_b << " on-A " << b_on_a);
  REQUIRE(a_on_a > a_on_b);
  REQUIRE(b_on_b > b_on_a);
}

TEST_CASE("trained controller drives forward toward a clear goal straight ahead") {
  sim::EnvConfig e = desk_env(0);
  Controller c(ControllerConfig{}, e, derive_seed(77, "fw-init"));
  ctrl::GoalSampler sampler(ctrl::GoalMode::UniformRandom, e, nullptr);
  train_controller(c, sampler, e, 60000, 77);

  auto map = empty_map(e);
  int forward = 0;
  for (int i = 0; i < 20; ++i) {
    double theta = 2 * M_PI * i / 20.0;
    sim::RobotState st{1.21, 1.21, sim::wrap_angle(theta), 0};
    auto obs = sim::observe(st, e, *map);
    Vec2 goal = st.pos() + 0.4 * Vec2(std::cos(theta), std::sin(theta));
    auto a = c.act_mean(obs, goal);
    if (a.v > 0) ++forward;
  }
  REQUIRE(forward >= 18);  // mean v > 0 with the goal straight ahead
}

TEST_CASE("warmed planner separates maps and concentrates goals near task regions") {
  auto tsk = task::make_task("Cover");
  sim::EnvConfig e = desk_env(5);
  e.keep_free = tsk.region_discs();
  plan::PlannerConfig pc;
  pc.sigma_init = 0.25;
  plan::Planner planner(pc, derive_seed(55, "wp-init"));
  auto formula = task::parse_task(tsk, task::bindings_without_map(tsk));
  plan::LagrangeState lam;
  lam.delta = 0.12;
  stl::SmoothingConfig smoothing{10.0};

  // short constraint-only warmup (a few hundred updates)
  for (int u = 0; u < 300; ++u) {
    int B = 16;
    std::vector<plan::TrainPath> batch(static_cast<std::size_t>(B));
    std::vector<stl::BindingTable> tables(static_cast<std::size_t>(B));
    std::vector<double> hard(static_cast<std::size_t>(B));
    parallel_for(B, 2, [&](int i) {
      RngStream rng(derive_seed(55, "wp-item", static_cast<std::uint64_t>(u), static_cast<std::uint64_t>(i)));
      auto gm = sim::generate_map(e, derive_seed(55, "wp-map", static_cast<std::uint64_t>(u), static_cast<std::uint64_t>(i)));
      auto map = MapData::build(std::move(gm.mask), false);
      Vec2 x0 = sim::sample_free_point(*map, e, e.goal_tol + 0.05, rng);
      batch[static_cast<std::size_t>(i)] = planner.sample_train_path(map, x0, rng);
      tables[static_cast<std::size_t>(i)] = task::bindings_for(tsk, batch[static_cast<std::size_t>(i)].map);
      stl::Trajectory tau{batch[static_cast<std::size_t>(i)].path.waypoints};
      hard[static_cast<std::size_t>(i)] = stl::robustness(formula, tau, 0, tables[static_cast<std::size_t>(i)]);
    });
    ad::Tape tp;
    auto leaves = planner.params().attach(tp);
    ad::Var loss = planner.build_loss(
        tp, leaves, batch, plan::TrainMode::DSCRL, formula,
        [&](const plan::TrainPath& s) -> const stl::BindingTable& {
          return tables[static_cast<std::size_t>(&s - batch.data())];
        },
        smoothing, lam.lambda);
    tp.backward(loss);
    planner.params().apply_gradients(leaves, {pc.lr});
    double mh = 0;
    for (double h : hard) mh += h;
    lam = plan::update_lambda(lam, mh / B);
  }

  SECTION("embeddings differ when one obstacle differs") {
    auto gm1 = sim::generate_map(e, 1234);
    auto gm2 = gm1;
    // add one obstacle block to the second map
    for (int iy = 5; iy < 10; ++iy)
      for (int ix = 5; ix < 10; ++ix) gm2.mask.set(ix, iy, true);
    double d = (planner.embed(gm1.mask) - planner.embed(gm2.mask)).norm();
    REQUIRE(d > 1e-6);
  }

  SECTION("planner-mode goals sit closer to the task regions than uniform goals") {
    auto dist_to_regions = [&](const Vec2& g) {
      double best = 1e9;
      for (const auto& d : tsk.region_discs()) best = std::min(best, (g - d.center).norm());
      return best;
    };
    double planner_mean = 0, uniform_mean = 0;
    int n = 200;
    ctrl::GoalSampler ps(ctrl::GoalMode::PlannerWaypoints, e, &planner);
    ctrl::GoalSampler us(ctrl::GoalMode::UniformRandom, e, nullptr);
    for (int i = 0; i < n; ++i) {
      RngStream rng(derive_seed(777, "gh", static_cast<std::uint64_t>(i)));
      auto gm = sim::generate_map(e, derive_seed(777, "ghm", static_cast<std::uint64_t>(i)));
      auto map = MapData::build(std::move(gm.mask));
      planner_mean += dist_to_regions(ps.sample(map, rng).goal);
      uniform_mean += dist_to_regions(us.sample(map, rng).goal);
    }
    planner_mean /= n;
    uniform_mean /= n;
    INFO("planner-goal mean region distance " << planner_mean << " vs uniform " << uniform_mean);
    REQUIRE(planner_mean < uniform_mean);
  }
}

TEST_CASE("plan_return approaches the kinematic lower bound on straight paths") {
  sim::EnvConfig e = desk_env(0);
  Controller c(ControllerConfig{}, e, derive_seed(88, "kin-init"));
  ctrl::GoalSampler sampler(ctrl::GoalMode::UniformRandom, e, nullptr);
  train_controller(c, sampler, e, 150000, 88);

  auto map = empty_map(e);
  // straight path along +x: 8 hops of 0.2 m
  plan::PlannedPath path;
  double L = 0;
  path.waypoints.push_back({0.3, 1.21});
  for (int i = 1; i <= 8; ++i) {
    path.waypoints.push_back({0.3 + 0.2 * i, 1.21});
    L += 0.2;
  }
  auto pr = ctrl::plan_return(path, c, map, 0.0, 500, nullptr);
  REQUIRE(pr.reached);
  double kinematic_steps = L / (e.v_max * e.dt);
  INFO("steps " << -pr.r << " vs kinematic bound " << kinematic_steps);
  REQUIRE(-pr.r <= 1.2 * kinematic_steps);
  REQUIRE(-pr.r >= kinematic_steps - 1);
}
