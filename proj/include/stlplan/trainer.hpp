#ifndef STLPLAN_TRAINER_HPP
#define STLPLAN_TRAINER_HPP

#include "stlplan/controller.hpp"
#include "stlplan/env.hpp"
#include "stlplan/io.hpp"
#include "stlplan/log.hpp"
#include "stlplan/parallel.hpp"
#include "stlplan/planner.hpp"
#include "stlplan/tasks.hpp"

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace stlplan::train {

using ctrl::Controller;
using plan::Planner;
using plan::TrainMode;
using sdf::MapData;
using Vec2 = Eigen::Vector2d;

// ---- evaluation ----

struct EvalEpisode {
  int episode = 0;
  bool success = false;
  double robustness = 0;
  bool collided = false;
  bool reached = false;
  int steps = 0;
  double ttr_seconds = 0;
  std::vector<Vec2> waypoints;
};

struct EvalReport {
  double sr = 0;          // fraction of successful episodes
  double ttr_mean = 0;    // seconds, over successes only
  int n = 0;
  int successes = 0;
  std::vector<EvalEpisode> episodes;
};

// A plan succeeds iff its hard robustness is positive AND the controller
// tracks it collision-free AND the final waypoint is reached in budget.
inline EvalReport evaluate(const Planner& planner, const Controller& controller,
                           const task::TaskSpec& tsk, const sim::EnvConfig& env_cfg, int n,
                           std::uint64_t seed, int threads = 1, bool keep_paths = false) {
  if (n < 1) throw UsageError("evaluate: episode count must be >= 1");
  auto formula = task::parse_task(tsk, task::bindings_without_map(tsk));
  std::vector<EvalEpisode> eps(static_cast<std::size_t>(n));

  parallel_for(n, threads, [&](int i) {
    EvalEpisode& e = eps[static_cast<std::size_t>(i)];
    e.episode = i;
    RngStream rng(derive_seed(seed, "eval-ep", static_cast<std::uint64_t>(i)));
    auto gm = sim::generate_map(env_cfg, derive_seed(seed, "eval-map", static_cast<std::uint64_t>(i)));
    auto map = MapData::build(std::move(gm.mask));
    Vec2 x0 = sim::sample_free_point(*map, env_cfg, env_cfg.goal_tol + 0.05, rng);

    plan::PlannedPath path = planner.mode_path(map->mask, x0);
    auto table = task::bindings_for(tsk, map);
    stl::Trajectory tau{path.waypoints};
    e.robustness = stl::robustness(formula, tau, 0, table);

    sim::Env env(map, env_cfg);
    env.reset(x0, rng.uniform(-M_PI, M_PI));
    ctrl::TrackResult tr = ctrl::track_path(controller, env, path.waypoints, env_cfg.max_steps,
                                            nullptr /* deterministic */);
    e.collided = tr.collided;
    e.reached = tr.reached_goal;
    e.steps = tr.steps;
    e.ttr_seconds = tr.steps * env_cfg.dt;
    e.success = e.robustness > 0 && !e.collided && e.reached;
    if (keep_paths) e.waypoints = path.waypoints;
  });

  EvalReport rep;
  rep.n = n;
  rep.episodes = std::move(eps);
  double ttr_acc = 0;
  for (const auto& e : rep.episodes) {
    if (e.success) {
      ++rep.successes;
      ttr_acc += e.ttr_seconds;
    }
  }
  rep.sr = static_cast<double>(rep.successes) / n;
  rep.ttr_mean = rep.successes > 0 ? ttr_acc / rep.successes : 0.0;
  return rep;
}

// ---- planner inference latency ----

struct LatencyStats {
  double p50 = 0, p95 = 0, max = 0;
  int n = 0;
};

inline LatencyStats measure_plan_latency(const Planner& planner, const sim::EnvConfig& env_cfg,
                                         int n, std::uint64_t seed) {
  std::vector<double> secs;
  RngStream rng(derive_seed(seed, "latency"));
  for (int i = 0; i < n; ++i) {
    auto gm = sim::generate_map(env_cfg, derive_seed(seed, "lat-map", static_cast<std::uint64_t>(i)));
    Vec2 x0(rng.uniform(0.2, env_cfg.extent_x - 0.2), rng.uniform(0.2, env_cfg.extent_y - 0.2));
    auto t0 = std::chrono::steady_clock::now();
    ad::Mat emb = planner.embed(gm.mask);
    plan::PlannedPath p = planner.sample_path(gm.mask, x0, rng);
    auto t1 = std::chrono::steady_clock::now();
    (void)emb;
    (void)p;
    secs.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(secs.begin(), secs.end());
  LatencyStats st;
  st.n = n;
  st.p50 = secs[static_cast<std::size_t>(0.50 * (n - 1))];
  st.p95 = secs[static_cast<std::size_t>(0.95 * (n - 1))];
  st.max = secs.back();
  return st;
}

// ---- alternating training ----

struct ScheduleConfig {
  int warmup_planner_updates = 1500;   // lambda-phase updates before any alignment
  int controller_warmup_steps = 120000;
  int controller_phase_steps = 30000;
  int planner_phase_updates = 40;      // tracked updates per alternation
  int max_alternations = 60;
  long budget_transitions = 2000000;
  int probe_episodes = 100;
  double probe_tol = 0.05;             // SR stability window vs 3 probes earlier
  int probe_history = 3;
  double sr_threshold = 0.85;
  int planner_batch = 16;
  int track_max_steps = 500;
  double beta0 = 10.0;                 // smoothing temperature annealed x2
  double beta_max = 160.0;
  int beta_double_every = 200;

  void validate() const {
    if (warmup_planner_updates < 0 || controller_warmup_steps < 0 || controller_phase_steps < 0 ||
        planner_phase_updates < 0 || max_alternations < 0 || budget_transitions < 0 ||
        probe_episodes < 1 || planner_batch < 1 || track_max_steps < 1 || beta0 <= 0)
      throw std::invalid_argument("invalid schedule configuration");
  }

  double beta_at(long planner_updates) const {
    double b = beta0;
    for (long u = beta_double_every; u <= planner_updates && b < beta_max; u += beta_double_every)
      b = std::min(b * 2.0, beta_max);
    return b;
  }
};

struct ProbePoint {
  long transitions = 0;
  double sr = 0;
  double ttr = 0;
};

struct TrainLogRow {
  std::string phase;
  long transitions = 0;
  long planner_updates = 0;
  long controller_updates = 0;
  double lambda = 0;
  double beta = 0;
  double value = 0;  // phase-specific headline number (SR, mean return, phi)
};

struct TrainResult {
  long transitions = 0;
  std::vector<ProbePoint> probes;
  long transitions_to_threshold = -1;  // -1: threshold never reached
  bool converged = false;
  double final_sr = 0;
  double final_ttr = 0;
};

// Alternates controller phases (goals from the frozen planner) with planner
// phases (mode-specific loss, controller frozen) until the SR probe is
// stable or the transition budget runs out. The unaligned ablation trains
// the planner on the constraint term only and the controller on uniform
// random goals.
class AlignTrainer {
 public:
  AlignTrainer(task::TaskSpec tsk, sim::EnvConfig env_cfg, plan::PlannerConfig pcfg,
               ctrl::ControllerConfig ccfg, ScheduleConfig sched, plan::LagrangeState lagrange,
               TrainMode mode, bool aligned, std::uint64_t seed, int threads = 1)
      : task_(std::move(tsk)),
        env_cfg_(std::move(env_cfg)),
        sched_(std::move(sched)),
        mode_(mode),
        aligned_(aligned),
        seed_(seed),
        threads_(threads),
        lambda_(lagrange),
        planner_(pcfg, derive_seed(seed, "planner-init")),
        controller_(std::move(ccfg), with_regions(env_cfg_, task_), derive_seed(seed, "controller-init")) {
    sched_.validate();
    env_cfg_ = controller_.env_config();  // keep-free regions attached
    formula_ = task::parse_task(task_, task::bindings_without_map(task_));
    smoothing_.beta = sched_.beta0;
    planner_lr_ = pcfg.lr;
  }

  static sim::EnvConfig with_regions(sim::EnvConfig cfg, const task::TaskSpec& t) {
    cfg.keep_free = t.region_discs();
    return cfg;
  }

  const Planner& planner() const { return planner_; }
  Planner& planner() { return planner_; }
  const Controller& controller() const { return controller_; }
  Controller& controller() { return controller_; }
  const task::TaskSpec& task() const { return task_; }
  const sim::EnvConfig& env_config() const { return env_cfg_; }
  long transitions() const { return transitions_; }
  long audited_transitions() const { return audited_; }
  double lambda() const { return lambda_.lambda; }
  const std::vector<ProbePoint>& probes() const { return probes_; }

  using LogSink = std::function<void(const TrainLogRow&)>;
  using CheckpointSink = std::function<void(const AlignTrainer&, const std::string& phase)>;
  // per-PPO-update controller curve: update, mean_return, mean_episode_len, success_frac
  using CtrlCurveSink = std::function<void(long, double, double, double)>;
  void set_log_sink(LogSink s) { log_sink_ = std::move(s); }
  void set_checkpoint_sink(CheckpointSink s) { checkpoint_sink_ = std::move(s); }
  void set_ctrl_curve_sink(CtrlCurveSink s) { ctrl_curve_sink_ = std::move(s); }

  // One tracked-or-not planner update; returns env steps consumed.
  long planner_update(bool with_tracking) {
    int B = sched_.planner_batch;
    std::vector<plan::TrainPath> batch(static_cast<std::size_t>(B));
    std::vector<double> r_norm(static_cast<std::size_t>(B), 0.0);
    std::vector<double> hard(static_cast<std::size_t>(B), 0.0);
    std::vector<long> steps(static_cast<std::size_t>(B), 0);
    std::vector<stl::BindingTable> tables(static_cast<std::size_t>(B));

    smoothing_.beta = sched_.beta_at(planner_updates_);
    double diag = std::hypot(env_cfg_.extent_x, env_cfg_.extent_y);

    parallel_for(B, threads_, [&](int i) {
      auto iu = static_cast<std::uint64_t>(planner_updates_);
      auto ii = static_cast<std::uint64_t>(i);
      RngStream rng(derive_seed(seed_, "p-item", iu, ii));
      auto gm = sim::generate_map(env_cfg_, derive_seed(seed_, "p-map", iu, ii));
      auto map = MapData::build(std::move(gm.mask), with_tracking);
      Vec2 x0 = sim::sample_free_point(*map, env_cfg_, env_cfg_.goal_tol + 0.05, rng);
      auto& sample = batch[static_cast<std::size_t>(i)];
      sample = planner_.sample_train_path(map, x0, rng);
      tables[static_cast<std::size_t>(i)] = task::bindings_for(task_, map);

      stl::Trajectory tau{sample.path.waypoints};
      hard[static_cast<std::size_t>(i)] = stl::robustness(formula_, tau, 0, tables[static_cast<std::size_t>(i)]);
      sample.hard_robustness = hard[static_cast<std::size_t>(i)];
      if (mode_ == TrainMode::RS) {
        sample.shaped_value =
            stl::soft_robustness_value(formula_, tau, 0, tables[static_cast<std::size_t>(i)], smoothing_);
      } else if (mode_ == TrainMode::RM) {
        sample.shaped_value =
            plan::rm_reward(sample.path.waypoints, task::milestones_for(task_, *map), diag);
      }
      if (with_tracking) {
        ctrl::PlanReturn pr = ctrl::plan_return(sample.path, controller_, map,
                                                rng.uniform(-M_PI, M_PI), sched_.track_max_steps, &rng);
        r_norm[static_cast<std::size_t>(i)] = pr.r_normalized;
        steps[static_cast<std::size_t>(i)] = pr.steps_taken;
      }
    });

    long consumed = 0;
    if (with_tracking) {
      if (!baseline_.primed) {
        double m = 0;
        for (double r : r_norm) m += r;
        baseline_.value = m / B;
        baseline_.primed = true;
      }
      for (int i = 0; i < B; ++i) {
        batch[static_cast<std::size_t>(i)].advantage = r_norm[static_cast<std::size_t>(i)] - baseline_.value;
        consumed += steps[static_cast<std::size_t>(i)];
      }
      for (double r : r_norm) baseline_.update(r);
    }

    ad::Tape tp;
    auto leaves = planner_.params().attach(tp);
    plan::LossBreakdown stats;
    ad::Var loss = planner_.build_loss(
        tp, leaves, batch, mode_, formula_,
        [&](const plan::TrainPath& s) -> const stl::BindingTable& {
          return tables[static_cast<std::size_t>(&s - batch.data())];
        },
        smoothing_, lambda_.lambda, &stats);
    tp.backward(loss);
    planner_.params().apply_gradients(leaves, {planner_lr_});
    clamp_planner_sigma();

    double mean_hard = 0;
    for (double h : hard) mean_hard += h;
    mean_hard /= B;
    lambda_ = plan::update_lambda(lambda_, mean_hard);
    last_phi_ = stats.phi_term;
    last_mean_hard_ = mean_hard;

    ++planner_updates_;
    transitions_ += consumed;
    audited_ += consumed;
    return consumed;
  }

  void planner_phase(int updates, bool with_tracking, const char* phase_name) {
    for (int u = 0; u < updates; ++u) {
      if (budget_exhausted()) break;
      planner_update(with_tracking);
    }
    log_row(phase_name, last_mean_hard_);
  }

  // Collect one PPO buffer worth of episodes and update; returns steps.
  long controller_rollout_and_update(const ctrl::GoalSampler& sampler) {
    const ctrl::ControllerConfig& cc = controller_.config();
    ctrl::RolloutBuffer buf;
    long consumed = 0;
    double ep_return_acc = 0;
    int episodes = 0, successes = 0;

    while (buf.size() < static_cast<std::size_t>(cc.rollout_steps)) {
      auto ec = static_cast<std::uint64_t>(episode_counter_++);
      RngStream rng(derive_seed(seed_, "c-ep", ec));
      auto gm = sim::generate_map(env_cfg_, derive_seed(seed_, "c-map", ec));
      auto map = MapData::build(std::move(gm.mask));
      ctrl::GoalContext ctx = sampler.sample(map, rng);

      sim::Env env(map, env_cfg_);
      sim::Observation obs = env.reset(ctx.start, ctx.start_theta);
      double ep_ret = 0;
      bool terminal = false;
      for (int step = 0; step < cc.episode_max_steps; ++step) {
        ad::Mat feat = controller_.features(obs, ctx.goal);
        auto ar = controller_.act_from_features(feat, rng);
        double v = controller_.value(feat);
        auto res = env.step(ar.action);
        double r = sim::control_reward(obs, res.obs, ctx.goal);
        buf.push(std::move(feat), std::move(ar.z), ar.log_prob, r, v);
        obs = res.obs;
        ep_ret += r;

        bool reached = (env.state().pos() - ctx.goal).norm() <= env_cfg_.goal_tol;
        if (reached || res.collided) {
          buf.close_episode(true, 0.0);
          terminal = true;
          if (reached) ++successes;
          break;
        }
        if (buf.size() >= static_cast<std::size_t>(cc.rollout_steps)) break;
      }
      if (!terminal)
        buf.close_episode(false, controller_.value(controller_.features(obs, ctx.goal)));
      consumed += env.steps_taken();
      audited_ += env.steps_taken();
      ep_return_acc += ep_ret;
      ++episodes;
    }

    RngStream urng(derive_seed(seed_, "ppo", static_cast<std::uint64_t>(controller_updates_)));
    ctrl::ppo_update(controller_, buf, urng);
    ++controller_updates_;
    transitions_ += consumed;
    last_ctrl_return_ = episodes ? ep_return_acc / episodes : 0;
    last_ctrl_success_ = episodes ? static_cast<double>(successes) / episodes : 0;
    if (ctrl_curve_sink_)
      ctrl_curve_sink_(controller_updates_, last_ctrl_return_,
                       episodes ? static_cast<double>(consumed) / episodes : 0, last_ctrl_success_);
    return consumed;
  }

  void controller_phase(long steps_target, const char* phase_name) {
    ctrl::GoalSampler sampler(aligned_ ? ctrl::GoalMode::PlannerWaypoints : ctrl::GoalMode::UniformRandom,
                              env_cfg_, &planner_);
    long collected = 0;
    while (collected < steps_target && !budget_exhausted())
      collected += controller_rollout_and_update(sampler);
    log_row(phase_name, last_ctrl_return_);
  }

  ProbePoint probe() {
    EvalReport rep = evaluate(planner_, controller_, task_, env_cfg_, sched_.probe_episodes,
                              derive_seed(seed_, "probe", static_cast<std::uint64_t>(probe_counter_++)),
                              threads_);
    ProbePoint p{transitions_, rep.sr, rep.ttr_mean};
    probes_.push_back(p);
    if (threshold_at_ < 0 && rep.sr >= sched_.sr_threshold) threshold_at_ = transitions_;
    log_row("probe", rep.sr);
    if (checkpoint_sink_) checkpoint_sink_(*this, "probe");
    return p;
  }

  bool budget_exhausted() const { return transitions_ >= sched_.budget_transitions; }

  // SR stable within the tolerance vs the probe 3 probes earlier, at or
  // above the threshold.
  bool converged() const {
    std::size_t h = static_cast<std::size_t>(sched_.probe_history);
    if (probes_.size() < h + 1) return false;
    double now = probes_.back().sr;
    double before = probes_[probes_.size() - 1 - h].sr;
    return now >= sched_.sr_threshold && std::abs(now - before) <= sched_.probe_tol;
  }

  // Phases are indexed so a resumed run skips completed ones and replays
  // the remainder identically.
  TrainResult run() {
    if (sched_.budget_transitions == 0) {
      TrainResult res;
      res.transitions = 0;
      return res;  // budget 0: initial params returned unchanged
    }

    int pi = 0;
    auto do_phase = [&](const char* name, auto&& fn) {
      if (phase_index_ <= pi) {
        fn();
        phase_index_ = pi + 1;
        if (checkpoint_sink_) checkpoint_sink_(*this, name);
      }
      ++pi;
    };

    do_phase("planner-warmup",
             [&] { planner_phase(sched_.warmup_planner_updates, false, "planner-warmup"); });
    do_phase("controller-warmup",
             [&] { controller_phase(sched_.controller_warmup_steps, "controller-warmup"); });
    do_phase("probe", [&] { probe(); });

    for (int alt = 0; alt < sched_.max_alternations; ++alt) {
      if (alt >= alternations_entered_) {
        if (budget_exhausted() || converged()) break;
        alternations_entered_ = alt + 1;
      }
      do_phase("planner", [&] {
        planner_phase(sched_.planner_phase_updates, aligned_, aligned_ ? "planner" : "planner-unaligned");
      });
      do_phase("controller", [&] { controller_phase(sched_.controller_phase_steps, "controller"); });
      do_phase("probe", [&] { probe(); });
    }

    TrainResult res;
    res.transitions = transitions_;
    res.probes = probes_;
    res.transitions_to_threshold = threshold_at_;
    res.converged = converged();
    if (!probes_.empty()) {
      res.final_sr = probes_.back().sr;
      res.final_ttr = probes_.back().ttr;
    }
    return res;
  }

  // ---- checkpointing (resume support) ----

  void save_state(ad::Checkpoint& ck) {
    planner_.save(ck);
    controller_.save(ck);
    ck.meta["task"] = task_.name;
    ck.meta["mode"] = plan::mode_name(mode_);
    ck.meta["aligned"] = aligned_ ? "1" : "0";
    ck.meta["seed"] = std::to_string(seed_);
    ck.meta["transitions"] = std::to_string(transitions_);
    ck.meta["audited"] = std::to_string(audited_);
    ck.meta["planner_updates"] = std::to_string(planner_updates_);
    ck.meta["controller_updates"] = std::to_string(controller_updates_);
    ck.meta["episode_counter"] = std::to_string(episode_counter_);
    ck.meta["probe_counter"] = std::to_string(probe_counter_);
    ck.meta["lambda"] = fmt_double(lambda_.lambda);
    ck.meta["baseline_value"] = fmt_double(baseline_.value);
    ck.meta["baseline_primed"] = baseline_.primed ? "1" : "0";
    ck.meta["threshold_at"] = std::to_string(threshold_at_);
    ck.meta["phase_index"] = std::to_string(phase_index_);
    ck.meta["alternations_entered"] = std::to_string(alternations_entered_);
    io::json pj = io::json::array();
    for (const auto& p : probes_) pj.push_back({{"transitions", p.transitions}, {"sr", p.sr}, {"ttr", p.ttr}});
    ck.meta["probes"] = pj.dump();
  }

  void load_state(const ad::Checkpoint& ck) {
    planner_.load(ck);
    controller_.load(ck);
    transitions_ = std::stol(ck.meta_at("transitions", "0"));
    audited_ = std::stol(ck.meta_at("audited", "0"));
    planner_updates_ = std::stol(ck.meta_at("planner_updates", "0"));
    controller_updates_ = std::stol(ck.meta_at("controller_updates", "0"));
    episode_counter_ = std::stol(ck.meta_at("episode_counter", "0"));
    probe_counter_ = std::stol(ck.meta_at("probe_counter", "0"));
    lambda_.lambda = std::stod(ck.meta_at("lambda", "1"));
    baseline_.value = std::stod(ck.meta_at("baseline_value", "0"));
    baseline_.primed = ck.meta_at("baseline_primed", "0") == "1";
    threshold_at_ = std::stol(ck.meta_at("threshold_at", "-1"));
    phase_index_ = std::stoi(ck.meta_at("phase_index", "0"));
    alternations_entered_ = std::stoi(ck.meta_at("alternations_entered", "0"));
    probes_.clear();
    io::json pj = io::json::parse(ck.meta_at("probes", "[]"));
    for (const auto& p : pj)
      probes_.push_back({p.at("transitions").get<long>(), p.at("sr").get<double>(), p.at("ttr").get<double>()});
  }

  long planner_updates() const { return planner_updates_; }
  long controller_updates() const { return controller_updates_; }
  double smoothing_beta() const { return smoothing_.beta; }
  double last_ctrl_return() const { return last_ctrl_return_; }
  double last_ctrl_success() const { return last_ctrl_success_; }

 private:
  task::TaskSpec task_;
  sim::EnvConfig env_cfg_;
  ScheduleConfig sched_;
  TrainMode mode_;
  bool aligned_;
  std::uint64_t seed_;
  int threads_;
  plan::LagrangeState lambda_;
  Planner planner_;
  Controller controller_;
  stl::FormulaPtr formula_;
  stl::SmoothingConfig smoothing_{10.0};
  plan::RunningBaseline baseline_;
  double planner_lr_ = 3e-4;

  long transitions_ = 0;
  long audited_ = 0;
  long planner_updates_ = 0;
  long controller_updates_ = 0;
  long episode_counter_ = 0;
  long probe_counter_ = 0;
  long threshold_at_ = -1;
  int phase_index_ = 0;
  int alternations_entered_ = 0;
  double last_phi_ = 0, last_mean_hard_ = 0;
  double last_ctrl_return_ = 0, last_ctrl_success_ = 0;
  std::vector<ProbePoint> probes_;
  LogSink log_sink_;
  CheckpointSink checkpoint_sink_;
  CtrlCurveSink ctrl_curve_sink_;

  static std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

  void clamp_planner_sigma() {
    ad::Mat& ls = planner_.params().get("log_sigma");
    ls = ls.cwiseMax(-4.0).cwiseMin(0.5);
  }

  void log_row(const char* phase, double value) {
    if (!log_sink_) return;
    TrainLogRow row;
    row.phase = phase;
    row.transitions = transitions_;
    row.planner_updates = planner_updates_;
    row.controller_updates = controller_updates_;
    row.lambda = lambda_.lambda;
    row.beta = smoothing_.beta;
    row.value = value;
    log_sink_(row);
  }
};

}  // namespace stlplan::train

#endif
