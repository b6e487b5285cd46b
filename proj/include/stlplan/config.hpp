#ifndef STLPLAN_CONFIG_HPP
#define STLPLAN_CONFIG_HPP

#include "stlplan/controller.hpp"
#include "stlplan/io.hpp"
#include "stlplan/planner.hpp"
#include "stlplan/tasks.hpp"
#include "stlplan/trainer.hpp"

#include <filesystem>
#include <set>
#include <string>

namespace stlplan::cfg {

inline constexpr int kConfigSchemaVersion = 1;

// Whole-run configuration parsed from a single JSON file. Unknown keys are
// rejected; relative paths resolve against the config file's directory.
struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  std::string task_name = "Cover";
  int horizon = 20;
  int loop_m = 3;
  std::string map_path;  // optional fixed mask instead of generated maps
  sim::EnvConfig env;
  plan::PlannerConfig planner;
  ctrl::ControllerConfig controller;
  train::ScheduleConfig schedule;
  plan::LagrangeState lagrange;
  std::string mode = "dscrl";  // dscrl | rs | rm
  bool aligned = true;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out_dir = "runs/out";
  std::vector<std::pair<std::string, sim::Disc>> custom_regions;
  std::string custom_formula;

  task::TaskSpec make_task() const {
    if (!custom_formula.empty() || !custom_regions.empty()) {
      task::TaskSpec t;
      t.name = task_name;
      t.horizon = horizon;
      t.loop_m = loop_m;
      t.regions = custom_regions;
      t.formula_text = custom_formula.empty()
                           ? "G[0," + std::to_string(horizon) + "] avoid_map"
                           : custom_formula;
      return t;
    }
    return task::make_task(task_name, horizon, loop_m);
  }

  plan::TrainMode train_mode() const {
    if (mode == "dscrl") return plan::TrainMode::DSCRL;
    if (mode == "rs") return plan::TrainMode::RS;
    if (mode == "rm") return plan::TrainMode::RM;
    throw UsageError("unknown training mode: " + mode + " (expected dscrl, rs, or rm)");
  }
};

namespace detail {

inline void check_keys(const io::json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw UsageError("unknown config key \"" + it.key() + "\" in " + where);
}

template <typename T>
void maybe(const io::json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

inline void parse_env(const io::json& j, sim::EnvConfig& e) {
  check_keys(j,
             {"dt", "v_max", "w_max", "rays", "ray_range", "goal_tol", "max_steps", "extent_m",
              "mask_w", "mask_h", "obstacle_count", "obs_min_size", "obs_max_size"},
             "env");
  maybe(j, "dt", e.dt);
  maybe(j, "v_max", e.v_max);
  maybe(j, "w_max", e.w_max);
  maybe(j, "rays", e.rays);
  maybe(j, "ray_range", e.ray_range);
  maybe(j, "goal_tol", e.goal_tol);
  maybe(j, "max_steps", e.max_steps);
  if (j.contains("extent_m")) {
    auto v = j.at("extent_m");
    if (!v.is_array() || v.size() != 2) throw UsageError("env.extent_m must be [m, n]");
    e.extent_x = v[0].get<double>();
    e.extent_y = v[1].get<double>();
  }
  maybe(j, "mask_w", e.mask_w);
  maybe(j, "mask_h", e.mask_h);
  maybe(j, "obstacle_count", e.obstacle_count);
  maybe(j, "obs_min_size", e.obs_min_size);
  maybe(j, "obs_max_size", e.obs_max_size);
}

inline void parse_planner(const io::json& j, plan::PlannerConfig& p) {
  check_keys(j,
             {"grid", "embed_dim", "enc_hidden", "dec_hidden", "horizon", "max_dev", "sigma_init",
              "lr"},
             "planner");
  maybe(j, "grid", p.grid);
  maybe(j, "embed_dim", p.embed_dim);
  maybe(j, "enc_hidden", p.enc_hidden);
  maybe(j, "dec_hidden", p.dec_hidden);
  maybe(j, "max_dev", p.max_dev);
  maybe(j, "sigma_init", p.sigma_init);
  maybe(j, "lr", p.lr);
}

inline void parse_controller(const io::json& j, ctrl::ControllerConfig& c) {
  check_keys(j,
             {"pi_hidden", "vf_hidden", "gamma", "gae_lambda", "clip_ratio", "epochs",
              "minibatches", "ent_coef", "vf_coef", "lr", "sigma_init", "rollout_steps",
              "episode_max_steps"},
             "controller");
  maybe(j, "pi_hidden", c.pi_hidden);
  maybe(j, "vf_hidden", c.vf_hidden);
  maybe(j, "gamma", c.gamma);
  maybe(j, "gae_lambda", c.gae_lambda);
  maybe(j, "clip_ratio", c.clip_ratio);
  maybe(j, "epochs", c.epochs);
  maybe(j, "minibatches", c.minibatches);
  maybe(j, "ent_coef", c.ent_coef);
  maybe(j, "vf_coef", c.vf_coef);
  maybe(j, "lr", c.lr);
  maybe(j, "sigma_init", c.sigma_init);
  maybe(j, "rollout_steps", c.rollout_steps);
  maybe(j, "episode_max_steps", c.episode_max_steps);
}

inline void parse_schedule(const io::json& j, train::ScheduleConfig& s) {
  check_keys(j,
             {"warmup_planner_updates", "controller_warmup_steps", "controller_phase_steps",
              "planner_phase_updates", "max_alternations", "budget_transitions", "probe_episodes",
              "probe_tol", "probe_history", "sr_threshold", "planner_batch", "track_max_steps",
              "beta0", "beta_max", "beta_double_every"},
             "schedule");
  maybe(j, "warmup_planner_updates", s.warmup_planner_updates);
  maybe(j, "controller_warmup_steps", s.controller_warmup_steps);
  maybe(j, "controller_phase_steps", s.controller_phase_steps);
  maybe(j, "planner_phase_updates", s.planner_phase_updates);
  maybe(j, "max_alternations", s.max_alternations);
  maybe(j, "budget_transitions", s.budget_transitions);
  maybe(j, "probe_episodes", s.probe_episodes);
  maybe(j, "probe_tol", s.probe_tol);
  maybe(j, "probe_history", s.probe_history);
  maybe(j, "sr_threshold", s.sr_threshold);
  maybe(j, "planner_batch", s.planner_batch);
  maybe(j, "track_max_steps", s.track_max_steps);
  maybe(j, "beta0", s.beta0);
  maybe(j, "beta_max", s.beta_max);
  maybe(j, "beta_double_every", s.beta_double_every);
}

inline void parse_lagrange(const io::json& j, plan::LagrangeState& l) {
  check_keys(j, {"lambda0", "eta", "delta", "lambda_min", "lambda_max"}, "lagrange");
  maybe(j, "lambda0", l.lambda);
  maybe(j, "eta", l.eta);
  maybe(j, "delta", l.delta);
  maybe(j, "lambda_min", l.lo);
  maybe(j, "lambda_max", l.hi);
}

}  // namespace detail

inline RunConfig parse_config(const io::json& j, const std::filesystem::path& base_dir) {
  detail::check_keys(j,
                     {"schema_version", "task", "map", "env", "planner", "controller", "schedule",
                      "lagrange", "mode", "aligned", "seed", "threads", "out_dir"},
                     "config root");
  RunConfig c;
  detail::maybe(j, "schema_version", c.schema_version);
  if (c.schema_version != kConfigSchemaVersion)
    throw UsageError("unsupported config schema_version (expected " +
                     std::to_string(kConfigSchemaVersion) + ")");
  if (j.contains("task")) {
    const auto& t = j.at("task");
    detail::check_keys(t, {"name", "horizon", "loop_m", "regions", "formula"}, "task");
    detail::maybe(t, "name", c.task_name);
    detail::maybe(t, "horizon", c.horizon);
    detail::maybe(t, "loop_m", c.loop_m);
    if (t.contains("regions")) {
      for (auto it = t.at("regions").begin(); it != t.at("regions").end(); ++it) {
        const auto& v = it.value();
        if (!v.is_array() || v.size() != 3)
          throw UsageError("task.regions entries must be [cx, cy, r]");
        c.custom_regions.push_back(
            {it.key(), {{v[0].get<double>(), v[1].get<double>()}, v[2].get<double>()}});
      }
    }
    detail::maybe(t, "formula", c.custom_formula);
  }
  if (j.contains("map")) {
    const auto& m = j.at("map");
    detail::check_keys(m, {"path", "extent_m"}, "map");
    if (m.contains("path")) {
      std::filesystem::path p = m.at("path").get<std::string>();
      c.map_path = (p.is_absolute() ? p : base_dir / p).string();
    }
    if (m.contains("extent_m")) {
      auto v = m.at("extent_m");
      if (!v.is_array() || v.size() != 2) throw UsageError("map.extent_m must be [m, n]");
      c.env.extent_x = v[0].get<double>();
      c.env.extent_y = v[1].get<double>();
    }
  }
  if (j.contains("env")) detail::parse_env(j.at("env"), c.env);
  if (j.contains("planner")) detail::parse_planner(j.at("planner"), c.planner);
  if (j.contains("controller")) detail::parse_controller(j.at("controller"), c.controller);
  if (j.contains("schedule")) detail::parse_schedule(j.at("schedule"), c.schedule);
  if (j.contains("lagrange")) detail::parse_lagrange(j.at("lagrange"), c.lagrange);
  detail::maybe(j, "mode", c.mode);
  detail::maybe(j, "aligned", c.aligned);
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  detail::maybe(j, "threads", c.threads);
  if (j.contains("out_dir")) {
    std::filesystem::path p = j.at("out_dir").get<std::string>();
    c.out_dir = (p.is_absolute() ? p : base_dir / p).string();
  }

  // consistency: planner horizon and task horizon are one number
  c.planner.horizon = c.horizon;
  c.planner.extent_x = c.env.extent_x;
  c.planner.extent_y = c.env.extent_y;
  c.env.validate();
  c.planner.validate();
  c.controller.validate();
  c.schedule.validate();
  c.train_mode();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(io::read_json(path), std::filesystem::absolute(path).parent_path());
}

}  // namespace stlplan::cfg

#endif
