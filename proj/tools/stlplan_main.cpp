// stlplan: STL-constrained planning and control on 2D raster worlds.
//
// Subcommands: monitor, train, plan, eval, latency, gen-maps.
// Exit codes: 0 ok/satisfied, 1 unsatisfied (monitor), 2 usage/config,
// 3 I/O, 4 numeric abort.

#include "stlplan/config.hpp"
#include "stlplan/controller.hpp"
#include "stlplan/io.hpp"
#include "stlplan/oracle.hpp"
#include "stlplan/planner.hpp"
#include "stlplan/svg.hpp"
#include "stlplan/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

namespace fs = std::filesystem;
using namespace stlplan;
using cfg::RunConfig;
using Vec2 = Eigen::Vector2d;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out_dir;
};

RunConfig load_run_config(const GlobalOpts& g) {
  if (g.config_path.empty()) throw UsageError("--config is required for this command");
  RunConfig c = cfg::load_config(g.config_path);
  if (g.seed) c.seed = *g.seed;
  if (g.threads) c.threads = *g.threads;
  if (g.out_dir) c.out_dir = *g.out_dir;
  return c;
}

std::string arch_fingerprint(const RunConfig& c) {
  io::json a;
  a["grid"] = c.planner.grid;
  a["embed_dim"] = c.planner.embed_dim;
  a["enc_hidden"] = c.planner.enc_hidden;
  a["dec_hidden"] = c.planner.dec_hidden;
  a["horizon"] = c.planner.horizon;
  a["rays"] = c.env.rays;
  a["pi_hidden"] = c.controller.pi_hidden;
  a["vf_hidden"] = c.controller.vf_hidden;
  a["task"] = c.task_name;
  return a.dump();
}

void require_compatible(const ad::Checkpoint& ck, const RunConfig& c) {
  std::string want = arch_fingerprint(c);
  std::string got = ck.meta_at("arch");
  if (!got.empty() && got != want)
    throw UsageError("checkpoint is incompatible with this config (architecture mismatch)");
}

sim::EnvConfig env_with_regions(const RunConfig& c) {
  return train::AlignTrainer::with_regions(c.env, c.make_task());
}

std::shared_ptr<const sdf::MapData> map_for_episode(const RunConfig& c, std::uint64_t seed,
                                                    std::uint64_t index) {
  if (!c.map_path.empty())
    return sdf::MapData::build(sdf::load_mask(c.map_path, c.env.extent_x, c.env.extent_y));
  auto gm = sim::generate_map(env_with_regions(c), derive_seed(seed, "cli-map", index));
  return sdf::MapData::build(std::move(gm.mask));
}

io::json eval_report_json(const train::EvalReport& rep) {
  io::json out;
  out["n"] = rep.n;
  out["successes"] = rep.successes;
  out["sr"] = rep.sr;
  out["ttr_mean_s"] = rep.ttr_mean;
  io::json eps = io::json::array();
  for (const auto& e : rep.episodes)
    eps.push_back({{"episode", e.episode},
                   {"success", e.success},
                   {"robustness", e.robustness},
                   {"collided", e.collided},
                   {"reached", e.reached},
                   {"steps", e.steps},
                   {"ttr_s", e.ttr_seconds}});
  out["episodes"] = eps;
  return out;
}

std::pair<double, double> wilson_interval(int successes, int n, double z = 1.96) {
  if (n == 0) return {0, 0};
  double p = static_cast<double>(successes) / n;
  double z2 = z * z;
  double denom = 1 + z2 / n;
  double center = (p + z2 / (2 * n)) / denom;
  double half = z * std::sqrt(p * (1 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

// ---- monitor ----

int cmd_monitor(const GlobalOpts& g, const std::string& spec_path, const std::string& traj_path,
                double beta, int at_time) {
  RunConfig c = load_run_config(g);
  task::TaskSpec tsk = c.make_task();

  stl::BindingTable table;
  for (const auto& [name, disc] : tsk.regions)
    table.add(stl::make_region_binding(name, disc.center, disc.radius));
  // without a map file the world is obstacle-free (empty-mask sentinel)
  std::shared_ptr<const sdf::MapData> map;
  if (!c.map_path.empty()) {
    map = sdf::MapData::build(sdf::load_mask(c.map_path, c.env.extent_x, c.env.extent_y), false);
  } else {
    sdf::OccupancyMask empty;
    empty.width = c.env.mask_w;
    empty.height = c.env.mask_h;
    empty.extent_x = c.env.extent_x;
    empty.extent_y = c.env.extent_y;
    empty.occ.assign(static_cast<std::size_t>(empty.width) * empty.height, 0);
    map = sdf::MapData::build(std::move(empty), false);
  }
  table.add(sdf::avoid_predicate(map));

  std::string spec_text = io::read_file(spec_path);
  stl::FormulaPtr formula;
  try {
    formula = stl::parse_spec(spec_text, table);
  } catch (const stl::ParseError& e) {
    std::fprintf(stderr, "spec parse failure: %s\n", e.what());
    return 2;
  }

  io::json tj = io::read_json(traj_path);
  if (!tj.contains("waypoints")) throw UsageError("trajectory file must contain a waypoints array");
  stl::Trajectory tau;
  for (const auto& w : tj.at("waypoints"))
    tau.waypoints.emplace_back(w.at(0).get<double>(), w.at(1).get<double>());
  tau.validate();

  double rho = stl::robustness(formula, tau, at_time, table);
  bool sat = stl::eval_bool(formula, tau, at_time, table);
  double soft = stl::soft_robustness_value(formula, tau, at_time, table, {beta});

  std::printf("robustness      %.6f\n", rho);
  std::printf("satisfied       %s\n", sat ? "true" : "false");
  std::printf("soft_robustness %.6f (beta=%g)\n", soft, beta);
  return rho > 0 ? 0 : 1;
}

// ---- train ----

int cmd_train(const GlobalOpts& g, const std::string& mode_override, long budget_override,
              bool resume) {
  RunConfig c = load_run_config(g);
  if (!mode_override.empty()) c.mode = mode_override;
  if (budget_override >= 0) c.schedule.budget_transitions = budget_override;

  fs::path out = c.out_dir;
  fs::create_directories(out);
  fs::create_directories(out / "plots");
  io::write_file_atomic(out / "config.json", io::read_file(g.config_path));

  task::TaskSpec tsk = c.make_task();
  train::AlignTrainer trainer(tsk, c.env, c.planner, c.controller, c.schedule, c.lagrange,
                              c.train_mode(), c.aligned, c.seed, c.threads);

  fs::path latest = out / "latest.ckpt";
  if (resume) {
    if (!fs::exists(latest)) throw IoError("--resume: no checkpoint at " + latest.string());
    ad::Checkpoint ck = ad::load_checkpoint(latest);
    require_compatible(ck, c);
    trainer.load_state(ck);
    STLPLAN_LOG_INFO("resumed at %ld transitions", trainer.transitions());
  }

  std::ofstream metrics(out / "metrics.csv", resume ? std::ios::app : std::ios::trunc);
  if (!resume) metrics << "phase,transitions,planner_updates,controller_updates,lambda,beta,value\n";
  trainer.set_log_sink([&](const train::TrainLogRow& r) {
    metrics << r.phase << ',' << r.transitions << ',' << r.planner_updates << ','
            << r.controller_updates << ',' << r.lambda << ',' << r.beta << ',' << r.value << '\n';
    metrics.flush();
    STLPLAN_LOG_INFO("%s: transitions=%ld value=%.4f lambda=%.2f", r.phase.c_str(), r.transitions,
                     r.value, r.lambda);
  });

  std::ofstream curve(out / "controller_curve.csv", resume ? std::ios::app : std::ios::trunc);
  if (!resume) curve << "update,mean_return,mean_episode_len,success_frac\n";
  trainer.set_ctrl_curve_sink([&](long upd, double ret, double len, double succ) {
    curve << upd << ',' << ret << ',' << len << ',' << succ << '\n';
  });

  std::string arch = arch_fingerprint(c);
  trainer.set_checkpoint_sink([&](const train::AlignTrainer& t, const std::string&) {
    ad::Checkpoint ck;
    const_cast<train::AlignTrainer&>(t).save_state(ck);
    ck.meta["arch"] = arch;
    ad::save_checkpoint(latest, ck);
  });

  train::TrainResult res;
  try {
    res = trainer.run();
  } catch (const NumericError& e) {
    // diagnostic checkpoint, then surface the abort
    ad::Checkpoint ck;
    trainer.save_state(ck);
    ck.meta["arch"] = arch;
    ck.meta["abort"] = e.what();
    ad::save_checkpoint(out / "abort.ckpt", ck);
    std::fprintf(stderr, "training aborted: %s (diagnostics in abort.ckpt)\n", e.what());
    return 4;
  }

  {
    ad::Checkpoint ck;
    trainer.save_state(ck);
    ck.meta["arch"] = arch;
    ad::save_checkpoint(latest, ck);
  }

  // final artifacts: eval report, probe curve plot, a sample planned path
  io::json summary;
  summary["transitions"] = res.transitions;
  summary["transitions_to_threshold"] = res.transitions_to_threshold;
  summary["converged"] = res.converged;
  summary["final_sr"] = res.final_sr;
  summary["final_ttr_s"] = res.final_ttr;
  io::json probes = io::json::array();
  std::vector<std::pair<double, double>> curve_pts;
  for (const auto& p : res.probes) {
    probes.push_back({{"transitions", p.transitions}, {"sr", p.sr}, {"ttr", p.ttr}});
    curve_pts.emplace_back(static_cast<double>(p.transitions), p.sr);
  }
  summary["probes"] = probes;
  io::write_json_atomic(out / "train_summary.json", summary);
  svg::write_svg(out / "plots" / "sr_curve.svg",
                 svg::line_chart({{"probe SR", curve_pts}}, "evaluation SR vs transitions"));

  if (c.schedule.budget_transitions > 0) {
    train::EvalReport rep = train::evaluate(trainer.planner(), trainer.controller(), tsk,
                                            trainer.env_config(), 200,
                                            derive_seed(c.seed, "final-eval"), c.threads, true);
    io::write_json_atomic(out / "eval_report.json", eval_report_json(rep));

    std::vector<io::json> path_rows;
    for (const auto& e : rep.episodes) {
      io::json wps = io::json::array();
      for (const auto& w : e.waypoints) wps.push_back({w.x(), w.y()});
      path_rows.push_back({{"episode", e.episode},
                           {"waypoints", wps},
                           {"robustness", e.robustness},
                           {"r_h", -e.steps}});
    }
    io::write_jsonl_atomic(out / "paths.jsonl", path_rows);
    std::printf("final SR %.3f  TtR %.1fs  transitions %ld\n", rep.sr, rep.ttr_mean,
                res.transitions);
  }
  return 0;
}

// ---- plan / eval / latency / gen-maps ----

void load_into(const std::string& ckpt_path, const RunConfig& c, plan::Planner& planner,
               ctrl::Controller& controller) {
  ad::Checkpoint ck = ad::load_checkpoint(ckpt_path);
  require_compatible(ck, c);
  planner.load(ck);
  controller.load(ck);
}

int cmd_plan(const GlobalOpts& g, const std::string& ckpt, int n) {
  RunConfig c = load_run_config(g);
  task::TaskSpec tsk = c.make_task();
  plan::Planner planner(c.planner, derive_seed(c.seed, "planner-init"));
  ctrl::Controller controller(c.controller, env_with_regions(c), derive_seed(c.seed, "controller-init"));
  load_into(ckpt, c, planner, controller);

  fs::path out = c.out_dir;
  fs::create_directories(out / "plots");
  auto formula = task::parse_task(tsk, task::bindings_without_map(tsk));

  std::vector<io::json> rows;
  for (int i = 0; i < n; ++i) {
    auto map = map_for_episode(c, c.seed, static_cast<std::uint64_t>(i));
    RngStream rng(derive_seed(c.seed, "cli-plan", static_cast<std::uint64_t>(i)));
    Vec2 x0 = sim::sample_free_point(*map, c.env, c.env.goal_tol + 0.05, rng);
    plan::PlannedPath p = planner.mode_path(map->mask, x0);
    auto table = task::bindings_for(tsk, map);
    stl::Trajectory tau{p.waypoints};
    double rho = stl::robustness(formula, tau, 0, table);

    io::json wps = io::json::array();
    for (const auto& w : p.waypoints) wps.push_back({w.x(), w.y()});
    rows.push_back({{"episode", i}, {"waypoints", wps}, {"robustness", rho}});

    if (i == 0) {
      svg::PlotSpec ps;
      ps.mask = &map->mask;
      ps.regions = tsk.regions;
      ps.waypoints = p.waypoints;
      char title[128];
      std::snprintf(title, sizeof title, "%s mode path, robustness %.3f", tsk.name.c_str(), rho);
      ps.title = title;
      svg::write_svg(out / "plots" / "plan.svg", svg::render(ps));
    }
    std::printf("episode %d robustness %.4f\n", i, rho);
  }
  io::write_jsonl_atomic(out / "paths.jsonl", rows);
  return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& ckpt, int episodes) {
  RunConfig c = load_run_config(g);
  if (episodes < 1) throw UsageError("--episodes must be >= 1");
  task::TaskSpec tsk = c.make_task();
  plan::Planner planner(c.planner, derive_seed(c.seed, "planner-init"));
  ctrl::Controller controller(c.controller, env_with_regions(c), derive_seed(c.seed, "controller-init"));
  load_into(ckpt, c, planner, controller);

  train::EvalReport rep = train::evaluate(planner, controller, tsk, controller.env_config(),
                                          episodes, derive_seed(c.seed, "cli-eval"), c.threads);
  fs::path out = c.out_dir;
  fs::create_directories(out);
  io::write_json_atomic(out / "eval_report.json", eval_report_json(rep));

  auto [lo, hi] = wilson_interval(rep.successes, rep.n);
  std::printf("SR %.3f (95%% Wilson [%.3f, %.3f], n=%d)  TtR %.1fs\n", rep.sr, lo, hi, rep.n,
              rep.ttr_mean);
  return 0;
}

int cmd_latency(const GlobalOpts& g, const std::string& ckpt, int n) {
  RunConfig c = load_run_config(g);
  plan::Planner planner(c.planner, derive_seed(c.seed, "planner-init"));
  if (!ckpt.empty()) {
    ad::Checkpoint ck = ad::load_checkpoint(ckpt);
    require_compatible(ck, c);
    planner.load(ck);
  }

  auto stats10 = [&](int obstacles) {
    sim::EnvConfig e = env_with_regions(c);
    e.obstacle_count = obstacles;
    return train::measure_plan_latency(planner, e, n, derive_seed(c.seed, "cli-lat"));
  };
  train::LatencyStats base = stats10(c.env.obstacle_count);
  std::printf("latency (n=%d, %d obstacles): p50 %.4fs p95 %.4fs max %.4fs\n", base.n,
              c.env.obstacle_count, base.p50, base.p95, base.max);

  train::LatencyStats dense = stats10(40);
  std::printf("latency (n=%d, 40 obstacles): p50 %.4fs p95 %.4fs max %.4fs (p50 ratio %.2f)\n",
              dense.n, dense.p50, dense.p95, dense.max,
              dense.p50 / std::max(base.p50, 1e-12));

  fs::path out = c.out_dir;
  fs::create_directories(out);
  io::json j;
  j["n"] = base.n;
  j["p50_s"] = base.p50;
  j["p95_s"] = base.p95;
  j["max_s"] = base.max;
  j["p50_40obs_s"] = dense.p50;
  io::write_json_atomic(out / "latency.json", j);
  return 0;
}

int cmd_gen_maps(const GlobalOpts& g, int n) {
  RunConfig c = load_run_config(g);
  fs::path out = c.out_dir;
  fs::create_directories(out);
  sim::EnvConfig e = env_with_regions(c);
  for (int i = 0; i < n; ++i) {
    auto gm = sim::generate_map(e, derive_seed(c.seed, "gen-map", static_cast<std::uint64_t>(i)));
    char name[64];
    std::snprintf(name, sizeof name, "map_%04d", i);
    img::write_pgm(out / (std::string(name) + ".pgm"), sdf::mask_to_image(gm.mask));
    io::json sidecar;
    sidecar["extent_m"] = {gm.mask.extent_x, gm.mask.extent_y};
    io::json rects = io::json::array();
    for (const auto& r : gm.rects) rects.push_back({{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}});
    sidecar["rects"] = rects;
    io::write_json_atomic(out / (std::string(name) + ".json"), sidecar);
  }
  std::printf("wrote %d maps to %s\n", n, out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"STL-constrained planner/controller training and monitoring"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "run configuration JSON");
  std::uint64_t seed_val = 0;
  auto* seed_opt = app.add_option("--seed", seed_val, "master seed override");
  int threads_val = 1;
  auto* threads_opt = app.add_option("--threads", threads_val, "worker thread cap (1 = bitwise reproducible)");
  std::string out_val;
  auto* out_opt = app.add_option("--out", out_val, "output directory override");

  auto* monitor = app.add_subcommand("monitor", "evaluate a spec against a trajectory file");
  std::string spec_path, traj_path;
  double beta = 10.0;
  int at_time = 0;
  monitor->add_option("--spec", spec_path, "STL formula file")->required();
  monitor->add_option("--traj", traj_path, "trajectory JSON with a waypoints array")->required();
  monitor->add_option("--beta", beta, "softness temperature");
  monitor->add_option("--t", at_time, "evaluation time index");

  auto* tr = app.add_subcommand("train", "run alternating training");
  std::string mode_override;
  long budget_override = -1;
  bool resume = false;
  tr->add_option("--mode", mode_override, "dscrl | rs | rm");
  tr->add_option("--budget", budget_override, "transition budget override");
  tr->add_flag("--resume", resume, "resume from the latest checkpoint in the run directory");

  auto* pl = app.add_subcommand("plan", "emit mode paths from a trained planner");
  std::string ckpt_plan;
  int plan_n = 1;
  pl->add_option("--checkpoint", ckpt_plan, "trained checkpoint")->required();
  pl->add_option("--n", plan_n, "number of maps to plan on");

  auto* ev = app.add_subcommand("eval", "evaluate SR / TtR of a trained pair");
  std::string ckpt_eval;
  int eval_n = 200;
  ev->add_option("--checkpoint", ckpt_eval, "trained checkpoint")->required();
  ev->add_option("--episodes", eval_n, "number of evaluation episodes");

  auto* lat = app.add_subcommand("latency", "measure planner inference latency");
  std::string ckpt_lat;
  int lat_n = 50;
  lat->add_option("--checkpoint", ckpt_lat, "trained checkpoint (optional)");
  lat->add_option("--n", lat_n, "number of timed plans");

  auto* gen = app.add_subcommand("gen-maps", "emit random occupancy masks with sidecars");
  int gen_n = 10;
  gen->add_option("--n", gen_n, "number of maps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  if (*seed_opt) g.seed = seed_val;
  if (*threads_opt) g.threads = threads_val;
  if (*out_opt) g.out_dir = out_val;

  try {
    if (*monitor) return cmd_monitor(g, spec_path, traj_path, beta, at_time);
    if (*tr) return cmd_train(g, mode_override, budget_override, resume);
    if (*pl) return cmd_plan(g, ckpt_plan, plan_n);
    if (*ev) return cmd_eval(g, ckpt_eval, eval_n);
    if (*lat) return cmd_latency(g, ckpt_lat, lat_n);
    if (*gen) return cmd_gen_maps(g, gen_n);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const stl::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
