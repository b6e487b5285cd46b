#ifndef STLPLAN_TASKS_HPP
#define STLPLAN_TASKS_HPP

#include "stlplan/env.hpp"
#include "stlplan/sdf.hpp"
#include "stlplan/stl_parser.hpp"

#include <memory>
#include <string>
#include <vector>

namespace stlplan::task {

using sdf::MapData;
using Vec2 = Eigen::Vector2d;

// One benchmark task: formula text over named circular regions plus the
// map-derived avoid_map predicate, always conjoined with G[0,T] avoid_map.
struct TaskSpec {
  std::string name;
  std::string formula_text;
  std::vector<std::pair<std::string, sim::Disc>> regions;
  int horizon = 20;
  int loop_m = 0;

  std::vector<sim::Disc> region_discs() const {
    std::vector<sim::Disc> out;
    for (const auto& [n, d] : regions) out.push_back(d);
    return out;
  }

  const sim::Disc& region(const std::string& rname) const {
    for (const auto& [n, d] : regions)
      if (n == rname) return d;
    throw std::invalid_argument("unknown region: " + rname);
  }
};

inline stl::BindingTable bindings_for(const TaskSpec& t, std::shared_ptr<const MapData> map) {
  stl::BindingTable b;
  for (const auto& [name, disc] : t.regions)
    b.add(stl::make_region_binding(name, disc.center, disc.radius));
  b.add(sdf::avoid_predicate(std::move(map)));
  return b;
}

// Region-only bindings with a permissive avoid predicate, for parsing
// before any map exists.
inline stl::BindingTable bindings_without_map(const TaskSpec& t) {
  stl::BindingTable b;
  for (const auto& [name, disc] : t.regions)
    b.add(stl::make_region_binding(name, disc.center, disc.radius));
  stl::PredicateBinding avoid;
  avoid.name = "avoid_map";
  avoid.differentiable = true;
  avoid.eval = [](const Vec2&, int) { return 1.0; };
  avoid.eval_diff = [](ad::Tape& tp, ad::Var x, ad::Var y, int) {
    return tp.custom_scalar(1.0, {x, y}, {0.0, 0.0});
  };
  b.add(avoid);
  return b;
}

inline stl::FormulaPtr parse_task(const TaskSpec& t, const stl::BindingTable& b) {
  return stl::parse_spec(t.formula_text, b);
}

// Desk-scale instantiation on a 2.42 x 2.42 m world; regions of radius
// 0.25 m, horizon T = 20, Loop cycles M = 3.
inline TaskSpec make_task(const std::string& name, int T = 20, int M = 3) {
  const double r = 0.25;
  TaskSpec t;
  t.name = name;
  t.horizon = T;
  std::string g_avoid = " & G[0," + std::to_string(T) + "] avoid_map";

  if (name == "Sequence") {
    int t1 = 0, t2 = T / 3, t3 = 2 * T / 3, t4 = T;
    t.regions = {{"A", {{0.55, 1.85}, r}}, {"B", {{1.85, 1.85}, r}}, {"C", {{1.21, 0.55}, r}}};
    t.formula_text = "F[" + std::to_string(t1) + "," + std::to_string(t2) + "] A & F[" +
                     std::to_string(t2) + "," + std::to_string(t3) + "] B & F[" +
                     std::to_string(t3) + "," + std::to_string(t4) + "] C" + g_avoid;
  } else if (name == "Cover") {
    t.regions = {{"A", {{0.55, 1.85}, r}}, {"B", {{1.85, 1.85}, r}}, {"C", {{1.21, 0.55}, r}}};
    std::string w = "[0," + std::to_string(T) + "]";
    t.formula_text = "F" + w + " A & F" + w + " B & F" + w + " C" + g_avoid;
  } else if (name == "Branch") {
    t.regions = {{"A", {{0.55, 1.85}, r}},
                 {"B", {{0.55, 0.55}, r}},
                 {"C", {{1.85, 1.85}, r}},
                 {"D", {{1.85, 0.55}, r}}};
    std::string w = "[0," + std::to_string(T) + "]";
    t.formula_text = "(F" + w + " A & F" + w + " C) | (F" + w + " B & F" + w + " D)" + g_avoid;
  } else if (name == "Loop" || name == "Signal") {
    t.loop_m = M;
    int cycle = T / M;
    int guard = T - cycle;
    // tighter triangle so a full cycle fits in T/M steps
    t.regions = {{"L1", {{0.85, 1.45}, r}}, {"L2", {{1.55, 1.45}, r}}, {"L3", {{1.21, 0.85}, r}}};
    std::string cyc = "[0," + std::to_string(cycle) + "]";
    std::string loop_body = "G[0," + std::to_string(guard) + "](F" + cyc + " L1 & F" + cyc +
                            " L2 & F" + cyc + " L3)";
    if (name == "Loop") {
      t.formula_text = loop_body + g_avoid;
    } else {
      t.regions.push_back({"Y", {{1.95, 0.5}, r}});
      t.formula_text = loop_body + " U[0,1] L3 & F[0," + std::to_string(T) + "] Y" + g_avoid;
    }
  } else {
    throw std::invalid_argument("unknown task: " + name);
  }
  return t;
}

inline std::vector<std::string> task_names() {
  return {"Sequence", "Cover", "Branch", "Loop", "Signal"};
}

// Milestones for the reward-machine baseline: the task's regions in formula
// order; for Branch, the first branch whose regions are all free on the map.
inline std::vector<sim::Disc> milestones_for(const TaskSpec& t, const MapData& map) {
  if (t.name == "Branch") {
    std::vector<sim::Disc> blue = {t.region("A"), t.region("C")};
    std::vector<sim::Disc> green = {t.region("B"), t.region("D")};
    auto all_free = [&](const std::vector<sim::Disc>& ds) {
      for (const auto& d : ds)
        if (map.value(d.center) <= 0) return false;
      return true;
    };
    return all_free(blue) ? blue : green;
  }
  std::vector<sim::Disc> out = t.region_discs();
  if (t.name == "Signal") out.pop_back();  // the exit region is not part of the loop progression
  return out;
}

}  // namespace stlplan::task

#endif
