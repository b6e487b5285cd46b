#ifndef STLPLAN_STL_SEMANTICS_HPP
#define STLPLAN_STL_SEMANTICS_HPP

#include "stlplan/stl_ast.hpp"
#include "stlplan/tape.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace stlplan::stl {

// A window that clamps to nothing is an error, not a vacuous truth.
struct EmptyWindowError : std::runtime_error {
  explicit EmptyWindowError(const std::string& m) : std::runtime_error(m) {}
};

namespace detail {

struct NodeTimeKey {
  const Formula* node;
  int t;
  bool operator==(const NodeTimeKey& o) const { return node == o.node && t == o.t; }
};

struct NodeTimeHash {
  std::size_t operator()(const NodeTimeKey& k) const {
    return std::hash<const void*>()(k.node) * 31 + std::hash<int>()(k.t);
  }
};

// Clamp [t+a, t+b] to the trajectory end; empty window is an error.
inline std::pair<int, int> window(const Interval& iv, int t, int end, const char* op) {
  int lo = t + iv.a;
  int hi = std::min(t + iv.b, end);
  if (lo > hi)
    throw EmptyWindowError(std::string(op) + " window [" + std::to_string(lo) + "," +
                           std::to_string(t + iv.b) + "] is empty after clamping to trajectory end " +
                           std::to_string(end));
  return {lo, hi};
}

}  // namespace detail

// Classical recursive Boolean evaluation; the test oracle for the sign of
// the quantitative semantics.
class BoolEvaluator {
 public:
  BoolEvaluator(const Trajectory& tau, const BindingTable& bindings)
      : tau_(tau), bindings_(bindings) {
    tau.validate();
  }

  bool eval(const FormulaPtr& f, int t) {
    check_time(t);
    return rec(f.get(), t);
  }

 private:
  const Trajectory& tau_;
  const BindingTable& bindings_;
  std::unordered_map<detail::NodeTimeKey, bool, detail::NodeTimeHash> memo_;

  void check_time(int t) const {
    if (t < 0 || t > tau_.end_index()) throw std::out_of_range("evaluation time outside trajectory");
  }

  bool rec(const Formula* f, int t) {
    detail::NodeTimeKey key{f, t};
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;
    bool v = compute(f, t);
    memo_.emplace(key, v);
    return v;
  }

  bool compute(const Formula* f, int t) {
    int end = tau_.end_index();
    switch (f->kind) {
      case NodeKind::True: return true;
      case NodeKind::False: return false;
      case NodeKind::Predicate:
        return bindings_.at(f->pred_name).eval(tau_.waypoints[static_cast<std::size_t>(t)], t) > 0.0;
      case NodeKind::Not: return !rec(f->left.get(), t);
      case NodeKind::And: return rec(f->left.get(), t) && rec(f->right.get(), t);
      case NodeKind::Or: return rec(f->left.get(), t) || rec(f->right.get(), t);
      case NodeKind::Implies: return !rec(f->left.get(), t) || rec(f->right.get(), t);
      case NodeKind::Next:
        if (t + 1 > end) throw EmptyWindowError("Next window is empty at trajectory end");
        return rec(f->left.get(), t + 1);
      case NodeKind::Eventually: {
        auto [lo, hi] = detail::window(f->interval, t, end, "Eventually");
        for (int tp = lo; tp <= hi; ++tp)
          if (rec(f->left.get(), tp)) return true;
        return false;
      }
      case NodeKind::Globally: {
        auto [lo, hi] = detail::window(f->interval, t, end, "Globally");
        for (int tp = lo; tp <= hi; ++tp)
          if (!rec(f->left.get(), tp)) return false;
        return true;
      }
      case NodeKind::Until: {
        auto [lo, hi] = detail::window(f->interval, t, end, "Until");
        bool all_phi = true;
        for (int tpp = t; tpp < lo; ++tpp) all_phi = all_phi && rec(f->left.get(), tpp);
        for (int tp = lo; tp <= hi; ++tp) {
          all_phi = all_phi && rec(f->left.get(), tp);
          if (all_phi && rec(f->right.get(), tp)) return true;
          if (!all_phi) return false;
        }
        return false;
      }
    }
    throw std::logic_error("unreachable");
  }
};

// Hard min/max quantitative semantics; sign agrees with BoolEvaluator
// whenever the result is nonzero.
class RobustnessEvaluator {
 public:
  RobustnessEvaluator(const Trajectory& tau, const BindingTable& bindings)
      : tau_(tau), bindings_(bindings) {
    tau.validate();
  }

  double eval(const FormulaPtr& f, int t) {
    if (t < 0 || t > tau_.end_index()) throw std::out_of_range("evaluation time outside trajectory");
    return rec(f.get(), t);
  }

 private:
  const Trajectory& tau_;
  const BindingTable& bindings_;
  std::unordered_map<detail::NodeTimeKey, double, detail::NodeTimeHash> memo_;

  static constexpr double kTop = std::numeric_limits<double>::infinity();

  double rec(const Formula* f, int t) {
    detail::NodeTimeKey key{f, t};
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;
    double v = compute(f, t);
    memo_.emplace(key, v);
    return v;
  }

  double compute(const Formula* f, int t) {
    int end = tau_.end_index();
    switch (f->kind) {
      case NodeKind::True: return kTop;
      case NodeKind::False: return -kTop;
      case NodeKind::Predicate:
        return bindings_.at(f->pred_name).eval(tau_.waypoints[static_cast<std::size_t>(t)], t);
      case NodeKind::Not: return -rec(f->left.get(), t);
      case NodeKind::And: return std::min(rec(f->left.get(), t), rec(f->right.get(), t));
      case NodeKind::Or: return std::max(rec(f->left.get(), t), rec(f->right.get(), t));
      case NodeKind::Implies: return std::max(-rec(f->left.get(), t), rec(f->right.get(), t));
      case NodeKind::Next:
        if (t + 1 > end) throw EmptyWindowError("Next window is empty at trajectory end");
        return rec(f->left.get(), t + 1);
      case NodeKind::Eventually: {
        auto [lo, hi] = detail::window(f->interval, t, end, "Eventually");
        double best = -kTop;
        for (int tp = lo; tp <= hi; ++tp) best = std::max(best, rec(f->left.get(), tp));
        return best;
      }
      case NodeKind::Globally: {
        auto [lo, hi] = detail::window(f->interval, t, end, "Globally");
        double worst = kTop;
        for (int tp = lo; tp <= hi; ++tp) worst = std::min(worst, rec(f->left.get(), tp));
        return worst;
      }
      case NodeKind::Until: {
        auto [lo, hi] = detail::window(f->interval, t, end, "Until");
        double best = -kTop;
        double run_phi = kTop;
        for (int tpp = t; tpp < lo; ++tpp) run_phi = std::min(run_phi, rec(f->left.get(), tpp));
        for (int tp = lo; tp <= hi; ++tp) {
          run_phi = std::min(run_phi, rec(f->left.get(), tp));
          best = std::max(best, std::min(rec(f->right.get(), tp), run_phi));
        }
        return best;
      }
    }
    throw std::logic_error("unreachable");
  }
};

// One record per soft aggregation, for checking the log-sum-exp bounds.
struct AggregationRecord {
  bool is_min;
  int n;
  double hard;  // hard min/max of the aggregated child values
  double soft;
};

using AggregationAudit = std::vector<AggregationRecord>;

// Soft semantics: the hard recursion with min/max replaced by
// temperature-beta log-sum-exp surrogates; result lives on the tape and is
// differentiable w.r.t. every waypoint coordinate.
class SoftEvaluator {
 public:
  SoftEvaluator(ad::Tape& tp, const DiffTrajectory& tau, const BindingTable& bindings,
                SmoothingConfig cfg, AggregationAudit* audit = nullptr)
      : tp_(tp), tau_(tau), bindings_(bindings), cfg_(cfg), audit_(audit) {
    cfg.validate();
    if (tau.waypoints.empty()) throw std::invalid_argument("trajectory must have >= 1 waypoint");
  }

  ad::Var eval(const FormulaPtr& f, int t) {
    if (t < 0 || t > tau_.end_index()) throw std::out_of_range("evaluation time outside trajectory");
    return rec(f.get(), t);
  }

 private:
  ad::Tape& tp_;
  const DiffTrajectory& tau_;
  const BindingTable& bindings_;
  SmoothingConfig cfg_;
  AggregationAudit* audit_;
  std::unordered_map<detail::NodeTimeKey, ad::Var, detail::NodeTimeHash> memo_;

  ad::Var rec(const Formula* f, int t) {
    detail::NodeTimeKey key{f, t};
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;
    ad::Var v = compute(f, t);
    memo_.emplace(key, v);
    return v;
  }

  ad::Var agg_min(const std::vector<ad::Var>& xs) {
    ad::Var s = ad::softmin(tp_, xs, cfg_.beta);
    if (audit_) {
      double hard = std::numeric_limits<double>::infinity();
      for (const auto& x : xs) hard = std::min(hard, x.scalar());
      audit_->push_back({true, static_cast<int>(xs.size()), hard, s.scalar()});
    }
    return s;
  }

  ad::Var agg_max(const std::vector<ad::Var>& xs) {
    ad::Var s = ad::softmax(tp_, xs, cfg_.beta);
    if (audit_) {
      double hard = -std::numeric_limits<double>::infinity();
      for (const auto& x : xs) hard = std::max(hard, x.scalar());
      audit_->push_back({false, static_cast<int>(xs.size()), hard, s.scalar()});
    }
    return s;
  }

  ad::Var compute(const Formula* f, int t) {
    int end = tau_.end_index();
    switch (f->kind) {
      case NodeKind::True:
      case NodeKind::False:
        throw std::invalid_argument("soft semantics of boolean constants is unbounded");
      case NodeKind::Predicate: {
        const PredicateBinding& b = bindings_.at(f->pred_name);
        if (!b.differentiable || !b.eval_diff)
          throw std::invalid_argument("predicate not differentiable: " + f->pred_name);
        auto [x, y] = tau_.waypoints[static_cast<std::size_t>(t)];
        return b.eval_diff(tp_, x, y, t);
      }
      case NodeKind::Not: return tp_.neg(rec(f->left.get(), t));
      case NodeKind::And: return agg_min({rec(f->left.get(), t), rec(f->right.get(), t)});
      case NodeKind::Or: return agg_max({rec(f->left.get(), t), rec(f->right.get(), t)});
      case NodeKind::Implies:
        return agg_max({tp_.neg(rec(f->left.get(), t)), rec(f->right.get(), t)});
      case NodeKind::Next:
        if (t + 1 > end) throw EmptyWindowError("Next window is empty at trajectory end");
        return rec(f->left.get(), t + 1);
      case NodeKind::Eventually: {
        auto [lo, hi] = detail::window(f->interval, t, end, "Eventually");
        std::vector<ad::Var> xs;
        for (int tp = lo; tp <= hi; ++tp) xs.push_back(rec(f->left.get(), tp));
        return agg_max(xs);
      }
      case NodeKind::Globally: {
        auto [lo, hi] = detail::window(f->interval, t, end, "Globally");
        std::vector<ad::Var> xs;
        for (int tp = lo; tp <= hi; ++tp) xs.push_back(rec(f->left.get(), tp));
        return agg_min(xs);
      }
      case NodeKind::Until: {
        auto [lo, hi] = detail::window(f->interval, t, end, "Until");
        std::vector<ad::Var> outer;
        for (int tp = lo; tp <= hi; ++tp) {
          std::vector<ad::Var> inner;
          inner.push_back(rec(f->right.get(), tp));
          for (int tpp = t; tpp <= tp; ++tpp) inner.push_back(rec(f->left.get(), tpp));
          outer.push_back(agg_min(inner));
        }
        return agg_max(outer);
      }
    }
    throw std::logic_error("unreachable");
  }
};

// ---- convenience entry points matching the operation contracts ----

inline bool eval_bool(const FormulaPtr& f, const Trajectory& tau, int t, const BindingTable& bindings) {
  BoolEvaluator ev(tau, bindings);
  return ev.eval(f, t);
}

inline double robustness(const FormulaPtr& f, const Trajectory& tau, int t, const BindingTable& bindings) {
  RobustnessEvaluator ev(tau, bindings);
  return ev.eval(f, t);
}

inline ad::Var soft_robustness(ad::Tape& tp, const FormulaPtr& f, const DiffTrajectory& tau, int t,
                               const BindingTable& bindings, SmoothingConfig cfg,
                               AggregationAudit* audit = nullptr) {
  SoftEvaluator ev(tp, tau, bindings, cfg, audit);
  return ev.eval(f, t);
}

// Soft robustness as a plain value (fresh scratch tape), for callers that
// only need the number.
inline double soft_robustness_value(const FormulaPtr& f, const Trajectory& tau, int t,
                                    const BindingTable& bindings, SmoothingConfig cfg) {
  ad::Tape tp;
  DiffTrajectory dt;
  for (const auto& w : tau.waypoints) dt.waypoints.emplace_back(tp.input(w.x()), tp.input(w.y()));
  SoftEvaluator ev(tp, dt, bindings, cfg);
  return ev.eval(f, t).scalar();
}

}  // namespace stlplan::stl

#endif
