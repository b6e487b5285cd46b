#ifndef STLPLAN_STL_AST_HPP
#define STLPLAN_STL_AST_HPP

#include "stlplan/tape.hpp"

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace stlplan::stl {

using Vec2 = Eigen::Vector2d;

// Discrete-step window [a, b], both inclusive, relative to evaluation time.
struct Interval {
  int a = 0;
  int b = 0;
};

enum class NodeKind {
  True,
  False,
  Predicate,
  Not,
  And,
  Or,
  Implies,
  Next,
  Eventually,
  Globally,
  Until,
};

struct Formula;
using FormulaPtr = std::shared_ptr<const Formula>;

struct Formula {
  NodeKind kind;
  Interval interval;      // Eventually / Globally / Until
  std::string pred_name;  // Predicate
  FormulaPtr left, right;
};

inline FormulaPtr make_true() { return std::make_shared<Formula>(Formula{NodeKind::True, {}, {}, nullptr, nullptr}); }
inline FormulaPtr make_false() { return std::make_shared<Formula>(Formula{NodeKind::False, {}, {}, nullptr, nullptr}); }

inline FormulaPtr make_pred(std::string name) {
  return std::make_shared<Formula>(Formula{NodeKind::Predicate, {}, std::move(name), nullptr, nullptr});
}

inline FormulaPtr make_not(FormulaPtr f) {
  if (!f) throw std::invalid_argument("Not requires a child");
  return std::make_shared<Formula>(Formula{NodeKind::Not, {}, {}, std::move(f), nullptr});
}

inline FormulaPtr make_binary(NodeKind k, FormulaPtr l, FormulaPtr r) {
  if (!l || !r) throw std::invalid_argument("binary formula requires two children");
  return std::make_shared<Formula>(Formula{k, {}, {}, std::move(l), std::move(r)});
}

inline FormulaPtr make_and(FormulaPtr l, FormulaPtr r) { return make_binary(NodeKind::And, std::move(l), std::move(r)); }
inline FormulaPtr make_or(FormulaPtr l, FormulaPtr r) { return make_binary(NodeKind::Or, std::move(l), std::move(r)); }
inline FormulaPtr make_implies(FormulaPtr l, FormulaPtr r) { return make_binary(NodeKind::Implies, std::move(l), std::move(r)); }

inline FormulaPtr make_next(FormulaPtr f) {
  if (!f) throw std::invalid_argument("Next requires a child");
  return std::make_shared<Formula>(Formula{NodeKind::Next, {}, {}, std::move(f), nullptr});
}

inline FormulaPtr make_temporal(NodeKind k, Interval iv, FormulaPtr f) {
  if (!f) throw std::invalid_argument("temporal operator requires a child");
  if (iv.a < 0 || iv.b < iv.a) throw std::invalid_argument("malformed interval");
  return std::make_shared<Formula>(Formula{k, iv, {}, std::move(f), nullptr});
}

inline FormulaPtr make_eventually(Interval iv, FormulaPtr f) { return make_temporal(NodeKind::Eventually, iv, std::move(f)); }
inline FormulaPtr make_globally(Interval iv, FormulaPtr f) { return make_temporal(NodeKind::Globally, iv, std::move(f)); }

inline FormulaPtr make_until(Interval iv, FormulaPtr l, FormulaPtr r) {
  if (!l || !r) throw std::invalid_argument("Until requires two children");
  if (iv.a < 0 || iv.b < iv.a) throw std::invalid_argument("malformed interval");
  return std::make_shared<Formula>(Formula{NodeKind::Until, iv, {}, std::move(l), std::move(r)});
}

inline bool equal(const FormulaPtr& a, const FormulaPtr& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  if (a->kind != b->kind) return false;
  if (a->kind == NodeKind::Predicate) return a->pred_name == b->pred_name;
  if (a->interval.a != b->interval.a || a->interval.b != b->interval.b) return false;
  return equal(a->left, b->left) && equal(a->right, b->right);
}

// Precedence: atoms/unary ops bind tightest, then U, &, |, ->.
namespace detail {
inline int precedence(NodeKind k) {
  switch (k) {
    case NodeKind::Implies: return 0;
    case NodeKind::Or: return 1;
    case NodeKind::And: return 2;
    case NodeKind::Until: return 3;
    default: return 4;
  }
}

inline std::string interval_str(const Interval& iv) {
  return "[" + std::to_string(iv.a) + "," + std::to_string(iv.b) + "]";
}

inline void print_rec(const FormulaPtr& f, int min_prec, std::string& out) {
  int p = precedence(f->kind);
  bool parens = p < min_prec;
  if (parens) out += "(";
  switch (f->kind) {
    case NodeKind::True: out += "true"; break;
    case NodeKind::False: out += "false"; break;
    case NodeKind::Predicate: out += f->pred_name; break;
    case NodeKind::Not:
      out += "!";
      print_rec(f->left, 4, out);
      break;
    case NodeKind::Next:
      out += "X ";
      print_rec(f->left, 4, out);
      break;
    case NodeKind::Eventually:
      out += "F" + interval_str(f->interval) + " ";
      print_rec(f->left, 4, out);
      break;
    case NodeKind::Globally:
      out += "G" + interval_str(f->interval) + " ";
      print_rec(f->left, 4, out);
      break;
    case NodeKind::Until:
      // non-associative: operands are unary-level
      print_rec(f->left, 4, out);
      out += " U" + interval_str(f->interval) + " ";
      print_rec(f->right, 4, out);
      break;
    case NodeKind::And:
      print_rec(f->left, 2, out);
      out += " & ";
      print_rec(f->right, 3, out);
      break;
    case NodeKind::Or:
      print_rec(f->left, 1, out);
      out += " | ";
      print_rec(f->right, 2, out);
      break;
    case NodeKind::Implies:
      print_rec(f->left, 1, out);
      out += " -> ";
      print_rec(f->right, 0, out);
      break;
  }
  if (parens) out += ")";
}
}  // namespace detail

// Surface-syntax printer; parse(to_string(f)) == f.
inline std::string to_string(const FormulaPtr& f) {
  std::string out;
  detail::print_rec(f, 0, out);
  return out;
}

// Waypoint sequence in world meters, indices 0..T.
struct Trajectory {
  std::vector<Vec2> waypoints;

  int end_index() const { return static_cast<int>(waypoints.size()) - 1; }

  void validate() const {
    if (waypoints.empty()) throw std::invalid_argument("trajectory must have >= 1 waypoint");
    for (const auto& w : waypoints)
      if (!std::isfinite(w.x()) || !std::isfinite(w.y()))
        throw std::invalid_argument("trajectory has non-finite coordinate");
  }
};

// Trajectory whose coordinates live on a gradient tape.
struct DiffTrajectory {
  std::vector<std::pair<ad::Var, ad::Var>> waypoints;
  int end_index() const { return static_cast<int>(waypoints.size()) - 1; }
};

// Robustness > 0 iff the predicate holds at the waypoint.
struct PredicateBinding {
  std::string name;
  std::function<double(const Vec2&, int)> eval;
  std::function<ad::Var(ad::Tape&, ad::Var, ad::Var, int)> eval_diff;
  bool differentiable = false;
};

class BindingTable {
 public:
  void add(PredicateBinding b) { table_[b.name] = std::move(b); }

  bool has(const std::string& name) const { return table_.count(name) != 0; }

  const PredicateBinding& at(const std::string& name) const {
    auto it = table_.find(name);
    if (it == table_.end()) throw std::invalid_argument("unbound predicate: " + name);
    return it->second;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : table_) out.push_back(k);
    return out;
  }

 private:
  std::map<std::string, PredicateBinding> table_;
};

struct SmoothingConfig {
  double beta = 10.0;

  void validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("beta must be finite and > 0");
  }
};

// Circular region: robustness r - ||g - c||, positive inside.
inline PredicateBinding make_region_binding(const std::string& name, const Vec2& center, double radius) {
  PredicateBinding b;
  b.name = name;
  b.differentiable = true;
  b.eval = [center, radius](const Vec2& g, int) { return radius - (g - center).norm(); };
  b.eval_diff = [center, radius](ad::Tape& tp, ad::Var x, ad::Var y, int) {
    double dx = x.scalar() - center.x();
    double dy = y.scalar() - center.y();
    double d = std::hypot(dx, dy);
    double gx = 0.0, gy = 0.0;  // subgradient 0 at the center
    if (d > 0.0) {
      gx = -dx / d;
      gy = -dy / d;
    }
    return tp.custom_scalar(radius - d, {x, y}, {gx, gy});
  };
  return b;
}

// Coordinate predicates used in tests: robustness = +/-(coord - threshold).
inline PredicateBinding make_halfplane_binding(const std::string& name, int axis, double threshold,
                                               bool greater) {
  PredicateBinding b;
  b.name = name;
  b.differentiable = true;
  double sgn = greater ? 1.0 : -1.0;
  b.eval = [axis, threshold, sgn](const Vec2& g, int) { return sgn * (g(axis) - threshold); };
  b.eval_diff = [axis, threshold, sgn](ad::Tape& tp, ad::Var x, ad::Var y, int) {
    ad::Var c = axis == 0 ? x : y;
    return tp.mul_scalar(tp.add_scalar(c, -threshold), sgn);
  };
  return b;
}

}  // namespace stlplan::stl

#endif
