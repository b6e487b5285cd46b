#ifndef STLPLAN_PARAMS_HPP
#define STLPLAN_PARAMS_HPP

#include "stlplan/rng.hpp"
#include "stlplan/tape.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace stlplan::ad {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Mat m, v;
  long step = 0;
};

// Standard adaptive-moment update with bias correction.
inline void adam_step(Mat& param, const Mat& grad, AdamState& st, const AdamConfig& cfg) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols())
    throw std::invalid_argument("adam_step: shape mismatch");
  if (st.m.size() == 0) {
    st.m = Mat::Zero(param.rows(), param.cols());
    st.v = Mat::Zero(param.rows(), param.cols());
  }
  st.step += 1;
  st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * grad;
  st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad).eval();
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  Mat mhat = st.m / bc1;
  Mat vhat = st.v / bc2;
  param.array() -= cfg.lr * mhat.array() / (vhat.array().sqrt() + cfg.eps);
}

// Named parameter tensors with insertion-ordered iteration and per-tensor
// Adam moments. Insertion order is the serialization order.
class ParamSet {
 public:
  Mat& add(const std::string& name, Mat value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate param: " + name);
    index_[name] = names_.size();
    names_.push_back(name);
    values_.push_back(std::move(value));
    adam_.push_back(AdamState{});
    return values_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Mat& get(const std::string& name) { return values_[at(name)]; }
  const Mat& get(const std::string& name) const { return values_[at(name)]; }
  AdamState& adam(const std::string& name) { return adam_[at(name)]; }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t count() const { return names_.size(); }
  Mat& value_at(std::size_t i) { return values_[i]; }
  const Mat& value_at(std::size_t i) const { return values_[i]; }
  AdamState& adam_at(std::size_t i) { return adam_[i]; }

  // Insert every parameter as a leaf on a tape; returns vars aligned with names().
  std::vector<Var> attach(Tape& tp) const {
    std::vector<Var> vars;
    vars.reserve(values_.size());
    for (const auto& v : values_) vars.push_back(tp.input(v));
    return vars;
  }

  // Apply one Adam step from gradients read off the attached leaf vars.
  void apply_gradients(const std::vector<Var>& leaves, const AdamConfig& cfg) {
    if (leaves.size() != values_.size()) throw std::invalid_argument("apply_gradients: leaf count");
    for (std::size_t i = 0; i < values_.size(); ++i)
      adam_step(values_[i], leaves[i].grad(), adam_[i], cfg);
  }

  ParamSet snapshot() const { return *this; }

  double total_norm() const {
    double s = 0;
    for (const auto& v : values_) s += v.squaredNorm();
    return std::sqrt(s);
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
  std::vector<AdamState> adam_;
  std::map<std::string, std::size_t> index_;

  std::size_t at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown param: " + name);
    return it->second;
  }
};

}  // namespace stlplan::ad

#endif
