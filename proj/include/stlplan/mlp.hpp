#ifndef STLPLAN_MLP_HPP
#define STLPLAN_MLP_HPP

#include "stlplan/params.hpp"
#include "stlplan/rng.hpp"
#include "stlplan/tape.hpp"

#include <string>
#include <vector>

namespace stlplan::ad {

// Dense tanh MLP with a linear output layer. Parameters live in a ParamSet
// under "<prefix>.w<i>" / "<prefix>.b<i>". Inputs are row-batches.
class Mlp {
 public:
  Mlp() = default;

  Mlp(std::string prefix, std::vector<int> sizes) : prefix_(std::move(prefix)), sizes_(std::move(sizes)) {}

  void init_params(ParamSet& ps, RngStream& rng) const {
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      int in = sizes_[l], out = sizes_[l + 1];
      Mat w(in, out);
      double scale = 1.0 / std::sqrt(static_cast<double>(in));
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = scale * rng.normal();
      ps.add(weight_name(l), std::move(w));
      ps.add(bias_name(l), Mat::Zero(1, out));
    }
  }

  // Tape forward: x is batch x in, leaves from ParamSet::attach aligned with names().
  Var forward(Tape& tp, Var x, const ParamSet& ps, const std::vector<Var>& leaves) const {
    Var h = x;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      Var w = leaf_of(ps, leaves, weight_name(l));
      Var b = leaf_of(ps, leaves, bias_name(l));
      h = tp.add(tp.matmul(h, w), b);
      if (l + 2 < sizes_.size()) h = tp.tanh(h);
    }
    return h;
  }

  // Tapeless forward for rollouts and inference.
  Mat forward(const Mat& x, const ParamSet& ps) const {
    Mat h = x;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      h = (h * ps.get(weight_name(l))).rowwise() + ps.get(bias_name(l)).row(0);
      if (l + 2 < sizes_.size()) h = h.array().tanh();
    }
    return h;
  }

  int in_dim() const { return sizes_.front(); }
  int out_dim() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }

 private:
  std::string prefix_;
  std::vector<int> sizes_;

  std::string weight_name(std::size_t l) const { return prefix_ + ".w" + std::to_string(l); }
  std::string bias_name(std::size_t l) const { return prefix_ + ".b" + std::to_string(l); }

  static Var leaf_of(const ParamSet& ps, const std::vector<Var>& leaves, const std::string& name) {
    for (std::size_t i = 0; i < ps.count(); ++i)
      if (ps.names()[i] == name) return leaves[i];
    throw std::invalid_argument("mlp param not attached: " + name);
  }
};

}  // namespace stlplan::ad

#endif
