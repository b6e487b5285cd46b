#ifndef STLPLAN_TAPE_HPP
#define STLPLAN_TAPE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace stlplan::ad {

using Mat = Eigen::MatrixXd;

enum class Op {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Exp,
  Log,
  Tanh,
  Sqrt,
  Square,
  MatMul,
  Sum,
  Mean,
  RowSum,
  LogSumExpRow,
  GaussLogPdf,
  AddScalar,
  MulScalar,
  Minimum,
  Clip,
  ConcatScalars,
  ConcatCols,
  CumSumRows,
  GetElement,
  SliceRows,
  Reshape,
  Custom,
};

class Tape;

// Handle into a tape. Cheap to copy; valid as long as the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  const Mat& value() const;
  const Mat& grad() const;
  double scalar() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape over dense double matrices. Nodes are appended in
// topological order; backward() runs one reverse sweep. Single-threaded.
class Tape {
 public:
  struct Node {
    Op op = Op::Leaf;
    int a = -1, b = -1, c = -1;
    double s0 = 0.0, s1 = 0.0;
    Mat value;
    Mat grad;
    std::vector<int> extra;      // ConcatScalars parents
    std::vector<Mat> partials;   // Custom: d(value)/d(parent) per parent
  };

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  Var input(Mat v) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    return push(std::move(n));
  }

  Var input(double v) { return input(scalar_mat(v)); }

  // ---- elementwise binary; b may broadcast as 1x1 or 1xcols ----

  Var add(Var a, Var b) { return binary(Op::Add, a, b); }
  Var sub(Var a, Var b) { return binary(Op::Sub, a, b); }
  Var mul(Var a, Var b) { return binary(Op::Mul, a, b); }
  Var div(Var a, Var b) { return binary(Op::Div, a, b); }

  Var neg(Var a) { return unary(Op::Neg, a, [](const Mat& x) { return Mat(-x); }); }
  Var exp(Var a) {
    return unary(Op::Exp, a, [](const Mat& x) { return Mat(x.array().exp()); });
  }
  Var log(Var a) {
    if ((val(a).array() <= 0.0).any()) throw std::domain_error("log of non-positive value");
    return unary(Op::Log, a, [](const Mat& x) { return Mat(x.array().log()); });
  }
  Var tanh(Var a) {
    return unary(Op::Tanh, a, [](const Mat& x) { return Mat(x.array().tanh()); });
  }
  Var sqrt(Var a) {
    if ((val(a).array() <= 0.0).any()) throw std::domain_error("sqrt of non-positive value");
    return unary(Op::Sqrt, a, [](const Mat& x) { return Mat(x.array().sqrt()); });
  }
  Var square(Var a) {
    return unary(Op::Square, a, [](const Mat& x) { return Mat(x.array().square()); });
  }

  Var matmul(Var a, Var b) {
    const Mat& A = val(a);
    const Mat& B = val(b);
    if (A.cols() != B.rows()) throw std::invalid_argument("matmul shape mismatch");
    Node n;
    n.op = Op::MatMul;
    n.a = a.id();
    n.b = b.id();
    n.value = A * B;
    return push(std::move(n));
  }

  Var sum(Var a) {
    Node n;
    n.op = Op::Sum;
    n.a = a.id();
    n.value = scalar_mat(val(a).sum());
    return push(std::move(n));
  }

  Var mean(Var a) {
    Node n;
    n.op = Op::Mean;
    n.a = a.id();
    n.value = scalar_mat(val(a).mean());
    return push(std::move(n));
  }

  Var row_sum(Var a) {
    Node n;
    n.op = Op::RowSum;
    n.a = a.id();
    n.value = val(a).rowwise().sum();
    return push(std::move(n));
  }

  // Per-row log(sum(exp(x))), max-shifted for stability. rows x cols -> rows x 1.
  Var logsumexp_row(Var a) {
    const Mat& A = val(a);
    Mat out(A.rows(), 1);
    for (Eigen::Index r = 0; r < A.rows(); ++r) {
      double mx = A.row(r).maxCoeff();
      out(r, 0) = mx + std::log((A.row(r).array() - mx).exp().sum());
    }
    Node n;
    n.op = Op::LogSumExpRow;
    n.a = a.id();
    n.value = std::move(out);
    return push(std::move(n));
  }

  // Elementwise Gaussian log-density. log_sigma may broadcast as 1 x cols.
  Var gaussian_logpdf(Var x, Var mu, Var log_sigma) {
    const Mat& X = val(x);
    const Mat& M = val(mu);
    if (X.rows() != M.rows() || X.cols() != M.cols())
      throw std::invalid_argument("gaussian_logpdf shape mismatch");
    Mat S = broadcast_to(val(log_sigma), X.rows(), X.cols(), "gaussian_logpdf sigma");
    if (!(S.array() == S.array()).all()) throw std::domain_error("gaussian_logpdf: nan sigma");
    Mat sig = S.array().exp();
    if ((sig.array() <= 0.0).any()) throw std::domain_error("gaussian_logpdf: sigma <= 0");
    Mat z = (X - M).array() / sig.array();
    Node n;
    n.op = Op::GaussLogPdf;
    n.a = x.id();
    n.b = mu.id();
    n.c = log_sigma.id();
    n.value = (-0.5 * std::log(2.0 * M_PI)) - S.array() - 0.5 * z.array().square();
    return push(std::move(n));
  }

  Var add_scalar(Var a, double s) {
    Node n;
    n.op = Op::AddScalar;
    n.a = a.id();
    n.s0 = s;
    n.value = val(a).array() + s;
    return push(std::move(n));
  }

  Var mul_scalar(Var a, double s) {
    Node n;
    n.op = Op::MulScalar;
    n.a = a.id();
    n.s0 = s;
    n.value = val(a) * s;
    return push(std::move(n));
  }

  Var minimum(Var a, Var b) {
    const Mat& A = val(a);
    const Mat& B = val(b);
    if (A.rows() != B.rows() || A.cols() != B.cols())
      throw std::invalid_argument("minimum shape mismatch");
    Node n;
    n.op = Op::Minimum;
    n.a = a.id();
    n.b = b.id();
    n.value = A.cwiseMin(B);
    return push(std::move(n));
  }

  // Clamp to [lo, hi]; gradient passes only strictly inside.
  Var clip(Var a, double lo, double hi) {
    Node n;
    n.op = Op::Clip;
    n.a = a.id();
    n.s0 = lo;
    n.s1 = hi;
    n.value = val(a).cwiseMax(lo).cwiseMin(hi);
    return push(std::move(n));
  }

  // Pack k scalar vars into a 1 x k row vector.
  Var concat_scalars(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_scalars: empty");
    Node n;
    n.op = Op::ConcatScalars;
    n.value.resize(1, static_cast<Eigen::Index>(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (val(xs[i]).size() != 1) throw std::invalid_argument("concat_scalars: non-scalar");
      n.extra.push_back(xs[i].id());
      n.value(0, static_cast<Eigen::Index>(i)) = val(xs[i])(0, 0);
    }
    return push(std::move(n));
  }

  // Horizontal concat of two matrices with equal row count.
  Var concat_cols(Var a, Var b) {
    const Mat& A = val(a);
    const Mat& B = val(b);
    if (A.rows() != B.rows()) throw std::invalid_argument("concat_cols row mismatch");
    Node n;
    n.op = Op::ConcatCols;
    n.a = a.id();
    n.b = b.id();
    n.value.resize(A.rows(), A.cols() + B.cols());
    n.value << A, B;
    return push(std::move(n));
  }

  // Cumulative sum down the rows (row i = sum of input rows 0..i).
  Var cumsum_rows(Var a) {
    const Mat& A = val(a);
    Mat out = A;
    for (Eigen::Index r = 1; r < out.rows(); ++r) out.row(r) += out.row(r - 1);
    Node n;
    n.op = Op::CumSumRows;
    n.a = a.id();
    n.value = std::move(out);
    return push(std::move(n));
  }

  Var get_element(Var a, int i, int j) {
    Node n;
    n.op = Op::GetElement;
    n.a = a.id();
    n.s0 = i;
    n.s1 = j;
    n.value = scalar_mat(val(a)(i, j));
    return push(std::move(n));
  }

  Var slice_rows(Var a, int i0, int nrows) {
    Node n;
    n.op = Op::SliceRows;
    n.a = a.id();
    n.s0 = i0;
    n.s1 = nrows;
    n.value = val(a).middleRows(i0, nrows);
    return push(std::move(n));
  }

  Var reshape(Var a, int rows, int cols) {
    const Mat& A = val(a);
    if (A.size() != static_cast<Eigen::Index>(rows) * cols)
      throw std::invalid_argument("reshape size mismatch");
    Node n;
    n.op = Op::Reshape;
    n.a = a.id();
    // row-major element order
    Mat out(rows, cols);
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < A.rows(); ++r)
      for (Eigen::Index c = 0; c < A.cols(); ++c) {
        out(k / cols, k % cols) = A(r, c);
        ++k;
      }
    n.value = std::move(out);
    return push(std::move(n));
  }

  // Scalar node with caller-supplied value and partial derivatives w.r.t.
  // scalar parents, fixed at forward time (used for SDF and norm subgradients).
  Var custom_scalar(double value, const std::vector<Var>& parents,
                    const std::vector<double>& partials) {
    if (parents.size() != partials.size())
      throw std::invalid_argument("custom_scalar: parent/partial count mismatch");
    Node n;
    n.op = Op::Custom;
    n.value = scalar_mat(value);
    for (std::size_t i = 0; i < parents.size(); ++i) {
      n.extra.push_back(parents[i].id());
      n.partials.push_back(scalar_mat(partials[i]));
    }
    return push(std::move(n));
  }

  // ---- backward ----

  void backward(Var out) {
    const Mat& ov = val(out);
    if (ov.rows() != 1 || ov.cols() != 1)
      throw std::invalid_argument("backward: output must be scalar");
    for (auto& n : nodes_) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    nodes_[static_cast<std::size_t>(out.id())].grad(0, 0) = 1.0;
    for (int id = out.id(); id >= 0; --id) backprop_node(id);
  }

  const Mat& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Mat& grad_of(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

 private:
  std::vector<Node> nodes_;

  static Mat scalar_mat(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return m;
  }

  const Mat& val(Var v) const {
    if (v.tape() != this) throw std::invalid_argument("var belongs to another tape");
    return nodes_[static_cast<std::size_t>(v.id())].value;
  }

  Var push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  static Mat broadcast_to(const Mat& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
    if (m.rows() == rows && m.cols() == cols) return m;
    if (m.rows() == 1 && m.cols() == cols) return m.replicate(rows, 1);
    if (m.rows() == 1 && m.cols() == 1) return Mat::Constant(rows, cols, m(0, 0));
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }

  // Reduce a full-shape gradient back onto a possibly-broadcast operand shape.
  static Mat reduce_to(const Mat& g, Eigen::Index rows, Eigen::Index cols) {
    if (g.rows() == rows && g.cols() == cols) return g;
    if (rows == 1 && cols == g.cols()) return g.colwise().sum();
    if (rows == 1 && cols == 1) return Mat::Constant(1, 1, g.sum());
    throw std::invalid_argument("reduce_to: incompatible shapes");
  }

  Var unary(Op op, Var a, Mat (*fwd)(const Mat&)) {
    Node n;
    n.op = op;
    n.a = a.id();
    n.value = fwd(val(a));
    return push(std::move(n));
  }

  Var binary(Op op, Var a, Var b) {
    const Mat& A = val(a);
    Mat B = broadcast_to(nodes_[static_cast<std::size_t>(b.id())].value, A.rows(), A.cols(),
                         "elementwise binary");
    Node n;
    n.op = op;
    n.a = a.id();
    n.b = b.id();
    switch (op) {
      case Op::Add: n.value = A + B; break;
      case Op::Sub: n.value = A - B; break;
      case Op::Mul: n.value = A.cwiseProduct(B); break;
      case Op::Div:
        if ((B.array() == 0.0).any()) throw std::domain_error("division by zero");
        n.value = A.cwiseQuotient(B);
        break;
      default: throw std::logic_error("not a binary op");
    }
    return push(std::move(n));
  }

  Mat& gref(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  const Mat& vref(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  void accum(int id, const Mat& g) {
    Mat& dst = gref(id);
    dst += reduce_to(g, dst.rows(), dst.cols());
  }

  void backprop_node(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op == Op::Leaf) return;
    const Mat& g = n.grad;
    if (g.size() == 0) return;
    switch (n.op) {
      case Op::Add:
        accum(n.a, g);
        accum(n.b, g);
        break;
      case Op::Sub:
        accum(n.a, g);
        accum(n.b, Mat(-g));
        break;
      case Op::Mul: {
        const Mat& A = vref(n.a);
        Mat B = broadcast_to(vref(n.b), A.rows(), A.cols(), "mul");
        accum(n.a, Mat(g.cwiseProduct(B)));
        accum(n.b, Mat(g.cwiseProduct(A)));
        break;
      }
      case Op::Div: {
        const Mat& A = vref(n.a);
        Mat B = broadcast_to(vref(n.b), A.rows(), A.cols(), "div");
        accum(n.a, Mat(g.cwiseQuotient(B)));
        accum(n.b, Mat(-g.cwiseProduct(A).cwiseQuotient(B.cwiseProduct(B))));
        break;
      }
      case Op::Neg: accum(n.a, Mat(-g)); break;
      case Op::Exp: accum(n.a, Mat(g.cwiseProduct(n.value))); break;
      case Op::Log: accum(n.a, Mat(g.cwiseQuotient(vref(n.a)))); break;
      case Op::Tanh:
        accum(n.a, Mat(g.array() * (1.0 - n.value.array().square())));
        break;
      case Op::Sqrt:
        accum(n.a, Mat(g.array() * (0.5 / n.value.array())));
        break;
      case Op::Square:
        accum(n.a, Mat(g.array() * 2.0 * vref(n.a).array()));
        break;
      case Op::MatMul:
        accum(n.a, Mat(g * vref(n.b).transpose()));
        accum(n.b, Mat(vref(n.a).transpose() * g));
        break;
      case Op::Sum:
        accum(n.a, Mat(Mat::Constant(vref(n.a).rows(), vref(n.a).cols(), g(0, 0))));
        break;
      case Op::Mean:
        accum(n.a, Mat(Mat::Constant(vref(n.a).rows(), vref(n.a).cols(),
                                     g(0, 0) / static_cast<double>(vref(n.a).size()))));
        break;
      case Op::RowSum:
        accum(n.a, Mat(g.replicate(1, vref(n.a).cols())));
        break;
      case Op::LogSumExpRow: {
        const Mat& A = vref(n.a);
        Mat w(A.rows(), A.cols());
        for (Eigen::Index r = 0; r < A.rows(); ++r)
          w.row(r) = (A.row(r).array() - n.value(r, 0)).exp();
        accum(n.a, Mat(w.array().colwise() * g.col(0).array()));
        break;
      }
      case Op::GaussLogPdf: {
        const Mat& X = vref(n.a);
        const Mat& M = vref(n.b);
        Mat S = broadcast_to(vref(n.c), X.rows(), X.cols(), "gauss sigma");
        Mat inv_var = (-2.0 * S.array()).exp();
        Mat zq = (X - M).array() * inv_var.array();  // (x - mu)/sigma^2
        accum(n.a, Mat(-g.array() * zq.array()));
        accum(n.b, Mat(g.array() * zq.array()));
        accum(n.c, Mat(g.array() * ((X - M).array() * zq.array() - 1.0)));
        break;
      }
      case Op::AddScalar: accum(n.a, g); break;
      case Op::MulScalar: accum(n.a, Mat(g * n.s0)); break;
      case Op::Minimum: {
        const Mat& A = vref(n.a);
        const Mat& B = vref(n.b);
        Mat mask = (A.array() <= B.array()).cast<double>();
        accum(n.a, Mat(g.array() * mask.array()));
        accum(n.b, Mat(g.array() * (1.0 - mask.array())));
        break;
      }
      case Op::Clip: {
        const Mat& A = vref(n.a);
        Mat mask = ((A.array() > n.s0) && (A.array() < n.s1)).cast<double>();
        accum(n.a, Mat(g.array() * mask.array()));
        break;
      }
      case Op::ConcatScalars:
        for (std::size_t i = 0; i < n.extra.size(); ++i)
          accum(n.extra[i], Mat(Mat::Constant(1, 1, g(0, static_cast<Eigen::Index>(i)))));
        break;
      case Op::ConcatCols: {
        Eigen::Index ca = vref(n.a).cols();
        accum(n.a, Mat(g.leftCols(ca)));
        accum(n.b, Mat(g.rightCols(g.cols() - ca)));
        break;
      }
      case Op::CumSumRows: {
        Mat ga = g;
        for (Eigen::Index r = ga.rows() - 2; r >= 0; --r) ga.row(r) += ga.row(r + 1);
        accum(n.a, ga);
        break;
      }
      case Op::GetElement: {
        Mat ga = Mat::Zero(vref(n.a).rows(), vref(n.a).cols());
        ga(static_cast<Eigen::Index>(n.s0), static_cast<Eigen::Index>(n.s1)) = g(0, 0);
        accum(n.a, ga);
        break;
      }
      case Op::SliceRows: {
        Mat ga = Mat::Zero(vref(n.a).rows(), vref(n.a).cols());
        ga.middleRows(static_cast<Eigen::Index>(n.s0), static_cast<Eigen::Index>(n.s1)) = g;
        accum(n.a, ga);
        break;
      }
      case Op::Reshape: {
        const Mat& A = vref(n.a);
        Mat ga(A.rows(), A.cols());
        Eigen::Index k = 0;
        for (Eigen::Index r = 0; r < A.rows(); ++r)
          for (Eigen::Index c = 0; c < A.cols(); ++c) {
            ga(r, c) = g(k / g.cols(), k % g.cols());
            ++k;
          }
        accum(n.a, ga);
        break;
      }
      case Op::Custom:
        for (std::size_t i = 0; i < n.extra.size(); ++i)
          accum(n.extra[i], Mat(g(0, 0) * n.partials[i]));
        break;
      case Op::Leaf: break;
    }
  }
};

inline const Mat& Var::value() const { return tape_->value_of(id_); }
inline const Mat& Var::grad() const { return tape_->grad_of(id_); }
inline double Var::scalar() const {
  const Mat& v = value();
  if (v.size() != 1) throw std::invalid_argument("scalar() on non-scalar var");
  return v(0, 0);
}

// Softened min/max over a set of scalar vars via temperature-beta log-sum-exp.
// softmin <= min <= softmin + ln(n)/beta, and dually for max.
inline Var softmin(Tape& tp, const std::vector<Var>& xs, double beta) {
  Var row = tp.concat_scalars(xs);
  return tp.mul_scalar(tp.logsumexp_row(tp.mul_scalar(row, -beta)), -1.0 / beta);
}

inline Var softmax(Tape& tp, const std::vector<Var>& xs, double beta) {
  Var row = tp.concat_scalars(xs);
  return tp.mul_scalar(tp.logsumexp_row(tp.mul_scalar(row, beta)), 1.0 / beta);
}

}  // namespace stlplan::ad

#endif
