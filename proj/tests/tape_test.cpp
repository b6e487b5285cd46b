#include "stlplan/mlp.hpp"
#include "stlplan/params.hpp"
#include "stlplan/rng.hpp"
#include "stlplan/tape.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace stlplan;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

// Central finite difference of a scalar function of one matrix entry.
template <typename F>
double fd(F f, Mat x, Eigen::Index r, Eigen::Index c, double h = 1e-6) {
  Mat xp = x, xm = x;
  xp(r, c) += h;
  xm(r, c) -= h;
  return (f(xp) - f(xm)) / (2 * h);
}

double rel_err(double a, double b) {
  double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

}  // namespace

TEST_CASE("scalar primitive derivatives match known values") {
  Tape tp;

  SECTION("d/dx tanh(x) at 0 is 1") {
    Var x = tp.input(0.0);
    Var y = tp.tanh(x);
    tp.backward(y);
    REQUIRE(x.grad()(0, 0) == Catch::Approx(1.0));
  }

  SECTION("d/dx logsumexp([x, 0]) at x=0 is 0.5") {
    Var x = tp.input(0.0);
    Var zero = tp.input(0.0);
    Var row = tp.concat_scalars({x, zero});
    Var y = tp.logsumexp_row(row);
    tp.backward(y);
    REQUIRE(x.grad()(0, 0) == Catch::Approx(0.5));
  }

  SECTION("standard normal log-density at the mode") {
    Var x = tp.input(0.0);
    Var mu = tp.input(0.0);
    Var ls = tp.input(0.0);  // sigma = 1
    Var y = tp.gaussian_logpdf(x, mu, ls);
    REQUIRE(y.scalar() == Catch::Approx(-0.5 * std::log(2 * M_PI)).epsilon(1e-12));
    REQUIRE(y.scalar() == Catch::Approx(-0.9189385332).epsilon(1e-6));
  }
}

TEST_CASE("backward on simple graphs") {
  SECTION("y = x*x at x=3 gives grad 6") {
    Tape tp;
    Var x = tp.input(3.0);
    Var y = tp.mul(x, x);
    tp.backward(y);
    REQUIRE(x.grad()(0, 0) == Catch::Approx(6.0));
  }

  SECTION("identity matmul routes gradient through") {
    Tape tp;
    Var a = tp.input(Mat(Mat::Identity(2, 2)));
    Mat xv(2, 1);
    xv << 1, 1;
    Var x = tp.input(xv);
    Var y = tp.sum(tp.matmul(a, x));
    tp.backward(y);
    REQUIRE(x.grad()(0, 0) == Catch::Approx(1.0));
    REQUIRE(x.grad()(1, 0) == Catch::Approx(1.0));
  }

  SECTION("unreachable inputs get exact zero") {
    Tape tp;
    Var x = tp.input(2.0);
    Var z = tp.input(5.0);
    Var y = tp.mul(x, x);
    tp.backward(y);
    REQUIRE(z.grad()(0, 0) == 0.0);
  }

  SECTION("non-scalar output is rejected") {
    Tape tp;
    Var x = tp.input(Mat(Mat::Ones(2, 2)));
    REQUIRE_THROWS_AS(tp.backward(x), std::invalid_argument);
  }
}

TEST_CASE("every primitive matches central finite differences") {
  RngStream rng(42);
  auto rand_mat = [&](int r, int c, double lo = 0.5, double hi = 2.0) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
    return m;
  };

  // scalar loss built from each primitive; checked at well-conditioned points
  struct Case {
    const char* name;
    std::function<double(const Mat&)> loss;  // value for FD
    std::function<Var(Tape&, Var)> graph;    // same function on tape
    Mat x0;
  };

  Mat a = rand_mat(3, 4);
  Mat b = rand_mat(3, 4);
  Mat w = rand_mat(4, 2);

  std::vector<Case> cases;
  cases.push_back({"add", [&](const Mat& x) { return (x + b).sum(); },
                   [&](Tape& tp, Var x) { return tp.sum(tp.add(x, tp.input(b))); }, a});
  cases.push_back({"sub", [&](const Mat& x) { return (x - b).sum(); },
                   [&](Tape& tp, Var x) { return tp.sum(tp.sub(x, tp.input(b))); }, a});
  cases.push_back({"mul", [&](const Mat& x) { return x.cwiseProduct(b).sum(); },
                   [&](Tape& tp, Var x) { return tp.sum(tp.mul(x, tp.input(b))); }, a});
  cases.push_back({"div", [&](const Mat& x) { return x.cwiseQuotient(b).sum(); },
                   [&](Tape& tp, Var x) { return tp.sum(tp.div(x, tp.input(b))); }, a});
  cases.push_back({"neg_exp", [&](const Mat& x) { return (-x).array().exp().sum(); },
                   [&](Tape& tp, Var x) { return tp.sum(tp.exp(tp.neg(x))); }, a});
  cases.push_back({"log", [&](const Mat& x) { return x.array().log().sum(); },
                   [&](Tape& tp, Var x) { return tp.sum(tp.log(x)); }, a});
  cases.push_back({"tanh", [&](const Mat& x) { return x.array().tanh().sum(); },
                   [&](Tape& tp, Var x) { return tp.sum(tp.tanh(x)); }, a});
  cases.push_back({"sqrt", [&](const Mat& x) { return x.array().sqrt().sum(); },
                   [&](Tape& tp, Var x) { return tp.sum(tp.sqrt(x)); }, a});
  cases.push_back({"square", [&](const Mat& x) { return x.array().square().sum(); },
                   [&](Tape& tp, Var x) { return tp.sum(tp.square(x)); }, a});
  cases.push_back({"matmul", [&](const Mat& x) { return (x * w).sum(); },
                   [&](Tape& tp, Var x) { return tp.sum(tp.matmul(x, tp.input(w))); }, a});
  cases.push_back({"mean", [&](const Mat& x) { return x.mean(); },
                   [&](Tape& tp, Var x) { return tp.mean(x); }, a});
  cases.push_back({"row_sum", [&](const Mat& x) { return x.rowwise().sum().squaredNorm(); },
                   [&](Tape& tp, Var x) { return tp.sum(tp.square(tp.row_sum(x))); }, a});
  cases.push_back({"logsumexp",
                   [&](const Mat& x) {
                     double s = 0;
                     for (Eigen::Index r = 0; r < x.rows(); ++r) {
                       double mx = x.row(r).maxCoeff();
                       s += mx + std::log((x.row(r).array() - mx).exp().sum());
                     }
                     return s;
                   },
                   [&](Tape& tp, Var x) { return tp.sum(tp.logsumexp_row(x)); }, a});
  cases.push_back({"minimum", [&](const Mat& x) { return x.cwiseMin(b).sum(); },
                   [&](Tape& tp, Var x) { return tp.sum(tp.minimum(x, tp.input(b))); },
                   rand_mat(3, 4)});
  cases.push_back({"clip", [&](const Mat& x) { return x.cwiseMax(0.8).cwiseMin(1.7).sum(); },
                   [&](Tape& tp, Var x) { return tp.sum(tp.clip(x, 0.8, 1.7)); }, rand_mat(3, 4)});
  cases.push_back({"cumsum", [&](const Mat& x) {
                     Mat c = x;
                     for (Eigen::Index r = 1; r < c.rows(); ++r) c.row(r) += c.row(r - 1);
                     return c.squaredNorm();
                   },
                   [&](Tape& tp, Var x) { return tp.sum(tp.square(tp.cumsum_rows(x))); }, a});
  cases.push_back({"reshape_slice", [&](const Mat& x) {
                     return x(1, 1) * 2.0 + x(2, 3);
                   },
                   [&](Tape& tp, Var x) {
                     return tp.add(tp.mul_scalar(tp.get_element(x, 1, 1), 2.0),
                                   tp.get_element(x, 2, 3));
                   },
                   a});

  for (auto& tc : cases) {
    INFO(tc.name);
    Tape tp;
    Var x = tp.input(tc.x0);
    Var y = tc.graph(tp, x);
    tp.backward(y);
    for (Eigen::Index r = 0; r < tc.x0.rows(); ++r) {
      for (Eigen::Index c = 0; c < tc.x0.cols(); ++c) {
        double want = fd(tc.loss, tc.x0, r, c);
        double got = x.grad()(r, c);
        REQUIRE(rel_err(got, want) < 1e-6);
      }
    }
  }
}

TEST_CASE("gaussian_logpdf gradients and broadcast reduction") {
  RngStream rng(7);
  Mat x(3, 2), mu(3, 2), ls(1, 2);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      x(i, j) = rng.uniform(-1, 1);
      mu(i, j) = rng.uniform(-1, 1);
    }
  ls << 0.2, -0.3;

  auto loss = [&](const Mat& xx, const Mat& mm, const Mat& ss) {
    double total = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 2; ++j) {
        double sig = std::exp(ss(0, j));
        double z = (xx(i, j) - mm(i, j)) / sig;
        total += -0.5 * std::log(2 * M_PI) - ss(0, j) - 0.5 * z * z;
      }
    return total;
  };

  Tape tp;
  Var vx = tp.input(x), vm = tp.input(mu), vs = tp.input(ls);
  Var y = tp.sum(tp.gaussian_logpdf(vx, vm, vs));
  tp.backward(y);

  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double want = fd([&](const Mat& m) { return loss(m, mu, ls); }, x, i, j);
      REQUIRE(rel_err(vx.grad()(i, j), want) < 1e-6);
      want = fd([&](const Mat& m) { return loss(x, m, ls); }, mu, i, j);
      REQUIRE(rel_err(vm.grad()(i, j), want) < 1e-6);
    }
  for (int j = 0; j < 2; ++j) {
    double want = fd([&](const Mat& m) { return loss(x, mu, m); }, ls, 0, j);
    REQUIRE(rel_err(vs.grad()(0, j), want) < 1e-6);
  }
}

TEST_CASE("random MLP loss gradients match finite differences") {
  RngStream rng(3);
  ad::ParamSet ps;
  ad::Mlp net("net", {5, 8, 8, 1});
  net.init_params(ps, rng);

  Mat x(4, 5);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j) x(i, j) = rng.uniform(-1, 1);

  auto loss_value = [&](const ad::ParamSet& p) {
    Mat out = net.forward(x, p);
    return out.array().square().sum();
  };

  Tape tp;
  auto leaves = ps.attach(tp);
  Var out = net.forward(tp, tp.input(x), ps, leaves);
  Var loss = tp.sum(tp.square(out));
  tp.backward(loss);

  double h = 1e-5;
  for (std::size_t pi = 0; pi < ps.count(); ++pi) {
    const Mat& grad = leaves[pi].grad();
    Mat& val = ps.value_at(pi);
    for (Eigen::Index r = 0; r < val.rows(); ++r) {
      for (Eigen::Index c = 0; c < val.cols(); ++c) {
        double keep = val(r, c);
        val(r, c) = keep + h;
        double up = loss_value(ps);
        val(r, c) = keep - h;
        double dn = loss_value(ps);
        val(r, c) = keep;
        double want = (up - dn) / (2 * h);
        REQUIRE(rel_err(grad(r, c), want) < 1e-4);
      }
    }
  }
}

TEST_CASE("backward is linear") {
  RngStream rng(11);
  Mat x0(2, 2);
  x0 << 0.7, 1.3, 0.4, 2.0;

  auto grad_of = [&](double a, double b) {
    Tape tp;
    Var x = tp.input(x0);
    Var f = tp.sum(tp.square(x));
    Var g = tp.sum(tp.exp(tp.neg(x)));
    Var y = tp.add(tp.mul_scalar(f, a), tp.mul_scalar(g, b));
    tp.backward(y);
    return Mat(x.grad());
  };

  Mat gf = grad_of(1, 0), gg = grad_of(0, 1), mix = grad_of(2.5, -1.5);
  REQUIRE((mix - (2.5 * gf - 1.5 * gg)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("identical tapes produce bitwise-identical gradients") {
  auto run = [] {
    RngStream rng(99);
    ad::ParamSet ps;
    ad::Mlp net("net", {6, 16, 16, 1});
    net.init_params(ps, rng);
    Mat x(8, 6);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 6; ++j) x(i, j) = rng.uniform(-1, 1);
    Tape tp;
    auto leaves = ps.attach(tp);
    Var loss = tp.sum(tp.square(net.forward(tp, tp.input(x), ps, leaves)));
    tp.backward(loss);
    std::vector<double> bits;
    for (auto& l : leaves)
      for (Eigen::Index i = 0; i < l.grad().size(); ++i) bits.push_back(l.grad()(i));
    return bits;
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
}

TEST_CASE("adam_step behavior") {
  ad::AdamConfig cfg;
  cfg.lr = 0.001;

  SECTION("zero gradient from rest leaves params unchanged while moments decay") {
    Mat p(1, 1);
    p << 1.5;
    ad::AdamState st;
    ad::adam_step(p, Mat::Zero(1, 1), st, cfg);
    REQUIRE(p(0, 0) == 1.5);

    st.m = Mat::Constant(1, 1, 0.3);
    Mat before_m = st.m;
    ad::adam_step(p, Mat::Zero(1, 1), st, cfg);
    REQUIRE(st.m(0, 0) == Catch::Approx(0.9 * before_m(0, 0)));
  }

  SECTION("first step from rest with unit gradient moves by -lr") {
    Mat p = Mat::Zero(1, 1);
    ad::AdamState st;
    ad::adam_step(p, Mat::Constant(1, 1, 1.0), st, cfg);
    REQUIRE(p(0, 0) == Catch::Approx(-0.001).epsilon(1e-6));
  }

  SECTION("constant gradient steps approach lr * sign(g)") {
    Mat p = Mat::Zero(1, 1);
    ad::AdamState st;
    Mat g = Mat::Constant(1, 1, 3.7);
    double prev = 0;
    double step_size = 0;
    for (int i = 0; i < 500; ++i) {
      prev = p(0, 0);
      ad::adam_step(p, g, st, cfg);
      step_size = prev - p(0, 0);
    }
    REQUIRE(step_size == Catch::Approx(cfg.lr).epsilon(1e-3));
  }

  SECTION("shape mismatch is rejected") {
    Mat p = Mat::Zero(2, 2);
    ad::AdamState st;
    REQUIRE_THROWS_AS(ad::adam_step(p, Mat::Zero(1, 4), st, cfg), std::invalid_argument);
  }
}
