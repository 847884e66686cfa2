#include "gassip/adam.hpp"
#include "gassip/autodiff.hpp"
#include "gassip/errors.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <string>

using namespace gassip;
namespace a = gassip::ad;

namespace {

constexpr int kInstances = 20;
constexpr double kTol = 1e-6;

// Uniform in [-2, 2] but at least `gap` away from zero.
Matrix away_from_zero(Rng& rng, Eigen::Index r, Eigen::Index c, double gap = 0.05) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double v = 0.0;
    do v = rng.uniform(-2.0, 2.0);
    while (std::abs(v) < gap);
    m.data()[i] = v;
  }
  return m;
}

// Contract an arbitrary-shape output to a scalar with a fixed random weight.
a::Var contract(a::Tape& t, a::Var out, const Matrix& r) { return a::sum(a::mul(out, t.constant(r))); }

Eigen::Index dim(Rng& rng) { return 1 + static_cast<Eigen::Index>(rng.below(4)); }

void check_unary(const char* name, const std::function<a::Var(a::Var)>& op, bool kink, bool scalar_out = false) {
  Rng rng(std::hash<std::string>{}(name));
  double worst = 0.0;
  for (int k = 0; k < kInstances; ++k) {
    const auto r = dim(rng), c = dim(rng);
    Param x("x", kink ? away_from_zero(rng, r, c) : oracle::random_matrix(rng, r, c, -2, 2));
    const Matrix w = scalar_out ? oracle::random_matrix(rng, 1, 1) : oracle::random_matrix(rng, r, c);
    const auto res = oracle::grad_check({&x}, [&](a::Tape& t) { return contract(t, op(t.param(x)), w); });
    worst = std::max(worst, res.max_rel_error);
  }
  INFO(name);
  CHECK(worst < kTol);
}

}  // namespace

TEST_CASE("finite differences: unary elementwise ops") {
  check_unary("sigmoid", [](a::Var v) { return a::sigmoid(v); }, false);
  check_unary("relu", [](a::Var v) { return a::relu(v); }, true);
  check_unary("leaky_relu", [](a::Var v) { return a::leaky_relu(v, 0.2); }, true);
  check_unary("scale", [](a::Var v) { return a::scale(v, -1.7); }, false);
  check_unary("softmax_rows", [](a::Var v) { return a::softmax_rows(v); }, false);
  check_unary("sum", [](a::Var v) { return a::sum(v); }, false, true);
  check_unary("mean", [](a::Var v) { return a::mean(v); }, false, true);
}

TEST_CASE("finite differences: binary ops") {
  Rng rng(100);
  double worst = 0.0;
  for (int k = 0; k < kInstances; ++k) {
    const auto n = dim(rng), m = dim(rng), p = dim(rng);
    Param x("x", oracle::random_matrix(rng, n, m, -2, 2));
    Param y("y", oracle::random_matrix(rng, n, m, -2, 2));
    Param z("z", oracle::random_matrix(rng, m, p, -2, 2));
    Param b("b", oracle::random_matrix(rng, 1, m, -2, 2));
    Param s("s", oracle::random_matrix(rng, 1, 3, -2, 2));
    Param s1("s1", oracle::random_matrix(rng, 1, 1, -2, 2));
    const Matrix wnm = oracle::random_matrix(rng, n, m);
    const Matrix wnp = oracle::random_matrix(rng, n, p);
    const Matrix w2 = oracle::random_matrix(rng, 2 * n, m);
    const auto idx = static_cast<Eigen::Index>(rng.below(3));
    auto run = [&](const std::vector<Param*>& ps, const std::function<a::Var(a::Tape&)>& f) {
      worst = std::max(worst, oracle::grad_check(ps, f).max_rel_error);
    };
    run({&x, &z}, [&](a::Tape& t) { return contract(t, a::matmul(t.param(x), t.param(z)), wnp); });
    run({&x, &y}, [&](a::Tape& t) { return contract(t, a::add(t.param(x), t.param(y)), wnm); });
    run({&x, &y}, [&](a::Tape& t) { return contract(t, a::sub(t.param(x), t.param(y)), wnm); });
    run({&x, &y}, [&](a::Tape& t) { return contract(t, a::mul(t.param(x), t.param(y)), wnm); });
    run({&x, &b}, [&](a::Tape& t) { return contract(t, a::add_row(t.param(x), t.param(b)), wnm); });
    run({&x, &s}, [&](a::Tape& t) { return contract(t, a::scale_by_entry(t.param(x), t.param(s), idx), wnm); });
    run({&x, &s1}, [&](a::Tape& t) { return contract(t, a::sub_scalar(t.param(x), t.param(s1)), wnm); });
    run({&x, &y}, [&](a::Tape& t) { return contract(t, a::concat_rows(t.param(x), t.param(y)), w2); });
    // Same Param used twice exercises gradient accumulation through fan-out.
    run({&x}, [&](a::Tape& t) {
      const a::Var v = t.param(x);
      return contract(t, a::mul(v, v), wnm);
    });
  }
  CHECK(worst < kTol);
}

TEST_CASE("finite differences: graph ops") {
  Rng rng(200);
  double worst_gather = 0.0, worst_spmm = 0.0, worst_div = 0.0, worst_esm = 0.0;
  for (int k = 0; k < kInstances; ++k) {
    const int n = 2 + static_cast<int>(rng.below(6));
    const auto d = dim(rng);
    DirectedEdges edges;
    const int ne = 1 + static_cast<int>(rng.below(12));
    for (int e = 0; e < ne; ++e) edges.push_back(static_cast<NodeId>(rng.below(n)), static_cast<NodeId>(rng.below(n)));
    Param x("x", oracle::random_matrix(rng, n, d, -2, 2));
    Param w("w", oracle::random_matrix(rng, ne, 1, -2, 2));
    Param sc("sc", oracle::random_matrix(rng, ne, 1, -2, 2));
    Param mk("mk", oracle::random_matrix(rng, ne, 1, 0.2, 1.0));
    Param den("den", away_from_zero(rng, n, 1, 0.3));
    std::vector<NodeId> idx;
    for (int i = 0; i < 5; ++i) idx.push_back(static_cast<NodeId>(rng.below(n)));
    const Matrix wnd = oracle::random_matrix(rng, n, d);
    const Matrix w5 = oracle::random_matrix(rng, 5, d);
    const Matrix we = oracle::random_matrix(rng, ne, 1);

    worst_gather = std::max(worst_gather, oracle::grad_check({&x}, [&](a::Tape& t) {
                                            return contract(t, a::gather_rows(t.param(x), idx), w5);
                                          }).max_rel_error);
    worst_spmm = std::max(worst_spmm, oracle::grad_check({&x, &w}, [&](a::Tape& t) {
                                        return contract(t, a::spmm(edges, t.param(w), t.param(x)), wnd);
                                      }).max_rel_error);
    worst_div = std::max(worst_div, oracle::grad_check({&x, &den}, [&](a::Tape& t) {
                                      return contract(t, a::row_div_safe(t.param(x), t.param(den)), wnd);
                                    }).max_rel_error);
    worst_esm = std::max(worst_esm, oracle::grad_check({&sc, &mk}, [&](a::Tape& t) {
                                      return contract(t, a::edge_softmax(edges, n, t.param(sc), t.param(mk)), we);
                                    }).max_rel_error);
  }
  CHECK(worst_gather < kTol);
  CHECK(worst_spmm < kTol);
  CHECK(worst_div < kTol);
  CHECK(worst_esm < kTol);
}

TEST_CASE("finite differences: losses") {
  Rng rng(300);
  double worst_ce = 0.0, worst_ent = 0.0;
  for (int k = 0; k < kInstances; ++k) {
    const int n = 2 + static_cast<int>(rng.below(5));
    const int c = 2 + static_cast<int>(rng.below(4));
    Param z("z", oracle::random_matrix(rng, n, c, -2, 2));
    std::vector<int> targets;
    for (int i = 0; i < n; ++i) targets.push_back(static_cast<int>(rng.below(c)));
    std::vector<NodeId> nodes;
    std::vector<double> wts;
    for (int i = 0; i < n; ++i) {
      if (rng.uniform() < 0.7 || nodes.empty()) {
        nodes.push_back(i);
        wts.push_back(rng.uniform(0.1, 1.0));
      }
    }
    worst_ce = std::max(worst_ce, oracle::grad_check({&z}, [&](a::Tape& t) {
                                    return a::weighted_cross_entropy(t.param(z), targets, nodes, wts);
                                  }).max_rel_error);
    Param m("m", oracle::random_matrix(rng, n, c, 0.05, 0.95));
    worst_ent = std::max(worst_ent, oracle::grad_check({&m}, [&](a::Tape& t) {
                                      return a::mean_binary_entropy(t.param(m));
                                    }).max_rel_error);
  }
  CHECK(worst_ce < kTol);
  CHECK(worst_ent < kTol);
}

TEST_CASE("sum of a matrix has a ones gradient") {
  Param x("x", Matrix::Constant(3, 2, 0.7));
  a::Tape t;
  gradients(t, a::sum(t.param(x)));
  CHECK(x.grad == Matrix::Ones(3, 2));
}

TEST_CASE("sigmoid gradient at zero is a quarter") {
  Param x("x", Matrix::Zero(1, 1));
  a::Tape t;
  gradients(t, a::sum(a::sigmoid(t.param(x))));
  CHECK(x.grad(0, 0) == 0.25);
}

TEST_CASE("gradients accumulate across backward calls") {
  Param x("x", Matrix::Constant(2, 2, 1.5));
  for (int i = 0; i < 2; ++i) {
    a::Tape t;
    gradients(t, a::sum(a::scale(t.param(x), 3.0)));
  }
  CHECK(x.grad == Matrix::Constant(2, 2, 6.0));
  x.zero_grad();
  CHECK(x.grad.isZero());
}

TEST_CASE("backward on a non-scalar throws") {
  Param x("x", Matrix::Ones(2, 2));
  a::Tape t;
  CHECK_THROWS_AS(t.backward(t.param(x)), std::invalid_argument);
}

TEST_CASE("shape mismatches throw") {
  a::Tape t;
  const a::Var p = t.constant(Matrix::Ones(2, 3));
  const a::Var q = t.constant(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(a::matmul(p, q), std::invalid_argument);
  CHECK_THROWS_AS(a::add(p, q), std::invalid_argument);
}

TEST_CASE("non-finite values are rejected") {
  a::Tape t;
  Matrix bad = Matrix::Ones(1, 2);
  bad(0, 1) = std::nan("");
  CHECK_THROWS_AS(a::scale(t.constant(bad), 1.0), NumericalError);
  const a::Var big = t.constant(Matrix::Constant(1, 1, 1e308));
  CHECK_THROWS_AS(a::scale(big, 10.0), NumericalError);
}

TEST_CASE("adam first step moves by lr against the gradient sign") {
  Param p("p", Matrix::Zero(1, 3));
  p.grad << 2.0, -0.5, 0.0;
  AdamState st = make_adam_state(p, 0.1);
  adam_step(p, st);
  CHECK(p.value(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(p.value(0, 1) == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(p.value(0, 2) == 0.0);
  CHECK(p.grad.isZero());
}

TEST_CASE("adam matches a hand-rolled reference over many steps") {
  Rng rng(4);
  Param p("p", oracle::random_matrix(rng, 3, 2));
  Matrix ref = p.value;
  oracle::AdamRef r;
  Adam opt({&p}, 0.01);
  for (int s = 0; s < 50; ++s) {
    const Matrix g = oracle::random_matrix(rng, 3, 2);
    p.grad = g;
    opt.step();
    r.step(ref, g, 0.01);
  }
  CHECK((p.value - ref).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("entropy gradient stays finite at saturated masks") {
  Param s("s", Matrix(1, 3));
  s.value << 50.0, -800.0, 0.0;
  a::Tape t;
  gradients(t, a::mean_binary_entropy(a::sigmoid(t.param(s))));
  CHECK(s.grad.allFinite());
  CHECK(s.grad(0, 0) == 0.0);
  CHECK(s.grad(0, 2) == 0.0);
}
