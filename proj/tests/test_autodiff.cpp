#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "npca/autodiff.hpp"
#include "npca/optim.hpp"

using namespace npca;
using namespace npca::test;

namespace {

// compares the tape gradient of a scalar-valued graph against central
// finite differences with respect to one input matrix
void gradcheck(const std::function<Var(Tape&, Var)>& build, const Matrix& x0, double tol = 1e-5, double h = 1e-5) {
  Tape tp;
  Var x = tp.param(x0);
  Var loss = build(tp, x);
  tp.backward(loss);
  Matrix analytic = tp.grad(x);

  auto value = [&](const Matrix& xv) {
    Tape t2;
    Var xx = t2.param(xv);
    return t2.value(build(t2, xx))(0, 0);
  };
  Matrix numeric = finite_diff_grad(value, x0, h);
  for (int i = 0; i < analytic.size(); ++i) {
    const double want = numeric.data()[i];
    const double got = analytic.data()[i];
    REQUIRE(std::fabs(got - want) <= tol * std::max(1.0, std::fabs(want)));
  }
}

Matrix positive_random(int r, int c, Rng& rng) {
  Matrix m(r, c);
  for (auto& v : m.data()) v = 0.5 + rng.uniform();
  return m;
}

}  // namespace

TEST_CASE("gradients of arithmetic primitives match finite differences", "[autodiff]") {
  Rng rng(101);
  Matrix x0 = Matrix::gaussian(3, 3, rng);
  Matrix other = Matrix::gaussian(3, 3, rng);
  Matrix row = Matrix::gaussian(1, 3, rng);
  Matrix posrow = positive_random(1, 3, rng);
  Matrix col = Matrix::gaussian(3, 1, rng);

  gradcheck([&](Tape& t, Var x) { return t.sum(t.matmul(x, t.constant(other))); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.matmul(t.constant(other), x)); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.add(x, t.constant(other))); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.sub(t.constant(other), x)); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.mul(x, t.constant(other))); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.div(t.constant(other), t.sadd(t.mul(x, x), 1.0))); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.add_rowvec(x, t.constant(row))); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.sub_rowvec(x, t.constant(row))); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.mul_rowvec(x, t.constant(row))); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.div_rowvec(x, t.constant(posrow))); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.sub_colvec(x, t.constant(col))); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.smul(x, -2.5)); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.sadd(x, 3.0)); }, x0);

  // row-vector operand side
  gradcheck([&](Tape& t, Var r) { return t.sum(t.add_rowvec(t.constant(x0), r)); }, row);
  gradcheck([&](Tape& t, Var r) { return t.sum(t.mul_rowvec(t.constant(x0), r)); }, row);
  gradcheck([&](Tape& t, Var r) { return t.sum(t.div_rowvec(t.constant(x0), r)); }, posrow);
  gradcheck([&](Tape& t, Var c) { return t.sum(t.sub_colvec(t.constant(x0), c)); }, col);
}

TEST_CASE("gradients of scalar-Var primitives match finite differences", "[autodiff]") {
  Rng rng(102);
  Matrix x0 = Matrix::gaussian(3, 3, rng);
  Matrix s0 = positive_random(1, 1, rng);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.mul_scalarvar(x, t.constant(s0))); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.div_scalarvar(x, t.constant(s0))); }, x0);
  gradcheck([&](Tape& t, Var s) { return t.sum(t.mul_scalarvar(t.constant(x0), s)); }, s0);
  gradcheck([&](Tape& t, Var s) { return t.sum(t.div_scalarvar(t.constant(x0), s)); }, s0);
}

TEST_CASE("gradients of nonlinearities match finite differences", "[autodiff]") {
  Rng rng(103);
  Matrix x0 = Matrix::gaussian(3, 3, rng);
  // keep relu inputs away from the kink
  Matrix xk = x0;
  for (auto& v : xk.data())
    if (std::fabs(v) < 1e-3) v = 0.2;
  Matrix pos = positive_random(3, 3, rng);

  gradcheck([&](Tape& t, Var x) { return t.sum(t.tanh(x)); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.relu(x)); }, xk, 1e-3);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.softplus(x)); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.exp(x)); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.log(x)); }, pos);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.log_abs(x)); }, xk);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.sqrt(x)); }, pos);
}

TEST_CASE("gradients of reductions and reshapes match finite differences", "[autodiff]") {
  Rng rng(104);
  Matrix x0 = Matrix::gaussian(3, 3, rng);
  Matrix wide = Matrix::gaussian(3, 6, rng);
  Matrix sq1 = Matrix::gaussian(3, 3, rng);
  Matrix sq2 = Matrix::gaussian(3, 3, rng);
  std::vector<int> perm = {2, 0, 1};
  gradcheck([&](Tape& t, Var x) { return t.mean(x); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.mul(t.row_sum(x), t.row_sum(x))); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.mul(t.col_mean(x), t.col_mean(x))); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.mul(t.slice_cols(x, 1, 3), t.slice_cols(x, 0, 2))); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.mul(t.concat_cols(x, x), t.constant(wide))); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.mul(t.transpose(x), t.constant(sq1))); }, x0);
  gradcheck([&](Tape& t, Var x) { return t.sum(t.mul(t.permute_rows(x, perm), t.constant(sq2))); }, x0);
}

TEST_CASE("spec composite: sum(tanh(W x)) gradient w.r.t. W", "[autodiff]") {
  Rng rng(105);
  Matrix w0 = Matrix::gaussian(3, 3, rng);
  Matrix x = Matrix::gaussian(3, 3, rng);
  gradcheck([&](Tape& t, Var w) { return t.sum(t.tanh(t.matmul(w, t.constant(x)))); }, w0);
}

TEST_CASE("softplus slope at zero is one half", "[autodiff]") {
  Tape tp;
  Var x = tp.param(Matrix(1, 1));
  Var y = tp.softplus(x);
  tp.backward(y);
  REQUIRE(tp.grad(x)(0, 0) == Catch::Approx(0.5));
}

TEST_CASE("stop_gradient forwards values and cuts gradient", "[autodiff]") {
  // d/dx [ stop(x) * x ] at x = 3 is 3, not 6
  Tape tp;
  Var x = tp.param(Matrix::filled(1, 1, 3.0));
  Var y = tp.mul(tp.stop_gradient(x), x);
  REQUIRE(tp.value(y)(0, 0) == Catch::Approx(9.0));
  tp.backward(y);
  REQUIRE(tp.grad(x)(0, 0) == Catch::Approx(3.0));
}

TEST_CASE("a subgraph behind stop_gradient gets exactly zero gradient", "[autodiff]") {
  Rng rng(106);
  Tape tp;
  Var w = tp.param(Matrix::gaussian(3, 3, rng));
  Var x = tp.constant(Matrix::gaussian(3, 2, rng));
  Var hidden = tp.tanh(tp.matmul(w, x));
  Var loss = tp.sum(tp.stop_gradient(hidden));
  tp.backward(loss);
  Matrix g = tp.grad(w);
  for (double v : g.data()) REQUIRE(v == 0.0);
}

TEST_CASE("tape usage errors", "[autodiff]") {
  Tape tp;
  Var x = tp.param(Matrix::filled(1, 1, 2.0));
  Var y = tp.mul(x, x);
  REQUIRE_THROWS_AS(tp.grad(x), std::logic_error);  // backward has not run
  tp.backward(y);
  REQUIRE_THROWS_AS(tp.backward(y), std::logic_error);  // no silent double accumulation
  tp.reset_gradients();
  tp.backward(y);
  REQUIRE(tp.grad(x)(0, 0) == Catch::Approx(4.0));

  REQUIRE_THROWS_AS(tp.backward(tp.param(Matrix(2, 2))), std::logic_error);
  REQUIRE_THROWS_AS(tp.add(x, tp.param(Matrix(2, 2))), std::invalid_argument);
  REQUIRE_THROWS_AS(tp.matmul(tp.param(Matrix(2, 3)), tp.param(Matrix(2, 3))), std::invalid_argument);
  Tape other;
  REQUIRE_THROWS_AS(other.value(Var{5, 1, 1}), std::logic_error);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged", "[adam]") {
  Matrix p = Matrix::filled(2, 2, 1.5);
  Matrix orig = p;
  std::vector<Matrix*> params = {&p};
  Adam adam(params);
  for (int i = 0; i < 5; ++i) REQUIRE(adam.step(params, {Matrix(2, 2)}, 1e-2));
  REQUIRE(max_abs_diff(p, orig) == 0.0);
}

TEST_CASE("adam: first step from rest moves by lr g/(|g|+eps)", "[adam]") {
  Rng rng(107);
  Matrix p = Matrix::gaussian(3, 3, rng);
  Matrix orig = p;
  Matrix g = Matrix::gaussian(3, 3, rng);
  std::vector<Matrix*> params = {&p};
  Adam adam(params);
  const double lr = 1e-3;
  REQUIRE(adam.step(params, {g}, lr));
  for (int i = 0; i < p.size(); ++i) {
    const double want = -lr * g.data()[i] / (std::fabs(g.data()[i]) + 1e-8);
    REQUIRE(p.data()[i] - orig.data()[i] == Catch::Approx(want).epsilon(1e-6));
  }
}

TEST_CASE("adam: constant gradient settles at step magnitude lr", "[adam]") {
  Matrix p(1, 1);
  Matrix g = Matrix::filled(1, 1, 0.37);
  std::vector<Matrix*> params = {&p};
  Adam adam(params);
  const double lr = 1e-3;
  double before = 0.0;
  for (int i = 0; i < 500; ++i) {
    before = p(0, 0);
    adam.step(params, {g}, lr);
  }
  REQUIRE(std::fabs(p(0, 0) - before) == Catch::Approx(lr).epsilon(0.01));
}

TEST_CASE("adam: non-finite gradient skips the update and reports it", "[adam]") {
  Matrix p = Matrix::filled(1, 1, 1.0);
  Matrix g = Matrix::filled(1, 1, std::numeric_limits<double>::quiet_NaN());
  std::vector<Matrix*> params = {&p};
  Adam adam(params);
  REQUIRE_FALSE(adam.step(params, {g}, 1e-3));
  REQUIRE(p(0, 0) == 1.0);
}

TEST_CASE("cosine schedule endpoints", "[adam]") {
  REQUIRE(cosine_lr(1e-3, 0, 100) == Catch::Approx(1e-3));
  REQUIRE(cosine_lr(1e-3, 50, 100) == Catch::Approx(5e-4));
  REQUIRE(cosine_lr(1e-3, 100, 100) == Catch::Approx(0.0).margin(1e-18));
}
