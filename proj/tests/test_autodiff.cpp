#include <cmath>

#include "doctest.h"
#include "enes/autodiff.hpp"
#include "enes/error.hpp"
#include "test_util.hpp"

using namespace enes;
using namespace enes::ad;
using testutil::mat_rel_err;
using testutil::random_mat;

namespace {

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

struct Input {
  int items, cols;
  bool dual;
  double lo = -1.0, hi = 1.0;
};

// Checks an op two ways against central differences: output tangent rows are
// directional derivatives of the value rows, and the adjoint of
// L = <seed, all output rows> matches dL/d(every input entry), tangent rows
// included.
void check_op(const Builder& build, const std::vector<Input>& specs, int tangents, std::uint64_t seed = 1,
              double tol = 1e-6) {
  Rng rng = make_rng(seed, "ad-test");
  Tape t(tangents);
  std::vector<Var> in;
  std::vector<DualTensor> values;
  for (const Input& s : specs) {
    DualTensor d(s.items, s.dual ? tangents + 1 : 1, s.cols);
    d.value() = random_mat(rng, s.items, s.cols, s.lo, s.hi);
    for (int c = 1; c < d.comps; ++c) d.comp(c) = random_mat(rng, s.items, s.cols);
    values.push_back(d);
    in.push_back(t.leaf(d, true));
  }
  const Var out = build(t, in);
  const DualTensor y = t.value(out);
  const double h = 1e-6;

  // Tangents.
  for (int c = 1; c <= tangents; ++c) {
    if (y.comps == 1) break;
    auto shifted = [&](double eps) {
      for (std::size_t k = 0; k < in.size(); ++k) {
        DualTensor d = values[k];
        if (d.dual()) d.value() += eps * values[k].comp(c);
        t.set_leaf(in[k], d);
      }
      t.replay();
      return Mat(t.value(out).value());
    };
    const Mat fd = (shifted(h) - shifted(-h)) / (2 * h);
    CHECK(mat_rel_err(Mat(y.comp(c)), fd) < tol);
  }
  for (std::size_t k = 0; k < in.size(); ++k) t.set_leaf(in[k], values[k]);
  t.replay();

  // Adjoints.
  const Mat seed_m = random_mat(rng, static_cast<int>(y.data.rows()), y.cols());
  t.zero_grads();
  t.backward(out, seed_m);
  for (std::size_t k = 0; k < in.size(); ++k) {
    const Mat g = t.grad(in[k]);
    Mat fd(g.rows(), g.cols());
    for (int i = 0; i < g.rows(); ++i) {
      for (int j = 0; j < g.cols(); ++j) {
        auto loss = [&](double eps) {
          DualTensor d = values[k];
          d.data(i, j) += eps;
          t.set_leaf(in[k], d);
          t.replay();
          return t.value(out).data.cwiseProduct(seed_m).sum();
        };
        fd(i, j) = (loss(h) - loss(-h)) / (2 * h);
      }
    }
    t.set_leaf(in[k], values[k]);
    t.replay();
    CHECK(mat_rel_err(g, fd) < tol);
  }
}

Builder unary(Var (*op)(Tape&, Var)) {
  return [op](Tape& t, const std::vector<Var>& v) { return op(t, v[0]); };
}

}  // namespace

TEST_CASE("elementwise rules match finite differences through tangent rows") {
  for (auto op : {&gelu, &sigmoid, &ad::sin, &ad::cos, &ad::exp, &square, &logcosh}) {
    check_op(unary(op), {{3, 4, true}}, 2);
  }
  check_op(unary(&ad::sqrt), {{3, 4, true, 0.5, 2.0}}, 2);
  check_op(unary(&reciprocal), {{3, 4, true, 0.5, 2.0}}, 2);
  check_op(unary(&ad::abs), {{3, 4, true, 0.2, 1.0}}, 2);
}

TEST_CASE("binary and linear primitives") {
  check_op([](Tape& t, const std::vector<Var>& v) { return affine(t, v[0], v[1], v[2]); },
           {{3, 4, true}, {5, 4, false}, {1, 5, false}}, 2);
  check_op([](Tape& t, const std::vector<Var>& v) { return affine(t, v[0], v[1]); }, {{3, 4, true}, {5, 4, false}}, 0);
  check_op([](Tape& t, const std::vector<Var>& v) { return axpby(t, v[0], v[1], 0.3, -1.7); },
           {{3, 4, true}, {3, 4, false}}, 2);
  check_op([](Tape& t, const std::vector<Var>& v) { return mul(t, v[0], v[1]); }, {{3, 4, true}, {3, 4, true}}, 2);
  check_op([](Tape& t, const std::vector<Var>& v) { return mul(t, v[0], v[1]); }, {{3, 4, true}, {3, 4, false}}, 3);
  check_op([](Tape& t, const std::vector<Var>& v) { return ad::div(t, v[0], v[1]); },
           {{3, 4, true}, {3, 4, true, 0.5, 2.0}}, 2);
  check_op([](Tape& t, const std::vector<Var>& v) { return mul_scalar(t, v[0], v[1]); }, {{3, 4, true}, {1, 1, false}},
           2);
  check_op([](Tape& t, const std::vector<Var>& v) { return gaussian_adaptive(t, v[0], v[1]); },
           {{3, 4, true}, {1, 4, false, 0.5, 1.5}}, 2);
}

TEST_CASE("structural primitives") {
  check_op([](Tape& t, const std::vector<Var>& v) { return concat_cols(t, v[0], v[1]); },
           {{3, 2, true}, {3, 3, false}}, 2);
  check_op([](Tape& t, const std::vector<Var>& v) { return tile_items(t, v[0], 3); }, {{2, 3, true}}, 2);
  check_op([](Tape& t, const std::vector<Var>& v) { return repeat_items(t, v[0], 3); }, {{2, 3, true}}, 2);
  check_op([](Tape& t, const std::vector<Var>& v) { return segment_sum(t, v[0], 3); }, {{6, 3, true}}, 2);
  check_op([](Tape& t, const std::vector<Var>& v) { return group_cols_sum(t, v[0], 2); }, {{3, 6, true}}, 2);
  check_op([](Tape& t, const std::vector<Var>& v) { return expand_cols(t, v[0], 3); }, {{3, 2, true}}, 2);
  check_op([](Tape& t, const std::vector<Var>& v) { return row_sum(t, v[0]); }, {{3, 4, true}}, 2);
  check_op([](Tape& t, const std::vector<Var>& v) { return ad::sum(t, v[0]); }, {{3, 4, true}}, 2);
  check_op([](Tape& t, const std::vector<Var>& v) { return tangent_sq_norm(t, v[0], 1, 2); }, {{3, 4, true}}, 3);
}

TEST_CASE("composites") {
  check_op([](Tape& t, const std::vector<Var>& v) { return layer_norm(t, v[0]); }, {{3, 5, true}}, 2, 3, 1e-5);
  check_op([](Tape& t, const std::vector<Var>& v) { return segment_softmax(t, v[0], 3); }, {{6, 2, true}}, 2);
}

TEST_CASE("segment softmax rows sum to one") {
  Tape t(0);
  Rng rng = make_rng(4, "softmax");
  const Var x = t.constant(random_mat(rng, 12, 3, -30, 30));
  const Mat y = t.value(segment_softmax(t, x, 4)).data;
  for (int s = 0; s < 3; ++s) {
    for (int c = 0; c < 3; ++c) CHECK(std::abs(y.middleRows(4 * s, 4).col(c).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("gelu value at known points") {
  Tape t(0);
  Mat x(1, 3);
  x << 0.0, 1.0, -1.0;
  const Mat y = t.value(gelu(t, t.constant(x))).data;
  CHECK(y(0, 0) == 0.0);
  CHECK(y(0, 1) == doctest::Approx(0.8411919906).epsilon(1e-9));
  CHECK(y(0, 2) == doctest::Approx(-0.1588080094).epsilon(1e-9));
}

TEST_CASE("logcosh identities") {
  Tape t(0);
  Mat x(1, 3);
  x << 0.0, 1.0, 800.0;
  const Mat y = t.value(logcosh(t, t.constant(x))).data;
  CHECK(y(0, 0) == 0.0);
  CHECK(y(0, 1) == doctest::Approx(std::log(std::cosh(1.0))).epsilon(1e-12));
  CHECK(std::isfinite(y(0, 2)));
}

TEST_CASE("guarded primitives reject their singular points") {
  Tape t(0);
  CHECK_THROWS_AS(ad::sqrt(t, t.constant(Mat::Zero(1, 1))), NumericDomainError);
  CHECK_THROWS_AS(reciprocal(t, t.constant(Mat::Zero(1, 1))), NumericDomainError);
}

TEST_CASE("shape mismatches are contract violations") {
  Tape t(0);
  CHECK_THROWS_AS(add(t, t.constant(Mat::Zero(2, 2)), t.constant(Mat::Zero(3, 2))), ContractViolation);
  CHECK_THROWS_AS(affine(t, t.constant(Mat::Zero(2, 2)), t.constant(Mat::Zero(4, 3))), ContractViolation);
  CHECK_THROWS_AS(segment_sum(t, t.constant(Mat::Zero(5, 2)), 2), ContractViolation);
}

TEST_CASE("gradients skip constants and accumulate over reuse") {
  Tape t(0);
  const Var a = t.param(Mat::Constant(1, 1, 3.0));
  const Var c = t.constant(Mat::Constant(1, 1, 2.0));
  const Var y = add(t, mul(t, a, a), mul(t, a, c));  // a^2 + 2a
  t.backward(y);
  CHECK(t.grad(a)(0, 0) == doctest::Approx(8.0));
  CHECK(t.grad(c)(0, 0) == 0.0);
}

TEST_CASE("derivatives at the origin") {
  Tape t(1);
  DualTensor x(1, 2, 1);
  x.comp(1)(0, 0) = 1.0;
  const Var xv = t.leaf(x, false);
  const DualTensor g = t.value(gelu(t, xv));
  CHECK(g.data(0, 0) == 0.0);
  CHECK(g.data(1, 0) == doctest::Approx(0.5).epsilon(1e-14));
  const DualTensor a = t.value(gaussian_adaptive(t, xv, t.constant(Mat::Constant(1, 1, 1.7))));
  CHECK(a.data(0, 0) == 1.0);
  CHECK(a.data(1, 0) == 0.0);
}

TEST_CASE("affine adjoint passes the dot-product test") {
  Rng rng = make_rng(9, "dot");
  const Mat w = random_mat(rng, 7, 5);
  const Mat v = random_mat(rng, 4, 5);
  const Mat u = random_mat(rng, 4, 7);
  Tape t(0);
  const Var x = t.param(Mat::Zero(4, 5));
  const Var y = affine(t, x, t.constant(w));
  t.backward(y, u);
  const double lhs = (v * w.transpose()).cwiseProduct(u).sum();
  const double rhs = v.cwiseProduct(t.grad(x)).sum();
  CHECK(std::abs(lhs - rhs) < 1e-10);
}

TEST_CASE("quadratic parameter adjoint") {
  Tape t(0);
  const Var th = t.param(Mat::Constant(1, 1, 1.0));
  const Var loss = square(t, add_const(t, th, -3.0));
  t.backward(loss);
  CHECK(t.grad(th)(0, 0) == doctest::Approx(-4.0).epsilon(1e-15));
}

TEST_CASE("reverse over forward on a quadratic travel time") {
  // T = theta |s - r|^2 with tangents d/ds; |grad_s T|^2 = 4 theta^2 |s - r|^2.
  Rng rng = make_rng(2, "rof");
  Tape t(2);
  const Mat s = random_mat(rng, 5, 2), r = random_mat(rng, 5, 2);
  DualTensor diff(5, 3, 2);
  diff.value() = s - r;
  diff.comp(1).col(0).setOnes();
  diff.comp(2).col(1).setOnes();
  const Var d = t.leaf(diff, false);
  const Var th = t.param(Mat::Constant(1, 1, 0.7));
  const Var tt = mul_scalar(t, row_sum(t, square(t, d)), th);
  const DualTensor tv = t.value(tt);
  for (int i = 0; i < 5; ++i) {
    CHECK(tv.data(5 + i, 0) == doctest::Approx(2 * 0.7 * (s(i, 0) - r(i, 0))).epsilon(1e-14));
    CHECK(tv.data(10 + i, 0) == doctest::Approx(2 * 0.7 * (s(i, 1) - r(i, 1))).epsilon(1e-14));
  }
  const Var n = ad::sum(t, tangent_sq_norm(t, tt, 1, 2));
  t.backward(n);
  const double expect = 2 * 0.7 * 4 * (s - r).squaredNorm();
  CHECK(std::abs(t.grad(th)(0, 0) - expect) < 1e-8);
}

TEST_CASE("replay reproduces the recorded value bit-exactly") {
  Rng rng = make_rng(5, "replay");
  Tape t(0);
  const Var x = t.param(random_mat(rng, 4, 3));
  const Var y = ad::sum(t, layer_norm(t, gelu(t, x)));
  const double before = t.value(y).data(0, 0);
  t.replay();
  CHECK(t.value(y).data(0, 0) == before);
}
