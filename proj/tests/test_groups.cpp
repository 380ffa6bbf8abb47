#include <cmath>
#include <numbers>

#include "doctest.h"
#include "enes/error.hpp"
#include "enes/groups.hpp"
#include "enes/random.hpp"

using namespace enes;
using std::numbers::pi;

namespace {
Point p1(double x) { return Point(Eigen::Matrix<double, 1, 1>(x)); }
Point p2(double x, double y) { return Point(Eigen::Vector2d(x, y)); }
Point p3(double x, double y, double z) { return Point(Eigen::Vector3d(x, y, z)); }

GroupElement random_se2(Rng& rng) {
  return GroupElement::se2(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -pi, pi));
}

double distance(const GroupElement& a, const GroupElement& b) {
  return (a.linear() - b.linear()).cwiseAbs().maxCoeff() +
         (a.translation_full() - b.translation_full()).cwiseAbs().maxCoeff();
}
}  // namespace

TEST_CASE("composition and inverses") {
  const GroupElement g = GroupElement::se2(1, 0, pi / 2);
  const GroupElement h = GroupElement::se2(0, 1, 0);
  const GroupElement gh = compose(g, h);
  CHECK(gh.translation().norm() < 1e-12);
  CHECK(gh.angle() == doctest::Approx(pi / 2));
  CHECK(distance(compose(g, GroupElement::identity(GroupKind::SE2)), g) < 1e-15);
  CHECK(compose(GroupElement::scaling(2), GroupElement::scaling(3)).scale() == doctest::Approx(6.0));

  const GroupElement gi = inverse(g);
  CHECK(gi.translation().isApprox(p2(0, 1)));
  CHECK(gi.angle() == doctest::Approx(-pi / 2));
  CHECK(inverse(GroupElement::scaling(4)).scale() == 0.25);
  CHECK(distance(inverse(GroupElement::identity(GroupKind::SE2)), GroupElement::identity(GroupKind::SE2)) == 0.0);
  CHECK_THROWS_AS(compose(g, GroupElement::scaling(2)), ContractViolation);
}

TEST_CASE("group axioms on random triples") {
  Rng rng = make_rng(1, "axioms");
  const GroupElement e = GroupElement::identity(GroupKind::SE2);
  for (int k = 0; k < 200; ++k) {
    const GroupElement a = random_se2(rng), b = random_se2(rng), c = random_se2(rng);
    CHECK(distance(compose(compose(a, b), c), compose(a, compose(b, c))) < 1e-9);
    CHECK(distance(compose(a, inverse(a)), e) < 1e-9);
    CHECK(distance(compose(e, a), a) < 1e-12);
  }
}

TEST_CASE("point actions") {
  const Manifold e2 = Manifold::unit_square();
  CHECK(act_point(GroupElement::se2(1, 0, pi / 2), p2(1, 0), e2).isApprox(p2(1, 1)));
  CHECK(act_point(GroupElement::so2_about_z(pi), p3(1, 0, 0), Manifold::sphere()).isApprox(p3(-1, 0, 0)));
  CHECK(act_point(GroupElement::identity(GroupKind::SE2), p2(0.3, 0.7), e2) == p2(0.3, 0.7));
  CHECK_THROWS_AS(act_point(GroupElement::so2_about_z(1), p2(0, 0), e2), ContractViolation);

  Rng rng = make_rng(2, "action");
  for (int k = 0; k < 50; ++k) {
    const GroupElement g = random_se2(rng), h = random_se2(rng);
    const Point p = p2(uniform(rng, 0, 1), uniform(rng, 0, 1));
    CHECK((act_point(g, act_point(h, p, e2), e2) - act_point(compose(g, h), p, e2)).norm() < 1e-12);
  }
}

TEST_CASE("invariants") {
  const Point s = p2(1, 1), r = p2(2, 1);
  InvariantPair inv = invariants(s, r, GroupElement::identity(GroupKind::SE2));
  CHECK(inv.s == s);
  CHECK(inv.r == r);
  inv = invariants(s, r, GroupElement::se2(1, 1, 0));
  CHECK(inv.s.isApprox(p2(0, 0)));
  CHECK(inv.r.isApprox(p2(1, 0)));
}

TEST_CASE("joint transformation leaves invariants unchanged") {
  Rng rng = make_rng(3, "joint");
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const GroupElement h = random_se2(rng), gi = random_se2(rng);
    const Point s = p2(uniform(rng, 0, 1), uniform(rng, 0, 1)), r = p2(uniform(rng, 0, 1), uniform(rng, 0, 1));
    const InvariantPair a = invariants(s, r, gi);
    const InvariantPair b = invariants(h.apply(s), h.apply(r), compose(h, gi));
    worst = std::max({worst, (a.s - b.s).cwiseAbs().maxCoeff(), (a.r - b.r).cwiseAbs().maxCoeff()});
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("pseudo exponential chart") {
  PoseParams p{GroupKind::SE2, PoseVector::Zero(3)};
  CHECK(distance(pseudo_exp(p), GroupElement::identity(GroupKind::SE2)) == 0.0);
  p.values << 1, 2, pi / 2;
  const GroupElement g = pseudo_exp(p);
  CHECK(g.translation().isApprox(p2(1, 2)));
  CHECK(g.angle() == doctest::Approx(pi / 2));

  Rng rng = make_rng(4, "chart");
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    PoseParams q{GroupKind::SE2, PoseVector(3)};
    q.values << uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, -pi + 1e-9, pi);
    worst = std::max(worst, (pseudo_log(pseudo_exp(q)).values - q.values).cwiseAbs().maxCoeff());
    PoseParams e{GroupKind::SE3, PoseVector(6)};
    e.values << uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, -pi + 1e-6, pi - 1e-6),
        uniform(rng, -pi / 2 + 1e-3, pi / 2 - 1e-3), uniform(rng, -pi + 1e-6, pi - 1e-6);
    worst = std::max(worst, (pseudo_log(pseudo_exp(e)).values - e.values).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-9);
  CHECK(wrap_angle(3 * pi) == doctest::Approx(pi));
  CHECK(wrap_angle(-pi) == doctest::Approx(pi));
}

TEST_CASE("chart jacobian matches finite differences") {
  Rng rng = make_rng(5, "jac");
  for (GroupKind kind : {GroupKind::SE2, GroupKind::SE3, GroupKind::SO2aboutZ, GroupKind::PosScaling}) {
    const int n = pose_param_count(kind);
    std::vector<double> v(n);
    for (double& x : v) x = uniform(rng, -1, 1);
    const PoseChartJacobian j = pose_chart_jacobian(kind, v.data());
    for (int k = 0; k < n; ++k) {
      std::vector<double> vp = v, vm = v;
      vp[k] += 1e-6;
      vm[k] -= 1e-6;
      const PoseChartJacobian jp = pose_chart_jacobian(kind, vp.data());
      const PoseChartJacobian jm = pose_chart_jacobian(kind, vm.data());
      CHECK(((jp.inv_linear - jm.inv_linear) / 2e-6 - j.d_inv_linear[k]).cwiseAbs().maxCoeff() < 1e-8);
      CHECK(((jp.translation - jm.translation) / 2e-6 - j.d_translation[k]).cwiseAbs().maxCoeff() < 1e-8);
    }
    PoseParams p{kind, PoseVector(n)};
    for (int k = 0; k < n; ++k) p.values[k] = v[k];
    const GroupElement g = pseudo_exp(p);
    CHECK((j.inv_linear - inverse(g).linear()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("orbit separation") {
  // Equal invariants iff an aligning element exists: h = g_i' g_i^{-1}.
  Rng rng = make_rng(6, "orbit");
  for (int k = 0; k < 100; ++k) {
    const GroupElement gi = random_se2(rng), h = random_se2(rng);
    const Point s = p2(uniform(rng, 0, 1), uniform(rng, 0, 1)), r = p2(uniform(rng, 0, 1), uniform(rng, 0, 1));
    const GroupElement gj = compose(h, gi);
    const Point s2 = h.apply(s), r2 = h.apply(r);
    const InvariantPair a = invariants(s, r, gi), b = invariants(s2, r2, gj);
    CHECK((a.s - b.s).norm() + (a.r - b.r).norm() < 1e-7);
    const GroupElement align = compose(gj, inverse(gi));
    CHECK((align.apply(s) - s2).norm() < 1e-9);
    CHECK((align.apply(r) - r2).norm() < 1e-9);
    // A perturbed receiver breaks the orbit.
    const InvariantPair c = invariants(s2, r2 + p2(1e-3, 0), gj);
    CHECK((a.r - c.r).norm() > 1e-7);
  }
}

TEST_CASE("steered velocities") {
  const Manifold e2 = Manifold::unit_square();
  const VelocityField base =
      VelocityField::analytic(e2, [](const Point& p) { return 1.0 + p[0] + 2 * p[1]; }, 1.0, 4.0);
  const VelocityField same = steer_velocity(GroupElement::identity(GroupKind::SE2), base, ActionClass::Isometric);
  Rng rng = make_rng(7, "steer");
  const GroupElement g = random_se2(rng), h = random_se2(rng);
  const VelocityField gh = steer_velocity(compose(g, h), base, ActionClass::Isometric);
  const VelocityField g_h = steer_velocity(g, steer_velocity(h, base, ActionClass::Isometric), ActionClass::Isometric);
  for (int k = 0; k < 100; ++k) {
    const Point p = p2(uniform(rng, 0, 1), uniform(rng, 0, 1));
    CHECK(same.sample(p) == base.sample(p));
    CHECK(std::abs(gh.sample(p) - g_h.sample(p)) < 1e-9);
  }
  const VelocityField rot = steer_velocity(GroupElement::se2(0, 0, pi / 2), base, ActionClass::Isometric);
  // R_{-90} (0.2, 0.3) = (0.3, -0.2).
  CHECK(rot.sample(p2(0.2, 0.3)) == doctest::Approx(base.sample(p2(0.3, -0.2))));

  const Manifold line = Manifold::euclidean(p1(-10), p1(10));
  const VelocityField bump = VelocityField::analytic(
      line, [](const Point& p) { return std::max(std::exp(-p[0] * p[0]), 1e-3); }, 1e-3, 1.0);
  const VelocityField scaled = steer_velocity(GroupElement::scaling(2), bump, ActionClass::Conformal);
  for (double x : {-1.5, 0.0, 0.7, 2.0}) CHECK(scaled.sample(p1(x)) == doctest::Approx(2 * std::exp(-x * x / 4)));
  CHECK_THROWS_AS(steer_velocity(GroupElement::scaling(2), bump, ActionClass::Isometric), ContractViolation);
  CHECK_THROWS_AS(steer_velocity(g, base, ActionClass::Conformal), ContractViolation);
}

TEST_CASE("steered metric norms") {
  const Manifold e2 = Manifold::unit_square();
  CHECK(steered_metric_norm(GroupElement::se2(0.3, 0.1, 1.1), e2, p2(0.5, 0.5), p2(3, 4)) == doctest::Approx(5.0));
  CHECK(steered_metric_norm(GroupElement::identity(GroupKind::SE2), e2, p2(0, 0), p2(1, 1)) ==
        doctest::Approx(std::sqrt(2.0)));
  const Manifold line = Manifold::euclidean(p1(-1), p1(1));
  CHECK(steered_metric_norm(GroupElement::scaling(4), line, p1(0), p1(1)) == doctest::Approx(0.25));
}
