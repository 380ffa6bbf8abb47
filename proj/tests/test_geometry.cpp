#include <cmath>

#include "doctest.h"
#include "enes/error.hpp"
#include "enes/geometry.hpp"
#include "enes/random.hpp"

using namespace enes;

namespace {
Point p2(double x, double y) { return Point(Eigen::Vector2d(x, y)); }
Point p3(double x, double y, double z) { return Point(Eigen::Vector3d(x, y, z)); }
}  // namespace

TEST_CASE("metric norms") {
  const Manifold e2 = Manifold::unit_square();
  const Manifold s2 = Manifold::sphere();
  CHECK(metric_norm(e2, p2(0, 0), p2(3, 4)) == 5.0);
  CHECK(metric_norm(s2, p3(0, 0, 1), p3(1, 0, 0)) == 1.0);
  CHECK(metric_norm(s2, p3(0, 0, 1), p3(0, 0, 5)) == 0.0);
  CHECK_THROWS_AS(metric_norm(e2, p2(0, 0), p3(1, 0, 0)), ContractViolation);
}

TEST_CASE("riemannian gradients") {
  const Manifold s2 = Manifold::sphere();
  CHECK(riemannian_gradient(Manifold::unit_square(), p2(0.3, 0.1), p2(1, 2)).isApprox(p2(1, 2)));
  CHECK(riemannian_gradient(s2, p3(0, 0, 1), p3(1, 0, 3)).isApprox(p3(1, 0, 0)));
  CHECK(riemannian_gradient(s2, p3(1, 0, 0), p3(2, 0, 0)).norm() == 0.0);
}

TEST_CASE("retractions") {
  const Manifold e2 = Manifold::unit_square();
  const Manifold s2 = Manifold::sphere();
  CHECK(retract(e2, p2(0.2, 0.2), p2(0.1, 0)).isApprox(p2(0.3, 0.2)));
  CHECK(retract(s2, p3(0, 0, 1), p3(0, 0, 0)) == p3(0, 0, 1));
  CHECK(retract(s2, p3(1, 0, 0), p3(0, 1, 0)).isApprox(p3(1 / std::sqrt(2.0), 1 / std::sqrt(2.0), 0)));
  CHECK(retract(e2, p2(0.9, 0.5), p2(0.5, 0)).isApprox(p2(1.0, 0.5)));
  CHECK_THROWS_AS(retract(s2, p3(1, 0, 0), p3(-1, 0, 0)), DegenerateError);

  // (retract(p, eps t) - p) / eps -> t tangentially.
  Rng rng = make_rng(3, "retract");
  for (int k = 0; k < 20; ++k) {
    Point p = p3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)).normalized();
    const Point t = project_tangent(s2, p, p3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)));
    const double eps = 1e-6;
    CHECK(((retract(s2, p, eps * t) - p) / eps - t).norm() < 1e-5);
  }
}

TEST_CASE("semimetrics") {
  Semimetric d;
  const SemimetricValue v = semimetric_value_and_grad(d, p2(0, 0), p2(3, 4));
  CHECK(v.value == 5.0);
  CHECK(v.grad_s.isApprox(p2(-0.6, -0.8)));
  CHECK(v.grad_r.isApprox(p2(0.6, 0.8)));

  Semimetric ind{SemimetricKind::Indicator};
  const SemimetricValue i = semimetric_value_and_grad(ind, p2(0, 0), p2(1, 0));
  CHECK(i.value == 1.0);
  CHECK(i.grad_s.norm() == 0.0);
  CHECK(i.grad_r.norm() == 0.0);

  Semimetric ch = Semimetric::for_manifold(Manifold::sphere());
  CHECK(ch.kind == SemimetricKind::ChordalDistance);
  CHECK(semimetric_value_and_grad(ch, p3(0, 0, 1), p3(0, 0, -1)).value == 2.0);

  CHECK_THROWS_AS(semimetric_value_and_grad(d, p2(0.1, 0.1), p2(0.1, 0.1)), DegenerateError);
  CHECK(semimetric_value(d, p2(0.1, 0.1), p2(0.1, 0.1)) == 0.0);
}

TEST_CASE("semimetric gradients match central differences and are symmetric") {
  Rng rng = make_rng(8, "semimetric");
  Semimetric d;
  for (int k = 0; k < 50; ++k) {
    const Point s = p2(uniform(rng, 0, 1), uniform(rng, 0, 1));
    const Point r = p2(uniform(rng, 0, 1), uniform(rng, 0, 1));
    const SemimetricValue v = semimetric_value_and_grad(d, s, r);
    CHECK(v.value == semimetric_value(d, r, s));
    for (int a = 0; a < 2; ++a) {
      const double h = 1e-6;
      Point sp = s, sm = s;
      sp[a] += h;
      sm[a] -= h;
      const double fd = (semimetric_value(d, sp, r) - semimetric_value(d, sm, r)) / (2 * h);
      CHECK(std::abs(fd - v.grad_s[a]) < 1e-6);
    }
  }
}
