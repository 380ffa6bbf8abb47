#include <cmath>
#include <numbers>

#include "doctest.h"
#include "enes/error.hpp"
#include "enes/oracle.hpp"
#include "enes/random.hpp"

using namespace enes;
using std::numbers::pi;

namespace {

Point p2(double x, double z) { return Point(Eigen::Vector2d(x, z)); }

Point unit3(double x, double y, double z) { return Point(Eigen::Vector3d(x, y, z).normalized()); }

struct ErrorStats {
  double max = 0.0;
  double mean = 0.0;
};

template <class Ref>
ErrorStats relative_errors(const TravelTimeGrid& t, Ref ref, double exclude_radius = 0.0) {
  ErrorStats e;
  int count = 0;
  for (std::size_t i = 0; i < t.node_count(); ++i) {
    const Point x = t.node_position(i);
    if ((x - t.source).norm() < exclude_radius) continue;
    const double a = ref(x);
    if (a <= 1e-12) continue;
    const double r = std::abs(t.times[i] - a) / a;
    e.max = std::max(e.max, r);
    e.mean += r;
    ++count;
  }
  e.mean /= count;
  return e;
}

ErrorStats linear_gradient_errors(int n, const Point& source, double exclude_radius = 0.0) {
  const VelocityField v = rasterize(VelocityField::linear_gradient(1.0, 1.0, Manifold::unit_square()), {n, n});
  const TravelTimeGrid t = fmm_solve(v, source);
  return relative_errors(t, [&](const Point& x) { return analytic_linear_gradient(1.0, 1.0, source, x); },
                         exclude_radius);
}

}  // namespace

TEST_CASE("analytic constant times") {
  const Manifold sq = Manifold::unit_square();
  CHECK(analytic_constant(2.0, p2(0, 0), p2(3, 4), Manifold::euclidean(p2(-5, -5), p2(5, 5))) == 2.5);
  CHECK(analytic_constant(1.0, unit3(0, 0, 1), unit3(0, 0, -1), Manifold::sphere()) == doctest::Approx(pi).epsilon(1e-15));
  CHECK(analytic_constant(1.0, p2(0.3, 0.3), p2(0.3, 0.3), sq) == 0.0);
  CHECK(analytic_constant(0.5, unit3(1, 0, 0), unit3(0, 1, 0), Manifold::sphere()) == doctest::Approx(pi));
  CHECK_THROWS_AS(analytic_constant(0.0, p2(0, 0), p2(1, 1), sq), ContractViolation);
}

TEST_CASE("analytic linear gradient") {
  CHECK(analytic_linear_gradient(1.0, 1.0, p2(0, 0), p2(0, 1)) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(analytic_linear_gradient(1.0, 1.0, p2(0.2, 0.4), p2(0.2, 0.4)) == 0.0);
  const double d = (p2(0.1, 0.2) - p2(0.7, 0.9)).norm();
  CHECK(std::abs(analytic_linear_gradient(1.3, 1e-6, p2(0.1, 0.2), p2(0.7, 0.9)) - d / 1.3) < 1e-6 * d);
  CHECK(analytic_linear_gradient(1.3, 0.0, p2(0.1, 0.2), p2(0.7, 0.9)) == doctest::Approx(d / 1.3));
  CHECK(analytic_linear_gradient(1.0, 1.0, p2(0.1, 0.2), p2(0.7, 0.9)) ==
        doctest::Approx(analytic_linear_gradient(1.0, 1.0, p2(0.7, 0.9), p2(0.1, 0.2))));
  CHECK_THROWS_AS(analytic_linear_gradient(1.0, -2.0, p2(0, 0), p2(0, 1)), ContractViolation);

  // The closed form satisfies |grad T| = 1 / v.
  const Point s = p2(0.5, 0.5);
  for (const Point& r : {p2(0.0, 0.8), p2(0.9, 0.1), p2(0.25, 0.3)}) {
    const double h = 1e-6;
    Eigen::Vector2d g;
    for (int a = 0; a < 2; ++a) {
      Point up = r, dn = r;
      up[a] += h;
      dn[a] -= h;
      g[a] = (analytic_linear_gradient(1, 1, s, up) - analytic_linear_gradient(1, 1, s, dn)) / (2 * h);
    }
    CHECK(std::abs(g.norm() * (1.0 + r[1]) - 1.0) < 1e-8);
  }
}

TEST_CASE("fast marching on a constant field") {
  const Manifold sq = Manifold::unit_square();
  const VelocityField v = rasterize(VelocityField::constant(2.0, sq), {64, 64});
  const Point src = p2(0.5, 0.5);
  const TravelTimeGrid t = fmm_solve(v, src);
  REQUIRE(t.node_count() == 64 * 64);
  const ErrorStats e = relative_errors(t, [&](const Point& x) { return (x - src).norm() / 2.0; });
  CHECK(e.max < 1e-3);
  for (double time : t.times) {
    CHECK(std::isfinite(time));
    CHECK(time >= 0.0);
  }
  // Source on a node: zero there.
  const TravelTimeGrid on = fmm_solve(rasterize(VelocityField::constant(1.0, sq), {33, 33}), p2(0.5, 0.25));
  CHECK(on.times[on.nearest_node(p2(0.5, 0.25))] == 0.0);
}

TEST_CASE("fast marching acceptance order is monotone") {
  const VelocityField v = rasterize(VelocityField::linear_gradient(1.0, 1.0, Manifold::unit_square()), {40, 40});
  const TravelTimeGrid t = fmm_solve(v, p2(0.3, 0.6));
  REQUIRE(t.order.size() == t.node_count());
  for (std::size_t k = 1; k < t.order.size(); ++k) CHECK(t.times[t.order[k]] >= t.times[t.order[k - 1]]);
}

TEST_CASE("fast marching on a linear gradient") {
  for (const Point& src : {p2(0.5, 0.5), p2(0.5, 0.0)}) {
    CHECK(linear_gradient_errors(64, src).max < 1e-2);
  }
  // Convergence, away from the source neighborhood where the first-order
  // start dominates.
  const Point src = p2(0.5, 0.5);
  const ErrorStats e32 = linear_gradient_errors(32, src, 0.2);
  const ErrorStats e64 = linear_gradient_errors(64, src, 0.2);
  const ErrorStats e128 = linear_gradient_errors(128, src, 0.2);
  CHECK(e32.max / e64.max >= 2.0);
  CHECK(e64.max / e128.max >= 2.0);
  CHECK(std::log2(e32.mean / e128.mean) / 2.0 >= 1.5);
}

TEST_CASE("fast marching contracts") {
  const Manifold sq = Manifold::unit_square();
  CHECK_THROWS_AS(fmm_solve(VelocityField::constant(1.0, sq), p2(0.5, 0.5)), ContractViolation);
  const VelocityField v = rasterize(VelocityField::constant(1.0, sq), {8, 8});
  CHECK_THROWS_AS(fmm_solve(v, p2(1.5, 0.5)), ContractViolation);
}

TEST_CASE("sphere shortest paths") {
  const VelocityField v = VelocityField::constant(1.5, Manifold::sphere());
  const Point src = unit3(0.3, -0.4, 0.8);
  const TravelTimeGrid t = sphere_shortest_path(v, src, 128);
  REQUIRE(t.dims == std::vector<int>{64, 128});
  const ErrorStats e = relative_errors(t, [&](const Point& x) { return analytic_constant(1.5, src, x, Manifold::sphere()); });
  CHECK(e.max < 0.03);

  // Source on a node.
  const Point node = sphere_node(10, 20, 32, 64);
  const TravelTimeGrid a = sphere_shortest_path(v, node, 64);
  const std::size_t ia = a.nearest_node(node);
  CHECK(ia == 10u * 64 + 20);
  CHECK(a.times[ia] == 0.0);
  for (double time : a.times) CHECK(time >= 0.0);

  // Swapping source and target nodes.
  Rng rng = make_rng(3, "sphere-pairs");
  for (int k = 0; k < 10; ++k) {
    const std::size_t j = rng() % a.node_count();
    const TravelTimeGrid b = sphere_shortest_path(v, a.node_position(j), 64);
    CHECK(std::abs(a.times[j] - b.times[ia]) <= 1e-12 * std::max(1.0, a.times[j]));
  }
  CHECK_THROWS_AS(sphere_shortest_path(v, src, 8), ContractViolation);
  CHECK_THROWS_AS(sphere_shortest_path(VelocityField::constant(1.0, Manifold::unit_square()), src, 64),
                  ContractViolation);
}

TEST_CASE("sphere shortest paths around an obstacle") {
  VmfBump bump{Eigen::Vector3d(1, 0, 0), 20.0};
  const VelocityField v = VelocityField::gaussian_obstacle({bump}, 0.1, 2.0);
  const Point west = unit3(0, -1, 0.05), east = unit3(0, 1, 0.05);
  const TravelTimeGrid t = sphere_shortest_path(v, west, 64);
  // Slower medium can only delay arrivals relative to the fastest speed.
  for (std::size_t i = 0; i < t.node_count(); ++i) {
    CHECK(t.times[i] >= analytic_constant(2.0, west, t.node_position(i), Manifold::sphere()) * (1 - 0.03));
  }
  CHECK(std::isfinite(t.times[t.nearest_node(east)]));
}

TEST_CASE("time grid files") {
  const VelocityField v = rasterize(VelocityField::constant(1.0, Manifold::unit_square()), {9, 7});
  const TravelTimeGrid t = fmm_solve(v, p2(0.2, 0.3));
  const TravelTimeGrid back = read_time_grid(write_time_grid(t));
  CHECK(back.dims == t.dims);
  CHECK(back.domain.lo == t.domain.lo);
  CHECK(back.domain.hi == t.domain.hi);
  REQUIRE(back.times.size() == t.times.size());
  for (std::size_t i = 0; i < t.times.size(); ++i) CHECK(back.times[i] == static_cast<float>(t.times[i]));
  CHECK(decode_vgrid(write_time_grid(t)).kind == kTimeGridKind);

  const TravelTimeGrid s = sphere_shortest_path(VelocityField::constant(1.0, Manifold::sphere()), unit3(0, 0, 1), 16);
  const TravelTimeGrid sb = read_time_grid(write_time_grid(s));
  CHECK(sb.domain.is_sphere());
  CHECK(decode_vgrid(write_time_grid(s)).kind == kSphereTimeGridKind);

  // Velocity files are not time grids and vice versa.
  CHECK_THROWS_AS(read_time_grid(write_vgrid(v)), FormatError);
  CHECK_THROWS_AS(read_vgrid(write_time_grid(t)), FormatError);
}
