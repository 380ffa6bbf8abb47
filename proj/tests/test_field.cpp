#include <cmath>
#include <cstring>

#include "doctest.h"
#include "enes/error.hpp"
#include "enes/field.hpp"
#include "enes/random.hpp"

using namespace enes;

namespace {
Point p2(double x, double y) { return Point(Eigen::Vector2d(x, y)); }
Point p3(double x, double y, double z) { return Point(Eigen::Vector3d(x, y, z)); }

bool same_field(const VelocityField& a, const VelocityField& b) {
  if (a.kind() != b.kind() || a.v_min() != b.v_min() || a.v_max() != b.v_max()) return false;
  if (a.is_grid()) {
    return a.dims() == b.dims() && a.samples().size() == b.samples().size() &&
           std::memcmp(a.samples().data(), b.samples().data(), a.samples().size() * sizeof(float)) == 0 &&
           a.domain().lo == b.domain().lo && a.domain().hi == b.domain().hi;
  }
  return a.constant_value() == b.constant_value();
}
}  // namespace

TEST_CASE("sampling") {
  const Manifold e2 = Manifold::unit_square();
  CHECK(VelocityField::constant(2.0, e2).sample(p2(0.3, 0.9)) == 2.0);
  // Corner values 1, 1, 3, 3 linear in x: (x=0, z=0), (x=0, z=1), (x=1, z=0), (x=1, z=1).
  const VelocityField g = VelocityField::grid2(e2, 2, 2, {1, 1, 3, 3});
  CHECK(g.sample(p2(0.5, 0.5)) == doctest::Approx(2.0));
  CHECK(VelocityField::linear_gradient(1.0, 1.0, e2).sample(p2(0.2, 0.5)) == doctest::Approx(1.5));
  CHECK_THROWS_AS(g.sample(p2(NAN, 0.5)), ContractViolation);
}

TEST_CASE("grid interpolation reproduces nodes and affine fields") {
  const Manifold e2 = Manifold::euclidean(p2(-1, 0), p2(1, 2));
  const VelocityField affine = VelocityField::analytic(e2, [](const Point& p) { return 2 + 0.5 * p[0] + 0.25 * p[1]; },
                                                       1.0, 4.0);
  const VelocityField g = rasterize(affine, {9, 7});
  for (std::size_t k = 0; k < g.node_count(); ++k) {
    CHECK(g.sample(g.node_position(k)) == static_cast<double>(g.samples()[k]));
  }
  Rng rng = make_rng(1, "interp");
  for (int k = 0; k < 100; ++k) {
    const Point p = p2(uniform(rng, -1, 1), uniform(rng, 0, 2));
    CHECK(std::abs(g.sample(p) - affine.sample(p)) < 1e-6);
  }

  const Manifold e3 = Manifold::euclidean(p3(0, 0, 0), p3(1, 1, 1));
  const VelocityField a3 =
      VelocityField::analytic(e3, [](const Point& p) { return 1 + p[0] + 0.5 * p[1] - 0.25 * p[2]; }, 0.5, 3.0);
  const VelocityField g3 = rasterize(a3, {4, 5, 6});
  for (int k = 0; k < 50; ++k) {
    const Point p = p3(uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1));
    CHECK(std::abs(g3.sample(p) - a3.sample(p)) < 1e-6);
  }
}

TEST_CASE("sphere grid reproduces node values") {
  GeneratorParams gp;
  gp.kind = GeneratorKind::GaussianObstacle;
  gp.domain = Manifold::sphere();
  gp.dims = {16, 32};
  gp.v_lo = 0.1;
  gp.v_hi = 10.0;
  const VelocityField f = generate(gp, 3);
  for (std::size_t k = 0; k < f.node_count(); k += 7) {
    CHECK(f.sample(f.node_position(k)) == doctest::Approx(f.samples()[k]).epsilon(1e-12));
  }
}

TEST_CASE("generators") {
  GeneratorParams c;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const VelocityField f = generate(c, seed);
    CHECK(f.constant_value() >= 0.1);
    CHECK(f.constant_value() <= 2.0);
  }
  CHECK(generate(c, 5).constant_value() == generate(c, 5).constant_value());

  GeneratorParams obs;
  obs.kind = GeneratorKind::GaussianObstacle;
  obs.domain = Manifold::sphere();
  obs.dims = {64, 128};
  obs.v_lo = 0.1;
  obs.v_hi = 10.0;
  const VelocityField o = generate(obs, 11);
  double lo = 1e9, hi = -1e9;
  Rng rng = make_rng(2, "probe");
  for (int k = 0; k < 20000; ++k) {
    const Point p = p3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)).normalized();
    lo = std::min(lo, o.sample(p));
    hi = std::max(hi, o.sample(p));
  }
  CHECK(lo == doctest::Approx(0.1).epsilon(0.1));
  CHECK(hi == doctest::Approx(10.0).epsilon(0.02));

  GeneratorParams layered;
  layered.kind = GeneratorKind::Layered;
  layered.speeds = {1, 2, 3};
  const VelocityField l = generate(layered, 4);
  for (std::size_t k = 0; k < l.node_count(); ++k) {
    const float v = l.samples()[k];
    CHECK((v == 1.0f || v == 2.0f || v == 3.0f));
  }
  // Speeds increase with depth.
  CHECK(l.sample(p2(0.5, 0.0)) == 1.0);
  CHECK(l.sample(p2(0.5, 1.0)) == 3.0);
  CHECK(same_field(generate(layered, 4), l));
}

TEST_CASE("VGRID round trips bit-exactly") {
  GeneratorParams layered;
  layered.kind = GeneratorKind::Layered;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const VelocityField f = generate(layered, seed);
    CHECK(same_field(read_vgrid(write_vgrid(f)), f));
  }
  GeneratorParams obs;
  obs.kind = GeneratorKind::GaussianObstacle;
  obs.domain = Manifold::sphere();
  obs.dims = {8, 16};
  const VelocityField o = generate(obs, 1);
  CHECK(same_field(read_vgrid(write_vgrid(o)), o));
  const VelocityField c = VelocityField::constant(1.25, Manifold::unit_square());
  CHECK(same_field(read_vgrid(write_vgrid(c)), c));
  const VelocityField sc = VelocityField::constant(0.75, Manifold::sphere());
  CHECK(same_field(read_vgrid(write_vgrid(sc)), sc));
}

TEST_CASE("VGRID errors are distinguishable") {
  const auto bytes = write_vgrid(generate(GeneratorParams{GeneratorKind::Layered}, 1));
  auto bad = bytes;
  bad[0] = 'X';
  try {
    read_vgrid(bad);
    FAIL("expected an error");
  } catch (const FormatError& e) {
    CHECK(e.code() == FormatErrorCode::BadMagic);
  }
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  try {
    read_vgrid(truncated);
    FAIL("expected an error");
  } catch (const FormatError& e) {
    CHECK(e.code() == FormatErrorCode::Truncated);
  }
  auto version = bytes;
  version[4] = 9;
  try {
    read_vgrid(version);
    FAIL("expected an error");
  } catch (const FormatError& e) {
    CHECK(e.code() == FormatErrorCode::VersionMismatch);
  }
  const VelocityField analytic =
      VelocityField::analytic(Manifold::unit_square(), [](const Point&) { return 1.0; }, 1.0, 1.0);
  CHECK_THROWS_AS(write_vgrid(analytic), ContractViolation);
}
