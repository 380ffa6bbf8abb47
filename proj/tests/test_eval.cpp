#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "enes/error.hpp"
#include "enes/eval.hpp"
#include "enes/random.hpp"
#include "json.hpp"

using namespace enes;
using std::numbers::pi;

namespace {

Point p2(double x, double z) { return Point(Eigen::Vector2d(x, z)); }
Point unit3(double x, double y, double z) { return Point(Eigen::Vector3d(x, y, z).normalized()); }

struct Setup {
  ModelParameters params;
  PoseContextCloud z;
};

Setup make(const ModelConfig& c, std::uint64_t seed) {
  return {init_parameters(c, seed), init_latents(c.domain, c.group, c.latents, c.context_dim, seed + 1)};
}

// tau saturates at 1 / v_max, so T = d / c exactly.
Setup exact(ModelConfig c, double speed) {
  c.v_max = speed;
  c.v_min = std::min(c.v_min, speed);
  Setup s = make(c, 21);
  s.params.proj_out.w.setZero();
  s.params.proj_out.b(0, 0) = -1e3;
  return s;
}

GroupElement random_se2(Rng& rng) {
  return GroupElement::se2(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -pi, pi));
}

PairBatch random_pairs(Rng& rng, const Manifold& m, int n) {
  PairBatch b;
  b.s.resize(n, m.dim());
  b.r.resize(n, m.dim());
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < m.dim(); ++a) {
      b.s(i, a) = uniform(rng, m.lo[a], m.hi[a]);
      b.r(i, a) = uniform(rng, m.lo[a], m.hi[a]);
    }
  }
  return b;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Largest distance of path points from the line through a and b.
double max_perpendicular(const std::vector<Point>& pts, const Point& a, const Point& b) {
  const Eigen::Vector2d u = (b - a).normalized();
  double worst = 0.0;
  for (const Point& p : pts) {
    const Eigen::Vector2d d = p - a;
    worst = std::max(worst, std::abs(d.x() * u.y() - d.y() * u.x()));
  }
  return worst;
}

}  // namespace

TEST_CASE("metrics") {
  Eigen::VectorXd ref(2), pred(2);
  ref << 1, 1;
  pred << 1.1, 0.9;
  CHECK(metrics(pred, ref).rmae == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(metrics(ref, ref).re == 0.0);
  CHECK(metrics(ref, ref).rmae == 0.0);

  ref << 3, 4;
  pred = 1.1 * ref;
  CHECK(metrics(pred, ref).re == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(metrics(pred, ref).rmae == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(metrics(pred, ref, ReForm::Literal).re == doctest::Approx(std::sqrt(0.7 / 25)).epsilon(1e-14));

  // Averaging is per sample, not pooled.
  Eigen::VectorXd big(1), big_pred(1);
  big << 100;
  big_pred << 100;
  const Metrics avg = metrics(std::vector<Eigen::VectorXd>{pred, big_pred}, std::vector<Eigen::VectorXd>{ref, big});
  CHECK(avg.re == doctest::Approx(0.05).epsilon(1e-14));

  CHECK_THROWS_AS(metrics(Eigen::VectorXd(3), ref), ContractViolation);
  CHECK_THROWS_AS(metrics(Eigen::VectorXd(), Eigen::VectorXd()), ContractViolation);
  CHECK_THROWS_AS(metrics(pred, Eigen::VectorXd::Zero(2)), NumericDomainError);
  CHECK_THROWS_AS(metrics(std::vector<Eigen::VectorXd>{pred}, std::vector<Eigen::VectorXd>{}), ContractViolation);
}

TEST_CASE("steerability check") {
  const Setup s = make(preset_2d(), 3);
  Rng rng = make_rng(3, "probes");
  const PairBatch probes = random_pairs(rng, s.params.config.domain, 1000);
  CHECK(steerability_check(s.params, s.z, GroupElement::identity(GroupKind::SE2), probes) == 0.0);
  for (int k = 0; k < 5; ++k) CHECK(steerability_check(s.params, s.z, random_se2(rng), probes) < 1e-9);

  // Acting twice equals acting by the product.
  const GroupElement g = random_se2(rng), h = random_se2(rng);
  const Eigen::VectorXd twice = travel_times(probes, act_latents(g, act_latents(h, s.z)), s.params);
  const Eigen::VectorXd once = travel_times(probes, act_latents(compose(g, h), s.z), s.params);
  CHECK((twice - once).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(std::abs(steerability_check(s.params, s.z, compose(g, h), probes) -
                 steerability_check(s.params, act_latents(h, s.z), g, probes)) < 1e-9);

  const Setup sp = make(preset_sphere_constant(), 4);
  PairBatch sphere_probes;
  sphere_probes.s.resize(200, 3);
  sphere_probes.r.resize(200, 3);
  for (int i = 0; i < 200; ++i) {
    sphere_probes.s.row(i) = unit3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)).transpose();
    sphere_probes.r.row(i) = unit3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)).transpose();
  }
  CHECK(steerability_check(sp.params, sp.z, GroupElement::so2_about_z(1.1), sphere_probes) < 1e-9);
}

TEST_CASE("gradient equivariance") {
  const Setup s = make(preset_2d(), 5);
  Rng rng = make_rng(5, "lemma");
  const PairBatch probes = random_pairs(rng, s.params.config.domain, 100);
  for (int k = 0; k < 3; ++k) CHECK(gradient_equivariance_check(s.params, s.z, random_se2(rng), probes) < 1e-8);
}

TEST_CASE("recovered velocity") {
  const Setup s = exact(preset_2d(), 1.7);
  CHECK(recovered_velocity(s.params, s.z, p2(0.2, 0.3), p2(0.8, 0.1)) == doctest::Approx(1.7).epsilon(1e-13));
  Rng rng = make_rng(6, "rv");
  const PairBatch probes = random_pairs(rng, s.params.config.domain, 50);
  const Eigen::VectorXd v = recovered_velocities(s.params, s.z, probes);
  CHECK((v.array() - 1.7).abs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(recovered_velocity(s.params, s.z, p2(0.2, 0.3), p2(0.2, 0.3)), DegenerateError);

  // Steered latents see the same constant speed.
  const GroupElement g = GroupElement::se2(0.1, -0.2, pi / 2);
  CHECK(recovered_velocity(s.params, act_latents(g, s.z), p2(0.4, 0.6), p2(0.9, 0.2)) ==
        doctest::Approx(1.7).epsilon(1e-13));
}

TEST_CASE("geodesics on exact constant models") {
  SUBCASE("plane") {
    const Setup s = exact(preset_2d(), 1.0);
    const Point a = p2(0.1, 0.2), b = p2(0.85, 0.7);
    const GeodesicPath g = geodesic_trace(s.params, s.z, a, b);
    CHECK_FALSE(g.partial);
    CHECK(g.final_gap < 2e-3);
    CHECK(g.points.front() == a);
    CHECK(g.points.back() == b);
    CHECK(g.points.size() == 2 * static_cast<std::size_t>(g.steps) + 2);
    CHECK(std::abs(g.steps - (b - a).norm() / 2e-3) <= 1.0);
    CHECK(max_perpendicular(g.points, a, b) < 1e-9);

    GeodesicOptions literal;
    literal.step = GeodesicStep::Literal;
    const GeodesicPath gl = geodesic_trace(s.params, s.z, a, b, literal);
    CHECK_FALSE(gl.partial);
    CHECK(max_perpendicular(gl.points, a, b) < 1e-9);

    GeodesicOptions short_run;
    short_run.max_steps = 10;
    const GeodesicPath gp = geodesic_trace(s.params, s.z, a, b, short_run);
    CHECK(gp.partial);
    CHECK(gp.steps == 10);
    CHECK(gp.points.size() == 22u);

    CHECK_THROWS_AS(geodesic_trace(s.params, s.z, a, a), DegenerateError);
    GeodesicOptions bad;
    bad.alpha = 0;
    CHECK_THROWS_AS(geodesic_trace(s.params, s.z, a, b, bad), ContractViolation);
  }
  SUBCASE("sphere") {
    const Setup s = exact(preset_sphere_constant(), 1.0);
    const Point a = unit3(1, 0.2, 0.3), b = unit3(-0.3, 1, -0.4);
    const GeodesicPath g = geodesic_trace(s.params, s.z, a, b);
    CHECK_FALSE(g.partial);
    const Eigen::Vector3d normal = a.head<3>().cross(b.head<3>()).normalized();
    double worst = 0.0;
    for (const Point& p : g.points) {
      CHECK(std::abs(p.norm() - 1.0) < 1e-12);
      worst = std::max(worst, std::asin(std::min(1.0, std::abs(normal.dot(p.head<3>())))));
    }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("reference times and sources") {
  const Manifold sq = Manifold::unit_square();
  const std::vector<Point> src = default_sources(sq, 4);
  REQUIRE(src.size() == 4u);
  CHECK(src[0] == p2(0.25, 0.25));
  CHECK(src[3] == p2(0.75, 0.75));
  const std::vector<Point> sph = default_sources(Manifold::sphere(), 6);
  for (const Point& p : sph) CHECK(std::abs(p.norm() - 1.0) < 1e-12);
  CHECK_THROWS_AS(default_sources(sq, 0), ContractViolation);

  const auto c = reference_times(VelocityField::constant(2.0, sq), src, 16);
  REQUIRE(c.size() == 4u);
  CHECK(c[1].dims == std::vector<int>{16, 16});
  for (std::size_t i = 0; i < c[1].node_count(); ++i) {
    CHECK(c[1].times[i] == (c[1].node_position(i) - src[1]).norm() / 2.0);
  }
  // Non-grid fields are rasterized, grids are used as is.
  const auto lin = reference_times(VelocityField::linear_gradient(1, 1, sq), {p2(0.5, 0.5)}, 24);
  CHECK(lin[0].dims == std::vector<int>{24, 24});
  const auto grid = reference_times(rasterize(VelocityField::linear_gradient(1, 1, sq), {20, 30}), {p2(0.5, 0.5)}, 24);
  CHECK(grid[0].dims == std::vector<int>{20, 30});
  CHECK(grid[0].source == p2(0.5, 0.5));

  const auto sc = reference_times(VelocityField::constant(1.0, Manifold::sphere()), {unit3(0, 0, 1)}, 32);
  CHECK(sc[0].dims == std::vector<int>{16, 32});
  CHECK(sc[0].times[0] == doctest::Approx(pi / 32));
}

TEST_CASE("field evaluation") {
  const Setup s = exact(preset_2d(), 1.25);
  const VelocityField v = VelocityField::constant(1.25, s.params.config.domain);
  const auto refs = reference_times(v, default_sources(v.domain(), 4), 20);
  const FieldEval f = evaluate_field("const", s.params, s.z, refs);
  CHECK(f.re < 1e-12);
  CHECK(f.rmae < 1e-12);
  CHECK(f.probes == 4 * 400);

  const Setup slow = exact(preset_2d(), 1.0);
  const FieldEval g = evaluate_field("slow", slow.params, slow.z, refs);
  CHECK(g.re == doctest::Approx(0.25).epsilon(1e-10));

  TravelTimeGrid loaded = refs[0];
  loaded.source = Point();
  CHECK_THROWS_AS(evaluate_field("x", s.params, s.z, {loaded}), ContractViolation);

  EvalReport r;
  r.add(f);
  r.add(g);
  r.fit_seconds = 0.5;
  CHECK(r.mean_re == doctest::Approx((f.re + g.re) / 2));
  CHECK(r.probes == 3200);

  const std::string csv = "test_eval_report.csv", json = "test_eval_report.json", path = "test_eval_path.csv";
  write_report_csv(csv, r);
  write_report_json(json, r);
  const std::string text = slurp(csv);
  CHECK(text.rfind("field,re,rmae,probes\nconst,", 0) == 0);
  const auto j = nlohmann::json::parse(slurp(json));
  CHECK(j["re_form"] == "squared");
  CHECK(j["fields"].size() == 2u);
  CHECK(j["mean_re"].get<double>() == r.mean_re);

  const GeodesicPath gp = geodesic_trace(s.params, s.z, p2(0.1, 0.1), p2(0.2, 0.1));
  write_path_csv(path, gp);
  const std::string ptxt = slurp(path);
  CHECK(ptxt.rfind("index,x,z\n0,0.10000000000000001,0.10000000000000001\n", 0) == 0);
  CHECK(static_cast<std::size_t>(std::count(ptxt.begin(), ptxt.end(), '\n')) == gp.points.size() + 1);
  for (const auto& f : {csv, json, path}) std::filesystem::remove(f);
  CHECK_THROWS_AS(write_report_csv("/nonexistent/dir/x.csv", r), Error);
}
