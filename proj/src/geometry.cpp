#include "enes/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "enes/error.hpp"

namespace enes {

std::string_view to_string(ManifoldKind kind) {
  switch (kind) {
    case ManifoldKind::Euclidean1: return "euclidean1";
    case ManifoldKind::Euclidean2: return "euclidean2";
    case ManifoldKind::Euclidean3: return "euclidean3";
    case ManifoldKind::Sphere2: return "sphere2";
  }
  return "unknown";
}

Manifold Manifold::euclidean(const Point& lo, const Point& hi) {
  Manifold m;
  switch (lo.size()) {
    case 1: m.kind = ManifoldKind::Euclidean1; break;
    case 2: m.kind = ManifoldKind::Euclidean2; break;
    case 3: m.kind = ManifoldKind::Euclidean3; break;
    default: throw ContractViolation("euclidean manifold needs 1..3 axes");
  }
  m.lo = lo;
  m.hi = hi;
  m.validate();
  return m;
}

Manifold Manifold::unit_square() {
  return euclidean(Point::Zero(2), Point::Ones(2));
}

Manifold Manifold::sphere() {
  Manifold m;
  m.kind = ManifoldKind::Sphere2;
  m.lo = Point::Constant(3, -1.0);
  m.hi = Point::Constant(3, 1.0);
  return m;
}

int Manifold::dim() const {
  switch (kind) {
    case ManifoldKind::Euclidean1: return 1;
    case ManifoldKind::Euclidean2: return 2;
    case ManifoldKind::Euclidean3: return 3;
    case ManifoldKind::Sphere2: return 3;
  }
  return 0;
}

double Manifold::max_width() const {
  if (is_sphere()) return 1.0;
  return (hi - lo).maxCoeff();
}

Point Manifold::clamp(const Point& p) const {
  if (is_sphere()) {
    const double n = p.norm();
    if (n < 1e-12) throw DegenerateError("cannot project the origin onto the sphere");
    return p / n;
  }
  return p.cwiseMax(lo).cwiseMin(hi);
}

void Manifold::validate() const {
  if (is_sphere()) return;
  if (lo.size() != dim() || hi.size() != dim()) {
    throw ContractViolation("manifold extent has the wrong number of axes");
  }
  for (int a = 0; a < dim(); ++a) {
    if (!(lo[a] < hi[a])) throw ContractViolation("manifold extent needs lo < hi on every axis");
  }
}

void check_point(const Manifold& m, const Point& p) {
  if (p.size() != m.dim()) {
    throw ContractViolation("point has " + std::to_string(p.size()) + " coordinates, manifold " +
                            std::string(to_string(m.kind)) + " expects " + std::to_string(m.dim()));
  }
}

Point project_tangent(const Manifold& m, const Point& p, const Point& t) {
  check_point(m, p);
  check_point(m, t);
  if (!m.is_sphere()) return t;
  return t - p * p.dot(t);
}

double metric_norm(const Manifold& m, const Point& p, const Point& t) {
  return project_tangent(m, p, t).norm();
}

Point riemannian_gradient(const Manifold& m, const Point& p, const Point& euclid_grad) {
  return project_tangent(m, p, euclid_grad);
}

Point retract(const Manifold& m, const Point& p, const Point& t) {
  check_point(m, p);
  check_point(m, t);
  if (m.is_sphere()) {
    const Point q = p + t;
    const double n = q.norm();
    if (n < 1e-12) throw DegenerateError("sphere retraction through the origin");
    return q / n;
  }
  return (p + t).cwiseMax(m.lo).cwiseMin(m.hi);
}

Semimetric Semimetric::for_manifold(const Manifold& m) {
  Semimetric d;
  d.kind = m.is_sphere() ? SemimetricKind::ChordalDistance : SemimetricKind::EuclideanDistance;
  return d;
}

SemimetricValue semimetric_value_and_grad(const Semimetric& d, const Point& s, const Point& r) {
  if (s.size() != r.size()) throw ContractViolation("semimetric arguments differ in dimension");
  SemimetricValue out;
  const Point diff = s - r;
  if (d.kind == SemimetricKind::Indicator) {
    out.value = diff.isZero(0.0) ? 0.0 : 1.0;
    out.grad_s = Point::Zero(s.size());
    out.grad_r = Point::Zero(s.size());
    return out;
  }
  const double n = diff.norm();
  if (n < d.epsilon) throw DegenerateError("semimetric pair closer than epsilon");
  out.value = n;
  out.grad_s = diff / n;
  out.grad_r = -out.grad_s;
  return out;
}

double semimetric_value(const Semimetric& d, const Point& s, const Point& r) {
  if (s.size() != r.size()) throw ContractViolation("semimetric arguments differ in dimension");
  if (d.kind == SemimetricKind::Indicator) return (s - r).isZero(0.0) ? 0.0 : 1.0;
  return (s - r).norm();
}

}  // namespace enes
