#pragma once

#include <Eigen/Dense>

#include <string_view>

namespace enes {

// Ambient coordinates of a point or tangent vector. At most three entries,
// stored inline.
using Point = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 3, 1>;

enum class ManifoldKind { Euclidean1, Euclidean2, Euclidean3, Sphere2 };

std::string_view to_string(ManifoldKind kind);

// Domain of a velocity field. Euclidean kinds carry an axis-aligned box;
// Sphere2 points are unit vectors in R^3 and `lo`/`hi` are unused.
struct Manifold {
  ManifoldKind kind = ManifoldKind::Euclidean2;
  Point lo;
  Point hi;

  static Manifold euclidean(const Point& lo, const Point& hi);
  static Manifold unit_square();
  static Manifold sphere();

  // Number of ambient coordinates.
  int dim() const;
  bool is_sphere() const { return kind == ManifoldKind::Sphere2; }
  // Largest axis width of the extent (1 for the sphere).
  double max_width() const;
  // Clamp to the extent; sphere points are renormalized.
  Point clamp(const Point& p) const;
  void validate() const;
};

// Throws ContractViolation unless `p` has the manifold's ambient dimension.
void check_point(const Manifold& m, const Point& p);

// Orthogonal projection of an ambient vector onto T_pM.
Point project_tangent(const Manifold& m, const Point& p, const Point& t);

double metric_norm(const Manifold& m, const Point& p, const Point& t);

// grad f = G^{-1} grad_euclid f. Identity on Euclidean kinds, tangential
// projection (I - p p^T) on the embedded sphere.
Point riemannian_gradient(const Manifold& m, const Point& p, const Point& euclid_grad);

// Euclidean: p + t clamped to the extent. Sphere: metric projection
// (p + t) / |p + t|.
Point retract(const Manifold& m, const Point& p, const Point& t);

enum class SemimetricKind { EuclideanDistance, ChordalDistance, Indicator };

struct Semimetric {
  SemimetricKind kind = SemimetricKind::EuclideanDistance;
  double epsilon = 1e-6;

  // Default semimetric for a manifold: chordal on the sphere, Euclidean
  // distance otherwise.
  static Semimetric for_manifold(const Manifold& m);
};

struct SemimetricValue {
  double value = 0.0;
  Point grad_s;
  Point grad_r;
};

// Indicator pairs use a straight-through estimator: value 1 for s != r and
// zero gradient.
SemimetricValue semimetric_value_and_grad(const Semimetric& d, const Point& s, const Point& r);

double semimetric_value(const Semimetric& d, const Point& s, const Point& r);

}  // namespace enes
