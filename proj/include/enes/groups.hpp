#pragma once

#include <Eigen/Dense>

#include <array>
#include <string_view>
#include <vector>

#include "enes/field.hpp"
#include "enes/geometry.hpp"

namespace enes {

enum class GroupKind { SE2, SE3, SO2aboutZ, PosScaling };

std::string_view to_string(GroupKind kind);

// Number of pseudo-exponential chart coordinates for a group kind.
int pose_param_count(GroupKind kind);
// Ambient dimension of the points the group acts on.
int group_space_dim(GroupKind kind);

// Element of an affine group acting on ambient coordinates as
// x -> A x + t. SE kinds have A = R orthonormal, SO2aboutZ rotates about the
// z axis with t = 0, PosScaling has A = a > 0 on the line.
class GroupElement {
 public:
  static GroupElement identity(GroupKind kind);
  static GroupElement se2(double tx, double ty, double theta);
  static GroupElement se3(const Eigen::Vector3d& t, const Eigen::Matrix3d& rotation);
  static GroupElement so2_about_z(double theta);
  static GroupElement scaling(double factor);
  // Unchecked construction from the affine blocks; `validate` afterwards.
  static GroupElement from_affine(GroupKind kind, const Eigen::Matrix3d& linear, const Eigen::Vector3d& translation);

  GroupKind kind() const { return kind_; }
  int dim() const { return group_space_dim(kind_); }
  // Top-left dim() x dim() block is meaningful; the rest is identity.
  const Eigen::Matrix3d& linear() const { return linear_; }
  const Eigen::Vector3d& translation_full() const { return translation_; }
  Point translation() const { return translation_.head(dim()); }
  // Rotation angle for SE2 and SO2aboutZ.
  double angle() const;
  // Scale factor for PosScaling.
  double scale() const { return linear_(0, 0); }

  Point apply(const Point& p) const;
  // Throws ContractViolation if the rotation block is not in SO(n) within
  // 1e-9 or a scale factor is not positive.
  void validate() const;

 private:
  GroupElement(GroupKind kind, const Eigen::Matrix3d& linear, const Eigen::Vector3d& translation)
      : kind_(kind), linear_(linear), translation_(translation) {}

  GroupKind kind_;
  Eigen::Matrix3d linear_;
  Eigen::Vector3d translation_;
};

GroupElement compose(const GroupElement& g, const GroupElement& h);
GroupElement inverse(const GroupElement& g);

bool compatible(GroupKind group, const Manifold& m);
Point act_point(const GroupElement& g, const Point& p, const Manifold& m);

// Canonicalized pair (g_i^{-1} s, g_i^{-1} r).
struct InvariantPair {
  Point s;
  Point r;
};
InvariantPair invariants(const Point& s, const Point& r, const GroupElement& pose);

// Pseudo-exponential chart coordinates:
//   SE2        (t_x, t_y, theta)
//   SE3        (t_x, t_y, t_z, yaw, pitch, roll), R = Rz(yaw) Ry(pitch) Rx(roll)
//   SO2aboutZ  (theta)
//   PosScaling (log a)
using PoseVector = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 6, 1>;

struct PoseParams {
  GroupKind kind = GroupKind::SE2;
  PoseVector values;
};

GroupElement pseudo_exp(const PoseParams& p);
// Angles come back in (-pi, pi]; SE3 pitch in [-pi/2, pi/2].
PoseParams pseudo_log(const GroupElement& g);

// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

// Derivatives of the inverse action x -> A^{-1}(x - t) with respect to the
// chart coordinates, used by the network's canonicalization layer.
struct PoseChartJacobian {
  int n = 0;                              // chart coordinates
  Eigen::Matrix3d inv_linear;             // A^{-1}
  Eigen::Vector3d translation;            // t
  std::array<Eigen::Matrix3d, 6> d_inv_linear;  // d(A^{-1})/dp_k
  std::array<Eigen::Vector3d, 6> d_translation; // dt/dp_k
};
PoseChartJacobian pose_chart_jacobian(GroupKind kind, const double* params);

enum class ActionClass { Isometric, Conformal };

// mu(g, v) as a lazily evaluated field: v(g^{-1} s) for isometric actions,
// Omega(g, s) v(g^{-1} s) for the conformal scaling action.
VelocityField steer_velocity(const GroupElement& g, const VelocityField& v, ActionClass action_class);

// Norm of t under the g-steered metric: |(dL_{g^{-1}})^T P t| for affine
// actions with the ambient identity metric.
double steered_metric_norm(const GroupElement& g, const Manifold& m, const Point& p, const Point& t);

}  // namespace enes
