#include "enes/groups.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "enes/error.hpp"

namespace enes {

namespace {

Eigen::Matrix3d rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

Eigen::Matrix3d rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

Eigen::Matrix3d rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

Eigen::Matrix3d d_rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d r;
  r << -s, -c, 0, c, -s, 0, 0, 0, 0;
  return r;
}

Eigen::Matrix3d d_rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d r;
  r << -s, 0, c, 0, 0, 0, -c, 0, -s;
  return r;
}

Eigen::Matrix3d d_rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d r;
  r << 0, 0, 0, 0, -s, -c, 0, c, -s;
  return r;
}

void require_same_kind(const GroupElement& g, const GroupElement& h) {
  if (g.kind() != h.kind()) throw ContractViolation("group elements of different kinds");
}

}  // namespace

std::string_view to_string(GroupKind kind) {
  switch (kind) {
    case GroupKind::SE2: return "se2";
    case GroupKind::SE3: return "se3";
    case GroupKind::SO2aboutZ: return "so2z";
    case GroupKind::PosScaling: return "scaling";
  }
  return "unknown";
}

int pose_param_count(GroupKind kind) {
  switch (kind) {
    case GroupKind::SE2: return 3;
    case GroupKind::SE3: return 6;
    case GroupKind::SO2aboutZ: return 1;
    case GroupKind::PosScaling: return 1;
  }
  return 0;
}

int group_space_dim(GroupKind kind) {
  switch (kind) {
    case GroupKind::SE2: return 2;
    case GroupKind::SE3: return 3;
    case GroupKind::SO2aboutZ: return 3;
    case GroupKind::PosScaling: return 1;
  }
  return 0;
}

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  a = std::remainder(a, 2.0 * pi);
  if (a <= -pi) a += 2.0 * pi;
  return a;
}

GroupElement GroupElement::identity(GroupKind kind) {
  return GroupElement(kind, Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero());
}

GroupElement GroupElement::se2(double tx, double ty, double theta) {
  Eigen::Matrix3d a = Eigen::Matrix3d::Identity();
  a.topLeftCorner<2, 2>() = rot_z(theta).topLeftCorner<2, 2>();
  return GroupElement(GroupKind::SE2, a, Eigen::Vector3d(tx, ty, 0.0));
}

GroupElement GroupElement::se3(const Eigen::Vector3d& t, const Eigen::Matrix3d& rotation) {
  GroupElement g(GroupKind::SE3, rotation, t);
  g.validate();
  return g;
}

GroupElement GroupElement::so2_about_z(double theta) {
  return GroupElement(GroupKind::SO2aboutZ, rot_z(theta), Eigen::Vector3d::Zero());
}

GroupElement GroupElement::scaling(double factor) {
  if (!(factor > 0.0)) throw ContractViolation("scaling factor must be positive");
  Eigen::Matrix3d a = Eigen::Matrix3d::Identity();
  a(0, 0) = factor;
  return GroupElement(GroupKind::PosScaling, a, Eigen::Vector3d::Zero());
}

GroupElement GroupElement::from_affine(GroupKind kind, const Eigen::Matrix3d& linear,
                                       const Eigen::Vector3d& translation) {
  return GroupElement(kind, linear, translation);
}

double GroupElement::angle() const {
  if (kind_ != GroupKind::SE2 && kind_ != GroupKind::SO2aboutZ) {
    throw ContractViolation("angle() is defined for planar rotations only");
  }
  return std::atan2(linear_(1, 0), linear_(0, 0));
}

Point GroupElement::apply(const Point& p) const {
  const int n = dim();
  if (p.size() != n) throw ContractViolation("group action on a point of the wrong dimension");
  Point out = linear_.topLeftCorner(n, n) * p + translation_.head(n);
  return out;
}

void GroupElement::validate() const {
  const int n = dim();
  if (kind_ == GroupKind::PosScaling) {
    if (!(linear_(0, 0) > 0.0)) throw ContractViolation("scaling factor must be positive");
    return;
  }
  const Eigen::MatrixXd r = linear_.topLeftCorner(n, n);
  if (!(r * r.transpose()).isApprox(Eigen::MatrixXd::Identity(n, n), 1e-9) ||
      std::abs(r.determinant() - 1.0) > 1e-9) {
    throw ContractViolation("rotation block is not in SO(n)");
  }
  if (kind_ == GroupKind::SO2aboutZ && !translation_.isZero(0.0)) {
    throw ContractViolation("rotations about z carry no translation");
  }
}

GroupElement compose(const GroupElement& g, const GroupElement& h) {
  require_same_kind(g, h);
  const Eigen::Matrix3d a = g.linear() * h.linear();
  Eigen::Vector3d t = g.translation_full() + g.linear() * h.translation_full();
  return GroupElement::from_affine(g.kind(), a, t);
}

GroupElement inverse(const GroupElement& g) {
  Eigen::Matrix3d a_inv;
  if (g.kind() == GroupKind::PosScaling) {
    a_inv = Eigen::Matrix3d::Identity();
    a_inv(0, 0) = 1.0 / g.scale();
  } else {
    a_inv = g.linear().transpose();
  }
  const Eigen::Vector3d t = -(a_inv * g.translation_full());
  return GroupElement::from_affine(g.kind(), a_inv, t);
}

bool compatible(GroupKind group, const Manifold& m) {
  switch (group) {
    case GroupKind::SE2: return m.kind == ManifoldKind::Euclidean2;
    case GroupKind::SE3: return m.kind == ManifoldKind::Euclidean3;
    case GroupKind::SO2aboutZ: return m.kind == ManifoldKind::Sphere2;
    case GroupKind::PosScaling: return m.kind == ManifoldKind::Euclidean1;
  }
  return false;
}

Point act_point(const GroupElement& g, const Point& p, const Manifold& m) {
  if (!compatible(g.kind(), m)) {
    throw ContractViolation("group " + std::string(to_string(g.kind())) + " does not act on " +
                            std::string(to_string(m.kind)));
  }
  check_point(m, p);
  return g.apply(p);
}

InvariantPair invariants(const Point& s, const Point& r, const GroupElement& pose) {
  const GroupElement inv = inverse(pose);
  return {inv.apply(s), inv.apply(r)};
}

GroupElement pseudo_exp(const PoseParams& p) {
  if (p.values.size() != pose_param_count(p.kind)) {
    throw ContractViolation("pose parameter vector has the wrong length");
  }
  const auto& v = p.values;
  switch (p.kind) {
    case GroupKind::SE2: return GroupElement::se2(v[0], v[1], v[2]);
    case GroupKind::SE3: {
      const Eigen::Matrix3d r = rot_z(v[3]) * rot_y(v[4]) * rot_x(v[5]);
      return GroupElement::from_affine(GroupKind::SE3, r, Eigen::Vector3d(v[0], v[1], v[2]));
    }
    case GroupKind::SO2aboutZ: return GroupElement::so2_about_z(v[0]);
    case GroupKind::PosScaling: return GroupElement::scaling(std::exp(v[0]));
  }
  throw ContractViolation("unknown group kind");
}

PoseParams pseudo_log(const GroupElement& g) {
  PoseParams p;
  p.kind = g.kind();
  p.values.resize(pose_param_count(g.kind()));
  const auto& a = g.linear();
  const auto& t = g.translation_full();
  switch (g.kind()) {
    case GroupKind::SE2:
      p.values << t[0], t[1], std::atan2(a(1, 0), a(0, 0));
      break;
    case GroupKind::SE3: {
      const double pitch = std::asin(std::clamp(-a(2, 0), -1.0, 1.0));
      const double yaw = std::atan2(a(1, 0), a(0, 0));
      const double roll = std::atan2(a(2, 1), a(2, 2));
      p.values << t[0], t[1], t[2], yaw, pitch, roll;
      break;
    }
    case GroupKind::SO2aboutZ:
      p.values << std::atan2(a(1, 0), a(0, 0));
      break;
    case GroupKind::PosScaling:
      p.values << std::log(a(0, 0));
      break;
  }
  return p;
}

PoseChartJacobian pose_chart_jacobian(GroupKind kind, const double* v) {
  PoseChartJacobian j;
  j.n = pose_param_count(kind);
  j.translation.setZero();
  for (auto& m : j.d_inv_linear) m.setZero();
  for (auto& t : j.d_translation) t.setZero();
  switch (kind) {
    case GroupKind::SE2: {
      const Eigen::Matrix3d r = rot_z(v[2]);
      j.inv_linear = r.transpose();
      j.inv_linear(2, 2) = 1.0;
      j.translation << v[0], v[1], 0.0;
      j.d_translation[0] = Eigen::Vector3d::UnitX();
      j.d_translation[1] = Eigen::Vector3d::UnitY();
      j.d_inv_linear[2] = d_rot_z(v[2]).transpose();
      break;
    }
    case GroupKind::SE3: {
      const Eigen::Matrix3d rz = rot_z(v[3]), ry = rot_y(v[4]), rx = rot_x(v[5]);
      j.inv_linear = (rz * ry * rx).transpose();
      j.translation << v[0], v[1], v[2];
      for (int k = 0; k < 3; ++k) j.d_translation[k] = Eigen::Vector3d::Unit(k);
      j.d_inv_linear[3] = (d_rot_z(v[3]) * ry * rx).transpose();
      j.d_inv_linear[4] = (rz * d_rot_y(v[4]) * rx).transpose();
      j.d_inv_linear[5] = (rz * ry * d_rot_x(v[5])).transpose();
      break;
    }
    case GroupKind::SO2aboutZ:
      j.inv_linear = rot_z(v[0]).transpose();
      j.d_inv_linear[0] = d_rot_z(v[0]).transpose();
      break;
    case GroupKind::PosScaling: {
      const double inv = std::exp(-v[0]);
      j.inv_linear = Eigen::Matrix3d::Identity();
      j.inv_linear(0, 0) = inv;
      j.d_inv_linear[0](0, 0) = -inv;
      break;
    }
  }
  return j;
}

VelocityField steer_velocity(const GroupElement& g, const VelocityField& v, ActionClass action_class) {
  const Manifold& m = v.domain();
  if (!compatible(g.kind(), m)) throw ContractViolation("group does not act on the field's domain");
  const bool scaling = g.kind() == GroupKind::PosScaling;
  if (action_class == ActionClass::Isometric && scaling) {
    throw ContractViolation("the scaling action is conformal, not isometric");
  }
  if (action_class == ActionClass::Conformal && !scaling) {
    throw ContractViolation("conformal steering is implemented for the scaling group only");
  }
  const GroupElement g_inv = inverse(g);
  if (scaling) {
    // Omega(g, s) = a, constant in s.
    const double a = g.scale();
    return VelocityField::analytic(
        m, [v, g_inv, a](const Point& s) { return a * v.sample(g_inv.apply(s)); }, a * v.v_min(),
        a * v.v_max());
  }
  return VelocityField::analytic(
      m, [v, g_inv](const Point& s) { return v.sample(g_inv.apply(s)); }, v.v_min(), v.v_max());
}

double steered_metric_norm(const GroupElement& g, const Manifold& m, const Point& p, const Point& t) {
  if (!compatible(g.kind(), m)) throw ContractViolation("group does not act on the manifold");
  const Point tp = project_tangent(m, p, t);
  const int n = g.dim();
  const GroupElement g_inv = inverse(g);
  const Point pulled = g_inv.linear().topLeftCorner(n, n).transpose() * tp;
  return pulled.norm();
}

}  // namespace enes
