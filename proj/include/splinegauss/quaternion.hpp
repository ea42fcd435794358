#pragma once

#include <vector>

#include <Eigen/Core>

#include "splinegauss/spline_basis.hpp"

namespace splinegauss {

/// Hamilton quaternion w + xi + yj + zk.
struct Quat {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quat identity() { return {}; }
  static Quat from_vec(const Eigen::Vector4d& v) { return {v[0], v[1], v[2], v[3]}; }
  Eigen::Vector4d vec() const { return {w, x, y, z}; }
  Eigen::Vector3d imag() const { return {x, y, z}; }

  double norm() const;
  Quat normalized() const;
  Quat operator-() const { return {-w, -x, -y, -z}; }
  double dot(const Quat& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
};

Quat quat_mul(const Quat& a, const Quat& b);
inline Quat operator*(const Quat& a, const Quat& b) { return quat_mul(a, b); }

/// Conjugate; the inverse for unit quaternions.
Quat quat_inv(const Quat& q);

/// exp of the pure quaternion carrying rotation vector v: angle |v| about v/|v|,
/// i.e. (cos(|v|/2), sin(|v|/2) v/|v|).
Quat quat_exp(const Eigen::Vector3d& v);

/// Inverse of quat_exp on the principal branch. q is first canonicalized to
/// w >= 0, so the returned angle lies in [0, pi]. For a half turn (w == 0) both
/// signs name the same rotation; the axis is chosen so that its first nonzero
/// component is positive.
Eigen::Vector3d quat_log(const Quat& q);

/// Rotation matrix of a unit quaternion.
Eigen::Matrix3d quat_to_matrix(const Quat& q);

/// dR/dq contracted with an upstream gradient G_R: returns sum_ij G_ij dR_ij/dq.
Eigen::Vector4d quat_to_matrix_backward(const Quat& q, const Eigen::Matrix3d& grad_r);

/// Spherical linear interpolation along the shorter arc.
Quat slerp(const Quat& a, const Quat& b, double s);

/// Left/right multiplication matrices: a*b = left_matrix(a) b = right_matrix(b) a.
Eigen::Matrix4d left_matrix(const Quat& a);
Eigen::Matrix4d right_matrix(const Quat& b);

/// Jacobian of quat_exp (4x3) at v.
Eigen::Matrix<double, 4, 3> quat_exp_jacobian(const Eigen::Vector3d& v);

/// Jacobian (3x4) of the extended log 2 atan2(|v|, w) v/|v| at an arbitrary
/// (not necessarily unit) quaternion with w > 0.
Eigen::Matrix<double, 3, 4> quat_log_jacobian(const Quat& q);

/// Unit-quaternion B-spline curve with cumulative basis.
///
/// Controls are stored as raw 4-vectors (w, x, y, z). On read they are
/// normalized and their signs flipped greedily so that consecutive controls
/// have a non-negative dot product.
struct QuatBSplineCurve {
  KnotLayout layout;
  std::vector<Eigen::Vector4d> controls;

  /// Throws InvalidCurveError on count mismatch or zero-norm controls and
  /// AmbiguousLogError when two consecutive controls are a half turn apart.
  QuatBSplineCurve(KnotLayout layout, std::vector<Eigen::Vector4d> controls);

  /// All controls at the identity.
  explicit QuatBSplineCurve(KnotLayout layout);

  /// Normalized, sign-consistent controls.
  std::vector<Quat> unit_controls() const;

  /// Increments w_j = log(q_{j-1}^{-1} q_j), j = 1..n (w_0 unused and zero).
  std::vector<Eigen::Vector3d> increments() const;
};

Quat eval_quat_curve(const QuatBSplineCurve& curve, double t);

/// Jacobians dq(t)/dr_j (4x4) for every raw control r_j; exactly zero outside
/// the k-wide active window.
std::vector<Eigen::Matrix4d> quat_curve_gradient(const QuatBSplineCurve& curve, double t);

/// Accumulates grad_q^T dq(t)/dr_j into grad_controls (same size as controls).
void quat_curve_backward(const QuatBSplineCurve& curve, double t, const Eigen::Vector4d& grad_q,
                         std::span<Eigen::Vector4d> grad_controls);

}  // namespace splinegauss
