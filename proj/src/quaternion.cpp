#include "splinegauss/quaternion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "splinegauss/errors.hpp"

namespace splinegauss {

double Quat::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quat Quat::normalized() const {
  const double n = norm();
  return {w / n, x / n, y / n, z / n};
}

Quat quat_mul(const Quat& a, const Quat& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

Quat quat_inv(const Quat& q) { return {q.w, -q.x, -q.y, -q.z}; }

Quat quat_exp(const Eigen::Vector3d& v) {
  const double phi = v.norm();
  if (phi < 1e-8) {
    const double f = 0.5 - phi * phi / 48.0;
    return Quat{1.0 - phi * phi / 8.0, f * v[0], f * v[1], f * v[2]}.normalized();
  }
  const double f = std::sin(0.5 * phi) / phi;
  return {std::cos(0.5 * phi), f * v[0], f * v[1], f * v[2]};
}

Eigen::Vector3d quat_log(const Quat& q_in) {
  Quat q = q_in.w < 0.0 ? -q_in : q_in;
  Eigen::Vector3d v = q.imag();
  const double s = v.norm();
  if (s < 1e-8) return 2.0 * v / q.w;
  if (q.w == 0.0) {
    // Half turn: pick the axis whose first nonzero component is positive.
    for (int i = 0; i < 3; ++i) {
      if (v[i] != 0.0) {
        if (v[i] < 0.0) v = -v;
        break;
      }
    }
  }
  const double theta = 2.0 * std::atan2(s, q.w);
  return theta * v / s;
}

Eigen::Matrix3d quat_to_matrix(const Quat& q) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Eigen::Vector4d quat_to_matrix_backward(const Quat& q, const Eigen::Matrix3d& g) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Eigen::Vector4d d;
  d[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  d[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) +
              z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2));
  d[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
              w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2));
  d[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) +
              y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
  return d;
}

Quat slerp(const Quat& a, const Quat& b_in, double s) {
  Quat b = a.dot(b_in) < 0.0 ? -b_in : b_in;
  const double c = std::clamp(a.dot(b), -1.0, 1.0);
  const double theta = std::acos(c);
  if (theta < 1e-10) {
    return Quat{a.w + s * (b.w - a.w), a.x + s * (b.x - a.x), a.y + s * (b.y - a.y),
                a.z + s * (b.z - a.z)}
        .normalized();
  }
  const double sa = std::sin((1.0 - s) * theta) / std::sin(theta);
  const double sb = std::sin(s * theta) / std::sin(theta);
  return {sa * a.w + sb * b.w, sa * a.x + sb * b.x, sa * a.y + sb * b.y, sa * a.z + sb * b.z};
}

Eigen::Matrix4d left_matrix(const Quat& a) {
  Eigen::Matrix4d m;
  m << a.w, -a.x, -a.y, -a.z,
       a.x, a.w, -a.z, a.y,
       a.y, a.z, a.w, -a.x,
       a.z, -a.y, a.x, a.w;
  return m;
}

Eigen::Matrix4d right_matrix(const Quat& b) {
  Eigen::Matrix4d m;
  m << b.w, -b.x, -b.y, -b.z,
       b.x, b.w, b.z, -b.y,
       b.y, -b.z, b.w, b.x,
       b.z, b.y, -b.x, b.w;
  return m;
}

Eigen::Matrix<double, 4, 3> quat_exp_jacobian(const Eigen::Vector3d& v) {
  const double phi = v.norm();
  double f;  // sin(phi/2) / phi
  double g;  // f'(phi) / phi
  if (phi < 1e-4) {
    const double p2 = phi * phi;
    f = 0.5 - p2 / 48.0 + p2 * p2 / 3840.0;
    g = -1.0 / 24.0 + p2 / 960.0;
  } else {
    const double sh = std::sin(0.5 * phi);
    const double ch = std::cos(0.5 * phi);
    f = sh / phi;
    g = (0.5 * phi * ch - sh) / (phi * phi * phi);
  }
  Eigen::Matrix<double, 4, 3> j;
  j.row(0) = -0.5 * f * v.transpose();
  j.bottomRows<3>() = f * Eigen::Matrix3d::Identity() + g * v * v.transpose();
  return j;
}

Eigen::Matrix<double, 3, 4> quat_log_jacobian(const Quat& q) {
  const Eigen::Vector3d v = q.imag();
  const double s = v.norm();
  Eigen::Matrix<double, 3, 4> j;
  if (s < 1e-8) {
    j.col(0) = -2.0 * v / (q.w * q.w);
    j.rightCols<3>() = (2.0 / q.w) * Eigen::Matrix3d::Identity();
    return j;
  }
  const double r2 = s * s + q.w * q.w;
  const double theta = 2.0 * std::atan2(s, q.w);
  const double dtheta_dw = -2.0 * s / r2;
  const double dtheta_ds = 2.0 * q.w / r2;
  const Eigen::Vector3d vh = v / s;
  j.col(0) = vh * dtheta_dw;
  j.rightCols<3>() = dtheta_ds * vh * vh.transpose() +
                     (theta / s) * (Eigen::Matrix3d::Identity() - vh * vh.transpose());
  return j;
}

namespace {

struct UnitControl {
  Quat q;
  double sign;
  double raw_norm;
};

std::vector<UnitControl> prepare_controls(const std::vector<Eigen::Vector4d>& raw) {
  std::vector<UnitControl> out(raw.size());
  for (size_t j = 0; j < raw.size(); ++j) {
    const double n = raw[j].norm();
    Quat q = Quat::from_vec(raw[j] / n);
    double sign = 1.0;
    if (j > 0 && out[j - 1].q.dot(q) < 0.0) {
      q = -q;
      sign = -1.0;
    }
    out[j] = {q, sign, n};
  }
  return out;
}

}  // namespace

QuatBSplineCurve::QuatBSplineCurve(KnotLayout layout_in, std::vector<Eigen::Vector4d> raw)
    : layout(layout_in), controls(std::move(raw)) {
  if (static_cast<int>(controls.size()) != layout.control_count()) {
    throw InvalidCurveError("quaternion curve has " + std::to_string(controls.size()) +
                            " controls, layout expects " + std::to_string(layout.control_count()));
  }
  for (const auto& c : controls) {
    if (!(c.norm() > 1e-12)) throw InvalidCurveError("zero-norm quaternion control");
  }
  const auto unit = prepare_controls(controls);
  for (size_t j = 1; j < unit.size(); ++j) {
    if (unit[j - 1].q.dot(unit[j].q) < 1e-9) {
      throw AmbiguousLogError("quaternion controls " + std::to_string(j - 1) + " and " +
                              std::to_string(j) + " are a half turn apart");
    }
  }
}

QuatBSplineCurve::QuatBSplineCurve(KnotLayout layout_in)
    : layout(layout_in), controls(layout_in.control_count(), Eigen::Vector4d(1, 0, 0, 0)) {}

std::vector<Quat> QuatBSplineCurve::unit_controls() const {
  const auto unit = prepare_controls(controls);
  std::vector<Quat> out;
  out.reserve(unit.size());
  for (const auto& u : unit) out.push_back(u.q);
  return out;
}

namespace {

/// log(a^{-1} b), exactly zero for identical controls so flat curves stay flat.
Eigen::Vector3d relative_log(const Quat& a, const Quat& b) {
  if (a.vec() == b.vec()) return Eigen::Vector3d::Zero();
  return quat_log(quat_inv(a) * b);
}

}  // namespace

std::vector<Eigen::Vector3d> QuatBSplineCurve::increments() const {
  const auto q = unit_controls();
  std::vector<Eigen::Vector3d> w(q.size(), Eigen::Vector3d::Zero());
  for (size_t j = 1; j < q.size(); ++j) w[j] = relative_log(q[j - 1], q[j]);
  return w;
}

namespace {

double cumulative_from_window(const BasisWindow& win, int j) {
  double sum = 0.0;
  for (int m = j - win.first; m < win.order; ++m) sum += win.weights[m];
  return sum;
}

}  // namespace

Quat eval_quat_curve(const QuatBSplineCurve& curve, double t) {
  const auto unit = prepare_controls(curve.controls);
  const BasisWindow win = basis_window(curve.layout, t);
  const int last = win.first + win.order - 1;
  Quat q = unit[win.first].q;
  for (int j = win.first + 1; j <= last; ++j) {
    const Eigen::Vector3d w = relative_log(unit[j - 1].q, unit[j].q);
    q = q * quat_exp(cumulative_from_window(win, j) * w);
  }
  return q.normalized();
}

std::vector<Eigen::Matrix4d> quat_curve_gradient(const QuatBSplineCurve& curve, double t) {
  const int count = static_cast<int>(curve.controls.size());
  std::vector<Eigen::Matrix4d> jac(count, Eigen::Matrix4d::Zero());
  const auto unit = prepare_controls(curve.controls);
  const BasisWindow win = basis_window(curve.layout, t);
  const int first = win.first;
  const int k = win.order;
  const int last = first + k - 1;

  // Per increment j (offset by first): relative rotation, log, cumulative weight, exp.
  std::vector<Quat> rel(k), e(k);
  std::vector<Eigen::Vector3d> w(k);
  std::vector<double> bt(k, 0.0);
  for (int j = first + 1; j <= last; ++j) {
    const int o = j - first;
    rel[o] = quat_inv(unit[j - 1].q) * unit[j].q;
    w[o] = quat_log(rel[o]);
    bt[o] = cumulative_from_window(win, j);
    e[o] = quat_exp(bt[o] * w[o]);
  }
  // prefix[o] = q_first * e_1 ... e_o ; suffix[o] = e_{o+1} ... e_{k-1}.
  std::vector<Quat> prefix(k), suffix(k);
  prefix[0] = unit[first].q;
  for (int o = 1; o < k; ++o) prefix[o] = prefix[o - 1] * e[o];
  suffix[k - 1] = Quat::identity();
  for (int o = k - 2; o >= 0; --o) suffix[o] = e[o + 1] * suffix[o + 1];

  const Quat q = prefix[k - 1];
  const Eigen::Vector4d qv = q.vec();
  const double qn = qv.norm();
  const Eigen::Matrix4d out_norm =
      (Eigen::Matrix4d::Identity() - qv * qv.transpose() / (qn * qn)) / qn;

  // dq / d(unit control), indexed by window offset.
  std::vector<Eigen::Matrix4d> d_unit(k, Eigen::Matrix4d::Zero());
  d_unit[0] += right_matrix(suffix[0]);
  Eigen::Matrix4d conj_flip = Eigen::Matrix4d::Identity();
  conj_flip(1, 1) = conj_flip(2, 2) = conj_flip(3, 3) = -1.0;
  for (int o = 1; o < k; ++o) {
    const Eigen::Matrix<double, 4, 3> dq_dw = left_matrix(prefix[o - 1]) *
                                              right_matrix(suffix[o]) *
                                              quat_exp_jacobian(bt[o] * w[o]) * bt[o];
    const Eigen::Matrix<double, 4, 4> dq_drel = dq_dw * quat_log_jacobian(rel[o]);
    d_unit[o] += dq_drel * left_matrix(quat_inv(unit[first + o - 1].q));
    d_unit[o - 1] += dq_drel * right_matrix(unit[first + o].q) * conj_flip;
  }
  for (int o = 0; o < k; ++o) {
    const UnitControl& uc = unit[first + o];
    const Eigen::Vector4d n = uc.sign * uc.q.vec();
    const Eigen::Matrix4d d_norm =
        uc.sign * (Eigen::Matrix4d::Identity() - n * n.transpose()) / uc.raw_norm;
    jac[first + o] = out_norm * d_unit[o] * d_norm;
  }
  return jac;
}

void quat_curve_backward(const QuatBSplineCurve& curve, double t, const Eigen::Vector4d& grad_q,
                         std::span<Eigen::Vector4d> grad_controls) {
  if (grad_controls.size() != curve.controls.size()) {
    throw ShapeError("quaternion gradient buffer size mismatch");
  }
  const auto jac = quat_curve_gradient(curve, t);
  const BasisWindow win = basis_window(curve.layout, t);
  for (int o = 0; o < win.order; ++o) {
    grad_controls[win.first + o] += jac[win.first + o].transpose() * grad_q;
  }
}

}  // namespace splinegauss
