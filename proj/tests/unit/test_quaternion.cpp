#include <doctest.h>

#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "oracles.hpp"
#include "splinegauss/errors.hpp"
#include "splinegauss/quaternion.hpp"

using namespace splinegauss;

namespace {

Eigen::Vector4d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  return Eigen::Vector4d(n01(rng), n01(rng), n01(rng), n01(rng)).normalized();
}

/// Random walk of controls with bounded steps so no two neighbors are a half turn apart.
std::vector<Eigen::Vector4d> random_controls(int count, double step, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  std::vector<Eigen::Vector4d> out;
  Quat q = Quat::from_vec(random_unit(rng));
  for (int i = 0; i < count; ++i) {
    out.push_back(q.vec());
    q = q * quat_exp(step * Eigen::Vector3d(n01(rng), n01(rng), n01(rng)));
  }
  return out;
}

}  // namespace

TEST_CASE("quaternion exp examples") {
  const Quat id = quat_exp(Eigen::Vector3d::Zero());
  CHECK(id.w == 1.0);
  CHECK(id.x == 0.0);
  const Quat h = quat_exp(Eigen::Vector3d(std::numbers::pi / 2, 0, 0));
  CHECK(h.w == doctest::Approx(std::cos(std::numbers::pi / 4)).epsilon(1e-15));
  CHECK(h.x == doctest::Approx(std::sin(std::numbers::pi / 4)).epsilon(1e-15));
  CHECK(h.y == 0.0);
  CHECK(h.z == 0.0);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector3d v(3 * n01(rng), 3 * n01(rng), 3 * n01(rng));
    CHECK(std::abs(quat_exp(v).norm() - 1.0) < 1e-14);
    CHECK(std::abs(quat_exp(1e-10 * v).norm() - 1.0) < 1e-14);
  }
}

TEST_CASE("quaternion log examples") {
  CHECK(quat_log(Quat::identity()).norm() == 0.0);
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 1000; ++i) {
    Eigen::Vector3d v(n01(rng), n01(rng), n01(rng));
    v *= (std::numbers::pi * 0.999) * std::uniform_real_distribution<double>(0, 1)(rng) / v.norm();
    CHECK((quat_log(quat_exp(v)) - v).norm() < 1e-10);
    const Eigen::Vector4d q = random_unit(rng);
    const Eigen::Vector4d back = quat_exp(quat_log(Quat::from_vec(q))).vec();
    CHECK(oracle::quat_distance(back, q) < 1e-10);
    CHECK(quat_log(Quat::from_vec(q)).norm() <= std::numbers::pi + 1e-12);
  }
  // Tiny rotations go through the series branch.
  const Eigen::Vector3d tiny(1e-12, -2e-12, 3e-12);
  CHECK((quat_log(quat_exp(tiny)) - tiny).norm() < 1e-24);
}

TEST_CASE("quaternion log at a half turn") {
  // (-1, 0, 0, 0) is the identity rotation (angle 2 pi, i.e. 0).
  CHECK(quat_log(Quat{-1, 0, 0, 0}).norm() == 0.0);
  // w == 0: angle pi, axis sign fixed so its first nonzero component is positive.
  const Eigen::Vector3d a = quat_log(Quat{0, 0, -1, 0});
  CHECK(a.isApprox(Eigen::Vector3d(0, std::numbers::pi, 0)));
  const Eigen::Vector3d b = quat_log(Quat{0, 0, 1, 0});
  CHECK(a == b);
  const Eigen::Vector3d c = quat_log(Quat{0, -0.6, 0.8, 0});
  CHECK(c.isApprox(std::numbers::pi * Eigen::Vector3d(0.6, -0.8, 0)));
}

TEST_CASE("quaternion product and inverse") {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 200; ++i) {
    const Quat a = Quat::from_vec(random_unit(rng));
    const Quat b = Quat::from_vec(random_unit(rng));
    const Quat c = Quat::from_vec(random_unit(rng));
    CHECK(((a * quat_inv(a)).vec() - Eigen::Vector4d(1, 0, 0, 0)).norm() < 1e-15);
    CHECK(((Quat::identity() * a).vec() - a.vec()).norm() == 0.0);
    CHECK((((a * b) * c).vec() - (a * (b * c)).vec()).norm() < 1e-12);
    CHECK(((a * b).vec() - oracle::qmul(a.vec(), b.vec())).norm() < 1e-15);
    CHECK(((a * b).vec() - left_matrix(a) * b.vec()).norm() < 1e-15);
    CHECK(((a * b).vec() - right_matrix(b) * a.vec()).norm() < 1e-15);
  }
}

TEST_CASE("rotation matrix and its backward pass") {
  std::mt19937_64 rng(14);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 50; ++i) {
    const Quat q = Quat::from_vec(random_unit(rng));
    const Eigen::Matrix3d r = quat_to_matrix(q);
    CHECK((r * r.transpose() - Eigen::Matrix3d::Identity()).norm() < 1e-14);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-14));
    // R v equals q v q^-1.
    const Eigen::Vector3d v(n01(rng), n01(rng), n01(rng));
    const Eigen::Vector4d qv = oracle::qmul(oracle::qmul(q.vec(), Eigen::Vector4d(0, v[0], v[1], v[2])),
                                            quat_inv(q).vec());
    CHECK((r * v - qv.tail<3>()).norm() < 1e-14);

    Eigen::Matrix3d g;
    for (int a = 0; a < 9; ++a) g.data()[a] = n01(rng);
    const Eigen::Vector4d analytic = quat_to_matrix_backward(q, g);
    auto f = [&](const std::vector<double>& x) {
      // The matrix formula is polynomial, so it accepts non-unit input.
      return (quat_to_matrix(Quat{x[0], x[1], x[2], x[3]}).cwiseProduct(g)).sum();
    };
    const auto fd = oracle::central_diff(f, {q.w, q.x, q.y, q.z}, 1e-6);
    for (int a = 0; a < 4; ++a) CHECK(oracle::rel_err(analytic[a], fd[a]) < 1e-7);
  }
}

TEST_CASE("exp and log jacobians") {
  std::mt19937_64 rng(15);
  std::normal_distribution<double> n01;
  for (double mag : {1e-6, 1e-3, 0.5, 2.0, 3.0}) {
    for (int i = 0; i < 10; ++i) {
      Eigen::Vector3d v(n01(rng), n01(rng), n01(rng));
      v *= mag / v.norm();
      const auto j = quat_exp_jacobian(v);
      for (int c = 0; c < 3; ++c) {
        for (int r = 0; r < 4; ++r) {
          auto f = [&](const std::vector<double>& x) {
            Eigen::Vector3d vv = v;
            vv[c] = x[0];
            return quat_exp(vv).vec()[r];
          };
          const double fd = oracle::central_diff(f, {v[c]}, 1e-6)[0];
          CHECK(std::abs(j(r, c) - fd) < 1e-8);
        }
      }
      // Log jacobian at a non-unit quaternion with w > 0.
      Quat q = quat_exp(v);
      if (q.w < 0.05) continue;
      q = Quat{1.3 * q.w, 1.3 * q.x, 1.3 * q.y, 1.3 * q.z};
      const auto jl = quat_log_jacobian(q);
      for (int c = 0; c < 4; ++c) {
        for (int r = 0; r < 3; ++r) {
          auto f = [&](const std::vector<double>& x) {
            Eigen::Vector4d qq = q.vec();
            qq[c] = x[0];
            const Eigen::Vector3d im = qq.tail<3>();
            const double s = im.norm();
            // Independent form: 2 atan2(|v|, w) v / |v|.
            return s == 0 ? 0.0 : (2 * std::atan2(s, qq[0]) * im / s)[r];
          };
          const double fd = oracle::central_diff(f, {q.vec()[c]}, 1e-7)[0];
          CHECK(std::abs(jl(r, c) - fd) < 1e-6);
        }
      }
    }
  }
}

TEST_CASE("quaternion curve construction errors") {
  const KnotLayout l(3, 4, 0, 1);
  CHECK_THROWS_AS(QuatBSplineCurve(l, std::vector<Eigen::Vector4d>(3, Eigen::Vector4d(1, 0, 0, 0))),
                  InvalidCurveError);
  std::vector<Eigen::Vector4d> c(4, Eigen::Vector4d(1, 0, 0, 0));
  c[2] = Eigen::Vector4d::Zero();
  CHECK_THROWS_AS(QuatBSplineCurve(l, c), InvalidCurveError);
  c[2] = Eigen::Vector4d(0, 1, 0, 0);  // half turn from its neighbors
  CHECK_THROWS_AS(QuatBSplineCurve(l, c), AmbiguousLogError);
}

TEST_CASE("quaternion curve unit norm and constant curve") {
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> ut(-0.1, 1.1);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + trial % 7;
    const QuatBSplineCurve curve(KnotLayout(k, k + 3, 0, 1), random_controls(k + 3, 0.8, rng));
    for (int s = 0; s < 1000; ++s) CHECK(std::abs(eval_quat_curve(curve, ut(rng)).norm() - 1.0) < 1e-9);
  }
  const Eigen::Vector4d qs = random_unit(rng);
  for (int k = 2; k <= 8; ++k) {
    const QuatBSplineCurve flat(KnotLayout(k, k + 2, 0, 1), std::vector<Eigen::Vector4d>(k + 2, qs));
    for (int s = 0; s <= 50; ++s) CHECK(eval_quat_curve(flat, s / 50.0).vec() == Quat::from_vec(qs).normalized().vec());
  }
  const QuatBSplineCurve ident{KnotLayout(6, 9, 0, 1)};
  CHECK(eval_quat_curve(ident, 0.37).vec() == Eigen::Vector4d(1, 0, 0, 0));
}

TEST_CASE("order-2 quaternion curve is slerp") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> uu(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto ctrl = random_controls(5, 1.0, rng);
    const QuatBSplineCurve curve(KnotLayout(2, 5, 0.0, 4.0), ctrl);
    const auto unit = curve.unit_controls();
    for (int s = 0; s < 100; ++s) {
      const double t = 4.0 * uu(rng);
      const int seg = std::min(3, static_cast<int>(t));
      const Eigen::Vector4d ref = oracle::slerp(ctrl[seg], ctrl[seg + 1], t - seg);
      CHECK(oracle::quat_distance(eval_quat_curve(curve, t).vec(), ref) < 1e-9);
    }
  }
}

TEST_CASE("quaternion curve continuity and hull sanity") {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 2 + trial % 5;
    const auto ctrl = random_controls(k + 4, 0.9, rng);
    const QuatBSplineCurve curve(KnotLayout(k, k + 4, 0, 1), ctrl);
    Quat prev = eval_quat_curve(curve, 0.0);
    for (int s = 1; s <= 10000; ++s) {
      const Quat q = eval_quat_curve(curve, s / 10000.0);
      CHECK(prev.dot(q) > 0.0);
      prev = q;
    }
    // At t_min the curve stays within the angular span of the first k controls.
    const auto unit = curve.unit_controls();
    double span = 0;
    for (int j = 1; j < k; ++j) span += quat_log(quat_inv(unit[j - 1]) * unit[j]).norm();
    const double d = quat_log(quat_inv(unit[0]) * eval_quat_curve(curve, 0.0)).norm();
    CHECK(d <= span + 1e-12);
  }
}

TEST_CASE("quaternion curve gradient") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> ut(0.0, 1.0);
  std::normal_distribution<double> n01;
  auto check_curve = [&](const QuatBSplineCurve& curve, double t, double tol) {
    const auto jac = quat_curve_gradient(curve, t);
    const auto win = basis_window(curve.layout, t);
    double worst = 0;
    for (int j = 0; j < static_cast<int>(curve.controls.size()); ++j) {
      if (j < win.first || j >= win.first + win.order) {
        CHECK(jac[j].isZero(0.0));
        continue;
      }
      for (int c = 0; c < 4; ++c) {
        for (int r = 0; r < 4; ++r) {
          auto f = [&](const std::vector<double>& x) {
            auto cc = curve;
            cc.controls[j][c] = x[0];
            return eval_quat_curve(cc, t).vec()[r];
          };
          const double fd = oracle::central_diff(f, {curve.controls[j][c]}, 1e-6)[0];
          worst = std::max(worst, oracle::rel_err(jac[j](r, c), fd, 1e-4));
        }
      }
    }
    CHECK(worst < tol);
  };
  for (int k = 2; k <= 7; ++k) {
    // Perturbed identity curve.
    std::vector<Eigen::Vector4d> near_id;
    for (int i = 0; i < k + 3; ++i)
      near_id.push_back(Eigen::Vector4d(1, 0.01 * n01(rng), 0.01 * n01(rng), 0.01 * n01(rng)));
    check_curve(QuatBSplineCurve(KnotLayout(k, k + 3, 0, 1), near_id), ut(rng), 1e-5);
    // Random curve with non-unit raw controls.
    auto ctrl = random_controls(k + 3, 0.7, rng);
    for (auto& c : ctrl) c *= 0.5 + ut(rng);
    for (int s = 0; s < 5; ++s) check_curve(QuatBSplineCurve(KnotLayout(k, k + 3, 0, 1), ctrl), ut(rng), 1e-4);
  }
}

TEST_CASE("quaternion curve backward accumulates") {
  std::mt19937_64 rng(20);
  const QuatBSplineCurve curve(KnotLayout(4, 7, 0, 1), random_controls(7, 0.5, rng));
  const Eigen::Vector4d g(0.3, -0.2, 0.5, 0.1);
  std::vector<Eigen::Vector4d> acc(7, Eigen::Vector4d::Ones());
  quat_curve_backward(curve, 0.4, g, acc);
  const auto jac = quat_curve_gradient(curve, 0.4);
  for (int j = 0; j < 7; ++j) CHECK((acc[j] - Eigen::Vector4d::Ones() - jac[j].transpose() * g).norm() < 1e-15);
  std::vector<Eigen::Vector4d> wrong(6);
  CHECK_THROWS_AS(quat_curve_backward(curve, 0.4, g, wrong), ShapeError);
}
