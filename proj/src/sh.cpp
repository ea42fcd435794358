#include "splinegauss/sh.hpp"

#include "splinegauss/errors.hpp"

namespace splinegauss {
namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                          -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                          0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                          -0.5900435899266435};

void check_degree(int degree, size_t size) {
  if (degree < 0 || degree > kMaxShDegree) throw ShapeError("unsupported SH degree");
  if (size < static_cast<size_t>(sh_coeff_count(degree))) throw ShapeError("SH buffer too small");
}

}  // namespace

void sh_basis(int degree, const Eigen::Vector3d& dir, std::span<double> out) {
  check_degree(degree, out.size());
  const double x = dir.x(), y = dir.y(), z = dir.z();
  out[0] = kShC0;
  if (degree < 1) return;
  out[1] = -kC1 * y;
  out[2] = kC1 * z;
  out[3] = -kC1 * x;
  if (degree < 2) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  out[4] = kC2[0] * x * y;
  out[5] = kC2[1] * y * z;
  out[6] = kC2[2] * (2 * zz - xx - yy);
  out[7] = kC2[3] * x * z;
  out[8] = kC2[4] * (xx - yy);
  if (degree < 3) return;
  out[9] = kC3[0] * y * (3 * xx - yy);
  out[10] = kC3[1] * x * y * z;
  out[11] = kC3[2] * y * (4 * zz - xx - yy);
  out[12] = kC3[3] * z * (2 * zz - 3 * xx - 3 * yy);
  out[13] = kC3[4] * x * (4 * zz - xx - yy);
  out[14] = kC3[5] * z * (xx - yy);
  out[15] = kC3[6] * x * (xx - 3 * yy);
}

void sh_basis_gradient(int degree, const Eigen::Vector3d& dir, std::span<Eigen::Vector3d> out) {
  check_degree(degree, out.size());
  const double x = dir.x(), y = dir.y(), z = dir.z();
  out[0].setZero();
  if (degree < 1) return;
  out[1] = {0, -kC1, 0};
  out[2] = {0, 0, kC1};
  out[3] = {-kC1, 0, 0};
  if (degree < 2) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  out[4] = kC2[0] * Eigen::Vector3d(y, x, 0);
  out[5] = kC2[1] * Eigen::Vector3d(0, z, y);
  out[6] = kC2[2] * Eigen::Vector3d(-2 * x, -2 * y, 4 * z);
  out[7] = kC2[3] * Eigen::Vector3d(z, 0, x);
  out[8] = kC2[4] * Eigen::Vector3d(2 * x, -2 * y, 0);
  if (degree < 3) return;
  out[9] = kC3[0] * Eigen::Vector3d(6 * x * y, 3 * xx - 3 * yy, 0);
  out[10] = kC3[1] * Eigen::Vector3d(y * z, x * z, x * y);
  out[11] = kC3[2] * Eigen::Vector3d(-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z);
  out[12] = kC3[3] * Eigen::Vector3d(-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy);
  out[13] = kC3[4] * Eigen::Vector3d(4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z);
  out[14] = kC3[5] * Eigen::Vector3d(2 * x * z, -2 * y * z, xx - yy);
  out[15] = kC3[6] * Eigen::Vector3d(3 * xx - 3 * yy, -6 * x * y, 0);
}

Eigen::Vector3d sh_eval(int degree, std::span<const double> sh, const Eigen::Vector3d& dir) {
  std::array<double, sh_coeff_count(kMaxShDegree)> y{};
  const int count = sh_coeff_count(degree);
  if (sh.size() < static_cast<size_t>(3 * count)) throw ShapeError("SH block too small");
  sh_basis(degree, dir, std::span<double>(y.data(), count));
  Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
  for (int c = 0; c < count; ++c) {
    rgb += y[c] * Eigen::Vector3d(sh[3 * c], sh[3 * c + 1], sh[3 * c + 2]);
  }
  return rgb;
}

}  // namespace splinegauss
