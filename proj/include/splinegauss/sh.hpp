#pragma once

#include <array>
#include <span>

#include <Eigen/Core>

namespace splinegauss {

inline constexpr int kMaxShDegree = 3;
inline constexpr double kShC0 = 0.28209479177387814;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Real SH basis values Y_c(dir) for c < sh_coeff_count(degree), using the
/// sign conventions of the common Gaussian-splatting rasterizers.
void sh_basis(int degree, const Eigen::Vector3d& dir, std::span<double> out);

/// dY_c/d(dir) treating the three direction components as independent.
void sh_basis_gradient(int degree, const Eigen::Vector3d& dir, std::span<Eigen::Vector3d> out);

/// RGB value sum_c Y_c(dir) sh[3c + channel] (no offset, no clamping).
Eigen::Vector3d sh_eval(int degree, std::span<const double> sh, const Eigen::Vector3d& dir);

}  // namespace splinegauss
