#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

namespace splinegauss {

/// Learnable latitude-longitude RGB environment map sampled bilinearly by
/// world-space ray direction (world up is -y). Longitude wraps; latitude clamps.
struct EnvMap {
  int height = 0;
  int width = 0;
  std::vector<double> texels;  // height * width * 3, row-major

  EnvMap() = default;
  EnvMap(int height, int width, const Eigen::Vector3d& fill);

  bool empty() const { return texels.empty(); }

  Eigen::Vector3d sample(const Eigen::Vector3d& dir) const;

  /// Accumulates d<grad, sample(dir)>/d texels into grad_texels.
  void sample_backward(const Eigen::Vector3d& dir, const Eigen::Vector3d& grad,
                       std::span<double> grad_texels) const;

  /// Bilinear footprint of a direction: 4 texel offsets and weights.
  struct Footprint {
    int index[4];
    double weight[4];
  };
  Footprint footprint(const Eigen::Vector3d& dir) const;
};

}  // namespace splinegauss
