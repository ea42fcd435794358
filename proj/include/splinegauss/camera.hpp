#pragma once

#include <optional>

#include <Eigen/Core>

namespace splinegauss {

/// Pinhole camera. World to camera: x_c = rotation * x_w + translation, with
/// +z forward, +x right and +y down. Pixel centers sit at (px + 0.5, py + 0.5).
struct Camera {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  double timestamp = 0.0;  // seconds

  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
    return rotation * world + translation;
  }
  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }

  /// Unit world-space direction through pixel (px, py).
  Eigen::Vector3d pixel_ray(int px, int py) const;

  /// Pixel coordinates of a world point, or nullopt behind the near plane.
  std::optional<Eigen::Vector2d> project(const Eigen::Vector3d& world, double near = 1e-6) const;

  /// Throws FormatError on non-positive intrinsics or a
  /// non-orthonormal rotation block.
  void validate() const;

  /// Camera at `position` looking at `target` with the given world up hint.
  static Camera look_at(const Eigen::Vector3d& position, const Eigen::Vector3d& target,
                        const Eigen::Vector3d& up, double focal, int width, int height,
                        double timestamp);
};

}  // namespace splinegauss
