#include "splinegauss/camera.hpp"

#include <Eigen/Geometry>

#include "splinegauss/errors.hpp"

namespace splinegauss {

Eigen::Vector3d Camera::pixel_ray(int px, int py) const {
  const Eigen::Vector3d local((px + 0.5 - cx) / fx, (py + 0.5 - cy) / fy, 1.0);
  return (rotation.transpose() * local).normalized();
}

std::optional<Eigen::Vector2d> Camera::project(const Eigen::Vector3d& world, double near) const {
  const Eigen::Vector3d c = to_camera(world);
  if (c.z() <= near) return std::nullopt;
  return Eigen::Vector2d(fx * c.x() / c.z() + cx, fy * c.y() / c.z() + cy);
}

void Camera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || width <= 0 || height <= 0) {
    throw FormatError("camera intrinsics and image size must be positive");
  }
  const Eigen::Matrix3d gram = rotation * rotation.transpose();
  if (!gram.isApprox(Eigen::Matrix3d::Identity(), 1e-6) || rotation.determinant() < 0.0) {
    throw FormatError("camera rotation is not a proper orthonormal matrix");
  }
}

Camera Camera::look_at(const Eigen::Vector3d& position, const Eigen::Vector3d& target,
                       const Eigen::Vector3d& up, double focal, int width, int height,
                       double timestamp) {
  const Eigen::Vector3d forward = (target - position).normalized();
  const Eigen::Vector3d right = (-up).cross(forward).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  Camera cam;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = forward.transpose();
  cam.translation = -cam.rotation * position;
  cam.fx = cam.fy = focal;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.width = width;
  cam.height = height;
  cam.timestamp = timestamp;
  return cam;
}

}  // namespace splinegauss
