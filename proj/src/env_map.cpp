#include "splinegauss/env_map.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "splinegauss/errors.hpp"

namespace splinegauss {

EnvMap::EnvMap(int h, int w, const Eigen::Vector3d& fill) : height(h), width(w) {
  if (h <= 0 || w <= 0) throw ShapeError("environment map size must be positive");
  texels.resize(static_cast<size_t>(h) * w * 3);
  for (size_t i = 0; i < texels.size(); i += 3) {
    texels[i] = fill[0];
    texels[i + 1] = fill[1];
    texels[i + 2] = fill[2];
  }
}

EnvMap::Footprint EnvMap::footprint(const Eigen::Vector3d& dir_in) const {
  const Eigen::Vector3d dir = dir_in.normalized();
  const double lon = std::atan2(dir.x(), dir.z());
  const double lat = std::asin(std::clamp(-dir.y(), -1.0, 1.0));
  const double fu = (lon / (2.0 * std::numbers::pi) + 0.5) * width - 0.5;
  const double fv = (0.5 - lat / std::numbers::pi) * height - 0.5;
  const double x0f = std::floor(fu);
  const double y0f = std::floor(fv);
  const double ax = fu - x0f;
  const double ay = fv - y0f;
  auto wrap = [&](int x) { return ((x % width) + width) % width; };
  auto clamp_row = [&](int y) { return std::clamp(y, 0, height - 1); };
  const int x0 = wrap(static_cast<int>(x0f));
  const int x1 = wrap(static_cast<int>(x0f) + 1);
  const int y0 = clamp_row(static_cast<int>(y0f));
  const int y1 = clamp_row(static_cast<int>(y0f) + 1);
  Footprint f;
  f.index[0] = (y0 * width + x0) * 3;
  f.index[1] = (y0 * width + x1) * 3;
  f.index[2] = (y1 * width + x0) * 3;
  f.index[3] = (y1 * width + x1) * 3;
  f.weight[0] = (1 - ax) * (1 - ay);
  f.weight[1] = ax * (1 - ay);
  f.weight[2] = (1 - ax) * ay;
  f.weight[3] = ax * ay;
  return f;
}

Eigen::Vector3d EnvMap::sample(const Eigen::Vector3d& dir) const {
  if (empty()) return Eigen::Vector3d::Zero();
  const Footprint f = footprint(dir);
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (int i = 0; i < 4; ++i) {
    c += f.weight[i] *
         Eigen::Vector3d(texels[f.index[i]], texels[f.index[i] + 1], texels[f.index[i] + 2]);
  }
  return c;
}

void EnvMap::sample_backward(const Eigen::Vector3d& dir, const Eigen::Vector3d& grad,
                             std::span<double> grad_texels) const {
  if (empty()) return;
  if (grad_texels.size() != texels.size()) throw ShapeError("env map gradient size mismatch");
  const Footprint f = footprint(dir);
  for (int i = 0; i < 4; ++i) {
    for (int c = 0; c < 3; ++c) grad_texels[f.index[i] + c] += f.weight[i] * grad[c];
  }
}

}  // namespace splinegauss
