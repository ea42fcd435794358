#include "splinegauss/renderer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <string>

#include <Eigen/Dense>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "splinegauss/errors.hpp"
#include "splinegauss/sh.hpp"

namespace splinegauss {

int worker_count() {
  int n = 1;
#ifdef _OPENMP
  n = omp_get_max_threads();
#endif
  if (const char* env = std::getenv("SPLINEGAUSS_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) n = static_cast<int>(v);
  }
  return std::max(1, n);
}

double RenderOutputs::background_weight(int x, int y) const {
  return 1.0 - transmittance.at(x, y) - obj_mask.at(x, y);
}

OutputGradients OutputGradients::zeros_like(const RenderOutputs& o) {
  OutputGradients g;
  g.color = Image(o.width, o.height, 3);
  g.obj_mask = Image(o.width, o.height, 1);
  g.inv_depth = Image(o.width, o.height, 1);
  g.transmittance = Image(o.width, o.height, 1);
  g.flow_pos = Image(o.width, o.height, 3);
  g.flow_pos_src = Image(o.width, o.height, 3);
  return g;
}

SceneGradients SceneGradients::zeros_like(const Scene& scene) {
  SceneGradients g;
  g.gaussians.reserve(scene.gaussians.size());
  for (const auto& s : scene.gaussians) g.gaussians.push_back(splinegauss::zeros_like(s));
  g.env_map.assign(scene.env_map.texels.size(), 0.0);
  g.screen_grad_norm.assign(scene.gaussians.size(), 0.0);
  g.visible_count.assign(scene.gaussians.size(), 0);
  return g;
}

void SceneGradients::set_zero() {
  for (auto& g : gaussians) splinegauss::set_zero(g);
  std::fill(env_map.begin(), env_map.end(), 0.0);
  std::fill(screen_grad_norm.begin(), screen_grad_norm.end(), 0.0);
  std::fill(visible_count.begin(), visible_count.end(), 0);
}

void SceneGradients::add(const SceneGradients& other, double weight) {
  if (other.gaussians.size() != gaussians.size() || other.env_map.size() != env_map.size()) {
    throw ShapeError("gradient buffers differ in shape");
  }
  for (size_t i = 0; i < gaussians.size(); ++i) {
    std::vector<std::span<const double>> src;
    for_each_param(other.gaussians[i], [&](ParamGroup, std::span<const double> v) { src.push_back(v); });
    size_t k = 0;
    for_each_param(gaussians[i], [&](ParamGroup, std::span<double> v) {
      const auto s = src[k++];
      if (s.size() != v.size()) throw ShapeError("gradient buffers differ in shape");
      for (size_t j = 0; j < v.size(); ++j) v[j] += weight * s[j];
    });
    screen_grad_norm[i] += other.screen_grad_norm[i];
    visible_count[i] += other.visible_count[i];
  }
  for (size_t i = 0; i < env_map.size(); ++i) env_map[i] += weight * other.env_map[i];
}

namespace {

Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Eigen::Vector3d& xc) {
  const double z = xc.z();
  Eigen::Matrix<double, 2, 3> j;
  j << cam.fx / z, 0.0, -cam.fx * xc.x() / (z * z), 0.0, cam.fy / z, -cam.fy * xc.y() / (z * z);
  return j;
}

double max_eigenvalue(const Eigen::Matrix2d& m) {
  const double mid = 0.5 * (m(0, 0) + m(1, 1));
  const double half = 0.5 * (m(0, 0) - m(1, 1));
  return mid + std::sqrt(half * half + m(0, 1) * m(0, 1));
}

/// Running per-pixel accumulators.
struct PixelAccum {
  double color[3] = {0, 0, 0};
  double obj = 0;
  double inv_depth = 0;
  double flow[3] = {0, 0, 0};
  double flow_src[3] = {0, 0, 0};
  double transmittance = 1.0;
};

struct Contribution {
  int position;  // index into the candidate list
  double alpha;
  double t_before;
  double gauss;  // exp(power)
  bool clamped;
};

/// Front-to-back compositing of one pixel over a depth-sorted candidate list.
/// Both the tiled and the reference paths call this, so they agree bit for bit.
inline void blend_pixel(const std::vector<ProjectedGaussian>& proj, const int* candidates,
                        int count, int px, int py, const RenderSettings& s, PixelAccum& acc,
                        std::vector<Contribution>* record) {
  double t = 1.0;
  const double cx = px + 0.5;
  const double cy = py + 0.5;
  for (int k = 0; k < count; ++k) {
    const ProjectedGaussian& g = proj[candidates[k]];
    if (px < g.x0 || px > g.x1 || py < g.y0 || py > g.y1) continue;
    const double dx = cx - g.mean2d.x();
    const double dy = cy - g.mean2d.y();
    const double power =
        -0.5 * (g.conic(0, 0) * dx * dx + 2.0 * g.conic(0, 1) * dx * dy + g.conic(1, 1) * dy * dy);
    const double gauss = std::exp(power);
    double alpha = g.opacity * gauss;
    bool clamped = false;
    if (alpha > s.alpha_max) {
      alpha = s.alpha_max;
      clamped = true;
    }
    const double next_t = t * (1.0 - alpha);
    if (next_t < s.transmittance_min) break;
    const double w = alpha * t;
    for (int c = 0; c < 3; ++c) {
      acc.color[c] += w * g.color[c];
      acc.flow[c] += w * g.flow_position[c];
      acc.flow_src[c] += w * g.position[c];
    }
    if (g.is_object) acc.obj += w;
    acc.inv_depth += w / g.distance;
    if (record) record->push_back({k, alpha, t, gauss, clamped});
    t = next_t;
  }
  acc.transmittance = t;
}

void store_pixel(RenderOutputs& out, int px, int py, const PixelAccum& acc,
                 const Eigen::Vector3d& env) {
  for (int c = 0; c < 3; ++c) {
    out.color.at(px, py, c) = acc.color[c] + acc.transmittance * env[c];
    out.flow_pos.at(px, py, c) = acc.flow[c];
    out.flow_pos_src.at(px, py, c) = acc.flow_src[c];
  }
  out.obj_mask.at(px, py) = acc.obj;
  out.inv_depth.at(px, py) = acc.inv_depth;
  out.transmittance.at(px, py) = acc.transmittance;
}

RenderOutputs allocate_outputs(const Camera& camera, double t, std::optional<double> flow_time) {
  RenderOutputs out;
  out.width = camera.width;
  out.height = camera.height;
  out.color = Image(camera.width, camera.height, 3);
  out.obj_mask = Image(camera.width, camera.height, 1);
  out.inv_depth = Image(camera.width, camera.height, 1);
  out.transmittance = Image(camera.width, camera.height, 1);
  out.flow_pos = Image(camera.width, camera.height, 3);
  out.flow_pos_src = Image(camera.width, camera.height, 3);
  out.camera = camera;
  out.time = t;
  out.flow_time = flow_time;
  return out;
}

/// Per-Gaussian gradients with respect to projected quantities.
struct ProjectedGrad {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d conic = Eigen::Matrix2d::Zero();  // full symmetric-matrix gradient
  double opacity = 0.0;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double inv_depth = 0.0;
  Eigen::Vector3d flow = Eigen::Vector3d::Zero();
  Eigen::Vector3d flow_src = Eigen::Vector3d::Zero();
  int hits = 0;

  void add(const ProjectedGrad& o) {
    mean += o.mean;
    conic += o.conic;
    opacity += o.opacity;
    color += o.color;
    inv_depth += o.inv_depth;
    flow += o.flow;
    flow_src += o.flow_src;
    hits += o.hits;
  }
};

double grad_at(const Image& img, int x, int y, int c = 0) {
  return img.empty() ? 0.0 : img.at(x, y, c);
}

/// Reverse pass of blend_pixel for one pixel; writes into buf[position].
void backprop_pixel(const std::vector<ProjectedGaussian>& proj, const int* candidates,
                    const std::vector<Contribution>& contrib, double t_final, int px, int py,
                    const Eigen::Vector3d& env, const OutputGradients& up, ProjectedGrad* buf) {
  double g_color[3], g_flow[3], g_flow_src[3];
  for (int c = 0; c < 3; ++c) {
    g_color[c] = grad_at(up.color, px, py, c);
    g_flow[c] = grad_at(up.flow_pos, px, py, c);
    g_flow_src[c] = grad_at(up.flow_pos_src, px, py, c);
  }
  const double g_obj = grad_at(up.obj_mask, px, py);
  const double g_inv = grad_at(up.inv_depth, px, py);
  const double g_t = grad_at(up.transmittance, px, py);

  // Everything behind the current Gaussian, as contributions to each output.
  double after_color[3] = {t_final * env[0], t_final * env[1], t_final * env[2]};
  double after_flow[3] = {0, 0, 0};
  double after_flow_src[3] = {0, 0, 0};
  double after_obj = 0.0;
  double after_inv = 0.0;
  const double cx = px + 0.5;
  const double cy = py + 0.5;
  for (auto it = contrib.rbegin(); it != contrib.rend(); ++it) {
    const ProjectedGaussian& g = proj[candidates[it->position]];
    ProjectedGrad& d = buf[it->position];
    const double a = it->alpha;
    const double t = it->t_before;
    const double w = a * t;
    const double inv_one_minus = 1.0 / (1.0 - a);
    const double obj = g.is_object ? 1.0 : 0.0;
    const double invd = 1.0 / g.distance;

    double d_alpha = 0.0;
    for (int c = 0; c < 3; ++c) {
      d_alpha += g_color[c] * (t * g.color[c] - after_color[c] * inv_one_minus);
      d_alpha += g_flow[c] * (t * g.flow_position[c] - after_flow[c] * inv_one_minus);
      d_alpha += g_flow_src[c] * (t * g.position[c] - after_flow_src[c] * inv_one_minus);
      d.color[c] += g_color[c] * w;
      d.flow[c] += g_flow[c] * w;
      d.flow_src[c] += g_flow_src[c] * w;
    }
    d_alpha += g_obj * (t * obj - after_obj * inv_one_minus);
    d_alpha += g_inv * (t * invd - after_inv * inv_one_minus);
    d_alpha -= g_t * t_final * inv_one_minus;
    d.inv_depth += g_inv * w;
    ++d.hits;

    if (!it->clamped) {
      d.opacity += d_alpha * it->gauss;
      const double d_power = d_alpha * a;
      const double dx = cx - g.mean2d.x();
      const double dy = cy - g.mean2d.y();
      // power = -0.5 d^T C d with d = pixel - mean.
      d.mean.x() += d_power * (g.conic(0, 0) * dx + g.conic(0, 1) * dy);
      d.mean.y() += d_power * (g.conic(0, 1) * dx + g.conic(1, 1) * dy);
      d.conic(0, 0) += -0.5 * d_power * dx * dx;
      d.conic(0, 1) += -0.5 * d_power * dx * dy;
      d.conic(1, 0) += -0.5 * d_power * dx * dy;
      d.conic(1, 1) += -0.5 * d_power * dy * dy;
    }

    for (int c = 0; c < 3; ++c) {
      after_color[c] += w * g.color[c];
      after_flow[c] += w * g.flow_position[c];
      after_flow_src[c] += w * g.position[c];
    }
    after_obj += w * obj;
    after_inv += w * invd;
  }
}

/// Adds dL/dmu'(t) to the canonical position and, for moving objects, to the
/// curve controls and trig coefficients.
void position_backward(const SplatGaussian& g, const SceneOptions& options, double t,
                       const Eigen::Vector3d& d_pos, SplatGaussian& out) {
  out.mu += d_pos;
  if (!(g.motion && options.motion)) return;
  auto& m = *out.motion;
  const BasisWindow win = basis_window(g.motion->position_curve.layout, t);
  for (int j = 0; j < win.order; ++j) m.position_curve.control_points[win.first + j] += win.weights[j] * d_pos;
  trig_backward(g.motion->position_trig, t, std::span<const double>(d_pos.data(), 3), m.position_trig);
}

void gaussian_backward(const Scene& scene, const ProjectedGaussian& p, const ProjectedGrad& d,
                       const Camera& cam, double t, std::optional<double> flow_time,
                       SplatGaussian& out) {
  const SplatGaussian& g = scene.gaussians[p.index];
  const SceneOptions& opt = scene.options;

  // View-dependent color.
  Eigen::Vector3d d_pos = d.flow_src;
  {
    Eigen::Vector3d dc = d.color;
    for (int c = 0; c < 3; ++c)
      if (p.color_clamped & (1u << c)) dc[c] = 0.0;
    if (!dc.isZero(0.0)) {
      const int count = sh_coeff_count(scene.sh_degree);
      const std::vector<double> sh = deform_color(g.sh, g.color_trig, t);
      const Eigen::Vector3d v = p.position - cam.center();
      const double vn = v.norm();
      const Eigen::Vector3d dir = v / vn;
      std::array<double, 16> y{};
      std::array<Eigen::Vector3d, 16> dy;
      sh_basis(scene.sh_degree, dir, std::span<double>(y.data(), count));
      sh_basis_gradient(scene.sh_degree, dir, std::span<Eigen::Vector3d>(dy.data(), count));
      Eigen::Vector3d d_dir = Eigen::Vector3d::Zero();
      for (int c = 0; c < count; ++c) {
        double s = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
          out.sh[3 * c + ch] += y[c] * dc[ch];
          s += sh[3 * c + ch] * dc[ch];
        }
        d_dir += s * dy[c];
      }
      const Eigen::Vector3d d_band0 = y[0] * dc;
      trig_backward(g.color_trig, t, std::span<const double>(d_band0.data(), 3), out.color_trig);
      d_pos += (Eigen::Matrix3d::Identity() - dir * dir.transpose()) * d_dir / vn;
    }
  }

  // Opacity and temporal mask.
  {
    const double sigma = g.opacity();
    double d_sigma = d.opacity;
    if (g.motion && opt.temporal_mask) {
      const MaskGradient mg = effective_opacity_gradient(g.motion->mask, sigma, t);
      out.motion->mask.log_s0 += d.opacity * mg.log_s0;
      out.motion->mask.log_s1 += d.opacity * mg.log_s1;
      d_sigma = d.opacity * mg.sigma;
    }
    out.opacity_logit += d_sigma * sigma * (1.0 - sigma);
  }

  // Screen-space covariance back to the 3D covariance and the camera-space mean.
  const Eigen::Vector3d& xc = p.cam_position;
  const Eigen::Matrix<double, 2, 3> jac = projection_jacobian(cam, xc);
  const Eigen::Matrix<double, 2, 3> m = jac * cam.rotation;
  const Eigen::Matrix3d r = quat_to_matrix(p.rotation);
  const Eigen::Vector3d s2 = (2.0 * g.log_scale).array().exp();
  const Eigen::Matrix3d sigma3 = r * s2.asDiagonal() * r.transpose();
  const Eigen::Matrix2d g_cov = -p.conic * d.conic * p.conic;
  const Eigen::Matrix3d g_sigma = m.transpose() * g_cov * m;
  const Eigen::Matrix<double, 2, 3> g_m = 2.0 * g_cov * m * sigma3;
  const Eigen::Matrix<double, 2, 3> g_j = g_m * cam.rotation.transpose();

  Eigen::Vector3d d_xc = jac.transpose() * d.mean;
  const double z = xc.z();
  const double z2 = z * z;
  const double z3 = z2 * z;
  d_xc.x() += g_j(0, 2) * (-cam.fx / z2);
  d_xc.y() += g_j(1, 2) * (-cam.fy / z2);
  d_xc.z() += g_j(0, 0) * (-cam.fx / z2) + g_j(0, 2) * (2.0 * cam.fx * xc.x() / z3) +
              g_j(1, 1) * (-cam.fy / z2) + g_j(1, 2) * (2.0 * cam.fy * xc.y() / z3);
  const double dist = p.distance;
  d_xc += d.inv_depth * (-xc / (dist * dist * dist));
  d_pos += cam.rotation.transpose() * d_xc;

  // Sigma = R diag(s^2) R^T.
  const Eigen::Matrix3d g_r = 2.0 * g_sigma * r * s2.asDiagonal();
  const Eigen::Matrix3d rgr = r.transpose() * g_sigma * r;
  for (int a = 0; a < 3; ++a) out.log_scale[a] += 2.0 * s2[a] * rgr(a, a);
  const Eigen::Vector4d d_q = quat_to_matrix_backward(p.rotation, g_r);
  if (g.motion && opt.motion) {
    quat_curve_backward(g.motion->rotation_curve, t, d_q,
                        std::span<Eigen::Vector4d>(out.motion->rotation_curve.controls));
  } else {
    const double n = g.rotation.norm();
    const Eigen::Vector4d q = g.rotation / n;
    out.rotation += (Eigen::Matrix4d::Identity() - q * q.transpose()) * d_q / n;
  }

  position_backward(g, opt, t, d_pos, out);
  if (flow_time) position_backward(g, opt, *flow_time, d.flow, out);
}

}  // namespace

std::optional<ProjectedGaussian> project_gaussian(const Scene& scene, int index,
                                                  const Camera& camera, double t,
                                                  const RenderSettings& settings,
                                                  std::optional<double> flow_time) {
  const SplatGaussian& g = scene.gaussians[index];
  const SceneOptions& opt = scene.options;
  ProjectedGaussian p;
  p.index = index;
  p.position = gaussian_position(g, t, opt);
  p.cam_position = camera.to_camera(p.position);
  const Eigen::Vector3d& xc = p.cam_position;
  if (!(xc.z() > settings.near_plane)) return std::nullopt;

  p.rotation = gaussian_rotation(g, t, opt);
  const Eigen::Matrix3d r = quat_to_matrix(p.rotation);
  const Eigen::Vector3d s2 = (2.0 * g.log_scale).array().exp();
  const Eigen::Matrix3d sigma3 = r * s2.asDiagonal() * r.transpose();
  const Eigen::Matrix<double, 2, 3> m = projection_jacobian(camera, xc) * camera.rotation;
  p.cov2d = m * sigma3 * m.transpose();
  p.cov2d(0, 0) += settings.low_pass;
  p.cov2d(1, 1) += settings.low_pass;
  p.cov2d(0, 1) = p.cov2d(1, 0) = 0.5 * (p.cov2d(0, 1) + p.cov2d(1, 0));
  const double det = p.cov2d.determinant();
  if (!(det > 0.0) || !std::isfinite(det)) return std::nullopt;
  p.conic << p.cov2d(1, 1) / det, -p.cov2d(0, 1) / det, -p.cov2d(1, 0) / det, p.cov2d(0, 0) / det;
  p.mean2d = {camera.fx * xc.x() / xc.z() + camera.cx, camera.fy * xc.y() / xc.z() + camera.cy};

  const double radius = settings.support_sigmas * std::sqrt(max_eigenvalue(p.cov2d));
  p.x0 = std::max(0, static_cast<int>(std::ceil(p.mean2d.x() - radius - 0.5)));
  p.x1 = std::min(camera.width - 1, static_cast<int>(std::floor(p.mean2d.x() + radius - 0.5)));
  p.y0 = std::max(0, static_cast<int>(std::ceil(p.mean2d.y() - radius - 0.5)));
  p.y1 = std::min(camera.height - 1, static_cast<int>(std::floor(p.mean2d.y() + radius - 0.5)));
  if (!std::isfinite(radius) || p.x0 > p.x1 || p.y0 > p.y1) return std::nullopt;

  p.depth = xc.z();
  p.distance = xc.norm();
  p.opacity = gaussian_opacity(g, t, opt);
  p.is_object = g.is_object();
  p.flow_position = flow_time ? gaussian_position(g, *flow_time, opt) : Eigen::Vector3d::Zero();

  const std::vector<double> sh = deform_color(g.sh, g.color_trig, t);
  const Eigen::Vector3d dir = (p.position - camera.center()).normalized();
  const Eigen::Vector3d c = sh_eval(scene.sh_degree, sh, dir) + Eigen::Vector3d::Constant(0.5);
  for (int ch = 0; ch < 3; ++ch) {
    if (c[ch] < 0.0) {
      p.color[ch] = 0.0;
      p.color_clamped |= static_cast<std::uint8_t>(1u << ch);
    } else {
      p.color[ch] = c[ch];
    }
  }
  return p;
}

Rasterizer::Rasterizer(RenderSettings settings) : settings_(settings) {
  if (settings_.tile_size <= 0) throw ShapeError("tile size must be positive");
}

void Rasterizer::project_all(const Scene& scene, const Camera& camera, double t,
                             std::optional<double> flow_time,
                             std::vector<ProjectedGaussian>& out) const {
  const int n = static_cast<int>(scene.gaussians.size());
  std::vector<std::optional<ProjectedGaussian>> tmp(n);
#pragma omp parallel for num_threads(worker_count()) schedule(static)
  for (int i = 0; i < n; ++i) tmp[i] = project_gaussian(scene, i, camera, t, settings_, flow_time);
  out.clear();
  for (auto& p : tmp)
    if (p) out.push_back(std::move(*p));
  std::sort(out.begin(), out.end(), [](const ProjectedGaussian& a, const ProjectedGaussian& b) {
    return a.depth < b.depth || (a.depth == b.depth && a.index < b.index);
  });
}

void Rasterizer::build_tiles() {
  const int ts = settings_.tile_size;
  tiles_x_ = (outputs_.width + ts - 1) / ts;
  tiles_y_ = (outputs_.height + ts - 1) / ts;
  tiles_.assign(static_cast<size_t>(tiles_x_) * tiles_y_, {});
  for (int slot = 0; slot < static_cast<int>(projected_.size()); ++slot) {
    const auto& p = projected_[slot];
    for (int ty = p.y0 / ts; ty <= p.y1 / ts; ++ty)
      for (int tx = p.x0 / ts; tx <= p.x1 / ts; ++tx) tiles_[ty * tiles_x_ + tx].push_back(slot);
  }
}

const RenderOutputs& Rasterizer::forward(const Scene& scene, const Camera& camera, double t,
                                         std::optional<double> flow_time) {
  camera.validate();
  outputs_ = allocate_outputs(camera, t, flow_time);
  project_all(scene, camera, t, flow_time, projected_);
  build_tiles();
  const int ts = settings_.tile_size;
  const int tile_count = tiles_x_ * tiles_y_;
#pragma omp parallel for num_threads(worker_count()) schedule(dynamic, 1)
  for (int tile = 0; tile < tile_count; ++tile) {
    const int tx = tile % tiles_x_;
    const int ty = tile / tiles_x_;
    const auto& list = tiles_[tile];
    for (int py = ty * ts; py < std::min(outputs_.height, (ty + 1) * ts); ++py) {
      for (int px = tx * ts; px < std::min(outputs_.width, (tx + 1) * ts); ++px) {
        PixelAccum acc;
        blend_pixel(projected_, list.data(), static_cast<int>(list.size()), px, py, settings_, acc,
                    nullptr);
        const Eigen::Vector3d env =
            scene.env_map.empty() ? Eigen::Vector3d::Zero() : scene.env_map.sample(camera.pixel_ray(px, py));
        store_pixel(outputs_, px, py, acc, env);
      }
    }
  }
  scene_ = &scene;
  scene_size_ = scene.gaussians.size();
  has_forward_ = true;
  return outputs_;
}

RenderOutputs Rasterizer::forward_reference(const Scene& scene, const Camera& camera, double t,
                                            std::optional<double> flow_time) const {
  camera.validate();
  RenderOutputs out = allocate_outputs(camera, t, flow_time);
  std::vector<ProjectedGaussian> proj;
  project_all(scene, camera, t, flow_time, proj);
  std::vector<int> all(proj.size());
  std::iota(all.begin(), all.end(), 0);
  for (int py = 0; py < camera.height; ++py) {
    for (int px = 0; px < camera.width; ++px) {
      PixelAccum acc;
      blend_pixel(proj, all.data(), static_cast<int>(all.size()), px, py, settings_, acc, nullptr);
      const Eigen::Vector3d env =
          scene.env_map.empty() ? Eigen::Vector3d::Zero() : scene.env_map.sample(camera.pixel_ray(px, py));
      store_pixel(out, px, py, acc, env);
    }
  }
  return out;
}

void Rasterizer::backward(const Scene& scene, const OutputGradients& up, SceneGradients& grads) const {
  if (!has_forward_) throw StateError("backward called before forward");
  if (&scene != scene_ || scene.gaussians.size() != scene_size_) {
    throw StateError("backward called with a different scene than the last forward");
  }
  if (grads.gaussians.size() != scene.gaussians.size()) throw ShapeError("gradient buffer does not match scene");
  const auto check = [&](const Image& img, int channels) {
    if (!img.empty() && (img.width != outputs_.width || img.height != outputs_.height || img.channels != channels))
      throw ShapeError("output gradient has the wrong shape");
  };
  check(up.color, 3);
  check(up.obj_mask, 1);
  check(up.inv_depth, 1);
  check(up.transmittance, 1);
  check(up.flow_pos, 3);
  check(up.flow_pos_src, 3);

  const Camera& cam = outputs_.camera;
  const int ts = settings_.tile_size;
  const int tile_count = tiles_x_ * tiles_y_;
  std::vector<std::vector<ProjectedGrad>> tile_grads(tile_count);
#pragma omp parallel num_threads(worker_count())
  {
    std::vector<Contribution> contrib;
#pragma omp for schedule(dynamic, 1)
    for (int tile = 0; tile < tile_count; ++tile) {
      const int tx = tile % tiles_x_;
      const int ty = tile / tiles_x_;
      const auto& list = tiles_[tile];
      auto& buf = tile_grads[tile];
      buf.assign(list.size(), ProjectedGrad{});
      if (list.empty()) continue;
      for (int py = ty * ts; py < std::min(outputs_.height, (ty + 1) * ts); ++py) {
        for (int px = tx * ts; px < std::min(outputs_.width, (tx + 1) * ts); ++px) {
          contrib.clear();
          PixelAccum acc;
          blend_pixel(projected_, list.data(), static_cast<int>(list.size()), px, py, settings_, acc,
                      &contrib);
          const Eigen::Vector3d env = scene.env_map.empty()
                                          ? Eigen::Vector3d::Zero()
                                          : scene.env_map.sample(cam.pixel_ray(px, py));
          backprop_pixel(projected_, list.data(), contrib, acc.transmittance, px, py, env, up, buf.data());
        }
      }
    }
  }

  // Merge in tile order so the sums do not depend on the thread count.
  std::vector<ProjectedGrad> per_slot(projected_.size());
  for (int tile = 0; tile < tile_count; ++tile) {
    const auto& list = tiles_[tile];
    for (size_t k = 0; k < list.size(); ++k) per_slot[list[k]].add(tile_grads[tile][k]);
  }

  const int slots = static_cast<int>(projected_.size());
#pragma omp parallel for num_threads(worker_count()) schedule(dynamic, 16)
  for (int s = 0; s < slots; ++s) {
    const ProjectedGaussian& p = projected_[s];
    const ProjectedGrad& d = per_slot[s];
    if (d.hits == 0) continue;
    gaussian_backward(scene, p, d, cam, outputs_.time, outputs_.flow_time, grads.gaussians[p.index]);
    grads.screen_grad_norm[p.index] += d.mean.norm();
    grads.visible_count[p.index] += 1;
  }

  // Environment map texels, in pixel order.
  if (!scene.env_map.empty() && !up.color.empty()) {
    if (grads.env_map.size() != scene.env_map.texels.size()) throw ShapeError("env gradient size mismatch");
    for (int py = 0; py < outputs_.height; ++py) {
      for (int px = 0; px < outputs_.width; ++px) {
        const double t_final = outputs_.transmittance.at(px, py);
        const Eigen::Vector3d g(up.color.at(px, py, 0), up.color.at(px, py, 1), up.color.at(px, py, 2));
        if (g.isZero(0.0)) continue;
        scene.env_map.sample_backward(cam.pixel_ray(px, py), t_final * g, grads.env_map);
      }
    }
  }
}

RenderOutputs render(const Scene& scene, const Camera& camera, double t,
                     const RenderSettings& settings, std::optional<double> flow_time) {
  Rasterizer r(settings);
  return r.forward(scene, camera, t, flow_time);
}

FlowProjection render_flow_projection(const RenderOutputs& o, const Camera& target,
                                      double min_weight) {
  target.validate();
  FlowProjection fp;
  fp.coords = Image(o.width, o.height, 2);
  fp.valid = Image(o.width, o.height, 1);
  const Camera& src = o.camera;
  for (int py = 0; py < o.height; ++py) {
    for (int px = 0; px < o.width; ++px) {
      const double w = 1.0 - o.transmittance.at(px, py);
      if (w < min_weight) continue;
      const Eigen::Vector3d xs(o.flow_pos_src.at(px, py, 0), o.flow_pos_src.at(px, py, 1),
                               o.flow_pos_src.at(px, py, 2));
      const Eigen::Vector3d xt(o.flow_pos.at(px, py, 0), o.flow_pos.at(px, py, 1), o.flow_pos.at(px, py, 2));
      const auto ps = src.project(xs / w);
      const auto pt = target.project(xt / w);
      if (!ps || !pt) continue;
      fp.coords.at(px, py, 0) = px + 0.5 + pt->x() - ps->x();
      fp.coords.at(px, py, 1) = py + 0.5 + pt->y() - ps->y();
      fp.valid.at(px, py) = 1.0;
    }
  }
  return fp;
}

void render_flow_projection_backward(const RenderOutputs& o, const Camera& target,
                                     const FlowProjection& fp, const Image& grad_coords,
                                     OutputGradients& grads) {
  if (grad_coords.width != o.width || grad_coords.height != o.height || grad_coords.channels != 2)
    throw ShapeError("flow gradient has the wrong shape");
  if (grads.flow_pos.empty()) grads.flow_pos = Image(o.width, o.height, 3);
  if (grads.flow_pos_src.empty()) grads.flow_pos_src = Image(o.width, o.height, 3);
  if (grads.transmittance.empty()) grads.transmittance = Image(o.width, o.height, 1);
  const Camera& src = o.camera;
  for (int py = 0; py < o.height; ++py) {
    for (int px = 0; px < o.width; ++px) {
      if (fp.valid.at(px, py) == 0.0) continue;
      const Eigen::Vector2d g(grad_coords.at(px, py, 0), grad_coords.at(px, py, 1));
      if (g.isZero(0.0)) continue;
      const double w = 1.0 - o.transmittance.at(px, py);
      const Eigen::Vector3d xs = Eigen::Vector3d(o.flow_pos_src.at(px, py, 0), o.flow_pos_src.at(px, py, 1),
                                                 o.flow_pos_src.at(px, py, 2)) / w;
      const Eigen::Vector3d xt =
          Eigen::Vector3d(o.flow_pos.at(px, py, 0), o.flow_pos.at(px, py, 1), o.flow_pos.at(px, py, 2)) / w;
      // d phi / d X_world = J(x_c) R.
      const Eigen::Matrix<double, 2, 3> jt = projection_jacobian(target, target.to_camera(xt)) * target.rotation;
      const Eigen::Matrix<double, 2, 3> js = projection_jacobian(src, src.to_camera(xs)) * src.rotation;
      const Eigen::Vector3d gxt = jt.transpose() * g;
      const Eigen::Vector3d gxs = -js.transpose() * g;
      for (int c = 0; c < 3; ++c) {
        grads.flow_pos.at(px, py, c) += gxt[c] / w;
        grads.flow_pos_src.at(px, py, c) += gxs[c] / w;
      }
      // X = F / W and W = 1 - O.
      const double d_w = -(gxt.dot(xt) + gxs.dot(xs)) / w;
      grads.transmittance.at(px, py) -= d_w;
    }
  }
}

}  // namespace splinegauss
