#include "splinegauss/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "splinegauss/errors.hpp"
#include "splinegauss/sh.hpp"

namespace splinegauss {
namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

double SplatGaussian::opacity() const { return sigmoid(opacity_logit); }

const char* param_group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::position: return "position";
    case ParamGroup::scale: return "scale";
    case ParamGroup::rotation: return "rotation";
    case ParamGroup::opacity: return "opacity";
    case ParamGroup::sh: return "sh";
    case ParamGroup::color_trig: return "color_trig";
    case ParamGroup::spline_controls: return "spline_controls";
    case ParamGroup::motion_trig: return "motion_trig";
    case ParamGroup::quat_controls: return "quat_controls";
    case ParamGroup::mask_scales: return "mask_scales";
  }
  return "unknown";
}

void set_zero(SplatGaussian& g) {
  for_each_param(g, [](ParamGroup, std::span<double> v) { std::fill(v.begin(), v.end(), 0.0); });
}

SplatGaussian zeros_like(const SplatGaussian& g) {
  SplatGaussian z = g;
  set_zero(z);
  return z;
}

double Scene::normalize_time(double seconds) const {
  const double span = time_end - time_begin;
  if (span <= 0.0) return 0.0;
  return (seconds - time_begin) / span;
}

size_t Scene::object_count() const {
  return static_cast<size_t>(
      std::count_if(gaussians.begin(), gaussians.end(), [](const auto& g) { return g.is_object(); }));
}

Eigen::Vector3d gaussian_position(const SplatGaussian& g, double t, const SceneOptions& options) {
  if (g.motion && options.motion) return deform_position(*g.motion, g.mu, t);
  return g.mu;
}

Quat gaussian_rotation(const SplatGaussian& g, double t, const SceneOptions& options) {
  if (g.motion && options.motion) return deform_rotation(*g.motion, t);
  return Quat::from_vec(g.rotation).normalized();
}

double gaussian_opacity(const SplatGaussian& g, double t, const SceneOptions& options) {
  const double sigma = g.opacity();
  if (g.motion && options.temporal_mask) return effective_opacity(g.motion->mask, sigma, t);
  return sigma;
}

Eigen::Matrix3d covariance(const SplatGaussian& g, double t, const SceneOptions& options) {
  const Eigen::Matrix3d r = quat_to_matrix(gaussian_rotation(g, t, options));
  const Eigen::Matrix3d m = r * g.scale().asDiagonal();
  return m * m.transpose();
}

std::vector<std::vector<int>> knn_search(std::span<const Eigen::Vector3d> points, int k) {
  const int n = static_cast<int>(points.size());
  std::vector<std::vector<int>> result(n);
  k = std::min(k, n - 1);
  if (k <= 0) return result;

  Eigen::Vector3d lo = points[0], hi = points[0];
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Eigen::Vector3d extent = (hi - lo).cwiseMax(1e-12);
  // Aim for roughly two points per occupied cell.
  double cell = std::cbrt(extent.prod() * 2.0 / n);
  cell = std::max({cell, extent.maxCoeff() / 256.0, 1e-9});
  Eigen::Vector3i dims;
  for (int a = 0; a < 3; ++a) dims[a] = static_cast<int>(extent[a] / cell) + 1;

  auto cell_of = [&](const Eigen::Vector3d& p) {
    Eigen::Vector3i c;
    for (int a = 0; a < 3; ++a) c[a] = std::clamp(static_cast<int>((p[a] - lo[a]) / cell), 0, dims[a] - 1);
    return c;
  };
  auto flat = [&](const Eigen::Vector3i& c) {
    return (static_cast<size_t>(c.z()) * dims.y() + c.y()) * dims.x() + c.x();
  };

  // Counting sort of point indices into cells (ascending index within a cell).
  const size_t cell_count = static_cast<size_t>(dims.x()) * dims.y() * dims.z();
  std::vector<int> start(cell_count + 1, 0);
  std::vector<size_t> home(n);
  for (int i = 0; i < n; ++i) {
    home[i] = flat(cell_of(points[i]));
    ++start[home[i] + 1];
  }
  for (size_t c = 0; c < cell_count; ++c) start[c + 1] += start[c];
  std::vector<int> order(n);
  {
    std::vector<int> fill(start.begin(), start.end() - 1);
    for (int i = 0; i < n; ++i) order[fill[home[i]]++] = i;
  }

  const int max_ring = dims.maxCoeff();
#pragma omp parallel for schedule(dynamic, 64)
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d& q = points[i];
    const Eigen::Vector3i c0 = cell_of(q);
    std::vector<std::pair<double, int>> found;
    for (int r = 0; r <= max_ring; ++r) {
      for (int dz = -r; dz <= r; ++dz) {
        for (int dy = -r; dy <= r; ++dy) {
          for (int dx = -r; dx <= r; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
            const Eigen::Vector3i c = c0 + Eigen::Vector3i(dx, dy, dz);
            if ((c.array() < 0).any() || (c.array() >= dims.array()).any()) continue;
            const size_t f = flat(c);
            for (int s = start[f]; s < start[f + 1]; ++s) {
              const int j = order[s];
              if (j == i) continue;
              found.emplace_back((points[j] - q).squaredNorm(), j);
            }
          }
        }
      }
      if (static_cast<int>(found.size()) >= k) {
        std::nth_element(found.begin(), found.begin() + (k - 1), found.end());
        const double kth = found[k - 1].first;
        // Every point in ring r + 1 or beyond is at least r * cell away.
        const double reach = r * cell;
        if (kth < reach * reach) break;
      }
    }
    std::sort(found.begin(), found.end());
    auto& out = result[i];
    out.reserve(k);
    for (int j = 0; j < k; ++j) out.push_back(found[j].second);
  }
  return result;
}

void refresh_knn(Scene& scene) {
  std::vector<int> objects;
  std::vector<Eigen::Vector3d> positions;
  for (size_t i = 0; i < scene.gaussians.size(); ++i) {
    if (scene.gaussians[i].is_object()) {
      objects.push_back(static_cast<int>(i));
      positions.push_back(scene.gaussians[i].mu);
    }
  }
  auto& cache = scene.knn;
  cache.neighbors.assign(scene.gaussians.size(), {});
  if (objects.size() >= 2) {
    const auto local = knn_search(positions, kRigidityNeighbors);
    for (size_t a = 0; a < objects.size(); ++a) {
      auto& dst = cache.neighbors[objects[a]];
      for (int b : local[a]) dst.push_back(objects[b]);
    }
  }
  cache.age = 0;
  ++cache.refresh_count;
  cache.valid = true;
}

Scene init_from_points(std::span<const LidarPoint> points, std::span<const Camera> cameras,
                       std::span<const Image> masks, const InitOptions& options,
                       InitReport* report) {
  if (cameras.empty()) throw ShapeError("init_from_points needs at least one camera");
  if (masks.size() != cameras.size()) throw ShapeError("one mask per camera required");
  for (size_t f = 0; f < cameras.size(); ++f) {
    cameras[f].validate();
    if (masks[f].width != cameras[f].width || masks[f].height != cameras[f].height ||
        masks[f].channels != 1) {
      throw ShapeError("mask does not match its camera");
    }
  }
  if (options.sh_degree < 0 || options.sh_degree > kMaxShDegree) throw ShapeError("bad SH degree");

  Scene scene;
  scene.sh_degree = options.sh_degree;
  auto [tmin_it, tmax_it] = std::minmax_element(
      cameras.begin(), cameras.end(), [](const Camera& a, const Camera& b) { return a.timestamp < b.timestamp; });
  scene.time_begin = tmin_it->timestamp;
  scene.time_end = tmax_it->timestamp;
  if (scene.time_end <= scene.time_begin) scene.time_end = scene.time_begin + 1.0;
  const int frames = static_cast<int>(cameras.size());
  scene.frame_interval = frames > 1 ? 1.0 / (frames - 1) : 1.0;
  scene.env_map = EnvMap(options.env_height, options.env_width, options.env_fill);

  const int controls =
      options.control_count > 0 ? options.control_count : std::max(options.spline_order, frames / 3);
  const KnotLayout layout(options.spline_order, controls, 0.0, 1.0);
  const double mask_scale = options.mask_scale_frames * scene.frame_interval;

  std::vector<Eigen::Vector3d> positions;
  positions.reserve(points.size());
  for (const auto& p : points) positions.push_back(p.position);
  const auto neighbors = knn_search(positions, 3);

  const int coeffs = sh_coeff_count(options.sh_degree);
  const double logit = std::log(options.initial_opacity / (1.0 - options.initial_opacity));
  InitReport rep;
  scene.gaussians.reserve(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    const LidarPoint& pt = points[i];
    SplatGaussian g;
    g.mu = pt.position;
    double mean_dist = 0.0;
    for (int j : neighbors[i]) mean_dist += (positions[j] - pt.position).norm();
    mean_dist = neighbors[i].empty() ? 0.01 : mean_dist / neighbors[i].size();
    mean_dist = std::max(mean_dist, 1e-7);
    g.log_scale.setConstant(std::log(mean_dist));
    g.opacity_logit = logit;
    g.sh.assign(3 * coeffs, 0.0);
    for (int c = 0; c < 3; ++c) g.sh[c] = (pt.color[c] - 0.5) / kShC0;
    g.color_trig = TrigSeries(options.color_levels, 3);
    g.tag = pt.tag;

    // Acquisition frame: closest timestamp, earliest on ties.
    size_t frame = 0;
    for (size_t f = 1; f < cameras.size(); ++f) {
      if (std::abs(cameras[f].timestamp - pt.timestamp) <
          std::abs(cameras[frame].timestamp - pt.timestamp)) {
        frame = f;
      }
    }
    bool in_any = false;
    for (const auto& cam : cameras) {
      const auto px = cam.project(pt.position);
      if (px && px->x() >= 0 && px->y() >= 0 && px->x() < cam.width && px->y() < cam.height) {
        in_any = true;
        break;
      }
    }
    bool object = false;
    const auto px = cameras[frame].project(pt.position);
    if (px && px->x() >= 0 && px->y() >= 0 && px->x() < cameras[frame].width &&
        px->y() < cameras[frame].height) {
      const int x = static_cast<int>(px->x());
      const int y = static_cast<int>(px->y());
      object = masks[frame].at(x, y) > 0.5;
    }
    if (!in_any) ++rep.unprojected_count;
    if (object) {
      const TemporalMask mask(scene.normalize_time(pt.timestamp), mask_scale, mask_scale);
      g.motion = ObjectMotion::identity(layout, options.trig_levels, mask);
      ++rep.object_count;
    } else {
      ++rep.background_count;
    }
    scene.gaussians.push_back(std::move(g));
  }
  refresh_knn(scene);
  if (report) *report = rep;
  return scene;
}

}  // namespace splinegauss
