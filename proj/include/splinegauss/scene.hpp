#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "splinegauss/camera.hpp"
#include "splinegauss/env_map.hpp"
#include "splinegauss/image.hpp"
#include "splinegauss/motion.hpp"
#include "splinegauss/quaternion.hpp"

namespace splinegauss {

enum class GaussianClass : std::uint8_t { background = 0, object = 1 };

/// One splat. Object Gaussians carry a motion record; background ones do not,
/// so the class is derived from it.
struct SplatGaussian {
  Eigen::Vector3d mu = Eigen::Vector3d::Zero();
  Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
  Eigen::Vector4d rotation{1, 0, 0, 0};  // raw (w, x, y, z); normalized on read
  double opacity_logit = 0.0;
  std::vector<double> sh;  // coefficient-major RGB: sh[3 * c + channel]
  TrigSeries color_trig;
  std::optional<ObjectMotion> motion;
  std::uint32_t tag = 0;  // provenance label for analysis only; never optimized

  GaussianClass cls() const {
    return motion ? GaussianClass::object : GaussianClass::background;
  }
  bool is_object() const { return motion.has_value(); }
  Eigen::Vector3d scale() const { return log_scale.array().exp(); }
  double opacity() const;
};

/// Learnable parameter groups, each with its own step size in the trainer.
enum class ParamGroup : std::uint8_t {
  position,
  scale,
  rotation,
  opacity,
  sh,
  color_trig,
  spline_controls,
  motion_trig,
  quat_controls,
  mask_scales,
};
inline constexpr int kParamGroupCount = 10;
const char* param_group_name(ParamGroup group);

/// Calls f(group, span) for every learnable field in a fixed order. Two
/// Gaussians of the same shape yield spans of identical sizes in the same
/// order, so parameters, gradients and optimizer moments can be zipped.
template <class G, class F>
void for_each_param(G& g, F&& f) {
  static_assert(sizeof(Eigen::Vector3d) == 3 * sizeof(double));
  static_assert(sizeof(Eigen::Vector4d) == 4 * sizeof(double));
  using Ptr = std::conditional_t<std::is_const_v<G>, const double*, double*>;
  f(ParamGroup::position, std::span(static_cast<Ptr>(g.mu.data()), 3));
  f(ParamGroup::scale, std::span(static_cast<Ptr>(g.log_scale.data()), 3));
  f(ParamGroup::rotation, std::span(static_cast<Ptr>(g.rotation.data()), 4));
  f(ParamGroup::opacity, std::span(static_cast<Ptr>(&g.opacity_logit), 1));
  f(ParamGroup::sh, std::span(static_cast<Ptr>(g.sh.data()), g.sh.size()));
  f(ParamGroup::color_trig,
    std::span(static_cast<Ptr>(g.color_trig.sin_coeffs.data()), g.color_trig.sin_coeffs.size()));
  f(ParamGroup::color_trig,
    std::span(static_cast<Ptr>(g.color_trig.cos_coeffs.data()), g.color_trig.cos_coeffs.size()));
  if (g.motion) {
    auto& m = *g.motion;
    f(ParamGroup::spline_controls,
      std::span(reinterpret_cast<Ptr>(m.position_curve.control_points.data()),
                3 * m.position_curve.control_points.size()));
    f(ParamGroup::motion_trig, std::span(static_cast<Ptr>(m.position_trig.sin_coeffs.data()),
                                         m.position_trig.sin_coeffs.size()));
    f(ParamGroup::motion_trig, std::span(static_cast<Ptr>(m.position_trig.cos_coeffs.data()),
                                         m.position_trig.cos_coeffs.size()));
    f(ParamGroup::quat_controls,
      std::span(reinterpret_cast<Ptr>(m.rotation_curve.controls.data()),
                4 * m.rotation_curve.controls.size()));
    f(ParamGroup::mask_scales, std::span(static_cast<Ptr>(&m.mask.log_s0), 1));
    f(ParamGroup::mask_scales, std::span(static_cast<Ptr>(&m.mask.log_s1), 1));
  }
}

/// Copy of g with every learnable value set to zero (gradient/moment buffer).
SplatGaussian zeros_like(const SplatGaussian& g);
void set_zero(SplatGaussian& g);

/// Feature switches used by ablations.
struct SceneOptions {
  bool motion = true;         // object positions/rotations follow their curves
  bool temporal_mask = true;  // object opacities follow their visibility masks
};

/// 8-NN lists over object Gaussians by canonical position.
struct KnnCache {
  std::vector<std::vector<int>> neighbors;  // indexed by Gaussian; empty for background
  int age = 0;                              // steps since last refresh
  int refresh_count = 0;
  bool valid = false;
};

inline constexpr int kRigidityNeighbors = 8;

struct Scene {
  std::vector<SplatGaussian> gaussians;
  EnvMap env_map;
  KnnCache knn;
  int sh_degree = 3;
  double time_begin = 0.0;      // seconds mapped to normalized time 0
  double time_end = 1.0;        // seconds mapped to normalized time 1
  double frame_interval = 0.0;  // mean frame spacing in normalized time
  SceneOptions options;

  /// Affine map of seconds onto [0, 1] over the sequence.
  double normalize_time(double seconds) const;
  size_t object_count() const;
  size_t background_count() const { return gaussians.size() - object_count(); }
};

/// Time-dependent state of a Gaussian as seen by the renderer.
Eigen::Vector3d gaussian_position(const SplatGaussian& g, double t, const SceneOptions& options);
Quat gaussian_rotation(const SplatGaussian& g, double t, const SceneOptions& options);
double gaussian_opacity(const SplatGaussian& g, double t, const SceneOptions& options);

/// Sigma = R S S^T R^T with the (possibly deformed) rotation at time t.
Eigen::Matrix3d covariance(const SplatGaussian& g, double t,
                           const SceneOptions& options = SceneOptions{});

/// Simulated LiDAR return.
struct LidarPoint {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double timestamp = 0.0;  // seconds
  Eigen::Vector3d color{0.5, 0.5, 0.5};
  std::uint32_t tag = 0;
};

struct InitOptions {
  int spline_order = 6;
  int control_count = 0;  // 0: one third of the frame count (at least spline_order)
  int trig_levels = 6;    // L, motion series
  int color_levels = 6;   // K, color series
  int sh_degree = 3;
  double initial_opacity = 0.1;
  double mask_scale_frames = 2.0;  // s0 = s1 = this many frame intervals
  int env_height = 256;
  int env_width = 512;
  Eigen::Vector3d env_fill{0.5, 0.5, 0.5};
};

struct InitReport {
  int object_count = 0;
  int background_count = 0;
  int unprojected_count = 0;  // points outside every frame
};

/// Seeds one Gaussian per point. A point becomes an object Gaussian iff it
/// projects onto a mask pixel of its acquisition frame (the camera with the
/// closest timestamp); its mask is centered on its own timestamp.
Scene init_from_points(std::span<const LidarPoint> points, std::span<const Camera> cameras,
                       std::span<const Image> masks, const InitOptions& options = {},
                       InitReport* report = nullptr);

/// k nearest neighbors (excluding self) by Euclidean distance, ties broken by
/// lower index. Uses a uniform grid.
std::vector<std::vector<int>> knn_search(std::span<const Eigen::Vector3d> points, int k);

/// Rebuilds the cache over object Gaussians using canonical positions.
void refresh_knn(Scene& scene);

}  // namespace splinegauss
