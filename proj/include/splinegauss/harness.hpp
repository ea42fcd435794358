#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "splinegauss/dataset.hpp"
#include "splinegauss/scene.hpp"

namespace splinegauss {

/// Axis-aligned box surface covered by flat Gaussians.
struct BoxSpec {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d size = Eigen::Vector3d::Ones();
  Eigen::Vector3d color{0.5, 0.5, 0.5};
  double spacing = 0.12;  // distance between neighboring Gaussians on a face
};

/// Checkered ground plane y = height (world +y points down).
struct GroundSpec {
  bool enabled = true;
  double height = 0.5;
  double x_min = -5.0, x_max = 5.0;
  double z_min = -3.0, z_max = 9.0;
  double checker = 1.0;
  Eigen::Vector3d color_a{0.35, 0.35, 0.38};
  Eigen::Vector3d color_b{0.55, 0.52, 0.45};
  double spacing = 0.2;
};

/// offset(t) = velocity t + amplitude * sin(2 pi frequency t + phase) on
/// normalized time t in [0, 1]. 2 * frequency must be a whole number of at
/// most the motion trig levels so the hidden scene can represent it exactly.
struct TrajectorySpec {
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  Eigen::Vector3d amplitude = Eigen::Vector3d::Zero();
  double frequency = 0.0;
  double phase = 0.0;

  Eigen::Vector3d offset(double t) const;
};

struct MovingObjectSpec {
  BoxSpec box;
  TrajectorySpec trajectory;
  int first_frame = -1;  // visibility window; -1 means the whole sequence
  int last_frame = -1;
};

/// Pseudo-label corruption.
struct NoiseSpec {
  double mask_flip_rate = 0.0;
  bool depth_regauge = true;
  double depth_scale_min = 0.5, depth_scale_max = 2.0;
  double depth_shift_min = -0.1, depth_shift_max = 0.1;
  double flow_jitter = 0.5;  // pixels, Gaussian
};

struct SyntheticSceneSpec {
  int width = 64;
  int height = 64;
  int frames = 30;
  double frame_seconds = 0.1;
  Eigen::Vector3d camera_start{0.0, -0.6, -5.0};
  Eigen::Vector3d camera_velocity{0.0, 0.0, 0.4};  // per second
  Eigen::Vector3d look_direction{0.0, 0.12, 1.0};
  double focal = 64.0;  // pixels
  GroundSpec ground;
  std::vector<BoxSpec> static_boxes;
  std::vector<MovingObjectSpec> moving;
  Eigen::Vector3d sky_zenith{0.35, 0.55, 0.9};
  Eigen::Vector3d sky_horizon{0.8, 0.85, 0.9};
  int lidar_points = 2000;
  int holdout_every = 4;  // frames k with k % holdout_every == holdout_every - 1 are held out
  int max_flow_per_pair = 4096;
  NoiseSpec noise;
  int spline_order = 6;
  int trig_levels = 6;

  /// Throws FormatError on inconsistent fields.
  void validate() const;

  /// 64x64, 30 frames: two static boxes on a checkered ground, one box on a
  /// sinusoidal path and one box visible only in frames 8 to 20.
  static SyntheticSceneSpec desk_default();
  /// Same layout without any moving object.
  static SyntheticSceneSpec desk_static();
};

nlohmann::json spec_to_json(const SyntheticSceneSpec& spec);
/// Missing keys keep their defaults; unknown keys throw FormatError.
SyntheticSceneSpec spec_from_json(const nlohmann::json& j);
SyntheticSceneSpec load_spec(const std::string& path);

struct SyntheticResult {
  Dataset dataset;
  Scene truth;  // hidden scene the frames were rendered from
};

/// Renders the hidden scene and derives every pseudo label from it.
/// Tags: 0 static, i + 1 for moving object i.
SyntheticResult synthesize(const SyntheticSceneSpec& spec, std::uint64_t seed);

/// Scene seeded from the dataset's LiDAR points and object masks.
Scene init_scene(const Dataset& data, const InitOptions& options = {});

/// Per-frame position of the Gaussians carrying `tag`, weighted by their
/// opacity at each frame time so Gaussians masked out at t do not count.
/// NaN when no such Gaussian is visible.
std::vector<Eigen::Vector3d> tagged_centroids(const Scene& scene, const Dataset& data, std::uint32_t tag);

struct TrajectoryError {
  double rmse = 0.0;         // after removing the mean offset
  double path_length = 0.0;  // of the ground truth polyline
  double relative() const { return path_length > 0 ? rmse / path_length : 0.0; }
};

/// Compares recovered and true centroid tracks. A constant offset is removed
/// first: sampled surface points need not average to the box center.
TrajectoryError trajectory_error(const std::vector<Eigen::Vector3d>& recovered,
                                 const std::vector<Eigen::Vector3d>& truth);

/// Finite-difference gradient check report.
struct GradCheckReport {
  std::string component;
  double tolerance = 0.0;
  std::map<std::string, double> max_rel_error;  // per parameter group
  int checked = 0;                              // scalar entries compared

  double worst() const;
  bool passed() const { return worst() < tolerance; }
};

/// Registered components: spline_controls, quaternion_controls, trig_series,
/// temporal_mask, renderer, losses, rigidity, end_to_end.
std::vector<std::string> grad_check_components();

/// Runs the named check on randomized instances. Relative error per entry is
/// |a - f| / max(|a|, |f|, 1e-3 max|f| over the group). Throws FormatError
/// for unknown names.
GradCheckReport grad_check(const std::string& component, std::uint64_t seed = 0);

}  // namespace splinegauss
