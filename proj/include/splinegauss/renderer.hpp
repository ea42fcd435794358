#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "splinegauss/camera.hpp"
#include "splinegauss/image.hpp"
#include "splinegauss/quaternion.hpp"
#include "splinegauss/scene.hpp"

namespace splinegauss {

struct RenderSettings {
  double near_plane = 0.05;
  double low_pass = 0.3;             // px^2 added to the 2D covariance diagonal
  double alpha_max = 0.999;
  double transmittance_min = 1e-4;   // stop before T would fall below this
  double support_sigmas = 3.0;       // screen footprint half-size in std devs
  int tile_size = 16;
};

/// A Gaussian after projection into one camera at one time.
struct ProjectedGaussian {
  int index = -1;  // source Gaussian
  Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov2d = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d conic = Eigen::Matrix2d::Identity();
  double depth = 0.0;     // camera-space z, the sort key
  double distance = 0.0;  // |x_c|, used for inverse depth
  double opacity = 0.0;   // sigma' after the temporal mask
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  std::uint8_t color_clamped = 0;  // bit c set when channel c hit the zero clamp
  bool is_object = false;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();       // mu' at the render time
  Eigen::Vector3d flow_position = Eigen::Vector3d::Zero();  // mu' at the flow target time
  Eigen::Vector3d cam_position = Eigen::Vector3d::Zero();   // x_c
  Quat rotation;
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel footprint
};

/// Per-pixel render products. Weights w_i = alpha_i T_i.
struct RenderOutputs {
  int width = 0;
  int height = 0;
  Image color;          // 3 channels: sum w_i c_i + O * env
  Image obj_mask;       // sum of object weights
  Image inv_depth;      // sum w_i / |x_c|
  Image transmittance;  // O = prod (1 - alpha_i)
  Image flow_pos;       // 3 channels: sum w_i mu'_i(t'), zero without a flow target
  Image flow_pos_src;   // 3 channels: sum w_i mu'_i(t)
  Camera camera;
  double time = 0.0;
  std::optional<double> flow_time;

  /// Sum of background weights, derived as 1 - O - obj_mask.
  double background_weight(int x, int y) const;
};

/// Upstream gradients with respect to RenderOutputs; empty images count as zero.
struct OutputGradients {
  Image color;
  Image obj_mask;
  Image inv_depth;
  Image transmittance;
  Image flow_pos;
  Image flow_pos_src;

  /// Zero-filled buffers for every channel of `outputs`.
  static OutputGradients zeros_like(const RenderOutputs& outputs);
};

/// Gradient buffers shaped like a scene.
struct SceneGradients {
  std::vector<SplatGaussian> gaussians;
  std::vector<double> env_map;
  /// Per-Gaussian norm of the screen-space mean gradient, summed over backward calls.
  std::vector<double> screen_grad_norm;
  /// Number of backward calls in which the Gaussian touched at least one pixel.
  std::vector<int> visible_count;

  static SceneGradients zeros_like(const Scene& scene);
  void set_zero();
  void add(const SceneGradients& other, double weight = 1.0);
};

/// Projects one Gaussian; nullopt when culled (behind the near plane or off screen).
std::optional<ProjectedGaussian> project_gaussian(const Scene& scene, int index,
                                                  const Camera& camera, double t,
                                                  const RenderSettings& settings = {},
                                                  std::optional<double> flow_time = std::nullopt);

/// Tiled, multi-threaded rasterizer that keeps what its backward pass needs.
class Rasterizer {
 public:
  explicit Rasterizer(RenderSettings settings = {});

  /// Renders `scene` from `camera` at normalized time t. With a flow target time
  /// the flow_pos channel blends positions at that time with the weights at t.
  const RenderOutputs& forward(const Scene& scene, const Camera& camera, double t,
                               std::optional<double> flow_time = std::nullopt);

  /// Single-threaded reference: every pixel loops over all depth-sorted
  /// Gaussians. Produces the same bits as forward.
  RenderOutputs forward_reference(const Scene& scene, const Camera& camera, double t,
                                  std::optional<double> flow_time = std::nullopt) const;

  /// Accumulates dL/dparameters into `grads`. Throws StateError without a prior
  /// forward call on the same scene.
  void backward(const Scene& scene, const OutputGradients& upstream, SceneGradients& grads) const;

  const RenderOutputs& outputs() const { return outputs_; }
  const std::vector<ProjectedGaussian>& projected() const { return projected_; }
  const RenderSettings& settings() const { return settings_; }

 private:
  void project_all(const Scene& scene, const Camera& camera, double t,
                   std::optional<double> flow_time, std::vector<ProjectedGaussian>& out) const;
  void build_tiles();

  RenderSettings settings_;
  RenderOutputs outputs_;
  std::vector<ProjectedGaussian> projected_;  // depth sorted
  std::vector<std::vector<int>> tiles_;       // indices into projected_, front to back
  int tiles_x_ = 0;
  int tiles_y_ = 0;
  const Scene* scene_ = nullptr;
  size_t scene_size_ = 0;
  bool has_forward_ = false;
};

/// Convenience wrapper around Rasterizer::forward.
RenderOutputs render(const Scene& scene, const Camera& camera, double t,
                     const RenderSettings& settings = {},
                     std::optional<double> flow_time = std::nullopt);

/// Per-pixel predicted target pixel for the flow loss.
///
/// With W = 1 - O, X_src = flow_pos_src / W and X_tgt = flow_pos / W, the
/// prediction is p + phi_tgt(X_tgt) - phi_src(X_src): the pixel center moved by
/// the projected displacement of the blended surface point. Pixels with
/// W < min_weight or a point behind either camera are flagged invalid.
struct FlowProjection {
  Image coords;  // 2 channels, pixel coordinates in the target frame
  Image valid;   // 1 channel, 0 or 1
};

FlowProjection render_flow_projection(const RenderOutputs& outputs, const Camera& target_camera,
                                      double min_weight = 1e-3);

/// Accumulates the gradient of <grad_coords, coords> into flow_pos,
/// flow_pos_src and transmittance gradients. Invalid pixels contribute nothing.
void render_flow_projection_backward(const RenderOutputs& outputs, const Camera& target_camera,
                                     const FlowProjection& projection, const Image& grad_coords,
                                     OutputGradients& grads);

/// Worker count for parallel loops: SPLINEGAUSS_THREADS if set, else the
/// OpenMP default.
int worker_count();

}  // namespace splinegauss
