#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "splinegauss/dataset.hpp"
#include "splinegauss/losses.hpp"
#include "splinegauss/renderer.hpp"
#include "splinegauss/scene.hpp"

namespace splinegauss {

/// Step sizes per parameter group. The position rate is multiplied by the
/// scene extent and decays exponentially to position_final_factor of itself.
struct LearningRates {
  double position = 1.6e-4;
  double position_final_factor = 0.01;
  double scale = 5e-3;
  double rotation = 1e-3;
  double opacity = 5e-2;
  double sh = 2.5e-3;
  double color_trig = 1.6e-3;
  double spline_controls = 1.6e-3;
  double motion_trig = 1.6e-3;
  double quat_controls = 1e-3;
  double mask_scales = 1e-3;
  double env_map = 1e-2;

  double for_group(ParamGroup group) const;
};

struct TrainConfig {
  int iterations = 7000;
  LearningRates lr;
  LossWeights weights;
  int densify_interval = 500;
  int densify_from = 500;
  int densify_until = 5000;
  double densify_grad_threshold = 2e-4;  // mean screen-space gradient norm, pixels
  double split_scale_fraction = 0.05;    // of the scene extent
  double prune_opacity = 0.005;
  int max_gaussians = 20000;  // densification stops growing past this
  int knn_refresh = 10;
  int eval_interval = 500;    // held-out PSNR snapshots; 0 disables
  std::uint64_t seed = 0;
  bool motion = true;         // ablation: object motion curves
  bool temporal_mask = true;  // ablation: object visibility masks
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-15;
  /// Scene seeding used by tools that start from a dataset.
  InitOptions init;

  /// Throws FormatError on non-positive intervals or thresholds.
  void validate() const;
};

/// Adaptive moment estimation with one moment buffer per learnable value.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-15);

  /// One bias-corrected update of `params` in place for step number t >= 1.
  /// Moments live in m and v.
  void update(std::span<double> params, std::span<const double> grads, std::span<double> m,
              std::span<double> v, double lr, long t) const;

  /// Moment buffers shaped like the scene. Call after structural changes.
  void reset(const Scene& scene);

  /// Rebuilds buffers after densification: entry i of `source` names the old
  /// Gaussian whose moments slot i inherits, or -1 for fresh zeros.
  void remap(const Scene& scene, std::span<const int> source);

  struct StepReport {
    std::vector<std::string> skipped;  // groups left untouched because of non-finite gradients
  };

  /// Applies one step to every parameter group. Quaternion gradients are
  /// projected onto the tangent space of the normalized control and the
  /// control is renormalized afterwards.
  StepReport step(Scene& scene, const SceneGradients& grads, const LearningRates& lr,
                  double position_scale);

  long step_count() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<SplatGaussian> m_, v_;
  std::vector<double> env_m_, env_v_;
};

/// Per-Gaussian statistics accumulated between densification passes.
struct DensifyStats {
  std::vector<double> grad_norm_sum;  // screen-space mean gradient norms
  std::vector<int> visible;
  std::vector<Eigen::Vector3d> position_grad;  // summed world-space gradient

  void reset(size_t count);
  void accumulate(const SceneGradients& grads);
};

struct DensifyReport {
  int cloned = 0;
  int split = 0;
  int pruned = 0;
  std::vector<int> source;  // old index of each new Gaussian (children point at parents)
};

/// Clones small high-gradient Gaussians, splits large ones and prunes those
/// with base opacity below the threshold. Children copy every parameter of
/// their parent. Throws StateError instead of emptying the scene.
DensifyReport densify_and_prune(Scene& scene, const DensifyStats& stats, const TrainConfig& config,
                                double extent, std::mt19937_64& rng);

/// Half diagonal of the bounding box of the Gaussian means.
double scene_extent(const Scene& scene);

/// Loss targets of one frame, pointing into `data`.
FrameTargets frame_targets(const Dataset& data, int frame);

struct IterationRecord {
  int iteration = 0;
  int frame = 0;
  LossBreakdown loss;
};

struct PsnrSnapshot {
  int iteration = 0;
  double test_psnr = 0.0;
  double test_ssim = 0.0;
};

struct FitReport {
  std::vector<IterationRecord> iterations;
  std::vector<PsnrSnapshot> snapshots;
  std::vector<std::string> events;
  int final_gaussians = 0;
  int final_objects = 0;

  /// CSV rows "iteration,term,value".
  void write_loss_csv(const std::string& path) const;
  void write_json(const std::string& path) const;
};

/// Called after every iteration with (iteration, record); may be empty.
using FitProgress = std::function<void(int, const IterationRecord&)>;

/// Optimizes the scene against the training frames of `data`.
FitReport fit(Scene& scene, const Dataset& data, const TrainConfig& config,
              const FitProgress& progress = {});

}  // namespace splinegauss
