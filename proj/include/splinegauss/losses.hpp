#pragma once

#include <optional>
#include <string>
#include <vector>

#include "splinegauss/image.hpp"
#include "splinegauss/renderer.hpp"
#include "splinegauss/scene.hpp"

namespace splinegauss {

/// Weights of the training objective
///   (1 - c) L1 + c D-SSIM + d L_depth + f L_flow + obj L_obj + sky L_sky + r L_rigid + s L_expand.
struct LossWeights {
  double lambda_c = 0.2;
  double lambda_d = 0.1;
  double lambda_f = 0.1;
  double lambda_obj = 0.1;
  double lambda_sky = 0.05;
  double lambda_r = 0.5;
  double lambda_s = 0.01;

  /// Throws FormatError on negative or non-finite weights.
  void validate() const;
};

/// A scalar loss and, when requested, its gradient with respect to one image.
struct ImageLoss {
  double value = 0.0;
  Image grad;
};

/// Standard SSIM constants and window: 11x11 Gaussian, sigma 1.5, zero padding.
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Mean SSIM over pixels and channels.
double ssim(const Image& a, const Image& b);

/// SSIM of `x` against `y` with dSSIM/dx.
ImageLoss ssim_with_gradient(const Image& x, const Image& y);

/// Mean absolute error with its gradient.
ImageLoss l1_loss(const Image& render, const Image& gt);

/// (1 - lambda_c) L1 + lambda_c (1 - SSIM) / 2.
ImageLoss photometric_loss(const Image& render, const Image& gt, double lambda_c);

/// Predictions are clamped to [eps, 1 - eps] before the logarithms.
inline constexpr double kBceEps = 1e-6;

/// Mean binary cross-entropy; the gradient vanishes where the clamp is active.
ImageLoss mask_bce(const Image& pred, const Image& target);

/// Closed-form scale-and-shift alignment followed by mean absolute error.
struct DepthLoss {
  double value = 0.0;
  double scale = 1.0;  // w
  double shift = 0.0;  // q
  int valid_count = 0;
  bool degenerate = false;  // constant prediction: shift-only fit
  Image grad;               // d value / d pred with (w, q) held fixed
};

/// Fits (w, q) = argmin sum (w pred + q - pseudo)^2 over valid pixels, then
/// returns mean |w pred + q - pseudo|. `valid` may be empty (all pixels).
DepthLoss depth_loss(const Image& pred_inv, const Image& pseudo_inv, const Image& valid);

/// Same as depth_loss with the alignment supplied instead of fitted.
DepthLoss depth_loss_fixed(const Image& pred_inv, const Image& pseudo_inv, const Image& valid,
                           double scale, double shift);

/// Pixel correspondence from a source frame into a target frame.
struct FlowCorrespondence {
  int x = 0;  // source pixel
  int y = 0;
  double u = 0.0;  // target pixel coordinates
  double v = 0.0;
};

/// Mean L1 distance between predicted and target pixels over the
/// correspondences whose prediction is valid and, when a mask is given, whose
/// source pixel lies on the object mask. Zero when none qualifies.
ImageLoss flow_loss(const FlowProjection& projection,
                    const std::vector<FlowCorrespondence>& targets,
                    const Image* object_mask = nullptr);

/// Scene-level regularizers write gradients into a SceneGradients.
struct RegularizerLoss {
  double value = 0.0;
  int count = 0;  // Gaussians that contributed
};

/// Mean over object Gaussians of the population variance, across their cached
/// neighbors, of every component of: position-curve controls, motion trig
/// sine and cosine coefficients, and the mask scales (s0, s1).
RegularizerLoss rigidity_loss(const Scene& scene, SceneGradients* grads = nullptr,
                              double weight = 1.0);

/// Mean over object Gaussians of |2 delta_f / (s0 + s1)|.
RegularizerLoss expanding_loss_total(const Scene& scene, SceneGradients* grads = nullptr,
                                     double weight = 1.0);

/// Per-term values of the objective and its weighted total.
struct LossBreakdown {
  double l1 = 0.0;
  double dssim = 0.0;
  double depth = 0.0;
  double flow = 0.0;
  double obj = 0.0;
  double sky = 0.0;
  double rigidity = 0.0;
  double expanding = 0.0;
  double total = 0.0;
  double depth_scale = 1.0;  // fitted alignment, reported but not a term
  double depth_shift = 0.0;

  /// (name, value) pairs in a fixed order, total last.
  std::vector<std::pair<std::string, double>> terms() const;
};

/// Weighted sum of the eight terms; fills breakdown.total and returns it.
double total_loss(LossBreakdown& breakdown, const LossWeights& weights);

/// Supervision for one rendered frame. Null members are skipped.
struct FrameTargets {
  const Image* color = nullptr;
  const Image* obj_mask = nullptr;
  const Image* sky_mask = nullptr;
  const Image* inv_depth = nullptr;
  const Image* depth_valid = nullptr;
  const std::vector<FlowCorrespondence>* flow = nullptr;
  const Camera* flow_camera = nullptr;  // target frame camera for flow
  /// Depth alignment (w, q) to use instead of fitting one; gradient checks
  /// freeze it because the backward pass treats it as a constant.
  std::optional<Eigen::Vector2d> depth_alignment;
};

/// Evaluates every per-image term on `outputs` and, if `grads` is given, writes
/// the gradient of the weighted sum with respect to the render outputs.
/// The sky term is BCE(transmittance, sky mask): sky pixels should stay
/// uncovered so the environment map shows through.
LossBreakdown image_losses(const RenderOutputs& outputs, const FrameTargets& targets,
                           const LossWeights& weights, OutputGradients* grads = nullptr);

}  // namespace splinegauss
