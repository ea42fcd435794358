#pragma once

#include <limits>
#include <span>
#include <vector>

#include "splinegauss/dataset.hpp"
#include "splinegauss/image.hpp"
#include "splinegauss/scene.hpp"

namespace splinegauss {

/// Returned by psnr for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// -10 log10(MSE) in dB for images in [0, 1].
double psnr(const Image& a, const Image& b);

/// PSNR over the pixels where region > 0.5 (all channels). Identical or empty
/// regions give kPsnrIdentical.
double masked_psnr(const Image& a, const Image& b, const Image& region);

struct EvalResult {
  double psnr = 0.0;  // mean over frames with finite PSNR
  double ssim = 0.0;
  std::vector<double> frame_psnr;
  std::vector<double> frame_ssim;
};

/// Renders each listed frame at its own time and compares it with the capture.
EvalResult evaluate(const Scene& scene, const Dataset& data, std::span<const int> frames);

/// Mean PSNR over the frames' transient regions (frames without one are skipped).
double transient_region_psnr(const Scene& scene, const Dataset& data, std::span<const int> frames);

}  // namespace splinegauss
