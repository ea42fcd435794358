#include "splinegauss/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "splinegauss/errors.hpp"
#include "splinegauss/losses.hpp"
#include "splinegauss/renderer.hpp"

namespace splinegauss {
namespace {

Image clamp01(Image img) {
  for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
  return img;
}

double to_psnr(double mse) { return mse > 0.0 ? -10.0 * std::log10(mse) : kPsnrIdentical; }

}  // namespace

double psnr(const Image& a, const Image& b) {
  require_same_shape(a, b, "psnr: image shapes differ");
  if (a.empty()) throw ShapeError("psnr: empty image");
  double se = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) se += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return to_psnr(se / static_cast<double>(a.data.size()));
}

double masked_psnr(const Image& a, const Image& b, const Image& region) {
  require_same_shape(a, b, "masked_psnr: image shapes differ");
  if (region.width != a.width || region.height != a.height || region.channels != 1)
    throw ShapeError("masked_psnr: region shape mismatch");
  double se = 0.0;
  size_t count = 0;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      if (region.at(x, y) <= 0.5) continue;
      for (int c = 0; c < a.channels; ++c) se += std::pow(a.at(x, y, c) - b.at(x, y, c), 2);
      count += a.channels;
    }
  }
  if (count == 0) return kPsnrIdentical;
  return to_psnr(se / static_cast<double>(count));
}

EvalResult evaluate(const Scene& scene, const Dataset& data, std::span<const int> frames) {
  EvalResult r;
  Rasterizer rasterizer;
  int finite = 0;
  for (int f : frames) {
    const FrameData& frame = data.frames.at(f);
    const auto& out = rasterizer.forward(scene, frame.camera, scene.normalize_time(frame.camera.timestamp));
    const Image img = clamp01(out.color);
    const double p = psnr(img, frame.color);
    const double s = ssim(img, frame.color);
    r.frame_psnr.push_back(p);
    r.frame_ssim.push_back(s);
    if (std::isfinite(p)) {
      r.psnr += p;
      ++finite;
    }
    r.ssim += s;
  }
  if (finite > 0) r.psnr /= finite;
  else if (!frames.empty()) r.psnr = kPsnrIdentical;
  if (!frames.empty()) r.ssim /= static_cast<double>(frames.size());
  return r;
}

double transient_region_psnr(const Scene& scene, const Dataset& data, std::span<const int> frames) {
  Rasterizer rasterizer;
  double sum = 0.0;
  int count = 0;
  for (int f : frames) {
    if (static_cast<size_t>(f) >= data.truth.transient_region.size()) continue;
    const Image& region = data.truth.transient_region[f];
    if (region.empty()) continue;
    const FrameData& frame = data.frames.at(f);
    const auto& out = rasterizer.forward(scene, frame.camera, scene.normalize_time(frame.camera.timestamp));
    const double p = masked_psnr(clamp01(out.color), frame.color, region);
    if (!std::isfinite(p)) continue;
    sum += p;
    ++count;
  }
  return count > 0 ? sum / count : kPsnrIdentical;
}

}  // namespace splinegauss
