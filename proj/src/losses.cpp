#include "splinegauss/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "splinegauss/errors.hpp"

namespace splinegauss {
namespace {

double sign(double x) { return (x > 0.0) - (x < 0.0); }

std::array<double, kSsimWindow> ssim_kernel() {
  std::array<double, kSsimWindow> k{};
  double sum = 0.0;
  const int half = kSsimWindow / 2;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - half;
    k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Separable Gaussian filter of a single-channel plane with zero padding.
/// The kernel is symmetric, so this is also its own adjoint.
std::vector<double> blur(const std::vector<double>& in, int w, int h) {
  static const auto k = ssim_kernel();
  const int half = kSsimWindow / 2;
  std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) {
        const int xx = x + i - half;
        if (xx >= 0 && xx < w) s += k[i] * in[static_cast<size_t>(y) * w + xx];
      }
      tmp[static_cast<size_t>(y) * w + x] = s;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) {
        const int yy = y + i - half;
        if (yy >= 0 && yy < h) s += k[i] * tmp[static_cast<size_t>(yy) * w + x];
      }
      out[static_cast<size_t>(y) * w + x] = s;
    }
  }
  return out;
}

std::vector<double> plane(const Image& img, int c) {
  std::vector<double> p(img.pixel_count());
  for (size_t i = 0; i < p.size(); ++i) p[i] = img.data[i * img.channels + c];
  return p;
}

/// Shared SSIM evaluation; fills grad (dSSIM/dx) when non-null.
double ssim_impl(const Image& x, const Image& y, Image* grad) {
  require_same_shape(x, y, "ssim: image shapes differ");
  if (x.empty()) throw ShapeError("ssim: empty image");
  const int w = x.width, h = x.height;
  const size_t n = x.pixel_count();
  const double norm = 1.0 / (static_cast<double>(n) * x.channels);
  if (grad) *grad = Image(w, h, x.channels);
  double total = 0.0;
  for (int c = 0; c < x.channels; ++c) {
    const auto px = plane(x, c), py = plane(y, c);
    std::vector<double> xx(n), yy(n), xy(n);
    for (size_t i = 0; i < n; ++i) {
      xx[i] = px[i] * px[i];
      yy[i] = py[i] * py[i];
      xy[i] = px[i] * py[i];
    }
    const auto mx = blur(px, w, h), my = blur(py, w, h);
    const auto exx = blur(xx, w, h), eyy = blur(yy, w, h), exy = blur(xy, w, h);
    std::vector<double> da(n), db(n), dc(n);
    for (size_t i = 0; i < n; ++i) {
      const double sxx = exx[i] - mx[i] * mx[i];
      const double syy = eyy[i] - my[i] * my[i];
      const double sxy = exy[i] - mx[i] * my[i];
      const double a1 = 2.0 * mx[i] * my[i] + kSsimC1;
      const double a2 = 2.0 * sxy + kSsimC2;
      const double b1 = mx[i] * mx[i] + my[i] * my[i] + kSsimC1;
      const double b2 = sxx + syy + kSsimC2;
      const double s = a1 * a2 / (b1 * b2);
      total += s;
      if (grad) {
        const double ds_dmx = 2.0 * my[i] * a2 / (b1 * b2) - s * 2.0 * mx[i] / b1;
        const double ds_dsxx = -s / b2;
        const double ds_dsxy = 2.0 * a1 / (b1 * b2);
        da[i] = norm * (ds_dmx - 2.0 * mx[i] * ds_dsxx - my[i] * ds_dsxy);
        db[i] = norm * ds_dsxx;
        dc[i] = norm * ds_dsxy;
      }
    }
    if (grad) {
      const auto ga = blur(da, w, h), gb = blur(db, w, h), gc = blur(dc, w, h);
      for (size_t i = 0; i < n; ++i) {
        grad->data[i * x.channels + c] = ga[i] + 2.0 * px[i] * gb[i] + py[i] * gc[i];
      }
    }
  }
  return total * norm;
}

bool is_valid(const Image& valid, int x, int y) { return valid.empty() || valid.at(x, y) > 0.5; }

/// Flattened rigidity parameters of one object Gaussian.
void gather_rigid(const ObjectMotion& m, std::vector<double>& out) {
  out.clear();
  for (const auto& p : m.position_curve.control_points) out.insert(out.end(), p.data(), p.data() + 3);
  out.insert(out.end(), m.position_trig.sin_coeffs.begin(), m.position_trig.sin_coeffs.end());
  out.insert(out.end(), m.position_trig.cos_coeffs.begin(), m.position_trig.cos_coeffs.end());
  out.push_back(m.mask.s0());
  out.push_back(m.mask.s1());
}

/// Adds a flattened gradient back into the motion gradient buffer.
void scatter_rigid(const ObjectMotion& m, const double* g, ObjectMotion& gm) {
  size_t o = 0;
  for (auto& p : gm.position_curve.control_points) {
    for (int a = 0; a < 3; ++a) p[a] += g[o++];
  }
  for (double& v : gm.position_trig.sin_coeffs) v += g[o++];
  for (double& v : gm.position_trig.cos_coeffs) v += g[o++];
  // d s / d log s = s
  gm.mask.log_s0 += g[o++] * m.mask.s0();
  gm.mask.log_s1 += g[o++] * m.mask.s1();
}

}  // namespace

void LossWeights::validate() const {
  const double all[] = {lambda_c, lambda_d, lambda_f, lambda_obj, lambda_sky, lambda_r, lambda_s};
  for (double v : all) {
    if (!std::isfinite(v) || v < 0.0) throw FormatError("loss weights must be finite and non-negative");
  }
  if (lambda_c > 1.0) throw FormatError("lambda_c must lie in [0, 1]");
}

double ssim(const Image& a, const Image& b) { return ssim_impl(a, b, nullptr); }

ImageLoss ssim_with_gradient(const Image& x, const Image& y) {
  ImageLoss r;
  r.value = ssim_impl(x, y, &r.grad);
  return r;
}

ImageLoss l1_loss(const Image& render, const Image& gt) {
  require_same_shape(render, gt, "l1_loss: image shapes differ");
  ImageLoss r;
  r.grad = Image(render.width, render.height, render.channels);
  const size_t n = render.data.size();
  if (n == 0) return r;
  const double inv = 1.0 / static_cast<double>(n);
  for (size_t i = 0; i < n; ++i) {
    const double d = render.data[i] - gt.data[i];
    r.value += std::abs(d);
    r.grad.data[i] = sign(d) * inv;
  }
  r.value *= inv;
  return r;
}

ImageLoss photometric_loss(const Image& render, const Image& gt, double lambda_c) {
  ImageLoss l1 = l1_loss(render, gt);
  ImageLoss r;
  r.grad = std::move(l1.grad);
  for (double& g : r.grad.data) g *= 1.0 - lambda_c;
  r.value = (1.0 - lambda_c) * l1.value;
  if (lambda_c != 0.0) {
    const ImageLoss s = ssim_with_gradient(render, gt);
    r.value += lambda_c * 0.5 * (1.0 - s.value);
    for (size_t i = 0; i < r.grad.data.size(); ++i) r.grad.data[i] -= 0.5 * lambda_c * s.grad.data[i];
  }
  return r;
}

ImageLoss mask_bce(const Image& pred, const Image& target) {
  require_same_shape(pred, target, "mask_bce: image shapes differ");
  ImageLoss r;
  r.grad = Image(pred.width, pred.height, pred.channels);
  const size_t n = pred.data.size();
  if (n == 0) return r;
  const double inv = 1.0 / static_cast<double>(n);
  for (size_t i = 0; i < n; ++i) {
    const double raw = pred.data[i];
    const double p = std::clamp(raw, kBceEps, 1.0 - kBceEps);
    const double t = target.data[i];
    r.value -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    if (raw > kBceEps && raw < 1.0 - kBceEps) r.grad.data[i] = (p - t) / (p * (1.0 - p)) * inv;
  }
  r.value *= inv;
  return r;
}

DepthLoss depth_loss_fixed(const Image& pred, const Image& pseudo, const Image& valid, double scale,
                           double shift) {
  require_same_shape(pred, pseudo, "depth_loss: image shapes differ");
  if (pred.channels != 1) throw ShapeError("depth_loss: expects single-channel images");
  if (!valid.empty() && (valid.width != pred.width || valid.height != pred.height || valid.channels != 1))
    throw ShapeError("depth_loss: valid mask shape mismatch");
  DepthLoss r;
  r.scale = scale;
  r.shift = shift;
  r.grad = Image(pred.width, pred.height, 1);
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) r.valid_count += is_valid(valid, x, y);
  if (r.valid_count == 0) return r;
  const double inv = 1.0 / r.valid_count;
  for (int y = 0; y < pred.height; ++y) {
    for (int x = 0; x < pred.width; ++x) {
      if (!is_valid(valid, x, y)) continue;
      const double res = scale * pred.at(x, y) + shift - pseudo.at(x, y);
      r.value += std::abs(res);
      r.grad.at(x, y) = scale * sign(res) * inv;
    }
  }
  r.value *= inv;
  return r;
}

DepthLoss depth_loss(const Image& pred, const Image& pseudo, const Image& valid) {
  require_same_shape(pred, pseudo, "depth_loss: image shapes differ");
  if (pred.channels != 1) throw ShapeError("depth_loss: expects single-channel images");
  if (!valid.empty() && (valid.width != pred.width || valid.height != pred.height || valid.channels != 1))
    throw ShapeError("depth_loss: valid mask shape mismatch");
  // Centered sums keep the 2x2 solve well conditioned.
  int n = 0;
  double mp = 0.0, md = 0.0;
  for (int y = 0; y < pred.height; ++y) {
    for (int x = 0; x < pred.width; ++x) {
      if (!is_valid(valid, x, y)) continue;
      ++n;
      mp += pred.at(x, y);
      md += pseudo.at(x, y);
    }
  }
  if (n == 0) return depth_loss_fixed(pred, pseudo, valid, 1.0, 0.0);
  mp /= n;
  md /= n;
  double spp = 0.0, spd = 0.0, sq = 0.0;
  for (int y = 0; y < pred.height; ++y) {
    for (int x = 0; x < pred.width; ++x) {
      if (!is_valid(valid, x, y)) continue;
      const double dp = pred.at(x, y) - mp;
      spp += dp * dp;
      spd += dp * (pseudo.at(x, y) - md);
      sq += pred.at(x, y) * pred.at(x, y);
    }
  }
  const bool degenerate = n < 2 || spp <= 1e-14 * sq || spp == 0.0;
  const double w = degenerate ? 1.0 : spd / spp;
  const double q = md - w * mp;
  DepthLoss r = depth_loss_fixed(pred, pseudo, valid, w, q);
  r.degenerate = degenerate;
  return r;
}

ImageLoss flow_loss(const FlowProjection& projection, const std::vector<FlowCorrespondence>& targets,
                    const Image* object_mask) {
  const Image& coords = projection.coords;
  if (coords.channels != 2) throw ShapeError("flow_loss: coordinates need two channels");
  ImageLoss r;
  r.grad = Image(coords.width, coords.height, 2);
  int used = 0;
  for (const auto& c : targets) {
    if (c.x < 0 || c.y < 0 || c.x >= coords.width || c.y >= coords.height)
      throw ShapeError("flow_loss: correspondence outside the image");
    if (projection.valid.at(c.x, c.y) < 0.5) continue;
    if (object_mask && object_mask->at(c.x, c.y) <= 0.5) continue;
    ++used;
  }
  if (used == 0) return r;
  const double inv = 1.0 / used;
  for (const auto& c : targets) {
    if (projection.valid.at(c.x, c.y) < 0.5) continue;
    if (object_mask && object_mask->at(c.x, c.y) <= 0.5) continue;
    const double du = coords.at(c.x, c.y, 0) - c.u;
    const double dv = coords.at(c.x, c.y, 1) - c.v;
    r.value += std::abs(du) + std::abs(dv);
    r.grad.at(c.x, c.y, 0) += sign(du) * inv;
    r.grad.at(c.x, c.y, 1) += sign(dv) * inv;
  }
  r.value *= inv;
  return r;
}

RegularizerLoss rigidity_loss(const Scene& scene, SceneGradients* grads, double weight) {
  RegularizerLoss r;
  if (!scene.knn.valid || scene.knn.neighbors.size() != scene.gaussians.size()) return r;
  const size_t objects = scene.object_count();
  if (objects == 0) return r;
  if (grads && grads->gaussians.size() != scene.gaussians.size())
    throw ShapeError("rigidity_loss: gradient buffer does not match the scene");
  const double norm = 1.0 / static_cast<double>(objects);

  std::vector<std::vector<double>> values;
  std::vector<double> mean, tmp, g;
  for (size_t i = 0; i < scene.gaussians.size(); ++i) {
    const auto& nb = scene.knn.neighbors[i];
    if (!scene.gaussians[i].is_object() || nb.empty()) continue;
    values.resize(nb.size());
    for (size_t a = 0; a < nb.size(); ++a) {
      const auto& other = scene.gaussians.at(nb[a]);
      if (!other.is_object()) throw StateError("rigidity_loss: neighbor is not an object Gaussian");
      gather_rigid(*other.motion, values[a]);
      if (values[a].size() != values[0].size())
        throw ShapeError("rigidity_loss: neighbors have different motion layouts");
    }
    const size_t dim = values[0].size();
    const double m = static_cast<double>(nb.size());
    // Offsets from the first neighbor make identical neighborhoods exactly zero.
    for (size_t a = values.size(); a-- > 0;)
      for (size_t c = 0; c < dim; ++c) values[a][c] -= values[0][c];
    mean.assign(dim, 0.0);
    for (const auto& v : values)
      for (size_t c = 0; c < dim; ++c) mean[c] += v[c];
    for (double& v : mean) v /= m;
    double var = 0.0;
    for (const auto& v : values)
      for (size_t c = 0; c < dim; ++c) var += (v[c] - mean[c]) * (v[c] - mean[c]);
    r.value += var / m;
    ++r.count;
    if (grads) {
      // d var / d x_a = 2 (x_a - mean) / m; the mean's own dependence cancels.
      g.resize(dim);
      for (size_t a = 0; a < nb.size(); ++a) {
        for (size_t c = 0; c < dim; ++c) g[c] = weight * norm * 2.0 * (values[a][c] - mean[c]) / m;
        scatter_rigid(*scene.gaussians[nb[a]].motion, g.data(), *grads->gaussians[nb[a]].motion);
      }
    }
  }
  r.value *= norm;
  return r;
}

RegularizerLoss expanding_loss_total(const Scene& scene, SceneGradients* grads, double weight) {
  RegularizerLoss r;
  const size_t objects = scene.object_count();
  if (objects == 0) return r;
  if (grads && grads->gaussians.size() != scene.gaussians.size())
    throw ShapeError("expanding_loss_total: gradient buffer does not match the scene");
  const double norm = 1.0 / static_cast<double>(objects);
  for (size_t i = 0; i < scene.gaussians.size(); ++i) {
    const auto& g = scene.gaussians[i];
    if (!g.is_object()) continue;
    r.value += expanding_loss(g.motion->mask, scene.frame_interval);
    ++r.count;
    if (grads) {
      const Eigen::Vector2d d = expanding_loss_gradient(g.motion->mask, scene.frame_interval);
      auto& gm = grads->gaussians[i].motion->mask;
      gm.log_s0 += weight * norm * d[0];
      gm.log_s1 += weight * norm * d[1];
    }
  }
  r.value *= norm;
  return r;
}

std::vector<std::pair<std::string, double>> LossBreakdown::terms() const {
  return {{"l1", l1},     {"dssim", dssim},         {"depth", depth},         {"flow", flow},
          {"obj", obj},   {"sky", sky},             {"rigidity", rigidity},   {"expanding", expanding},
          {"total", total}};
}

double total_loss(LossBreakdown& b, const LossWeights& w) {
  b.total = (1.0 - w.lambda_c) * b.l1 + w.lambda_c * b.dssim + w.lambda_d * b.depth +
            w.lambda_f * b.flow + w.lambda_obj * b.obj + w.lambda_sky * b.sky +
            w.lambda_r * b.rigidity + w.lambda_s * b.expanding;
  return b.total;
}

LossBreakdown image_losses(const RenderOutputs& out, const FrameTargets& tg, const LossWeights& w,
                           OutputGradients* grads) {
  LossBreakdown b;
  if (grads) {
    auto ensure = [&](Image& img, int c) {
      if (img.empty()) img = Image(out.width, out.height, c);
    };
    ensure(grads->color, 3);
    ensure(grads->obj_mask, 1);
    ensure(grads->inv_depth, 1);
    ensure(grads->transmittance, 1);
  }
  auto add = [](Image& dst, const Image& src, double scale) {
    for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += scale * src.data[i];
  };

  if (tg.color) {
    const ImageLoss l1 = l1_loss(out.color, *tg.color);
    b.l1 = l1.value;
    if (grads) add(grads->color, l1.grad, 1.0 - w.lambda_c);
    if (w.lambda_c != 0.0 || !grads) {
      const ImageLoss s = grads ? ssim_with_gradient(out.color, *tg.color) : ImageLoss{ssim(out.color, *tg.color), {}};
      b.dssim = 0.5 * (1.0 - s.value);
      if (grads) add(grads->color, s.grad, -0.5 * w.lambda_c);
    }
  }
  if (tg.obj_mask) {
    const ImageLoss l = mask_bce(out.obj_mask, *tg.obj_mask);
    b.obj = l.value;
    if (grads) add(grads->obj_mask, l.grad, w.lambda_obj);
  }
  if (tg.sky_mask) {
    const ImageLoss l = mask_bce(out.transmittance, *tg.sky_mask);
    b.sky = l.value;
    if (grads) add(grads->transmittance, l.grad, w.lambda_sky);
  }
  if (tg.inv_depth) {
    static const Image all;
    const Image& valid = tg.depth_valid ? *tg.depth_valid : all;
    const DepthLoss l = tg.depth_alignment
                            ? depth_loss_fixed(out.inv_depth, *tg.inv_depth, valid, (*tg.depth_alignment)[0],
                                               (*tg.depth_alignment)[1])
                            : depth_loss(out.inv_depth, *tg.inv_depth, valid);
    b.depth = l.value;
    b.depth_scale = l.scale;
    b.depth_shift = l.shift;
    if (grads) add(grads->inv_depth, l.grad, w.lambda_d);
  }
  if (tg.flow && tg.flow_camera && out.flow_time) {
    const FlowProjection proj = render_flow_projection(out, *tg.flow_camera);
    ImageLoss l = flow_loss(proj, *tg.flow, tg.obj_mask);
    b.flow = l.value;
    if (grads && b.flow != 0.0 && w.lambda_f != 0.0) {
      for (double& v : l.grad.data) v *= w.lambda_f;
      render_flow_projection_backward(out, *tg.flow_camera, proj, l.grad, *grads);
    }
  }
  total_loss(b, w);
  return b;
}

}  // namespace splinegauss
