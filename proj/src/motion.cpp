#include "splinegauss/motion.hpp"

#include <cmath>
#include <numbers>

#include "splinegauss/errors.hpp"

namespace splinegauss {

TrigSeries::TrigSeries(int levels_in, int dim_in)
    : levels(levels_in),
      dim(dim_in),
      sin_coeffs(static_cast<size_t>(levels_in) * dim_in, 0.0),
      cos_coeffs(static_cast<size_t>(levels_in) * dim_in, 0.0) {
  if (levels_in < 0 || dim_in < 0) throw ShapeError("negative trig series shape");
}

void trig_eval(const TrigSeries& series, double t, std::span<double> out) {
  if (static_cast<int>(out.size()) != series.dim) throw ShapeError("trig output size mismatch");
  std::fill(out.begin(), out.end(), 0.0);
  for (int l = 1; l <= series.levels; ++l) {
    const double phase = l * std::numbers::pi * t;
    const double s = std::sin(phase);
    const double c = std::cos(phase);
    const double* a = series.sin_at(l);
    const double* b = series.cos_at(l);
    for (int d = 0; d < series.dim; ++d) out[d] += a[d] * s + b[d] * c;
  }
}

std::vector<double> trig_eval(const TrigSeries& series, double t) {
  std::vector<double> out(series.dim);
  trig_eval(series, t, out);
  return out;
}

Eigen::Vector3d trig_eval3(const TrigSeries& series, double t) {
  Eigen::Vector3d out;
  trig_eval(series, t, std::span<double>(out.data(), 3));
  return out;
}

void trig_backward(const TrigSeries& series, double t, std::span<const double> grad_out,
                   TrigSeries& grad_series) {
  if (static_cast<int>(grad_out.size()) != series.dim || grad_series.dim != series.dim ||
      grad_series.levels != series.levels) {
    throw ShapeError("trig gradient shape mismatch");
  }
  for (int l = 1; l <= series.levels; ++l) {
    const double phase = l * std::numbers::pi * t;
    const double s = std::sin(phase);
    const double c = std::cos(phase);
    double* ga = grad_series.sin_at(l);
    double* gb = grad_series.cos_at(l);
    for (int d = 0; d < series.dim; ++d) {
      ga[d] += grad_out[d] * s;
      gb[d] += grad_out[d] * c;
    }
  }
}

TemporalMask::TemporalMask(double mu, double s0_in, double s1_in)
    : mu_t(mu), log_s0(std::log(s0_in)), log_s1(std::log(s1_in)) {
  if (!(s0_in > 0.0) || !(s1_in > 0.0)) throw ShapeError("temporal mask scales must be positive");
}

double TemporalMask::s0() const { return std::exp(log_s0); }
double TemporalMask::s1() const { return std::exp(log_s1); }

double effective_opacity(const TemporalMask& mask, double sigma, double t) {
  const double dt = t - mask.mu_t;
  const double s = dt < 0.0 ? mask.s0() : mask.s1();
  return sigma * std::exp(-dt * dt / (2.0 * s * s));
}

MaskGradient effective_opacity_gradient(const TemporalMask& mask, double sigma, double t) {
  const double dt = t - mask.mu_t;
  const bool before = dt < 0.0;
  const double s = before ? mask.s0() : mask.s1();
  const double r = dt * dt / (s * s);
  const double m = std::exp(-0.5 * r);
  MaskGradient g;
  g.sigma = m;
  // d/dlog s of exp(-dt^2 / (2 s^2)) = m * dt^2 / s^2.
  const double dlog = sigma * m * r;
  (before ? g.log_s0 : g.log_s1) = dlog;
  return g;
}

// Scales are compared with delta_f in log space so s0 = s1 = delta_f gives exactly 1.
double expanding_loss(const TemporalMask& mask, double delta_f) {
  const double lf = std::log(std::abs(delta_f));
  return 2.0 / (std::exp(mask.log_s0 - lf) + std::exp(mask.log_s1 - lf));
}

Eigen::Vector2d expanding_loss_gradient(const TemporalMask& mask, double delta_f) {
  const double lf = std::log(std::abs(delta_f));
  const double e0 = std::exp(mask.log_s0 - lf);
  const double e1 = std::exp(mask.log_s1 - lf);
  const double d = -2.0 / ((e0 + e1) * (e0 + e1));
  return {d * e0, d * e1};
}

ObjectMotion::ObjectMotion(BSplineCurve curve, TrigSeries trig, QuatBSplineCurve rotation,
                           TemporalMask mask_in)
    : position_curve(std::move(curve)),
      position_trig(std::move(trig)),
      rotation_curve(std::move(rotation)),
      mask(mask_in) {
  if (position_trig.dim != 3) throw ShapeError("position trig series must be 3-dimensional");
  if (position_curve.layout.t_min() != rotation_curve.layout.t_min() ||
      position_curve.layout.t_max() != rotation_curve.layout.t_max()) {
    throw InvalidCurveError("position and rotation curves must share a time domain");
  }
}

ObjectMotion ObjectMotion::identity(const KnotLayout& layout, int trig_levels,
                                    const TemporalMask& mask) {
  return ObjectMotion(BSplineCurve(layout), TrigSeries(trig_levels, 3), QuatBSplineCurve(layout),
                      mask);
}

Eigen::Vector3d deform_position(const ObjectMotion& motion, const Eigen::Vector3d& mu, double t) {
  return mu + eval_curve(motion.position_curve, t) + trig_eval3(motion.position_trig, t);
}

Quat deform_rotation(const ObjectMotion& motion, double t) {
  return eval_quat_curve(motion.rotation_curve, t);
}

std::vector<double> deform_color(std::span<const double> base_sh, const TrigSeries& series,
                                 double t) {
  if (series.dim != 3 || base_sh.size() < 3 || base_sh.size() % 3 != 0) {
    throw ShapeError("color series must match the RGB diffuse band");
  }
  std::vector<double> out(base_sh.begin(), base_sh.end());
  const Eigen::Vector3d delta = trig_eval3(series, t);
  for (int c = 0; c < 3; ++c) out[c] += delta[c];
  return out;
}

}  // namespace splinegauss
