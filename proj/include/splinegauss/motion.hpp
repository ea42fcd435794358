#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "splinegauss/quaternion.hpp"
#include "splinegauss/spline_basis.hpp"

namespace splinegauss {

/// Truncated Fourier-style series sum_l a_l sin(l pi t) + b_l cos(l pi t).
///
/// Coefficients are stored level-major: entry (l - 1) * dim + c.
struct TrigSeries {
  int levels = 0;
  int dim = 0;
  std::vector<double> sin_coeffs;
  std::vector<double> cos_coeffs;

  TrigSeries() = default;
  TrigSeries(int levels, int dim);

  double* sin_at(int level) { return sin_coeffs.data() + (level - 1) * dim; }
  double* cos_at(int level) { return cos_coeffs.data() + (level - 1) * dim; }
  const double* sin_at(int level) const { return sin_coeffs.data() + (level - 1) * dim; }
  const double* cos_at(int level) const { return cos_coeffs.data() + (level - 1) * dim; }
};

/// Writes the series value into out (size dim).
void trig_eval(const TrigSeries& series, double t, std::span<double> out);
std::vector<double> trig_eval(const TrigSeries& series, double t);
Eigen::Vector3d trig_eval3(const TrigSeries& series, double t);

/// Accumulates d<grad, series(t)>/d coefficients into grad_series.
void trig_backward(const TrigSeries& series, double t, std::span<const double> grad_out,
                   TrigSeries& grad_series);

/// Bidirectional visibility window centered on a fixed acquisition time.
/// Scales are kept positive by storing their logarithms.
struct TemporalMask {
  double mu_t = 0.0;
  double log_s0 = 0.0;
  double log_s1 = 0.0;

  TemporalMask() = default;
  TemporalMask(double mu_t, double s0, double s1);

  double s0() const;
  double s1() const;
};

/// sigma * exp(-(t - mu_t)^2 / (2 s^2)), s = s0 before mu_t, s1 from mu_t on.
double effective_opacity(const TemporalMask& mask, double sigma, double t);

struct MaskGradient {
  double sigma = 0.0;
  double log_s0 = 0.0;
  double log_s1 = 0.0;
};

/// Partials of effective_opacity.
MaskGradient effective_opacity_gradient(const TemporalMask& mask, double sigma, double t);

/// |2 delta_f / (s0 + s1)|.
double expanding_loss(const TemporalMask& mask, double delta_f);

/// Partials of expanding_loss w.r.t. (log_s0, log_s1).
Eigen::Vector2d expanding_loss_gradient(const TemporalMask& mask, double delta_f);

/// Time deformation of one object Gaussian.
struct ObjectMotion {
  BSplineCurve position_curve;
  TrigSeries position_trig;
  QuatBSplineCurve rotation_curve;
  TemporalMask mask;

  ObjectMotion(BSplineCurve position_curve, TrigSeries position_trig,
               QuatBSplineCurve rotation_curve, TemporalMask mask);

  /// Identity motion (zero offsets, identity rotations).
  static ObjectMotion identity(const KnotLayout& layout, int trig_levels, const TemporalMask& mask);
};

/// mu + p(t) + trig(t).
Eigen::Vector3d deform_position(const ObjectMotion& motion, const Eigen::Vector3d& mu, double t);

Quat deform_rotation(const ObjectMotion& motion, double t);

/// Adds the series to the diffuse (degree-0) band of an RGB SH block laid out
/// coefficient-major (sh[3 * c + channel]). Higher bands pass through.
/// Throws ShapeError unless the series is 3-dimensional and the block holds
/// at least one RGB coefficient.
std::vector<double> deform_color(std::span<const double> base_sh, const TrigSeries& series,
                                 double t);

}  // namespace splinegauss
