#include "splinegauss/spline_basis.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <string>

#include "splinegauss/errors.hpp"

namespace splinegauss {

KnotLayout::KnotLayout(int order, int control_count, double t_min, double t_max)
    : order_(order), control_count_(control_count), t_min_(t_min), t_max_(t_max) {
  if (order < 2 || order > kMaxSplineOrder) {
    throw InvalidOrderError("spline order " + std::to_string(order) + " outside [2, " +
                            std::to_string(kMaxSplineOrder) + "]");
  }
  if (control_count < order) {
    throw InvalidCurveError("need at least " + std::to_string(order) + " control points, got " +
                            std::to_string(control_count));
  }
  if (!(t_max > t_min) || !std::isfinite(t_min) || !std::isfinite(t_max)) {
    throw InvalidCurveError("empty or non-finite curve domain");
  }
  spacing_ = (t_max_ - t_min_) / segment_count();
}

double KnotLayout::knot(int j) const { return t_min_ + (j - (order_ - 1)) * spacing_; }

double KnotLayout::clamp(double t) const { return std::clamp(t, t_min_, t_max_); }

KnotLayout::Locus KnotLayout::locate(double t) const {
  const double s = (clamp(t) - t_min_) / spacing_;
  int seg = static_cast<int>(std::floor(s));
  seg = std::clamp(seg, 0, segment_count() - 1);
  double u = s - seg;
  u = std::clamp(u, 0.0, 1.0);
  return {seg + order_ - 1, u};
}

namespace {

BasisMatrix compute_basis_matrix(int k) {
  // M_1 = [1]; M_k = ([M_{k-1}; 0] A + [0; M_{k-1}] B) / (k - 1) where A has
  // (j+1, k-2-j) on the diagonal/superdiagonal of row j and B has (-1, 1).
  std::vector<Rational> m{Rational(1)};
  for (int order = 2; order <= k; ++order) {
    const int prev = order - 1;
    std::vector<Rational> next(order * order, Rational(0));
    for (int r = 0; r < order; ++r) {
      for (int c = 0; c < order; ++c) {
        Rational acc(0);
        for (int j = 0; j < prev; ++j) {
          const Rational top = r < prev ? m[r * prev + j] : Rational(0);
          const Rational bottom = r > 0 ? m[(r - 1) * prev + j] : Rational(0);
          Rational a(0);
          Rational b(0);
          if (c == j) {
            a = Rational(j + 1);
            b = Rational(-1);
          } else if (c == j + 1) {
            a = Rational(order - 2 - j);
            b = Rational(1);
          }
          acc += top * a + bottom * b;
        }
        next[r * order + c] = acc / Rational(order - 1);
      }
    }
    m = std::move(next);
  }
  BasisMatrix out;
  out.order = k;
  out.exact = m;
  out.values.resize(m.size());
  std::transform(m.begin(), m.end(), out.values.begin(),
                 [](const Rational& r) { return boost::rational_cast<double>(r); });
  out.end_row.resize(k);
  for (int c = 0; c < k; ++c) {
    Rational sum(0);
    for (int r = 0; r < k; ++r) sum += m[r * k + c];
    out.end_row[c] = boost::rational_cast<double>(sum);
  }
  return out;
}

struct BasisCache {
  std::array<std::once_flag, kMaxSplineOrder + 1> once;
  std::array<BasisMatrix, kMaxSplineOrder + 1> matrices;
};

BasisCache& basis_cache() {
  static BasisCache cache;
  return cache;
}

}  // namespace

const BasisMatrix& basis_matrix(int k) {
  if (k < 1 || k > kMaxSplineOrder) {
    throw InvalidOrderError("basis matrix order " + std::to_string(k) + " outside [1, " +
                            std::to_string(kMaxSplineOrder) + "]");
  }
  auto& cache = basis_cache();
  std::call_once(cache.once[k], [&] { cache.matrices[k] = compute_basis_matrix(k); });
  return cache.matrices[k];
}

double de_boor_basis(int i, int k, double t, const KnotLayout& layout) {
  const int n = layout.control_count() - 1;
  if (i < 0 || i > n) return 0.0;
  const bool at_end = t >= layout.t_max();

  // Order-1 indicators for indices i..i+k-1, raised in place.
  std::vector<double> b(k);
  for (int j = 0; j < k; ++j) {
    const int idx = i + j;
    if (at_end) {
      b[j] = idx == n ? 1.0 : 0.0;
    } else {
      b[j] = (layout.knot(idx) <= t && t < layout.knot(idx + 1)) ? 1.0 : 0.0;
    }
  }
  for (int order = 2; order <= k; ++order) {
    for (int j = 0; j + order <= k; ++j) {
      const int idx = i + j;
      const double left_den = layout.knot(idx + order - 1) - layout.knot(idx);
      const double right_den = layout.knot(idx + order) - layout.knot(idx + 1);
      double v = 0.0;
      if (left_den > 0.0) v += (t - layout.knot(idx)) / left_den * b[j];
      if (right_den > 0.0) v += (layout.knot(idx + order) - t) / right_den * b[j + 1];
      b[j] = v;
    }
  }
  return b[0];
}

void eval_segment_basis(int k, double u, std::span<double> out) {
  const BasisMatrix& m = basis_matrix(k);
  if (static_cast<int>(out.size()) < k) throw InvalidCurveError("basis output span too small");
  if (u == 1.0) {
    std::copy(m.end_row.begin(), m.end_row.end(), out.begin());
    return;
  }
  std::fill(out.begin(), out.begin() + k, 0.0);
  double power = 1.0;
  for (int r = 0; r < k; ++r) {
    for (int c = 0; c < k; ++c) out[c] += power * m.values[r * k + c];
    power *= u;
  }
}

std::vector<double> eval_segment_basis(int k, double u) {
  std::vector<double> out(k);
  eval_segment_basis(k, u, out);
  return out;
}

BasisWindow basis_window(const KnotLayout& layout, double t) {
  const auto locus = layout.locate(t);
  BasisWindow w;
  w.order = layout.order();
  w.first = locus.segment - layout.order() + 1;
  eval_segment_basis(layout.order(), locus.u, std::span<double>(w.weights.data(), w.order));
  return w;
}

double eval_cumulative_basis(const KnotLayout& layout, int i, double t) {
  const BasisWindow w = basis_window(layout, t);
  if (i <= w.first) return 1.0;
  if (i >= w.first + w.order) return 0.0;
  double sum = 0.0;
  for (int j = i - w.first; j < w.order; ++j) sum += w.weights[j];
  return sum;
}

BSplineCurve::BSplineCurve(KnotLayout layout_in, std::vector<Eigen::Vector3d> controls)
    : layout(layout_in), control_points(std::move(controls)) {
  if (static_cast<int>(control_points.size()) != layout.control_count()) {
    throw InvalidCurveError("curve has " + std::to_string(control_points.size()) +
                            " controls, layout expects " +
                            std::to_string(layout.control_count()));
  }
}

BSplineCurve::BSplineCurve(KnotLayout layout_in)
    : layout(layout_in), control_points(layout_in.control_count(), Eigen::Vector3d::Zero()) {}

Eigen::Vector3d eval_curve(const BSplineCurve& curve, double t) {
  if (static_cast<int>(curve.control_points.size()) < curve.layout.order()) {
    throw InvalidCurveError("fewer control points than the curve order");
  }
  const BasisWindow w = basis_window(curve.layout, t);
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  for (int j = 0; j < w.order; ++j) p += w.weights[j] * curve.control_points[w.first + j];
  return p;
}

std::vector<double> curve_control_gradient(const BSplineCurve& curve, double t) {
  std::vector<double> grad(curve.control_points.size(), 0.0);
  const BasisWindow w = basis_window(curve.layout, t);
  for (int j = 0; j < w.order; ++j) grad[w.first + j] = w.weights[j];
  return grad;
}

}  // namespace splinegauss
