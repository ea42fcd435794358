#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <boost/rational.hpp>

namespace splinegauss {

/// Highest B-spline order the basis-matrix cache supports.
inline constexpr int kMaxSplineOrder = 12;

using Rational = boost::rational<std::int64_t>;

/// Uniform knot layout of an order-k B-spline with n+1 control points.
///
/// The valid domain [t_min, t_max] spans knots t_{k-1}..t_{n+1}. All knots
/// t_0..t_{n+k} share the interior spacing, so every basis function B_{i,k},
/// i = 0..n, is a translate of the same cardinal B-spline.
class KnotLayout {
 public:
  KnotLayout(int order, int control_count, double t_min, double t_max);

  int order() const { return order_; }
  int control_count() const { return control_count_; }
  double t_min() const { return t_min_; }
  double t_max() const { return t_max_; }
  double spacing() const { return spacing_; }

  /// Number of polynomial pieces on the valid domain (n - k + 2).
  int segment_count() const { return control_count_ - order_ + 1; }
  /// Number of knots t_0..t_{n+k}.
  int knot_count() const { return control_count_ + order_; }
  double knot(int j) const;

  double clamp(double t) const;

  /// Segment index i in [k-1, n] and local parameter u in [0, 1] for a
  /// clamped query. u == 1 only at t_max (left limit of the last segment).
  struct Locus {
    int segment;
    double u;
  };
  Locus locate(double t) const;

 private:
  int order_;
  int control_count_;
  double t_min_;
  double t_max_;
  double spacing_;
};

/// M_k: turns the monomial row [1, u, ..., u^{k-1}] into the k active basis
/// values of a uniform B-spline segment.
struct BasisMatrix {
  int order = 0;
  std::vector<Rational> exact;  // row-major k x k
  std::vector<double> values;   // row-major k x k
  std::vector<double> end_row;  // exact column sums: the basis at u = 1

  const Rational& exact_at(int row, int col) const { return exact[row * order + col]; }
  double at(int row, int col) const { return values[row * order + col]; }
};

/// Returns the cached M_k (computed once per order). Throws InvalidOrderError
/// for k < 1 or k > kMaxSplineOrder.
const BasisMatrix& basis_matrix(int k);

/// Classic de Boor-Cox recursion. Index outside [0, n] yields zero. At t_max
/// the last segment is closed on the right.
double de_boor_basis(int i, int k, double t, const KnotLayout& layout);

/// [B_{i-k+1,k}(u), ..., B_{i,k}(u)] = [1, u, ..., u^{k-1}] M_k.
void eval_segment_basis(int k, double u, std::span<double> out);
std::vector<double> eval_segment_basis(int k, double u);

/// The k nonzero basis values at a time, with the index of the first one.
struct BasisWindow {
  int first = 0;  // index of the first active control (i - k + 1)
  int order = 0;
  std::array<double, kMaxSplineOrder> weights{};

  double weight_of(int control) const {
    const int j = control - first;
    return (j >= 0 && j < order) ? weights[j] : 0.0;
  }
};

BasisWindow basis_window(const KnotLayout& layout, double t);

/// Cumulative basis sum_{j >= i} B_{j,k}(t) from the matrix-form window.
double eval_cumulative_basis(const KnotLayout& layout, int i, double t);

/// Learnable 3D B-spline curve.
struct BSplineCurve {
  KnotLayout layout;
  std::vector<Eigen::Vector3d> control_points;

  /// Throws InvalidCurveError when the control count disagrees with the layout.
  BSplineCurve(KnotLayout layout, std::vector<Eigen::Vector3d> controls);

  /// All-zero controls.
  explicit BSplineCurve(KnotLayout layout);
};

Eigen::Vector3d eval_curve(const BSplineCurve& curve, double t);

/// dp(t)/dp_i for every control (the same scalar for each coordinate).
std::vector<double> curve_control_gradient(const BSplineCurve& curve, double t);

}  // namespace splinegauss
