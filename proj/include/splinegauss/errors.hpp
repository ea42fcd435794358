#pragma once

#include <stdexcept>
#include <string>

namespace splinegauss {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// B-spline order outside the supported range.
class InvalidOrderError : public Error {
 public:
  using Error::Error;
};

/// Curve or knot layout that cannot be evaluated (too few controls, empty domain).
class InvalidCurveError : public Error {
 public:
  using Error::Error;
};

/// Consecutive quaternion controls half a turn apart; log has no unique branch.
class AmbiguousLogError : public Error {
 public:
  using Error::Error;
};

/// Mismatched image or coefficient dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Operation called out of order (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration, scene or dataset file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace splinegauss
