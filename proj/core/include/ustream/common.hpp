// Shared constants, error types and small value helpers used across the engine.
#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace ustream {

namespace defaults {
// Variance floor applied to every fitted or constructed Gaussian component.
constexpr double var_floor = 1e-12;
// Truncations whose retained probability falls below this are rejected.
constexpr double mass_floor = 1e-12;
// Default resolution and half-width (in standard deviations) of numeric grids.
constexpr int grid_points = 1024;
constexpr double grid_sigmas = 8.0;
// Tolerance for weight-normalization invariants.
constexpr double weight_tol = 1e-9;
// Minimum number of summands before the CLT shortcut is allowed.
constexpr int clt_min_terms = 30;
// Tuples whose existence drops below this after filtering are discarded.
constexpr double drop_threshold = 0.05;
constexpr int fit_k_max = 5;
constexpr int fit_restarts = 3;
}  // namespace defaults

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { public: using Error::Error; };
class ParameterError : public Error { public: using Error::Error; };
class InputError : public Error { public: using Error::Error; };
class ZeroMassError : public Error { public: using Error::Error; };
class CoverageError : public Error { public: using Error::Error; };
class MethodError : public Error { public: using Error::Error; };
class CorrelationError : public Error { public: using Error::Error; };
class ArchiveMissError : public Error { public: using Error::Error; };
class UnsupportedLineageError : public Error { public: using Error::Error; };
class DegenerateSeriesError : public Error { public: using Error::Error; };
class MaAssumptionError : public Error { public: using Error::Error; };
class ValidationError : public Error { public: using Error::Error; };

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
  bool contains(double x) const { return x >= lo && x <= hi; }
};

// Half-open / closed scalar range used by selection predicates. Bound
// strictness only matters for distributions with atoms.
struct RangePredicate {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  bool lo_strict = false;
  bool hi_strict = false;

  static RangePredicate greater_than(double c) {
    return RangePredicate{c, std::numeric_limits<double>::infinity(), true, false};
  }
  static RangePredicate less_than(double c) {
    return RangePredicate{-std::numeric_limits<double>::infinity(), c, false, true};
  }
  static RangePredicate between(double a, double b) { return RangePredicate{a, b, false, false}; }

  bool contains(double x) const {
    if (lo_strict ? !(x > lo) : !(x >= lo)) return false;
    if (hi_strict ? !(x < hi) : !(x <= hi)) return false;
    return true;
  }
};

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

inline double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

}  // namespace ustream
