// Canonical tuple-level distribution representations: parametric Gaussians,
// Gaussian mixtures, weighted sample clouds, numeric grid densities and point
// masses, together with density/CDF/moment/quantile evaluation, truncation
// and highest-density confidence regions.
#pragma once

#include <array>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ustream/common.hpp"
#include "ustream/random.hpp"

namespace ustream {

struct PointMass {
  double value = 0.0;
};

struct Gaussian1D {
  double mean = 0.0;
  double var = 1.0;

  Gaussian1D() = default;
  Gaussian1D(double m, double v);
};

struct MixtureComponent {
  double weight = 1.0;
  double mean = 0.0;
  double var = 1.0;
};

struct GaussianMixture {
  std::vector<MixtureComponent> components;

  GaussianMixture() : components{{1.0, 0.0, 1.0}} {}
  explicit GaussianMixture(std::vector<MixtureComponent> comps);
};

struct GaussianND {
  int dim = 2;
  std::vector<double> mean;  // dim entries
  std::vector<double> cov;   // row-major dim*dim, PSD (eigenvalues floored)

  GaussianND() : mean(2, 0.0), cov{1, 0, 0, 1} {}
  GaussianND(int d, std::vector<double> mu, std::vector<double> sigma);
};

// Weighted samples of dimension `dim`; `values` stores rows contiguously.
struct WeightedSamples {
  int dim = 1;
  std::vector<double> values;
  std::vector<double> weights;

  WeightedSamples() : values{0.0}, weights{1.0} {}
  WeightedSamples(int d, std::vector<double> vals, std::vector<double> wts);
  static WeightedSamples scalar(std::vector<double> vals, std::vector<double> wts);
  static WeightedSamples uniform_scalar(std::vector<double> vals);

  size_t size() const { return weights.size(); }
  double value(size_t i) const { return values[i * dim]; }
  double value(size_t i, int axis) const { return values[i * dim + axis]; }
  double effective_size() const;
};

// Piecewise-linear density on an equispaced grid; the trapezoidal integral is
// normalized to one on construction.
struct GridPdf {
  double x0 = 0.0;
  double dx = 1.0;
  std::vector<double> density;
  std::vector<double> cum;  // cumulative trapezoid, cum[i] = P(X <= x0 + i*dx)

  GridPdf();
  GridPdf(double origin, double step, std::vector<double> dens);
  static GridPdf from_raw(double origin, double step, std::vector<double> dens);

  size_t size() const { return density.size(); }
  double x_at(size_t i) const { return x0 + dx * static_cast<double>(i); }
  double x_last() const { return x_at(density.size() - 1); }
};

using UncertainValue =
    std::variant<PointMass, Gaussian1D, GaussianMixture, GaussianND, WeightedSamples, GridPdf>;

// ---------------------------------------------------------------------------
// Scalar normal helpers.

double norm_pdf(double x, double mean, double var);
double norm_cdf(double x, double mean, double var);
// Inverse standard-normal CDF, |error| < 1e-13 over (0,1).
double norm_quantile(double p);

// ---------------------------------------------------------------------------
// Core operations. All evaluation functions are pure; multivariate inputs
// raise DimensionError where a univariate distribution is required.

bool is_univariate(const UncertainValue& d);

double pdf_at(const UncertainValue& d, double x);
double cdf_at(const UncertainValue& d, double x);
Moments moments(const UncertainValue& d);
double quantile(const UncertainValue& d, double p);

// Interval(s) [lo,hi] covering essentially all probability mass; used to set
// up evaluation grids.
Interval support_bounds(const UncertainValue& d);

std::vector<Interval> confidence_region(const UncertainValue& d, double level,
                                        int grid_points = defaults::grid_points);

struct TruncateResult {
  double mass = 0.0;
  UncertainValue conditional;
};
TruncateResult truncate(const UncertainValue& d, const RangePredicate& pred,
                        double mass_floor = defaults::mass_floor,
                        int grid_points = defaults::grid_points);

UncertainValue negated(const UncertainValue& d);

double sample_scalar(const UncertainValue& d, Rng& rng);
std::vector<double> sample_vector(const UncertainValue& d, Rng& rng);

// Kernel bandwidth used when a sample cloud must expose a smooth density
// (Silverman's normal reference rule on the effective sample size).
double kde_bandwidth(const WeightedSamples& s);

// ---------------------------------------------------------------------------
// JSON round-trip with a "kind" discriminator.

nlohmann::json value_to_json(const UncertainValue& d);
UncertainValue value_from_json(const nlohmann::json& j);

}  // namespace ustream
