// Conversion of sample-based tuple distributions into parametric ones:
// closed-form KL-optimal Gaussian fits, weighted-data EM for Gaussian
// mixtures, AIC/BIC order selection, and the bounded distribution distance
// used by the benchmark comparisons.
#pragma once

#include <utility>
#include <vector>

#include <json.hpp>

#include "ustream/distribution.hpp"

namespace ustream {

struct FitReport {
  int chosen_k = 1;
  std::vector<std::pair<int, double>> criterion_scores;
  double objective_value = 0.0;
  int iterations = 0;

  nlohmann::json to_json() const;
};

// Weighted-moment Gaussian: mean = sum w_i x_i, var = sum w_i (x_i - mean)^2,
// the closed-form minimizer of kl_objective. Two passes over the samples.
Gaussian1D fit_gaussian_kl(const WeightedSamples& s);

// Weighted mean vector and covariance matrix, eigenvalues floored.
GaussianND fit_gaussian_nd(const WeightedSamples& s);

// sum_i w_i log(w_i / q(x_i)); terms with w_i = 0 contribute zero.
// Verification objective only, never on hot paths.
double kl_objective(const WeightedSamples& s, const Gaussian1D& q);

struct EmConfig {
  int iter_max = 500;
  double tol = 1e-8;
};

struct GmmFit {
  GaussianMixture gmm;
  FitReport report;
};

// Weighted-data EM with deterministic weighted-quantile seeding (means at the
// (j - 0.5)/k quantiles). Component variances are floored.
GmmFit fit_gmm_em(const WeightedSamples& s, int k, const EmConfig& cfg = {});

enum class Criterion { Aic, Bic };

// Fits k = 1..k_max and returns the criterion arg-min. Effective sample size
// n_eff = 1 / sum w_i^2 stands in for n in the penalties.
GmmFit select_k(const WeightedSamples& s, int k_max, Criterion criterion,
                const EmConfig& cfg = {});

// Bounded [0,1] discrepancy: total variation evaluated as half the sum of
// absolute per-cell probability differences on a shared grid covering both
// supports. Symmetric; 1 for distributions with disjoint support.
double variance_distance(const UncertainValue& a, const UncertainValue& b,
                         int grid_cells = 2048);

}  // namespace ustream
