// Characteristic-function descriptors for sums of independent tuple values.
// A CharFn is an immutable expression tree that evaluates phi(t) lazily;
// products of mixture CFs are never expanded into their component cross
// product. Numeric inversion samples phi on an equispaced t-grid paired with
// the target x-grid and applies a discrete Fourier transform.
#pragma once

#include <complex>
#include <memory>
#include <span>
#include <vector>

#include "ustream/common.hpp"
#include "ustream/distribution.hpp"

namespace ustream {

class CharFn {
 public:
  enum class Kind { Gaussian, PointMass, Mixture, Scaled, Shifted, Thinned, Product };

  CharFn();  // point mass at 0

  static CharFn gaussian(double mean, double var);
  static CharFn point_mass(double c);
  static CharFn mixture(std::vector<std::pair<double, CharFn>> parts);
  static CharFn scaled(double a, CharFn inner);
  static CharFn shifted(double b, CharFn inner);
  static CharFn thinned(double p, CharFn inner);
  static CharFn product(std::vector<CharFn> factors);

  std::complex<double> operator()(double t) const;

  Kind kind() const;
  // Parameter accessors for Gaussian / PointMass leaves (used by algebraic
  // collapses and tests); throw MethodError on kind mismatch.
  double gaussian_mean() const;
  double gaussian_var() const;
  double point_value() const;
  const std::vector<CharFn>& factors() const;

  // Number of leaf evaluations one call to operator() performs; the cost
  // driver for modeled benchmark timing in deterministic mode.
  size_t leaf_count() const;

  friend Moments cf_moments(const CharFn& cf);

 private:
  struct Node;
  explicit CharFn(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
  std::shared_ptr<const Node> node_;
};

// Descriptor for the tuple-level distribution `d` (univariate only).
// Weighted samples map to a mixture of point masses; grid densities map to a
// discrete CF over the grid cells.
CharFn cf_of(const UncertainValue& d);

// Pointwise product (the CF of the sum of independent variables). Gaussian
// and point-mass factors are collapsed algebraically.
CharFn cf_product(std::span<const CharFn> cfs);
CharFn cf_product(const std::vector<CharFn>& cfs);

// CF of B*X with B ~ Bernoulli(p) independent of X: (1-p) + p*phi(t).
CharFn bernoulli_thin(double p, const CharFn& cf);

// Exact mean/variance by structural recursion over the descriptor tree.
Moments cf_moments(const CharFn& cf);

struct GridSpec {
  int n_points = defaults::grid_points;  // power of two, >= 64
  double center = 0.0;
  double half_width = 1.0;

  // Grid centered on the CF's mean covering +-grid_sigmas standard deviations.
  static GridSpec for_cf(const CharFn& cf, int n = defaults::grid_points);
  double dx() const { return 2.0 * half_width / n_points; }
};

struct InvertStats {
  double clipped_mass = 0.0;       // negative oscillation removed
  double renorm_correction = 0.0;  // |1 - integral before renormalization|
  bool warning = false;            // correction exceeded 1e-3
};

// Numeric inversion onto the grid. The grid must cover mean +- 8 sd of the
// descriptor (CoverageError otherwise). Negative lobes are clipped at zero
// and the density renormalized.
GridPdf cf_invert(const CharFn& cf, const GridSpec& grid, InvertStats* stats = nullptr);

struct CfFitConfig {
  int t_samples = 128;
  int restarts = defaults::fit_restarts;
  int iter_max = 160;  // objective evaluations per restart
  int k_max = defaults::fit_k_max;
  uint64_t seed = 1;
};

struct CfFitResult {
  GaussianMixture gmm;
  bool converged = true;
  int iterations = 0;
  double objective = 0.0;
};

// Least-squares fit of a k-component Gaussian mixture CF to `cf` over a fixed
// log-spaced t sample set; initialization is moment matching (k = 1) or a
// +-spread split of the moment-matched Gaussian, with seeded restarts.
CfFitResult cf_fit_gmm(const CharFn& cf, int k, const CfFitConfig& cfg = {});

namespace detail {
// In-place radix-2 DFT (sign convention exp(-2*pi*i*jk/n)).
void fft(std::vector<std::complex<double>>& a);
}  // namespace detail

}  // namespace ustream
