#include "ustream/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ustream/linalg.hpp"

namespace ustream {

namespace {
constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kSqrt2Pi = 2.5066282746310002;
constexpr double kInf = std::numeric_limits<double>::infinity();

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw ParameterError(std::string(what) + " must be finite");
}
}  // namespace

Gaussian1D::Gaussian1D(double m, double v) : mean(m), var(v) {
  require_finite(m, "mean");
  require_finite(v, "var");
  if (var < defaults::var_floor) var = defaults::var_floor;
}

GaussianMixture::GaussianMixture(std::vector<MixtureComponent> comps)
    : components(std::move(comps)) {
  if (components.empty()) throw ParameterError("mixture needs at least one component");
  double total = 0.0;
  for (auto& c : components) {
    if (!(c.weight > 0.0)) throw ParameterError("mixture weights must be positive");
    require_finite(c.mean, "component mean");
    if (c.var < defaults::var_floor) c.var = defaults::var_floor;
    total += c.weight;
  }
  if (std::fabs(total - 1.0) > defaults::weight_tol)
    throw ParameterError("mixture weights must sum to 1");
  for (auto& c : components) c.weight /= total;
}

GaussianND::GaussianND(int d, std::vector<double> mu, std::vector<double> sigma)
    : dim(d), mean(std::move(mu)), cov(std::move(sigma)) {
  if (dim != 2 && dim != 3) throw DimensionError("GaussianND supports dim 2 or 3");
  if (mean.size() != static_cast<size_t>(dim) || cov.size() != static_cast<size_t>(dim) * dim)
    throw ParameterError("GaussianND mean/cov size mismatch");
  for (int i = 0; i < dim; ++i)
    for (int j = i + 1; j < dim; ++j)
      if (std::fabs(cov[i * dim + j] - cov[j * dim + i]) > 1e-9)
        throw ParameterError("covariance must be symmetric");
  std::vector<double> vals, vecs;
  linalg::sym_eigen(dim, cov, vals, vecs);
  for (double v : vals)
    if (v < -1e-9) throw ParameterError("covariance must be positive semidefinite");
  cov = linalg::floor_psd(dim, cov, defaults::var_floor);
}

WeightedSamples::WeightedSamples(int d, std::vector<double> vals, std::vector<double> wts)
    : dim(d), values(std::move(vals)), weights(std::move(wts)) {
  if (dim < 1) throw ParameterError("sample dimension must be >= 1");
  if (weights.empty()) throw ParameterError("need at least one sample");
  if (values.size() != weights.size() * static_cast<size_t>(dim))
    throw ParameterError("values/weights size mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ParameterError("sample weights must be >= 0");
    total += w;
  }
  if (std::fabs(total - 1.0) > defaults::weight_tol)
    throw ParameterError("sample weights must sum to 1");
  for (auto& w : weights) w /= total;
}

WeightedSamples WeightedSamples::scalar(std::vector<double> vals, std::vector<double> wts) {
  return WeightedSamples(1, std::move(vals), std::move(wts));
}

WeightedSamples WeightedSamples::uniform_scalar(std::vector<double> vals) {
  std::vector<double> wts(vals.size(), 1.0 / static_cast<double>(vals.size()));
  return WeightedSamples(1, std::move(vals), std::move(wts));
}

double WeightedSamples::effective_size() const {
  double sq = 0.0;
  for (double w : weights) sq += w * w;
  return sq > 0 ? 1.0 / sq : 0.0;
}

GridPdf::GridPdf() : x0(0.0), dx(1.0 / 7.0), density(8, 1.0) {
  *this = from_raw(x0, dx, density);
}

GridPdf::GridPdf(double origin, double step, std::vector<double> dens)
    : x0(origin), dx(step), density(std::move(dens)) {
  if (dx <= 0.0) throw ParameterError("grid step must be positive");
  if (density.size() < 8) throw ParameterError("grid needs at least 8 points");
  double integral = 0.0;
  for (size_t i = 0; i + 1 < density.size(); ++i) {
    if (density[i] < 0.0 || density[i + 1] < 0.0)
      throw ParameterError("grid density must be nonnegative");
    integral += 0.5 * (density[i] + density[i + 1]) * dx;
  }
  if (std::fabs(integral - 1.0) > 1e-6)
    throw ParameterError("grid density must integrate to 1");
  for (auto& v : density) v /= integral;
  cum.resize(density.size());
  cum[0] = 0.0;
  for (size_t i = 1; i < density.size(); ++i)
    cum[i] = cum[i - 1] + 0.5 * (density[i] + density[i - 1]) * dx;
  cum.back() = 1.0;
}

GridPdf GridPdf::from_raw(double origin, double step, std::vector<double> dens) {
  if (step <= 0.0) throw ParameterError("grid step must be positive");
  if (dens.size() < 8) throw ParameterError("grid needs at least 8 points");
  double integral = 0.0;
  for (auto& v : dens)
    if (v < 0.0) v = 0.0;
  for (size_t i = 0; i + 1 < dens.size(); ++i)
    integral += 0.5 * (dens[i] + dens[i + 1]) * step;
  if (integral <= 0.0) throw ZeroMassError("grid density has zero mass");
  for (auto& v : dens) v /= integral;
  return GridPdf(origin, step, std::move(dens));
}

// ---------------------------------------------------------------------------

double norm_pdf(double x, double mean, double var) {
  const double sd = std::sqrt(var);
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * kSqrt2Pi);
}

double norm_cdf(double x, double mean, double var) {
  const double z = (x - mean) / std::sqrt(var);
  return 0.5 * std::erfc(-z / kSqrt2);
}

double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ParameterError("quantile level must be in (0,1)");
  // Acklam's rational approximation with one Halley refinement step.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= phigh) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const double e = 0.5 * std::erfc(-x / kSqrt2) - p;
  const double u = e * kSqrt2Pi * std::exp(x * x / 2);
  x = x - u / (1 + x * u / 2);
  return x;
}

// ---------------------------------------------------------------------------

bool is_univariate(const UncertainValue& d) {
  if (std::holds_alternative<GaussianND>(d)) return false;
  if (const auto* s = std::get_if<WeightedSamples>(&d)) return s->dim == 1;
  return true;
}

namespace {
void require_univariate(const UncertainValue& d, const char* op) {
  if (!is_univariate(d))
    throw DimensionError(std::string(op) + " requires a univariate distribution");
}
}  // namespace

double kde_bandwidth(const WeightedSamples& s) {
  Moments m = moments(UncertainValue(s));
  const double sd = std::sqrt(std::max(m.var, defaults::var_floor));
  const double n_eff = std::max(s.effective_size(), 2.0);
  return std::max(1.06 * sd * std::pow(n_eff, -0.2), std::sqrt(defaults::var_floor));
}

double pdf_at(const UncertainValue& d, double x) {
  require_univariate(d, "pdf_at");
  return std::visit(
      [&](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PointMass>) {
          return x == v.value ? kInf : 0.0;
        } else if constexpr (std::is_same_v<T, Gaussian1D>) {
          return norm_pdf(x, v.mean, v.var);
        } else if constexpr (std::is_same_v<T, GaussianMixture>) {
          double acc = 0.0;
          for (const auto& c : v.components) acc += c.weight * norm_pdf(x, c.mean, c.var);
          return acc;
        } else if constexpr (std::is_same_v<T, WeightedSamples>) {
          const double h = kde_bandwidth(v);
          double acc = 0.0;
          for (size_t i = 0; i < v.size(); ++i)
            acc += v.weights[i] * norm_pdf(x, v.value(i), h * h);
          return acc;
        } else if constexpr (std::is_same_v<T, GridPdf>) {
          if (x < v.x0 || x > v.x_last()) return 0.0;
          const double f = (x - v.x0) / v.dx;
          const size_t i = std::min(static_cast<size_t>(f), v.size() - 2);
          const double t = f - static_cast<double>(i);
          return v.density[i] * (1.0 - t) + v.density[i + 1] * t;
        } else {
          throw DimensionError("pdf_at: multivariate input");
        }
      },
      d);
}

double cdf_at(const UncertainValue& d, double x) {
  require_univariate(d, "cdf_at");
  return std::visit(
      [&](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PointMass>) {
          return x >= v.value ? 1.0 : 0.0;
        } else if constexpr (std::is_same_v<T, Gaussian1D>) {
          return norm_cdf(x, v.mean, v.var);
        } else if constexpr (std::is_same_v<T, GaussianMixture>) {
          double acc = 0.0;
          for (const auto& c : v.components) acc += c.weight * norm_cdf(x, c.mean, c.var);
          return acc;
        } else if constexpr (std::is_same_v<T, WeightedSamples>) {
          double acc = 0.0;
          for (size_t i = 0; i < v.size(); ++i)
            if (v.value(i) <= x) acc += v.weights[i];
          return clamp01(acc);
        } else if constexpr (std::is_same_v<T, GridPdf>) {
          if (x <= v.x0) return 0.0;
          if (x >= v.x_last()) return 1.0;
          const double f = (x - v.x0) / v.dx;
          const size_t i = std::min(static_cast<size_t>(f), v.size() - 2);
          const double t = f - static_cast<double>(i);
          // Integral of the linear density segment up to x.
          const double d0 = v.density[i], d1 = v.density[i + 1];
          const double seg = v.dx * (d0 * t + 0.5 * (d1 - d0) * t * t);
          return clamp01(v.cum[i] + seg);
        } else {
          throw DimensionError("cdf_at: multivariate input");
        }
      },
      d);
}

Moments moments(const UncertainValue& d) {
  return std::visit(
      [&](const auto& v) -> Moments {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PointMass>) {
          return {v.value, 0.0};
        } else if constexpr (std::is_same_v<T, Gaussian1D>) {
          return {v.mean, v.var};
        } else if constexpr (std::is_same_v<T, GaussianMixture>) {
          double m = 0.0, s = 0.0;
          for (const auto& c : v.components) m += c.weight * c.mean;
          for (const auto& c : v.components) s += c.weight * (c.var + c.mean * c.mean);
          return {m, std::max(0.0, s - m * m)};
        } else if constexpr (std::is_same_v<T, WeightedSamples>) {
          if (v.dim != 1) throw DimensionError("moments: multivariate samples");
          double m = 0.0, s = 0.0;
          for (size_t i = 0; i < v.size(); ++i) m += v.weights[i] * v.value(i);
          for (size_t i = 0; i < v.size(); ++i) {
            const double dum = v.value(i) - m;
            s += v.weights[i] * dum * dum;
          }
          return {m, s};
        } else if constexpr (std::is_same_v<T, GridPdf>) {
          double m = 0.0, s = 0.0;
          for (size_t i = 0; i + 1 < v.size(); ++i) {
            const double xa = v.x_at(i), xb = v.x_at(i + 1);
            const double fa = v.density[i], fb = v.density[i + 1];
            m += 0.5 * (xa * fa + xb * fb) * v.dx;
            s += 0.5 * (xa * xa * fa + xb * xb * fb) * v.dx;
          }
          return {m, std::max(0.0, s - m * m)};
        } else {
          throw DimensionError("moments: multivariate input");
        }
      },
      d);
}

Interval support_bounds(const UncertainValue& d) {
  return std::visit(
      [&](const auto& v) -> Interval {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PointMass>) {
          return {v.value, v.value};
        } else if constexpr (std::is_same_v<T, Gaussian1D>) {
          const double sd = std::sqrt(v.var);
          return {v.mean - defaults::grid_sigmas * sd, v.mean + defaults::grid_sigmas * sd};
        } else if constexpr (std::is_same_v<T, GaussianMixture>) {
          double lo = kInf, hi = -kInf;
          for (const auto& c : v.components) {
            const double sd = std::sqrt(c.var);
            lo = std::min(lo, c.mean - defaults::grid_sigmas * sd);
            hi = std::max(hi, c.mean + defaults::grid_sigmas * sd);
          }
          return {lo, hi};
        } else if constexpr (std::is_same_v<T, WeightedSamples>) {
          if (v.dim != 1) throw DimensionError("support_bounds: multivariate samples");
          double lo = kInf, hi = -kInf;
          for (size_t i = 0; i < v.size(); ++i) {
            lo = std::min(lo, v.value(i));
            hi = std::max(hi, v.value(i));
          }
          const double h = 3.0 * kde_bandwidth(v);
          return {lo - h, hi + h};
        } else if constexpr (std::is_same_v<T, GridPdf>) {
          return {v.x0, v.x_last()};
        } else {
          throw DimensionError("support_bounds: multivariate input");
        }
      },
      d);
}

double quantile(const UncertainValue& d, double p) {
  require_univariate(d, "quantile");
  if (!(p > 0.0 && p < 1.0)) throw ParameterError("quantile level must be in (0,1)");
  if (const auto* g = std::get_if<Gaussian1D>(&d))
    return g->mean + std::sqrt(g->var) * norm_quantile(p);
  if (const auto* pm = std::get_if<PointMass>(&d)) return pm->value;
  if (const auto* ws = std::get_if<WeightedSamples>(&d)) {
    std::vector<size_t> order(ws->size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return ws->value(a) < ws->value(b); });
    double acc = 0.0;
    for (size_t idx : order) {
      acc += ws->weights[idx];
      if (acc >= p) return ws->value(idx);
    }
    return ws->value(order.back());
  }
  Interval s = support_bounds(d);
  double lo = s.lo, hi = s.hi;
  for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::fabs(lo) + std::fabs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (cdf_at(d, mid) < p) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<Interval> confidence_region(const UncertainValue& d, double level, int grid_points) {
  require_univariate(d, "confidence_region");
  if (!(level > 0.0 && level < 1.0)) throw ParameterError("level must be in (0,1)");
  if (const auto* pm = std::get_if<PointMass>(&d)) return {{pm->value, pm->value}};
  if (const auto* g = std::get_if<Gaussian1D>(&d)) {
    const double z = norm_quantile(0.5 * (1.0 + level));
    const double sd = std::sqrt(g->var);
    return {{g->mean - z * sd, g->mean + z * sd}};
  }
  // Highest-density region by thresholding the density on an evaluation grid.
  const Interval s = support_bounds(d);
  const int n = std::max(grid_points, 16);
  const double dx = (s.hi - s.lo) / (n - 1);
  std::vector<double> dens(n), mass(n);
  for (int i = 0; i < n; ++i) dens[i] = pdf_at(d, s.lo + i * dx);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    mass[i] = dens[i] * ((i == 0 || i == n - 1) ? 0.5 * dx : dx);
    total += mass[i];
  }
  if (total <= 0.0) throw ZeroMassError("distribution has no mass on evaluation grid");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (dens[a] != dens[b]) return dens[a] > dens[b];
    return a < b;
  });
  std::vector<char> selected(n, 0);
  double acc = 0.0;
  for (int idx : order) {
    selected[idx] = 1;
    acc += mass[idx] / total;
    if (acc >= level) break;
  }
  std::vector<Interval> out;
  int i = 0;
  while (i < n) {
    if (!selected[i]) { ++i; continue; }
    int j = i;
    while (j + 1 < n && selected[j + 1]) ++j;
    out.push_back({s.lo + i * dx, s.lo + j * dx});
    i = j + 1;
  }
  return out;
}

namespace {
GridPdf truncated_grid(const UncertainValue& d, double lo, double hi, int grid_points) {
  const int n = std::max(grid_points, 16);
  const double dx = (hi - lo) / (n - 1);
  if (!(dx > 0.0)) throw ZeroMassError("empty truncation window");
  std::vector<double> dens(n);
  for (int i = 0; i < n; ++i) dens[i] = pdf_at(d, lo + i * dx);
  return GridPdf::from_raw(lo, dx, std::move(dens));
}
}  // namespace

TruncateResult truncate(const UncertainValue& d, const RangePredicate& pred,
                        double mass_floor, int grid_points) {
  require_univariate(d, "truncate");
  if (const auto* pm = std::get_if<PointMass>(&d)) {
    if (!pred.contains(pm->value)) throw ZeroMassError("point mass outside predicate");
    return {1.0, *pm};
  }
  if (const auto* ws = std::get_if<WeightedSamples>(&d)) {
    double mass = 0.0;
    std::vector<double> vals, wts;
    for (size_t i = 0; i < ws->size(); ++i) {
      if (pred.contains(ws->value(i))) {
        mass += ws->weights[i];
        vals.push_back(ws->value(i));
        wts.push_back(ws->weights[i]);
      }
    }
    if (mass < mass_floor) throw ZeroMassError("truncation retains no mass");
    for (auto& w : wts) w /= mass;
    return {mass, WeightedSamples::scalar(std::move(vals), std::move(wts))};
  }
  const double lo_cdf = std::isinf(pred.lo) ? 0.0 : cdf_at(d, pred.lo);
  const double hi_cdf = std::isinf(pred.hi) ? 1.0 : cdf_at(d, pred.hi);
  const double mass = std::max(0.0, hi_cdf - lo_cdf);
  if (mass < mass_floor) throw ZeroMassError("truncation retains no mass");
  const Interval s = support_bounds(d);
  const double lo = std::max(pred.lo, s.lo);
  const double hi = std::min(pred.hi, s.hi);
  return {mass, truncated_grid(d, lo, hi, grid_points)};
}

UncertainValue negated(const UncertainValue& d) {
  return std::visit(
      [&](const auto& v) -> UncertainValue {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PointMass>) {
          return PointMass{-v.value};
        } else if constexpr (std::is_same_v<T, Gaussian1D>) {
          return Gaussian1D(-v.mean, v.var);
        } else if constexpr (std::is_same_v<T, GaussianMixture>) {
          auto comps = v.components;
          for (auto& c : comps) c.mean = -c.mean;
          return GaussianMixture(std::move(comps));
        } else if constexpr (std::is_same_v<T, WeightedSamples>) {
          if (v.dim != 1) throw DimensionError("negated: multivariate samples");
          auto vals = v.values;
          for (auto& x : vals) x = -x;
          return WeightedSamples(1, std::move(vals), v.weights);
        } else if constexpr (std::is_same_v<T, GridPdf>) {
          std::vector<double> dens(v.density.rbegin(), v.density.rend());
          return GridPdf(-v.x_last(), v.dx, std::move(dens));
        } else {
          throw DimensionError("negated: multivariate input");
        }
      },
      d);
}

double sample_scalar(const UncertainValue& d, Rng& rng) {
  require_univariate(d, "sample_scalar");
  return std::visit(
      [&](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PointMass>) {
          return v.value;
        } else if constexpr (std::is_same_v<T, Gaussian1D>) {
          return rng.normal(v.mean, std::sqrt(v.var));
        } else if constexpr (std::is_same_v<T, GaussianMixture>) {
          double u = rng.uniform01(), acc = 0.0;
          for (const auto& c : v.components) {
            acc += c.weight;
            if (u < acc) return rng.normal(c.mean, std::sqrt(c.var));
          }
          const auto& last = v.components.back();
          return rng.normal(last.mean, std::sqrt(last.var));
        } else if constexpr (std::is_same_v<T, WeightedSamples>) {
          return v.value(rng.pick(v.weights));
        } else if constexpr (std::is_same_v<T, GridPdf>) {
          const double u = rng.uniform01();
          // Invert the cumulative trapezoid, linear within a cell.
          size_t lo = 0, hi = v.size() - 1;
          while (lo + 1 < hi) {
            const size_t mid = (lo + hi) / 2;
            if (v.cum[mid] <= u) lo = mid; else hi = mid;
          }
          const double span = v.cum[hi] - v.cum[lo];
          const double t = span > 0 ? (u - v.cum[lo]) / span : 0.5;
          return v.x_at(lo) + t * v.dx;
        } else {
          throw DimensionError("sample_scalar: multivariate input");
        }
      },
      d);
}

std::vector<double> sample_vector(const UncertainValue& d, Rng& rng) {
  if (const auto* g = std::get_if<GaussianND>(&d)) {
    const auto L = linalg::cholesky(g->dim, g->cov, defaults::var_floor);
    std::vector<double> z(g->dim), out(g->mean);
    for (int i = 0; i < g->dim; ++i) z[i] = rng.normal();
    for (int i = 0; i < g->dim; ++i)
      for (int j = 0; j <= i; ++j) out[i] += L[static_cast<size_t>(i) * g->dim + j] * z[j];
    return out;
  }
  if (const auto* ws = std::get_if<WeightedSamples>(&d)) {
    const size_t i = rng.pick(ws->weights);
    std::vector<double> out(ws->dim);
    for (int a = 0; a < ws->dim; ++a) out[a] = ws->value(i, a);
    return out;
  }
  return {sample_scalar(d, rng)};
}

// ---------------------------------------------------------------------------

nlohmann::json value_to_json(const UncertainValue& d) {
  using nlohmann::json;
  return std::visit(
      [&](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PointMass>) {
          return json{{"kind", "point"}, {"value", v.value}};
        } else if constexpr (std::is_same_v<T, Gaussian1D>) {
          return json{{"kind", "gaussian"}, {"mean", v.mean}, {"var", v.var}};
        } else if constexpr (std::is_same_v<T, GaussianMixture>) {
          json comps = json::array();
          for (const auto& c : v.components)
            comps.push_back(json{{"w", c.weight}, {"mean", c.mean}, {"var", c.var}});
          return json{{"kind", "mixture"}, {"components", comps}};
        } else if constexpr (std::is_same_v<T, GaussianND>) {
          return json{{"kind", "gaussian_nd"}, {"dim", v.dim}, {"mean", v.mean}, {"cov", v.cov}};
        } else if constexpr (std::is_same_v<T, WeightedSamples>) {
          return json{{"kind", "samples"}, {"dim", v.dim}, {"values", v.values},
                      {"weights", v.weights}};
        } else {
          return json{{"kind", "grid"}, {"x0", v.x0}, {"dx", v.dx}, {"density", v.density}};
        }
      },
      d);
}

UncertainValue value_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "point") return PointMass{j.at("value").get<double>()};
  if (kind == "gaussian")
    return Gaussian1D(j.at("mean").get<double>(), j.at("var").get<double>());
  if (kind == "mixture") {
    std::vector<MixtureComponent> comps;
    for (const auto& c : j.at("components"))
      comps.push_back({c.at("w").get<double>(), c.at("mean").get<double>(), c.at("var").get<double>()});
    return GaussianMixture(std::move(comps));
  }
  if (kind == "gaussian_nd")
    return GaussianND(j.at("dim").get<int>(), j.at("mean").get<std::vector<double>>(),
                      j.at("cov").get<std::vector<double>>());
  if (kind == "samples")
    return WeightedSamples(j.at("dim").get<int>(), j.at("values").get<std::vector<double>>(),
                           j.at("weights").get<std::vector<double>>());
  if (kind == "grid")
    return GridPdf(j.at("x0").get<double>(), j.at("dx").get<double>(),
                   j.at("density").get<std::vector<double>>());
  throw ValidationError("unknown distribution kind: " + kind);
}

}  // namespace ustream
