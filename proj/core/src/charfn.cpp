#include "ustream/charfn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "ustream/random.hpp"

namespace ustream {

using cplx = std::complex<double>;

struct CharFn::Node {
  Kind kind;
  double a = 0.0;  // mean / point value / scale / shift / thin probability
  double b = 0.0;  // variance
  std::vector<std::pair<double, CharFn>> parts;
  std::vector<CharFn> factors;
  std::optional<CharFn> inner;

  explicit Node(Kind k) : kind(k) {}
};

CharFn::CharFn() : node_(std::make_shared<Node>(Kind::PointMass)) {}

CharFn CharFn::gaussian(double mean, double var) {
  if (!std::isfinite(mean) || !std::isfinite(var) || var < 0.0)
    throw ParameterError("gaussian CF needs finite mean and var >= 0");
  auto n = std::make_shared<Node>(Kind::Gaussian);
  n->a = mean;
  n->b = var;
  return CharFn(std::move(n));
}

CharFn CharFn::point_mass(double c) {
  auto n = std::make_shared<Node>(Kind::PointMass);
  n->a = c;
  return CharFn(std::move(n));
}

CharFn CharFn::mixture(std::vector<std::pair<double, CharFn>> parts) {
  if (parts.empty()) throw InputError("mixture CF needs at least one part");
  double total = 0.0;
  for (const auto& [w, cf] : parts) {
    if (!(w > 0.0)) throw ParameterError("mixture CF weights must be positive");
    total += w;
  }
  auto n = std::make_shared<Node>(Kind::Mixture);
  n->parts = std::move(parts);
  for (auto& [w, cf] : n->parts) w /= total;
  return CharFn(std::move(n));
}

CharFn CharFn::scaled(double a, CharFn inner) {
  auto n = std::make_shared<Node>(Kind::Scaled);
  n->a = a;
  n->inner = std::move(inner);
  return CharFn(std::move(n));
}

CharFn CharFn::shifted(double b, CharFn inner) {
  auto n = std::make_shared<Node>(Kind::Shifted);
  n->a = b;
  n->inner = std::move(inner);
  return CharFn(std::move(n));
}

CharFn CharFn::thinned(double p, CharFn inner) {
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("thinning probability must be in [0,1]");
  if (p == 0.0) return point_mass(0.0);
  if (p == 1.0) return inner;
  auto n = std::make_shared<Node>(Kind::Thinned);
  n->a = p;
  n->inner = std::move(inner);
  return CharFn(std::move(n));
}

CharFn CharFn::product(std::vector<CharFn> factors) {
  if (factors.empty()) throw InputError("product CF needs at least one factor");
  if (factors.size() == 1) return factors.front();
  auto n = std::make_shared<Node>(Kind::Product);
  n->factors = std::move(factors);
  return CharFn(std::move(n));
}

std::complex<double> CharFn::operator()(double t) const {
  const Node& n = *node_;
  switch (n.kind) {
    case Kind::Gaussian: {
      const double mag = std::exp(-0.5 * n.b * t * t);
      return cplx(mag * std::cos(n.a * t), mag * std::sin(n.a * t));
    }
    case Kind::PointMass:
      return cplx(std::cos(n.a * t), std::sin(n.a * t));
    case Kind::Mixture: {
      cplx acc(0.0, 0.0);
      for (const auto& [w, cf] : n.parts) acc += w * cf(t);
      return acc;
    }
    case Kind::Scaled:
      return (*n.inner)(n.a * t);
    case Kind::Shifted:
      return cplx(std::cos(n.a * t), std::sin(n.a * t)) * (*n.inner)(t);
    case Kind::Thinned:
      return cplx(1.0 - n.a, 0.0) + n.a * (*n.inner)(t);
    case Kind::Product: {
      cplx acc(1.0, 0.0);
      for (const auto& f : n.factors) acc *= f(t);
      return acc;
    }
  }
  return cplx(1.0, 0.0);
}

CharFn::Kind CharFn::kind() const { return node_->kind; }

double CharFn::gaussian_mean() const {
  if (node_->kind != Kind::Gaussian) throw MethodError("not a gaussian CF");
  return node_->a;
}
double CharFn::gaussian_var() const {
  if (node_->kind != Kind::Gaussian) throw MethodError("not a gaussian CF");
  return node_->b;
}
double CharFn::point_value() const {
  if (node_->kind != Kind::PointMass) throw MethodError("not a point-mass CF");
  return node_->a;
}
const std::vector<CharFn>& CharFn::factors() const {
  if (node_->kind != Kind::Product) throw MethodError("not a product CF");
  return node_->factors;
}

size_t CharFn::leaf_count() const {
  const Node& n = *node_;
  switch (n.kind) {
    case Kind::Gaussian:
    case Kind::PointMass:
      return 1;
    case Kind::Mixture: {
      size_t acc = 0;
      for (const auto& [w, cf] : n.parts) acc += cf.leaf_count();
      return acc;
    }
    case Kind::Scaled:
    case Kind::Thinned:
      return n.inner->leaf_count();
    case Kind::Shifted:
      return n.inner->leaf_count() + 1;
    case Kind::Product: {
      size_t acc = 0;
      for (const auto& f : n.factors) acc += f.leaf_count();
      return acc;
    }
  }
  return 1;
}

Moments cf_moments(const CharFn& cf) {
  const CharFn::Node& n = *cf.node_;
  switch (n.kind) {
    case CharFn::Kind::Gaussian:
      return {n.a, n.b};
    case CharFn::Kind::PointMass:
      return {n.a, 0.0};
    case CharFn::Kind::Mixture: {
      double m = 0.0, s = 0.0;
      for (const auto& [w, part] : n.parts) {
        const Moments pm = cf_moments(part);
        m += w * pm.mean;
        s += w * (pm.var + pm.mean * pm.mean);
      }
      return {m, std::max(0.0, s - m * m)};
    }
    case CharFn::Kind::Scaled: {
      const Moments im = cf_moments(*n.inner);
      return {n.a * im.mean, n.a * n.a * im.var};
    }
    case CharFn::Kind::Shifted: {
      const Moments im = cf_moments(*n.inner);
      return {im.mean + n.a, im.var};
    }
    case CharFn::Kind::Thinned: {
      // B*X with B ~ Bernoulli(p): E = p*E[X], E[(BX)^2] = p*E[X^2].
      const Moments im = cf_moments(*n.inner);
      const double p = n.a;
      const double second = p * (im.var + im.mean * im.mean);
      const double mean = p * im.mean;
      return {mean, std::max(0.0, second - mean * mean)};
    }
    case CharFn::Kind::Product: {
      double m = 0.0, v = 0.0;
      for (const auto& f : n.factors) {
        const Moments fm = cf_moments(f);
        m += fm.mean;
        v += fm.var;
      }
      return {m, v};
    }
  }
  return {0.0, 0.0};
}

// ---------------------------------------------------------------------------

CharFn cf_of(const UncertainValue& d) {
  return std::visit(
      [&](const auto& v) -> CharFn {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PointMass>) {
          return CharFn::point_mass(v.value);
        } else if constexpr (std::is_same_v<T, Gaussian1D>) {
          return CharFn::gaussian(v.mean, v.var);
        } else if constexpr (std::is_same_v<T, GaussianMixture>) {
          std::vector<std::pair<double, CharFn>> parts;
          parts.reserve(v.components.size());
          for (const auto& c : v.components)
            parts.emplace_back(c.weight, CharFn::gaussian(c.mean, c.var));
          return CharFn::mixture(std::move(parts));
        } else if constexpr (std::is_same_v<T, WeightedSamples>) {
          if (v.dim != 1) throw DimensionError("cf_of: multivariate samples");
          std::vector<std::pair<double, CharFn>> parts;
          parts.reserve(v.size());
          for (size_t i = 0; i < v.size(); ++i)
            if (v.weights[i] > 0.0)
              parts.emplace_back(v.weights[i], CharFn::point_mass(v.value(i)));
          return CharFn::mixture(std::move(parts));
        } else if constexpr (std::is_same_v<T, GridPdf>) {
          // Discrete CF over grid cells: trapezoid node masses at the nodes.
          std::vector<std::pair<double, CharFn>> parts;
          parts.reserve(v.size());
          for (size_t i = 0; i < v.size(); ++i) {
            const double w = v.density[i] * ((i == 0 || i + 1 == v.size()) ? 0.5 : 1.0) * v.dx;
            if (w > 0.0) parts.emplace_back(w, CharFn::point_mass(v.x_at(i)));
          }
          if (parts.empty()) throw ZeroMassError("grid has no mass");
          return CharFn::mixture(std::move(parts));
        } else {
          throw DimensionError("cf_of: multivariate input");
        }
      },
      d);
}

CharFn cf_product(std::span<const CharFn> cfs) {
  if (cfs.empty()) throw InputError("cf_product needs at least one factor");
  double mean_sum = 0.0, var_sum = 0.0, point_sum = 0.0;
  bool have_gaussian = false, have_point = false;
  std::vector<CharFn> rest;
  for (const auto& cf : cfs) {
    if (cf.kind() == CharFn::Kind::Gaussian) {
      mean_sum += cf.gaussian_mean();
      var_sum += cf.gaussian_var();
      have_gaussian = true;
    } else if (cf.kind() == CharFn::Kind::PointMass) {
      point_sum += cf.point_value();
      have_point = true;
    } else if (cf.kind() == CharFn::Kind::Product) {
      for (const auto& f : cf.factors()) rest.push_back(f);
    } else {
      rest.push_back(cf);
    }
  }
  if (have_gaussian) {
    rest.insert(rest.begin(), CharFn::gaussian(mean_sum + point_sum, var_sum));
  } else if (have_point && (point_sum != 0.0 || rest.empty())) {
    rest.insert(rest.begin(), CharFn::point_mass(point_sum));
  }
  if (rest.empty()) return CharFn::point_mass(0.0);
  if (rest.size() == 1) return rest.front();
  return CharFn::product(std::move(rest));
}

CharFn cf_product(const std::vector<CharFn>& cfs) {
  return cf_product(std::span<const CharFn>(cfs.data(), cfs.size()));
}

CharFn bernoulli_thin(double p, const CharFn& cf) { return CharFn::thinned(p, cf); }

// ---------------------------------------------------------------------------

namespace detail {

void fft(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw ParameterError("fft size must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const cplx wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const cplx u = a[i + k];
        const cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

}  // namespace detail

GridSpec GridSpec::for_cf(const CharFn& cf, int n) {
  const Moments m = cf_moments(cf);
  const double sd = std::sqrt(std::max(m.var, 0.0));
  GridSpec g;
  g.n_points = n;
  g.center = m.mean;
  g.half_width = std::max(defaults::grid_sigmas * sd, 1e-3 * (1.0 + std::fabs(m.mean)));
  return g;
}

GridPdf cf_invert(const CharFn& cf, const GridSpec& grid, InvertStats* stats) {
  const int n = grid.n_points;
  if (n < 64 || (n & (n - 1)) != 0)
    throw ParameterError("inversion grid size must be a power of two >= 64");
  const Moments m = cf_moments(cf);
  const double sd = std::sqrt(std::max(m.var, 0.0));
  if (grid.center - grid.half_width > m.mean - defaults::grid_sigmas * sd + 1e-12 ||
      grid.center + grid.half_width < m.mean + defaults::grid_sigmas * sd - 1e-12)
    throw CoverageError("inversion grid does not cover mean +- 8 sd");

  const double dx = grid.dx();
  const double x0 = grid.center - grid.half_width;
  const double dt = 2.0 * M_PI / (static_cast<double>(n) * dx);
  std::vector<cplx> g(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double t = (static_cast<double>(k) - n / 2) * dt;
    const cplx phase(std::cos(-t * x0), std::sin(-t * x0));
    g[static_cast<size_t>(k)] = cf(t) * phase;
  }
  detail::fft(g);
  std::vector<double> dens(static_cast<size_t>(n));
  double clipped = 0.0;
  const double scale = dt / (2.0 * M_PI);
  for (int j = 0; j < n; ++j) {
    double v = scale * g[static_cast<size_t>(j)].real();
    if (j % 2 != 0) v = -v;
    if (v < 0.0) {
      clipped += -v * dx;
      v = 0.0;
    }
    dens[static_cast<size_t>(j)] = v;
  }
  double integral = 0.0;
  for (int j = 0; j + 1 < n; ++j)
    integral += 0.5 * (dens[static_cast<size_t>(j)] + dens[static_cast<size_t>(j) + 1]) * dx;
  if (integral < 0.99)
    throw CoverageError("inversion lost more than 1% of probability mass");
  if (stats) {
    stats->clipped_mass = clipped;
    stats->renorm_correction = std::fabs(1.0 - integral);
    stats->warning = stats->renorm_correction > 1e-3;
  }
  return GridPdf::from_raw(x0, dx, std::move(dens));
}

// ---------------------------------------------------------------------------
// Nelder-Mead simplex minimizer for the CF fitting objective.

namespace {

template <typename F>
std::pair<std::vector<double>, double> nelder_mead(F&& f, std::vector<double> x0,
                                                   const std::vector<double>& step,
                                                   int max_evals, int* evals_used,
                                                   bool* converged) {
  const size_t d = x0.size();
  std::vector<std::vector<double>> pts;
  std::vector<double> vals;
  pts.push_back(x0);
  for (size_t i = 0; i < d; ++i) {
    auto p = x0;
    p[i] += step[i] != 0.0 ? step[i] : 1e-4;
    pts.push_back(std::move(p));
  }
  int evals = 0;
  vals.resize(d + 1);
  for (size_t i = 0; i <= d; ++i) {
    vals[i] = f(pts[i]);
    ++evals;
  }
  auto order = [&]() {
    std::vector<size_t> idx(d + 1);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return vals[a] < vals[b]; });
    std::vector<std::vector<double>> p2;
    std::vector<double> v2;
    for (size_t i : idx) {
      p2.push_back(pts[i]);
      v2.push_back(vals[i]);
    }
    pts = std::move(p2);
    vals = std::move(v2);
  };
  order();
  bool conv = false;
  while (evals < max_evals) {
    if (vals.back() - vals.front() < 1e-12 * (1.0 + std::fabs(vals.front()))) {
      conv = true;
      break;
    }
    std::vector<double> centroid(d, 0.0);
    for (size_t i = 0; i < d; ++i)
      for (size_t j = 0; j < d; ++j) centroid[j] += pts[i][j] / static_cast<double>(d);
    auto mix = [&](double coef) {
      std::vector<double> p(d);
      for (size_t j = 0; j < d; ++j) p[j] = centroid[j] + coef * (pts.back()[j] - centroid[j]);
      return p;
    };
    auto xr = mix(-1.0);
    const double fr = f(xr);
    ++evals;
    if (fr < vals.front()) {
      auto xe = mix(-2.0);
      const double fe = f(xe);
      ++evals;
      if (fe < fr) {
        pts.back() = std::move(xe);
        vals.back() = fe;
      } else {
        pts.back() = std::move(xr);
        vals.back() = fr;
      }
    } else if (fr < vals[d - 1]) {
      pts.back() = std::move(xr);
      vals.back() = fr;
    } else {
      auto xc = mix(fr < vals.back() ? -0.5 : 0.5);
      const double fc = f(xc);
      ++evals;
      if (fc < std::min(fr, vals.back())) {
        pts.back() = std::move(xc);
        vals.back() = fc;
      } else {
        for (size_t i = 1; i <= d; ++i) {
          for (size_t j = 0; j < d; ++j) pts[i][j] = pts[0][j] + 0.5 * (pts[i][j] - pts[0][j]);
          vals[i] = f(pts[i]);
          ++evals;
        }
      }
    }
    order();
  }
  if (evals_used) *evals_used = evals;
  if (converged) *converged = conv;
  return {pts.front(), vals.front()};
}

GaussianMixture params_to_gmm(int k, const std::vector<double>& th) {
  // Layout: k-1 weight logits (last fixed at 0), k means, k log-variances.
  std::vector<double> w(static_cast<size_t>(k));
  double max_logit = 0.0;
  for (int i = 0; i < k - 1; ++i) max_logit = std::max(max_logit, th[static_cast<size_t>(i)]);
  double norm = 0.0;
  for (int i = 0; i < k; ++i) {
    const double logit = (i < k - 1) ? th[static_cast<size_t>(i)] : 0.0;
    w[static_cast<size_t>(i)] = std::exp(logit - max_logit);
    norm += w[static_cast<size_t>(i)];
  }
  std::vector<MixtureComponent> comps(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    comps[static_cast<size_t>(i)].weight = w[static_cast<size_t>(i)] / norm;
    comps[static_cast<size_t>(i)].mean = th[static_cast<size_t>(k - 1 + i)];
    comps[static_cast<size_t>(i)].var =
        std::max(std::exp(th[static_cast<size_t>(2 * k - 1 + i)]), defaults::var_floor);
  }
  std::sort(comps.begin(), comps.end(),
            [](const MixtureComponent& a, const MixtureComponent& b) { return a.mean < b.mean; });
  return GaussianMixture(std::move(comps));
}

}  // namespace

CfFitResult cf_fit_gmm(const CharFn& cf, int k, const CfFitConfig& cfg) {
  if (k < 1 || k > cfg.k_max) throw ParameterError("component count outside [1, k_max]");
  const Moments m = cf_moments(cf);
  const double base_var = std::max(m.var, defaults::var_floor);
  const double base_sd = std::sqrt(base_var);

  // Fixed log-spaced t samples in (0, t_max]; t = 0 is matched implicitly
  // because mixture weights sum to one.
  const double t_max = 6.0 / base_sd;
  const double t_min = t_max * 1e-3;
  std::vector<double> ts(static_cast<size_t>(cfg.t_samples));
  for (int j = 0; j < cfg.t_samples; ++j) {
    const double u = cfg.t_samples == 1 ? 1.0 : static_cast<double>(j) / (cfg.t_samples - 1);
    ts[static_cast<size_t>(j)] = t_min * std::pow(t_max / t_min, u);
  }
  std::vector<cplx> target(ts.size());
  for (size_t j = 0; j < ts.size(); ++j) target[j] = cf(ts[j]);

  auto objective_of = [&](const GaussianMixture& gmm) {
    double acc = 0.0;
    for (size_t j = 0; j < ts.size(); ++j) {
      cplx g(0.0, 0.0);
      for (const auto& c : gmm.components) {
        const double mag = c.weight * std::exp(-0.5 * c.var * ts[j] * ts[j]);
        g += cplx(mag * std::cos(c.mean * ts[j]), mag * std::sin(c.mean * ts[j]));
      }
      acc += std::norm(target[j] - g);
    }
    return acc;
  };
  auto objective = [&](const std::vector<double>& th) { return objective_of(params_to_gmm(k, th)); };

  const int dim = 3 * k - 1;
  Rng rng(cfg.seed);
  CfFitResult best;
  best.objective = std::numeric_limits<double>::infinity();
  const double spreads[] = {1.0, 0.5, 1.5};
  for (int r = 0; r < std::max(1, cfg.restarts); ++r) {
    std::vector<double> th(static_cast<size_t>(dim), 0.0);
    const double spread = spreads[r % 3] * (1.0 + 0.05 * rng.uniform(-1.0, 1.0));
    for (int i = 0; i < k; ++i) {
      const double off = (k == 1) ? 0.0 : spread * base_sd * (2.0 * i / (k - 1.0) - 1.0);
      th[static_cast<size_t>(k - 1 + i)] = m.mean + off;
      th[static_cast<size_t>(2 * k - 1 + i)] =
          std::log(std::max(base_var / k, defaults::var_floor));
    }
    std::vector<double> step(static_cast<size_t>(dim));
    for (int i = 0; i < k - 1; ++i) step[static_cast<size_t>(i)] = 0.25;
    for (int i = 0; i < k; ++i) step[static_cast<size_t>(k - 1 + i)] = 0.2 * base_sd;
    for (int i = 0; i < k; ++i) step[static_cast<size_t>(2 * k - 1 + i)] = 0.3;

    int evals = 0;
    bool conv = false;
    auto [th_best, f_best] = nelder_mead(objective, th, step, cfg.iter_max, &evals, &conv);
    if (f_best < best.objective) {
      best.gmm = params_to_gmm(k, th_best);
      best.objective = f_best;
      best.converged = conv;
      best.iterations = evals;
    }
  }

  // Moment guard: fall back to the moment-matched Gaussian whenever the
  // optimizer wandered away from the descriptor's mean/variance.
  const Moments fitted = moments(UncertainValue(best.gmm));
  const double scale = std::max({std::fabs(m.mean), base_sd, 1e-9});
  if (std::fabs(fitted.mean - m.mean) > 0.05 * scale ||
      std::fabs(fitted.var - m.var) > 0.05 * std::max(m.var, defaults::var_floor)) {
    best.gmm = GaussianMixture({{1.0, m.mean, base_var}});
    best.objective = objective_of(best.gmm);
    best.converged = false;
  }
  return best;
}

}  // namespace ustream
