#include "ustream/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "ustream/linalg.hpp"

namespace ustream {

nlohmann::json FitReport::to_json() const {
  nlohmann::json scores = nlohmann::json::array();
  for (const auto& [k, score] : criterion_scores) scores.push_back({{"k", k}, {"score", score}});
  return nlohmann::json{{"chosen_k", chosen_k},
                        {"criterion_scores", scores},
                        {"objective_value", objective_value},
                        {"iterations", iterations}};
}

Gaussian1D fit_gaussian_kl(const WeightedSamples& s) {
  if (s.dim != 1) throw InputError("fit_gaussian_kl needs scalar samples");
  if (s.size() == 0) throw InputError("fit_gaussian_kl needs at least one sample");
  double mean = 0.0;
  for (size_t i = 0; i < s.size(); ++i) mean += s.weights[i] * s.value(i);
  double var = 0.0;
  for (size_t i = 0; i < s.size(); ++i) {
    const double d = s.value(i) - mean;
    var += s.weights[i] * d * d;
  }
  return Gaussian1D(mean, var);
}

GaussianND fit_gaussian_nd(const WeightedSamples& s) {
  const int d = s.dim;
  if (d != 2 && d != 3) throw InputError("fit_gaussian_nd needs 2- or 3-dimensional samples");
  std::vector<double> mean(static_cast<size_t>(d), 0.0);
  for (size_t i = 0; i < s.size(); ++i)
    for (int a = 0; a < d; ++a) mean[static_cast<size_t>(a)] += s.weights[i] * s.value(i, a);
  std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
  for (size_t i = 0; i < s.size(); ++i) {
    for (int a = 0; a < d; ++a) {
      const double da = s.value(i, a) - mean[static_cast<size_t>(a)];
      for (int b = 0; b < d; ++b) {
        const double db = s.value(i, b) - mean[static_cast<size_t>(b)];
        cov[static_cast<size_t>(a) * d + b] += s.weights[i] * da * db;
      }
    }
  }
  cov = linalg::floor_psd(d, cov, defaults::var_floor);
  return GaussianND(d, std::move(mean), std::move(cov));
}

double kl_objective(const WeightedSamples& s, const Gaussian1D& q) {
  if (s.dim != 1) throw InputError("kl_objective needs scalar samples");
  double acc = 0.0;
  for (size_t i = 0; i < s.size(); ++i) {
    const double w = s.weights[i];
    if (w <= 0.0) continue;
    acc += w * std::log(w / norm_pdf(s.value(i), q.mean, q.var));
  }
  return acc;
}

namespace {

size_t distinct_count(const WeightedSamples& s) {
  std::vector<double> vals;
  vals.reserve(s.size());
  for (size_t i = 0; i < s.size(); ++i) vals.push_back(s.value(i));
  std::sort(vals.begin(), vals.end());
  vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
  return vals.size();
}

std::vector<double> weighted_quantile_seeds(const WeightedSamples& s, int k) {
  std::vector<size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return s.value(a) < s.value(b); });
  std::vector<double> seeds(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) {
    const double p = (static_cast<double>(j) + 0.5) / static_cast<double>(k);
    double acc = 0.0;
    double pick = s.value(order.back());
    for (size_t idx : order) {
      acc += s.weights[idx];
      if (acc >= p) {
        pick = s.value(idx);
        break;
      }
    }
    seeds[static_cast<size_t>(j)] = pick;
  }
  return seeds;
}

}  // namespace

GmmFit fit_gmm_em(const WeightedSamples& s, int k, const EmConfig& cfg) {
  if (s.dim != 1) throw InputError("fit_gmm_em needs scalar samples");
  if (k < 1) throw ParameterError("component count must be >= 1");
  const size_t distinct = distinct_count(s);
  if (static_cast<size_t>(k) > distinct)
    throw InputError("component count exceeds number of distinct sample values");

  const size_t n = s.size();
  const Gaussian1D overall = fit_gaussian_kl(s);
  std::vector<double> pi(static_cast<size_t>(k), 1.0 / k);
  std::vector<double> mu = weighted_quantile_seeds(s, k);
  std::vector<double> var(static_cast<size_t>(k), std::max(overall.var, defaults::var_floor));

  std::vector<double> resp(n * static_cast<size_t>(k));
  double prev_obj = std::numeric_limits<double>::infinity();
  double obj = prev_obj;
  int iter = 0;
  for (; iter < cfg.iter_max; ++iter) {
    // E step and weighted log-likelihood.
    double loglik = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double denom = 0.0;
      for (int j = 0; j < k; ++j) {
        const double p = pi[static_cast<size_t>(j)] *
                         norm_pdf(s.value(i), mu[static_cast<size_t>(j)], var[static_cast<size_t>(j)]);
        resp[i * k + static_cast<size_t>(j)] = p;
        denom += p;
      }
      if (denom <= 0.0) denom = std::numeric_limits<double>::min();
      for (int j = 0; j < k; ++j) resp[i * k + static_cast<size_t>(j)] /= denom;
      loglik += s.weights[i] * std::log(denom);
    }
    obj = -loglik;
    if (std::fabs(prev_obj - obj) < cfg.tol) break;
    prev_obj = obj;
    // M step with sample weights folded into the responsibilities.
    for (int j = 0; j < k; ++j) {
      double wj = 0.0, mj = 0.0;
      for (size_t i = 0; i < n; ++i) {
        const double r = s.weights[i] * resp[i * k + static_cast<size_t>(j)];
        wj += r;
        mj += r * s.value(i);
      }
      if (wj < 1e-300) {
        pi[static_cast<size_t>(j)] = 1e-300;
        continue;
      }
      mj /= wj;
      double vj = 0.0;
      for (size_t i = 0; i < n; ++i) {
        const double r = s.weights[i] * resp[i * k + static_cast<size_t>(j)];
        const double d = s.value(i) - mj;
        vj += r * d * d;
      }
      pi[static_cast<size_t>(j)] = wj;
      mu[static_cast<size_t>(j)] = mj;
      var[static_cast<size_t>(j)] = std::max(vj / wj, defaults::var_floor);
    }
    double total = std::accumulate(pi.begin(), pi.end(), 0.0);
    for (auto& p : pi) p /= total;
  }

  std::vector<MixtureComponent> comps;
  comps.reserve(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j)
    comps.push_back({pi[static_cast<size_t>(j)], mu[static_cast<size_t>(j)], var[static_cast<size_t>(j)]});
  std::sort(comps.begin(), comps.end(),
            [](const MixtureComponent& a, const MixtureComponent& b) { return a.mean < b.mean; });
  double total = 0.0;
  for (auto& c : comps) total += c.weight;
  for (auto& c : comps) c.weight /= total;

  GmmFit out{GaussianMixture(std::move(comps)), {}};
  out.report.chosen_k = k;
  out.report.objective_value = obj;
  out.report.iterations = iter;
  return out;
}

GmmFit select_k(const WeightedSamples& s, int k_max, Criterion criterion, const EmConfig& cfg) {
  if (k_max < 1) throw ParameterError("k_max must be >= 1");
  const double n_eff = s.effective_size();
  const size_t distinct = distinct_count(s);
  const int upper = static_cast<int>(std::min<size_t>(static_cast<size_t>(k_max), distinct));

  GmmFit best;
  double best_score = std::numeric_limits<double>::infinity();
  std::vector<std::pair<int, double>> scores;
  for (int k = 1; k <= upper; ++k) {
    GmmFit fit = fit_gmm_em(s, k, cfg);
    double loglik = 0.0;
    for (size_t i = 0; i < s.size(); ++i)
      loglik += s.weights[i] * n_eff *
                std::log(std::max(pdf_at(UncertainValue(fit.gmm), s.value(i)),
                                  std::numeric_limits<double>::min()));
    const double params = 3.0 * k - 1.0;
    const double score = criterion == Criterion::Aic
                             ? 2.0 * params - 2.0 * loglik
                             : params * std::log(std::max(n_eff, 1.0)) - 2.0 * loglik;
    scores.emplace_back(k, score);
    if (score < best_score) {
      best_score = score;
      best = std::move(fit);
    }
  }
  best.report.criterion_scores = std::move(scores);
  best.report.chosen_k = static_cast<int>(best.gmm.components.size());
  return best;
}

double variance_distance(const UncertainValue& a, const UncertainValue& b, int grid_cells) {
  if (!is_univariate(a) || !is_univariate(b))
    throw DimensionError("variance_distance needs univariate inputs");
  const Interval sa = support_bounds(a);
  const Interval sb = support_bounds(b);
  double lo = std::min(sa.lo, sb.lo);
  double hi = std::max(sa.hi, sb.hi);
  if (!(hi > lo)) {
    // Both effectively point-like; distance is 0 or 1 on equality.
    return sa.lo == sb.lo ? 0.0 : 1.0;
  }
  const double pad = 1e-9 * (hi - lo);
  lo -= pad;
  hi += pad;
  const int n = std::max(grid_cells, 16);
  const double dx = (hi - lo) / n;

  // Per-cell probability masses. Sample clouds are compared through their
  // kernel density estimate, computed as binning followed by a discrete
  // Gaussian blur (equivalent to the KDE of pdf_at at grid resolution but
  // O(cells * kernel) instead of O(cells * samples)).
  auto cell_masses = [&](const UncertainValue& d) {
    std::vector<double> mass(static_cast<size_t>(n), 0.0);
    if (const auto* ws = std::get_if<WeightedSamples>(&d)) {
      for (size_t i = 0; i < ws->size(); ++i) {
        int c = static_cast<int>((ws->value(i) - lo) / dx);
        c = std::clamp(c, 0, n - 1);
        mass[static_cast<size_t>(c)] += ws->weights[i];
      }
      const double h = kde_bandwidth(*ws);
      const int span = static_cast<int>(std::ceil(5.0 * h / dx));
      if (span >= 1 && ws->size() > 1) {
        std::vector<double> kernel(static_cast<size_t>(2 * span + 1));
        double ksum = 0.0;
        for (int k = -span; k <= span; ++k) {
          kernel[static_cast<size_t>(k + span)] = norm_pdf(k * dx, 0.0, h * h);
          ksum += kernel[static_cast<size_t>(k + span)];
        }
        for (auto& k : kernel) k /= ksum;
        std::vector<double> blurred(static_cast<size_t>(n), 0.0);
        for (int c = 0; c < n; ++c) {
          if (mass[static_cast<size_t>(c)] == 0.0) continue;
          for (int k = -span; k <= span; ++k) {
            const int cc = std::clamp(c + k, 0, n - 1);
            blurred[static_cast<size_t>(cc)] +=
                mass[static_cast<size_t>(c)] * kernel[static_cast<size_t>(k + span)];
          }
        }
        mass = std::move(blurred);
      }
      return mass;
    }
    double prev = cdf_at(d, lo);
    for (int i = 1; i <= n; ++i) {
      const double c = cdf_at(d, lo + dx * i);
      mass[static_cast<size_t>(i - 1)] = c - prev;
      prev = c;
    }
    // Numerical tail mass lands in the edge cells.
    mass[0] += cdf_at(d, lo);
    mass[static_cast<size_t>(n - 1)] += 1.0 - prev;
    return mass;
  };
  const std::vector<double> ma = cell_masses(a);
  const std::vector<double> mb = cell_masses(b);
  double tv = 0.0;
  for (int i = 0; i < n; ++i) tv += std::fabs(ma[static_cast<size_t>(i)] - mb[static_cast<size_t>(i)]);
  return clamp01(0.5 * tv);
}

}  // namespace ustream
