#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "ustream/fitting.hpp"

using namespace ustream;

TEST_CASE("fit_gaussian_kl closed form") {
  Gaussian1D a = fit_gaussian_kl(WeightedSamples::scalar({-1, 1}, {0.5, 0.5}));
  CHECK(a.mean == doctest::Approx(0.0));
  CHECK(a.var == doctest::Approx(1.0));

  Gaussian1D b = fit_gaussian_kl(WeightedSamples::scalar({2}, {1.0}));
  CHECK(b.mean == doctest::Approx(2.0));
  CHECK(b.var == defaults::var_floor);

  Gaussian1D c = fit_gaussian_kl(WeightedSamples::scalar({0, 2}, {0.25, 0.75}));
  CHECK(c.mean == doctest::Approx(1.5));
  CHECK(c.var == doctest::Approx(0.75));
}

TEST_CASE("fit_gaussian_nd closed form and PSD floor") {
  WeightedSamples s(2, {0, 0, 2, 0}, {0.5, 0.5});
  GaussianND g = fit_gaussian_nd(s);
  CHECK(g.mean[0] == doctest::Approx(1.0));
  CHECK(g.mean[1] == doctest::Approx(0.0));
  CHECK(g.cov[0] == doctest::Approx(1.0));
  CHECK(g.cov[3] >= defaults::var_floor);
  CHECK(g.cov[3] <= 10 * defaults::var_floor);

  GaussianND single = fit_gaussian_nd(WeightedSamples(3, {1, 2, 3}, {1.0}));
  CHECK(single.mean[2] == doctest::Approx(3.0));
  CHECK(single.cov[0] >= defaults::var_floor);

  CHECK_THROWS_AS(fit_gaussian_nd(WeightedSamples::scalar({1.0}, {1.0})), InputError);
}

TEST_CASE("fit_gaussian_nd recovers a known 2-D Gaussian from samples") {
  const std::vector<double> mean = {1.0, -2.0};
  const std::vector<double> cov = {2.0, 0.6, 0.6, 1.0};
  GaussianND truth(2, mean, cov);
  Rng rng(13);
  const int n = 100000;
  std::vector<double> vals(2 * static_cast<size_t>(n));
  std::vector<double> wts(static_cast<size_t>(n), 1.0 / n);
  for (int i = 0; i < n; ++i) {
    const auto x = sample_vector(truth, rng);
    vals[2 * static_cast<size_t>(i)] = x[0];
    vals[2 * static_cast<size_t>(i) + 1] = x[1];
  }
  GaussianND fit = fit_gaussian_nd(WeightedSamples(2, vals, wts));
  const double se_mean0 = std::sqrt(cov[0] / n);
  const double se_mean1 = std::sqrt(cov[3] / n);
  CHECK(std::fabs(fit.mean[0] - mean[0]) < 3 * se_mean0);
  CHECK(std::fabs(fit.mean[1] - mean[1]) < 3 * se_mean1);
  for (int i = 0; i < 4; ++i) {
    const double se = 3.0 * std::sqrt(2.0 / n) * std::max(cov[0], cov[3]);
    CHECK(std::fabs(fit.cov[static_cast<size_t>(i)] - cov[static_cast<size_t>(i)]) < se);
  }
}

TEST_CASE("kl_objective formula values") {
  const double v = kl_objective(WeightedSamples::scalar({0}, {1.0}), Gaussian1D(0, 1));
  CHECK(v == doctest::Approx(0.9189385332).epsilon(1e-9));  // log(sqrt(2*pi))

  WeightedSamples s = WeightedSamples::scalar({-1, 1}, {0.5, 0.5});
  CHECK(kl_objective(s, Gaussian1D(0, 1)) <= kl_objective(s, Gaussian1D(0.5, 1)));
}

TEST_CASE("closed-form minimizer wins a grid search over (mu, var)") {
  Rng rng(19);
  std::vector<double> vals, wts;
  for (int i = 0; i < 100; ++i) {
    vals.push_back(rng.normal(1.0, 2.0));
    wts.push_back(rng.uniform(0.1, 1.0));
  }
  double total = 0.0;
  for (double w : wts) total += w;
  for (auto& w : wts) w /= total;
  WeightedSamples s = WeightedSamples::scalar(vals, wts);
  const Gaussian1D fit = fit_gaussian_kl(s);
  const double best = kl_objective(s, fit);
  for (int i = 0; i <= 40; ++i) {
    for (int j = 0; j <= 40; ++j) {
      const double mu = fit.mean + (i - 20) * 0.05 * std::sqrt(fit.var);
      const double var = fit.var * std::exp((j - 20) * 0.05);
      CHECK(kl_objective(s, Gaussian1D(mu, var)) >= best - 1e-12);
    }
  }
}

TEST_CASE("kl minimizer beats random perturbed candidates") {
  Rng rng(101);
  for (int round = 0; round < 10; ++round) {
    std::vector<double> vals, wts;
    const int n = 5 + static_cast<int>(rng.below(60));
    for (int i = 0; i < n; ++i) {
      vals.push_back(rng.uniform(-5, 5));
      wts.push_back(rng.uniform(0.01, 1.0));
    }
    double total = 0.0;
    for (double w : wts) total += w;
    for (auto& w : wts) w /= total;
    WeightedSamples s = WeightedSamples::scalar(vals, wts);
    const Gaussian1D fit = fit_gaussian_kl(s);
    const double best = kl_objective(s, fit);
    for (int c = 0; c < 100; ++c) {
      const double mu = fit.mean + rng.normal(0.0, 0.5 * std::sqrt(fit.var) + 0.01);
      const double var = fit.var * std::exp(rng.normal(0.0, 0.5));
      CHECK(kl_objective(s, Gaussian1D(mu, var)) >= best - 1e-12);
    }
  }
}

TEST_CASE("weighted EM: one component equals the closed form") {
  Rng rng(7);
  std::vector<double> vals, wts;
  for (int i = 0; i < 50; ++i) {
    vals.push_back(rng.uniform(-3, 3));
    wts.push_back(rng.uniform(0.1, 1.0));
  }
  double total = 0.0;
  for (double w : wts) total += w;
  for (auto& w : wts) w /= total;
  WeightedSamples s = WeightedSamples::scalar(vals, wts);
  GmmFit fit = fit_gmm_em(s, 1);
  const Gaussian1D direct = fit_gaussian_kl(s);
  REQUIRE(fit.gmm.components.size() == 1);
  CHECK(fit.gmm.components[0].mean == doctest::Approx(direct.mean).epsilon(1e-9));
  CHECK(fit.gmm.components[0].var == doctest::Approx(direct.var).epsilon(1e-9));
}

TEST_CASE("weighted EM separates far modes") {
  Rng rng(21);
  std::vector<double> vals;
  for (int i = 0; i < 200; ++i)
    vals.push_back((i % 2 == 0 ? -10.0 : 10.0) + rng.normal(0.0, 0.3));
  GmmFit fit = fit_gmm_em(WeightedSamples::uniform_scalar(vals), 2);
  REQUIRE(fit.gmm.components.size() == 2);
  CHECK(fit.gmm.components[0].mean == doctest::Approx(-10.0).epsilon(0.02));
  CHECK(fit.gmm.components[1].mean == doctest::Approx(10.0).epsilon(0.02));
  CHECK(fit.gmm.components[0].weight == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("EM with k equal to distinct values collapses components") {
  GmmFit fit = fit_gmm_em(WeightedSamples::uniform_scalar({-4.0, 0.0, 5.0}), 3);
  REQUIRE(fit.gmm.components.size() == 3);
  CHECK(fit.gmm.components[0].mean == doctest::Approx(-4.0).epsilon(1e-6));
  CHECK(fit.gmm.components[1].mean == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(fit.gmm.components[2].mean == doctest::Approx(5.0).epsilon(1e-6));
  for (const auto& c : fit.gmm.components) CHECK(c.var <= 1e-9);
  CHECK_THROWS_AS(fit_gmm_em(WeightedSamples::uniform_scalar({1.0, 1.0}), 2), InputError);
}

TEST_CASE("EM objective is monotone nonincreasing across iterations") {
  Rng rng(33);
  std::vector<double> vals;
  for (int i = 0; i < 120; ++i)
    vals.push_back(rng.normal(i % 2 == 0 ? -2.0 : 3.0, 1.0));
  WeightedSamples s = WeightedSamples::uniform_scalar(vals);
  double prev = std::numeric_limits<double>::infinity();
  for (int iters = 1; iters <= 25; ++iters) {
    EmConfig cfg;
    cfg.iter_max = iters;
    cfg.tol = 0.0;
    GmmFit fit = fit_gmm_em(s, 2, cfg);
    CHECK(fit.report.objective_value <= prev + 1e-9);
    prev = fit.report.objective_value;
  }
}

TEST_CASE("select_k picks one component for unimodal data") {
  Rng rng(55);
  std::vector<double> vals;
  for (int i = 0; i < 500; ++i) vals.push_back(rng.normal(2.0, 1.0));
  GmmFit fit = select_k(WeightedSamples::uniform_scalar(vals), 3, Criterion::Bic);
  CHECK(fit.report.chosen_k == 1);
  REQUIRE(fit.report.criterion_scores.size() == 3);
}

TEST_CASE("select_k detects the moved-object bimodal scenario") {
  // Half the particles at the old shelf, half at the new one.
  Rng rng(56);
  std::vector<double> vals;
  for (int i = 0; i < 400; ++i)
    vals.push_back(i % 2 == 0 ? rng.normal(0.0, 0.2) : rng.normal(4.0, 0.2));
  GmmFit fit = select_k(WeightedSamples::uniform_scalar(vals), 3, Criterion::Bic);
  CHECK(fit.report.chosen_k == 2);
}

TEST_CASE("select_k with one distinct value returns k = 1") {
  GmmFit fit = select_k(WeightedSamples::uniform_scalar({2.0, 2.0, 2.0}), 3, Criterion::Bic);
  CHECK(fit.report.chosen_k == 1);
}

TEST_CASE("BIC never chooses more components than AIC") {
  Rng rng(77);
  for (int round = 0; round < 8; ++round) {
    std::vector<double> vals;
    const int modes = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < 300; ++i)
      vals.push_back(rng.normal(4.0 * static_cast<double>(rng.below(static_cast<uint64_t>(modes))),
                                0.5));
    WeightedSamples s = WeightedSamples::uniform_scalar(vals);
    const int k_aic = select_k(s, 4, Criterion::Aic).report.chosen_k;
    const int k_bic = select_k(s, 4, Criterion::Bic).report.chosen_k;
    CHECK(k_bic <= k_aic);
  }
}

TEST_CASE("variance_distance basic values") {
  CHECK(variance_distance(Gaussian1D(1, 2), Gaussian1D(1, 2)) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(variance_distance(Gaussian1D(0, 1), PointMass{500.0}) == doctest::Approx(1.0).epsilon(1e-6));
  // Verified against numeric integration of 0.5*Int |phi(x) - phi(x-0.1)| dx.
  const double d = variance_distance(Gaussian1D(0, 1), Gaussian1D(0.1, 1));
  CHECK(d == doctest::Approx(0.0399).epsilon(0.05));
  const double oracle = oracles::tv_numeric(
      [](double x) { return norm_pdf(x, 0.0, 1.0); },
      [](double x) { return norm_pdf(x, 0.1, 1.0); }, -9.0, 9.1);
  CHECK(std::fabs(d - oracle) < 0.002);
}

TEST_CASE("variance_distance is a bounded metric on a shared grid") {
  Rng rng(91);
  for (int round = 0; round < 10; ++round) {
    const Gaussian1D a(rng.uniform(-3, 3), rng.uniform(0.2, 3.0));
    const Gaussian1D b(rng.uniform(-3, 3), rng.uniform(0.2, 3.0));
    const Gaussian1D c(rng.uniform(-3, 3), rng.uniform(0.2, 3.0));
    const double ab = variance_distance(a, b);
    const double ba = variance_distance(b, a);
    const double ac = variance_distance(a, c);
    const double cb = variance_distance(c, b);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-9));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    CHECK(ab <= ac + cb + 1e-6);
  }
}
