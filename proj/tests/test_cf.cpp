#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>

#include "oracles.hpp"
#include "ustream/charfn.hpp"

using namespace ustream;

namespace {

GaussianMixture random_mixture(Rng& rng, int max_comps = 3) {
  const int n = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(max_comps)));
  std::vector<MixtureComponent> comps;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    MixtureComponent c;
    c.weight = rng.uniform(0.2, 1.0);
    c.mean = rng.uniform(-2.0, 2.0);
    const double sd = rng.uniform(0.5, 2.0);
    c.var = sd * sd;
    total += c.weight;
    comps.push_back(c);
  }
  for (auto& c : comps) c.weight /= total;
  return GaussianMixture(comps);
}

}  // namespace

TEST_CASE("cf_of evaluates closed forms") {
  CHECK(std::abs(cf_of(Gaussian1D(0, 1))(1.0) - std::complex<double>(std::exp(-0.5), 0.0)) < 1e-12);
  CHECK(std::abs(cf_of(PointMass{2})(M_PI) - std::complex<double>(1.0, 0.0)) < 1e-12);
  GaussianMixture mix({{0.5, -1.0, 1.0}, {0.5, 1.0, 1.0}});
  for (double t : {0.3, 1.0, 2.5}) {
    const std::complex<double> expected(std::cos(t) * std::exp(-0.5 * t * t), 0.0);
    CHECK(std::abs(cf_of(mix)(t) - expected) < 1e-12);
  }
}

TEST_CASE("cf_product collapses gaussian and point factors") {
  CharFn g = cf_product({CharFn::gaussian(1, 1), CharFn::gaussian(2, 4)});
  REQUIRE(g.kind() == CharFn::Kind::Gaussian);
  CHECK(g.gaussian_mean() == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(g.gaussian_var() == doctest::Approx(5.0).epsilon(1e-15));

  CharFn p = cf_product({CharFn::point_mass(1.5), CharFn::point_mass(-0.5)});
  REQUIRE(p.kind() == CharFn::Kind::PointMass);
  CHECK(p.point_value() == doctest::Approx(1.0));

  // Product of 100 distinct mixture CFs is exactly 1 at t = 0.
  Rng rng(3);
  std::vector<CharFn> cfs;
  for (int i = 0; i < 100; ++i) cfs.push_back(cf_of(random_mixture(rng)));
  CHECK(std::abs(cf_product(cfs)(0.0) - std::complex<double>(1.0, 0.0)) < 1e-12);
}

TEST_CASE("bernoulli thinning") {
  CharFn inner = CharFn::gaussian(2, 3);
  CharFn same = bernoulli_thin(1.0, inner);
  for (double t : {0.1, 0.7, 2.0}) CHECK(std::abs(same(t) - inner(t)) < 1e-15);
  CharFn zero = bernoulli_thin(0.0, inner);
  REQUIRE(zero.kind() == CharFn::Kind::PointMass);
  CHECK(zero.point_value() == 0.0);
  CHECK(std::abs(bernoulli_thin(0.5, CharFn::point_mass(2))(0.0) -
                 std::complex<double>(1.0, 0.0)) < 1e-15);
  CHECK_THROWS_AS(bernoulli_thin(1.5, inner), ParameterError);
}

TEST_CASE("cf_moments by structural recursion") {
  Moments g = cf_moments(CharFn::gaussian(3, 5));
  CHECK(g.mean == 3.0);
  CHECK(g.var == 5.0);

  std::vector<CharFn> hundred(100, CharFn::gaussian(1, 1));
  Moments h = cf_moments(cf_product(hundred));
  CHECK(h.mean == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(h.var == doctest::Approx(100.0).epsilon(1e-12));

  Moments t = cf_moments(CharFn::thinned(0.5, CharFn::point_mass(2)));
  CHECK(t.mean == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(t.var == doctest::Approx(1.0).epsilon(1e-15));

  Moments s = cf_moments(CharFn::shifted(2.0, CharFn::scaled(3.0, CharFn::gaussian(1, 1))));
  CHECK(s.mean == doctest::Approx(5.0));
  CHECK(s.var == doctest::Approx(9.0));
}

TEST_CASE("cf_moments additivity over products") {
  Rng rng(17);
  for (int round = 0; round < 20; ++round) {
    std::vector<CharFn> cfs;
    double mean_sum = 0.0, var_sum = 0.0;
    for (int i = 0; i < 10; ++i) {
      GaussianMixture m = random_mixture(rng);
      const Moments mm = moments(UncertainValue(m));
      mean_sum += mm.mean;
      var_sum += mm.var;
      cfs.push_back(cf_of(m));
    }
    const Moments pm = cf_moments(cf_product(cfs));
    CHECK(pm.mean == doctest::Approx(mean_sum).epsilon(1e-10));
    CHECK(pm.var == doctest::Approx(var_sum).epsilon(1e-10));
  }
}

TEST_CASE("charfn magnitude and conjugate symmetry") {
  Rng rng(23);
  std::vector<CharFn> cfs;
  for (int i = 0; i < 20; ++i) cfs.push_back(cf_of(random_mixture(rng)));
  cfs.push_back(CharFn::thinned(0.3, cf_of(random_mixture(rng))));
  cfs.push_back(CharFn::scaled(0.5, CharFn::shifted(1.0, cfs[0])));
  CharFn prod = cf_product(cfs);
  for (int i = 0; i < 200; ++i) {
    const double t = rng.uniform(-50.0, 50.0);
    const std::complex<double> v = prod(t);
    CHECK(std::abs(v) <= 1.0 + 1e-9);
    CHECK(std::abs(prod(-t) - std::conj(v)) < 1e-9);
  }
}

TEST_CASE("cf_invert recovers the standard normal peak") {
  CharFn g = CharFn::gaussian(0, 1);
  GridPdf pdf = cf_invert(g, GridSpec::for_cf(g));
  double peak = 0.0, peak_x = 0.0;
  for (size_t i = 0; i < pdf.size(); ++i) {
    if (pdf.density[i] > peak) {
      peak = pdf.density[i];
      peak_x = pdf.x_at(i);
    }
  }
  CHECK(peak == doctest::Approx(0.39894).epsilon(2.5e-4));
  CHECK(std::fabs(peak_x) < 0.02);
}

TEST_CASE("cf_invert moments match the descriptor") {
  CharFn g = CharFn::gaussian(3, 5);
  GridPdf pdf = cf_invert(g, GridSpec::for_cf(g));
  const Moments m = moments(UncertainValue(pdf));
  CHECK(m.mean == doctest::Approx(3.0).epsilon(1e-3));
  CHECK(m.var == doctest::Approx(5.0).epsilon(1e-3));
}

TEST_CASE("cf_invert rejects undersized grids") {
  CharFn g = CharFn::gaussian(0, 4);
  GridSpec narrow;
  narrow.n_points = 256;
  narrow.center = 0.0;
  narrow.half_width = 4.0;  // needs 16
  CHECK_THROWS_AS(cf_invert(g, narrow), CoverageError);
  GridSpec bad;
  bad.n_points = 100;
  CHECK_THROWS_AS(cf_invert(g, bad), ParameterError);
}

TEST_CASE("inversion reproduces analytic densities to 1e-3 total variation") {
  Rng rng(5);
  for (int round = 0; round < 10; ++round) {
    const double mean = rng.uniform(-10, 10);
    const double sd = rng.uniform(0.2, 5.0);
    const UncertainValue d = Gaussian1D(mean, sd * sd);
    GridPdf pdf = cf_invert(cf_of(d), GridSpec::for_cf(cf_of(d)));
    const double tv = oracles::tv_numeric(
        [&](double x) { return pdf_at(d, x); }, [&](double x) { return pdf_at(pdf, x); },
        mean - 9 * sd, mean + 9 * sd);
    CHECK(tv <= 1e-3);
  }
  for (int round = 0; round < 10; ++round) {
    const UncertainValue d = random_mixture(rng, 4);
    GridPdf pdf = cf_invert(cf_of(d), GridSpec::for_cf(cf_of(d)));
    const Interval s = support_bounds(d);
    const double tv = oracles::tv_numeric(
        [&](double x) { return pdf_at(d, x); }, [&](double x) { return pdf_at(pdf, x); }, s.lo,
        s.hi);
    CHECK(tv <= 1e-3);
  }
}

TEST_CASE("product of 100 mixtures inverts to the Monte-Carlo histogram") {
  Rng rng(29);
  std::vector<UncertainValue> dists;
  std::vector<CharFn> cfs;
  for (int i = 0; i < 100; ++i) {
    GaussianMixture m = random_mixture(rng);
    dists.push_back(m);
    cfs.push_back(cf_of(m));
  }
  CharFn prod = cf_product(cfs);
  GridPdf pdf = cf_invert(prod, GridSpec::for_cf(prod));
  const std::vector<double> draws = oracles::mc_sum_samples(dists, 1000000, 77);
  CHECK(oracles::tv_vs_samples(pdf, draws) <= 0.01);
}

TEST_CASE("cf_fit_gmm recovers an exact family match") {
  CfFitResult fit = cf_fit_gmm(CharFn::gaussian(3, 5), 1);
  REQUIRE(fit.gmm.components.size() == 1);
  CHECK(fit.gmm.components[0].weight == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(fit.gmm.components[0].mean == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(fit.gmm.components[0].var == doctest::Approx(5.0).epsilon(1e-6));
}

TEST_CASE("cf_fit_gmm degenerate point mass clamps variance") {
  CfFitResult fit = cf_fit_gmm(CharFn::point_mass(0.0), 1);
  REQUIRE(fit.gmm.components.size() == 1);
  CHECK(fit.gmm.components[0].mean == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(fit.gmm.components[0].var <= 1e-6);
}

TEST_CASE("cf_fit_gmm approximates a long product within 0.03 total variation") {
  Rng rng(31);
  std::vector<CharFn> cfs;
  for (int i = 0; i < 100; ++i) cfs.push_back(cf_of(random_mixture(rng)));
  CharFn prod = cf_product(cfs);
  GridPdf exact = cf_invert(prod, GridSpec::for_cf(prod));
  CfFitResult fit = cf_fit_gmm(prod, 3);
  const Interval s = support_bounds(UncertainValue(exact));
  const double tv = oracles::tv_numeric(
      [&](double x) { return pdf_at(exact, x); },
      [&](double x) { return pdf_at(UncertainValue(fit.gmm), x); }, s.lo, s.hi);
  CHECK(tv <= 0.03);
}

TEST_CASE("cf_fit_gmm moments stay within 5% of the descriptor") {
  Rng rng(37);
  for (int round = 0; round < 5; ++round) {
    std::vector<CharFn> cfs;
    for (int i = 0; i < 30; ++i) cfs.push_back(cf_of(random_mixture(rng)));
    CharFn prod = cf_product(cfs);
    const Moments target = cf_moments(prod);
    for (int k = 1; k <= 3; ++k) {
      const Moments got = moments(UncertainValue(cf_fit_gmm(prod, k).gmm));
      const double scale = std::max(std::fabs(target.mean), std::sqrt(target.var));
      CHECK(std::fabs(got.mean - target.mean) <= 0.05 * scale);
      CHECK(std::fabs(got.var - target.var) <= 0.05 * target.var);
    }
  }
  CHECK_THROWS_AS(cf_fit_gmm(CharFn::gaussian(0, 1), 9), ParameterError);
}
