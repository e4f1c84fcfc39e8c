#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "ustream/operators.hpp"

using namespace ustream;
using namespace ustream::ops;

namespace {

ProbTuple tuple_with(const std::string& attr, UncertainValue v, double ts = 0.0,
                     double existence = 1.0) {
  return make_base_tuple(ts, {{attr, std::move(v)}}, existence);
}

std::vector<ProbTuple> gaussian_tuples(int n, double mean, double var) {
  std::vector<ProbTuple> out;
  for (int i = 0; i < n; ++i) out.push_back(tuple_with("v", Gaussian1D(mean, var), i));
  return out;
}

GaussianMixture random_mixture(Rng& rng) {
  const int n = 1 + static_cast<int>(rng.below(3));
  std::vector<MixtureComponent> comps;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    MixtureComponent c;
    c.weight = rng.uniform(0.2, 1.0);
    c.mean = rng.uniform(-3.0, 3.0);
    const double sd = rng.uniform(0.5, 1.5);
    c.var = sd * sd;
    total += c.weight;
    comps.push_back(c);
  }
  for (auto& c : comps) c.weight /= total;
  return GaussianMixture(comps);
}

std::span<const ProbTuple> span_of(const std::vector<ProbTuple>& v) {
  return std::span<const ProbTuple>(v.data(), v.size());
}

}  // namespace

// ---------------------------------------------------------------------------

TEST_CASE("select_filter scales existence by the retained mass") {
  ProbTuple t = tuple_with("temp", Gaussian1D(70, 25));
  auto out = select_filter(t, "temp", RangePredicate::greater_than(60));
  REQUIRE(out.has_value());
  CHECK(out->existence == doctest::Approx(0.97725).epsilon(1e-4));
  CHECK(out->lineage == t.lineage);
  CHECK(moments(out->dist("temp")).mean > 70.0);
}

TEST_CASE("select_filter drops crisp scalars and low-mass tuples") {
  SelectStats stats;
  ProbTuple scalar = make_base_tuple(0.0, {{"temp", 59.0}});
  CHECK_FALSE(select_filter(scalar, "temp", RangePredicate::greater_than(60), 0.05, &stats));
  CHECK(stats.dropped_scalar == 1);

  // Mass ~0.0307 < tau = 0.05.
  ProbTuple t = tuple_with("temp", Gaussian1D(50, 25));
  auto out = select_filter(t, "temp", RangePredicate::greater_than(59.35), 0.05, &stats);
  CHECK_FALSE(out.has_value());
  CHECK(stats.dropped_threshold == 1);

  ProbTuple far = tuple_with("temp", Gaussian1D(0, 1));
  CHECK_FALSE(select_filter(far, "temp", RangePredicate::greater_than(10), 0.05, &stats));
  CHECK(stats.dropped_zero_mass == 1);
}

TEST_CASE("select existence never exceeds the input existence") {
  Rng rng(3);
  for (int i = 0; i < 30; ++i) {
    ProbTuple t = tuple_with("v", Gaussian1D(rng.uniform(-2, 2), rng.uniform(0.5, 2.0)), 0.0,
                             rng.uniform(0.3, 1.0));
    auto out = select_filter(t, "v", RangePredicate::greater_than(rng.uniform(-3, 3)), 0.0);
    if (out) CHECK(out->existence <= t.existence + 1e-12);
  }
}

TEST_CASE("transform_delta affine is exact") {
  ProbTuple t = tuple_with("v", Gaussian1D(3, 4));
  ProbTuple out = transform_delta(t, "v", TransformFn::make_affine(2.0, 1.0));
  const auto& g = std::get<Gaussian1D>(out.dist("v"));
  CHECK(g.mean == doctest::Approx(7.0));
  CHECK(g.var == doctest::Approx(16.0));
  // Derivation is recorded for replay.
  CHECK(out.derivations.at("v").kind == Derivation::Kind::Affine);
  CHECK(out.derivations.at("v").source == t.id);
}

TEST_CASE("transform_delta first-order approximation") {
  ProbTuple t = tuple_with("v", Gaussian1D(10, 0.01));
  ProbTuple out = transform_delta(
      t, "v", TransformFn::make_scalar([](double x) { return x * x; },
                                       [](double x) { return 2.0 * x; }));
  const auto& g = std::get<Gaussian1D>(out.dist("v"));
  CHECK(g.mean == doctest::Approx(100.0));
  CHECK(g.var == doctest::Approx(4.0));

  // Monte-Carlo oracle in the small-sigma regime.
  Rng rng(5);
  std::vector<double> draws(1000000);
  for (auto& d : draws) {
    const double x = rng.normal(10.0, 0.1);
    d = x * x;
  }
  CHECK(std::fabs(oracles::mean_of(draws) - g.mean) <= 0.02);
  CHECK(std::fabs(oracles::var_of(draws) - g.var) / g.var <= 0.05);
}

TEST_CASE("window assignment covers tumbling, NOW, and late tuples") {
  WindowAssigner w({WindowSpec::Mode::Range, 5.0, 5.0}, 0.0);
  std::map<int64_t, size_t> sizes;
  for (int t = 1; t <= 10; ++t)
    for (const auto& c : w.push(make_base_tuple(t, {{"v", 1.0}})))
      sizes[c.window_id] = c.members.size();
  for (const auto& c : w.flush()) sizes[c.window_id] = c.members.size();
  REQUIRE(sizes.size() == 2);
  CHECK(sizes[1] == 5);
  CHECK(sizes[2] == 5);

  WindowAssigner now({WindowSpec::Mode::Now, 0.0, 1.0}, 0.0);
  int closures = 0;
  for (int t = 0; t < 3; ++t) closures += static_cast<int>(now.push(make_base_tuple(t, {})).size());
  CHECK(closures == 3);

  WindowAssigner late({WindowSpec::Mode::Range, 5.0, 5.0}, 0.0);
  late.push(make_base_tuple(12.0, {}));  // watermark 12, closes (0,5] and (5,10]
  late.push(make_base_tuple(4.0, {}));
  CHECK(late.late_count() == 1);
  REQUIRE(late.late_tuples().size() == 1);
  CHECK(late.late_tuples()[0].ts == 4.0);
}

TEST_CASE("sliding windows duplicate tuples into every covering window") {
  WindowAssigner w({WindowSpec::Mode::Range, 10.0, 5.0}, 0.0);
  std::map<int64_t, size_t> sizes;
  auto absorb = [&](std::vector<WindowClosure> cs) {
    for (const auto& c : cs) sizes[c.window_id] = c.members.size();
  };
  for (int t = 1; t <= 20; ++t) absorb(w.push(make_base_tuple(t, {})));
  absorb(w.flush());
  // Interior windows hold ten tuples each.
  CHECK(sizes[2] == 10);
  CHECK(sizes[3] == 10);
}

// ---------------------------------------------------------------------------

TEST_CASE("agg_sum of 100 Gaussians: every method near-exact moments") {
  auto tuples = gaussian_tuples(100, 1.0, 1.0);
  for (SumMethod method : {SumMethod::CfInvert, SumMethod::CfFit, SumMethod::Clt}) {
    AggConfig cfg;
    cfg.method = method;
    ProbTuple out = agg_sum(span_of(tuples), "v", cfg);
    const Moments m = moments(out.dist("v"));
    const double tol = method == SumMethod::Clt ? 1e-12 : 1e-4;
    CHECK(std::fabs(m.mean - 100.0) <= 100.0 * tol + 1e-6);
    CHECK(std::fabs(m.var - 100.0) <= 100.0 * tol + 1e-3);
    CHECK(out.lineage.size() == 100);
  }
}

TEST_CASE("agg_sum result mean equals the sum of input means for every method") {
  Rng rng(9);
  std::vector<ProbTuple> tuples;
  double mean_sum = 0.0;
  for (int i = 0; i < 40; ++i) {
    GaussianMixture m = random_mixture(rng);
    mean_sum += moments(UncertainValue(m)).mean;
    tuples.push_back(tuple_with("v", m, i));
  }
  for (SumMethod method :
       {SumMethod::CfInvert, SumMethod::CfFit, SumMethod::Clt, SumMethod::HistSample}) {
    AggConfig cfg;
    cfg.method = method;
    cfg.seed = 101;
    const Moments m = moments(agg_sum(span_of(tuples), "v", cfg).dist("v"));
    CHECK(std::fabs(m.mean - mean_sum) <= 0.01 * std::max(1.0, std::fabs(mean_sum)));
  }
}

TEST_CASE("agg_sum single tuple is the identity within grid tolerance") {
  std::vector<ProbTuple> one;
  one.push_back(tuple_with("v", Gaussian1D(2.0, 1.5)));
  AggConfig cfg;
  ProbTuple out = agg_sum(span_of(one), "v", cfg);
  const Moments m = moments(out.dist("v"));
  CHECK(m.mean == doctest::Approx(2.0).epsilon(1e-3));
  CHECK(m.var == doctest::Approx(1.5).epsilon(1e-3));
  CHECK(variance_distance(out.dist("v"), one[0].dist("v")) < 2e-3);
}

TEST_CASE("agg_sum inversion matches exhaustive discrete convolution") {
  Rng rng(15);
  std::vector<ProbTuple> tuples;
  std::vector<UncertainValue> dists;
  for (int i = 0; i < 6; ++i) {
    GaussianMixture m = random_mixture(rng);
    dists.push_back(m);
    tuples.push_back(tuple_with("v", m, i));
  }
  AggConfig cfg;
  cfg.grid_points = 2048;
  ProbTuple out = agg_sum(span_of(tuples), "v", cfg);

  // Oracle: discretize each input on a common step and convolve exactly.
  double widest = 0.0;
  for (const auto& d : dists) {
    const Interval s = support_bounds(d);
    widest = std::max(widest, s.hi - s.lo);
  }
  const double step = widest / 512.0;
  oracles::Pmf acc;
  bool first = true;
  for (const auto& d : dists) {
    const Interval s = support_bounds(d);
    const int cells = std::max(16, static_cast<int>(std::ceil((s.hi - s.lo) / step)));
    oracles::Pmf pmf = oracles::discretize(d, cells);
    pmf.dx = step;  // discretize used (hi-lo)/cells; rebuild with uniform step
    oracles::Pmf exact;
    exact.dx = step;
    exact.x0 = s.lo + 0.5 * step;
    exact.p.resize(static_cast<size_t>(cells));
    for (int c = 0; c < cells; ++c)
      exact.p[static_cast<size_t>(c)] =
          cdf_at(d, s.lo + (c + 1) * step) - cdf_at(d, s.lo + c * step);
    double total = 0.0;
    for (double v : exact.p) total += v;
    for (auto& v : exact.p) v /= total;
    acc = first ? exact : oracles::convolve(acc, exact);
    first = false;
  }
  // Total variation between the inverted grid and the oracle pmf.
  double tv = 0.0;
  const UncertainValue& result = out.dist("v");
  for (size_t c = 0; c < acc.p.size(); ++c) {
    const double lo = acc.x0 + (static_cast<double>(c) - 0.5) * acc.dx;
    const double hi = lo + acc.dx;
    tv += std::fabs(acc.p[c] - (cdf_at(result, hi) - cdf_at(result, lo)));
  }
  CHECK(0.5 * tv <= 0.01);
}

TEST_CASE("agg_sum guards its preconditions") {
  auto tuples = gaussian_tuples(5, 0.0, 1.0);
  AggConfig clt;
  clt.method = SumMethod::Clt;
  CHECK_THROWS_AS(agg_sum(span_of(tuples), "v", clt), MethodError);

  // Overlapping lineages are refused.
  std::vector<ProbTuple> overlapping = gaussian_tuples(2, 0.0, 1.0);
  overlapping[1].lineage = overlapping[0].lineage;
  CHECK_THROWS_AS(agg_sum(span_of(overlapping), "v", AggConfig{}), CorrelationError);

  std::vector<ProbTuple> uncertain = gaussian_tuples(2, 0.0, 1.0);
  uncertain[0].existence = 0.7;
  CHECK_THROWS_AS(agg_sum(span_of(uncertain), "v", AggConfig{}), MethodError);

  std::vector<ProbTuple> none;
  CHECK_THROWS_AS(agg_sum(span_of(none), "v", AggConfig{}), InputError);
}

TEST_CASE("agg_avg rescales the sum and agg_count is a scalar") {
  auto tuples = gaussian_tuples(100, 5.0, 4.0);
  AggConfig clt;
  clt.method = SumMethod::Clt;
  const Moments avg = moments(agg_avg(span_of(tuples), "v", clt).dist("v"));
  CHECK(avg.mean == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(avg.var == doctest::Approx(0.04).epsilon(1e-12));

  AggConfig inv;
  const Moments sum_m = moments(agg_sum(span_of(tuples), "v", inv).dist("v"));
  const Moments avg_m = moments(agg_avg(span_of(tuples), "v", inv).dist("v"));
  CHECK(avg_m.mean == doctest::Approx(sum_m.mean / 100.0).epsilon(1e-6));
  CHECK(avg_m.var == doctest::Approx(sum_m.var / 10000.0).epsilon(1e-4));

  auto seven = gaussian_tuples(7, 0.0, 1.0);
  CHECK(agg_count(span_of(seven), "v").scalar("v") == 7.0);
}

TEST_CASE("agg_max: point masses, the iid pair, and identity") {
  std::vector<ProbTuple> points;
  points.push_back(tuple_with("v", PointMass{1.0}));
  points.push_back(tuple_with("v", PointMass{3.0}));
  ProbTuple spike = agg_max(span_of(points), "v");
  const Moments sm = moments(spike.dist("v"));
  CHECK(sm.mean == doctest::Approx(3.0).epsilon(1e-2));
  CHECK(cdf_at(spike.dist("v"), 2.0) <= 1e-6);

  auto pair = gaussian_tuples(2, 0.0, 1.0);
  const Moments mm = moments(agg_max(span_of(pair), "v").dist("v"));
  CHECK(std::fabs(mm.mean - 0.5642) <= 0.01);  // 1/sqrt(pi)

  std::vector<ProbTuple> one;
  one.push_back(tuple_with("v", Gaussian1D(1.0, 2.0)));
  const Moments im = moments(agg_max(span_of(one), "v").dist("v"));
  CHECK(im.mean == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(im.var == doctest::Approx(2.0).epsilon(5e-3));
}

TEST_CASE("agg_max dominates every input cdf and agg_min mirrors it") {
  Rng rng(19);
  std::vector<ProbTuple> tuples;
  for (int i = 0; i < 5; ++i) tuples.push_back(tuple_with("v", random_mixture(rng), i));
  ProbTuple maxed = agg_max(span_of(tuples), "v");
  for (const auto& t : tuples) {
    for (double x = -10; x <= 10; x += 0.5)
      CHECK(cdf_at(maxed.dist("v"), x) <= cdf_at(t.dist("v"), x) + 1e-6);
  }
  ProbTuple mined = agg_min(span_of(tuples), "v");
  for (const auto& t : tuples) {
    for (double x = -10; x <= 10; x += 0.5)
      CHECK(1.0 - cdf_at(mined.dist("v"), x) <= 1.0 - cdf_at(t.dist("v"), x) + 1e-6);
  }

  // Cross-check the maximum against Monte Carlo.
  Rng mc(7);
  std::vector<double> draws(200000);
  for (auto& d : draws) {
    double best = -1e300;
    for (const auto& t : tuples) best = std::max(best, sample_scalar(t.dist("v"), mc));
    d = best;
  }
  CHECK(std::fabs(moments(maxed.dist("v")).mean - oracles::mean_of(draws)) < 0.02);
}

// ---------------------------------------------------------------------------

TEST_CASE("group_by_region_sum: certain tuple above threshold raises an alert") {
  RegionPartition part = RegionPartition::grid2d(0, 0, 10, 10, 2, 2);
  std::vector<ProbTuple> tuples;
  // Point-like location inside region 0, weight 250 > 200.
  WeightedSamples loc(2, {2.0, 2.0}, {1.0});
  ProbTuple t = make_base_tuple(0.0, {{"loc", UncertainValue(loc)}, {"weight", 250.0}});
  tuples.push_back(t);
  auto regions = group_by_region_sum(span_of(tuples), "loc", part, "weight", 200.0, 0.5);
  REQUIRE(regions.size() == 1);
  CHECK(regions[0].region_id == 0);
  CHECK(regions[0].exceed_prob == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(regions[0].alert);
}

TEST_CASE("group_by_region_sum matches exhaustive presence enumeration") {
  RegionPartition part = RegionPartition::grid2d(0, 0, 10, 10, 1, 1);
  // Memberships are exactly 1 (point locations deep inside); existence
  // supplies the presence probabilities 0.5, 0.5, 1.0.
  const std::vector<double> presence = {0.5, 0.5, 1.0};
  const std::vector<double> weights = {100.0, 150.0, 80.0};
  std::vector<ProbTuple> tuples;
  for (size_t i = 0; i < presence.size(); ++i) {
    WeightedSamples loc(2, {5.0, 5.0}, {1.0});
    tuples.push_back(make_base_tuple(static_cast<double>(i),
                                     {{"loc", UncertainValue(loc)}, {"weight", weights[i]}},
                                     presence[i]));
  }
  GroupConfig cfg;
  GridSpec grid;  // integer-aligned grid so the atoms sit on nodes
  grid.n_points = 4096;
  grid.center = 256.0;
  grid.half_width = 1024.0;
  cfg.grid = grid;
  auto regions = group_by_region_sum(span_of(tuples), "loc", part, "weight", 200.0, 0.4, cfg);
  REQUIRE(regions.size() == 1);
  const double oracle = oracles::enumerate_exceed(presence, weights, 200.0);
  CHECK(oracle == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::fabs(regions[0].exceed_prob - oracle) <= 1e-6);
  CHECK(regions[0].alert);
}

TEST_CASE("split membership preserves the expected contribution") {
  RegionPartition part = RegionPartition::grid2d(0, 0, 10, 10, 2, 1);
  // Gaussian location centered exactly on the boundary x = 5.
  GaussianND loc(2, {5.0, 5.0}, {0.25, 0.0, 0.0, 0.25});
  std::vector<ProbTuple> tuples;
  tuples.push_back(make_base_tuple(0.0, {{"loc", UncertainValue(loc)}, {"weight", 100.0}}));
  auto regions = group_by_region_sum(span_of(tuples), "loc", part, "weight", 1000.0, 0.9);
  REQUIRE(regions.size() == 2);
  double expected_total = 0.0;
  for (const auto& r : regions) expected_total += moments(r.total).mean;
  CHECK(expected_total == doctest::Approx(100.0).epsilon(1e-4));
}

TEST_CASE("group expected totals are linear in membership and existence") {
  Rng rng(25);
  RegionPartition part = RegionPartition::grid2d(0, 0, 10, 10, 2, 2);
  std::vector<ProbTuple> tuples;
  for (int i = 0; i < 8; ++i) {
    GaussianND loc(2, {rng.uniform(1, 9), rng.uniform(1, 9)},
                   {rng.uniform(0.1, 1.0), 0.0, 0.0, rng.uniform(0.1, 1.0)});
    tuples.push_back(make_base_tuple(i, {{"loc", UncertainValue(loc)},
                                         {"weight", UncertainValue(Gaussian1D(50, 16))}},
                                     rng.uniform(0.5, 1.0)));
  }
  auto regions = group_by_region_sum(span_of(tuples), "loc", part, "weight", 1e6, 0.99);
  for (const auto& r : regions) {
    double expected = 0.0;
    const auto& box = part.boxes[static_cast<size_t>(r.region_id)];
    for (const auto& t : tuples) {
      const auto& g = std::get<GaussianND>(t.dist("loc"));
      double p = 1.0;
      for (size_t a = 0; a < 2; ++a)
        p *= norm_cdf(box.bounds[a].hi, g.mean[a], g.cov[a * 2 + a]) -
             norm_cdf(box.bounds[a].lo, g.mean[a], g.cov[a * 2 + a]);
      expected += p * t.existence * 50.0;
    }
    CHECK(moments(r.total).mean == doctest::Approx(expected).epsilon(1e-4));
  }
}

// ---------------------------------------------------------------------------

TEST_CASE("match_probability: point locations") {
  WeightedSamples a(3, {1.0, 1.0, 1.0}, {1.0});
  WeightedSamples b(3, {1.0, 1.0, 1.0}, {1.0});
  CHECK(match_probability(a, b, 0.5) == doctest::Approx(1.0));
  WeightedSamples far(3, {11.0, 1.0, 1.0}, {1.0});
  CHECK(match_probability(a, far, 1.0) == doctest::Approx(0.0));
}

TEST_CASE("match_probability: iid standard 3-D Gaussians against chi-square") {
  GaussianND a(3, {0, 0, 0}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  GaussianND b = a;
  const double p = match_probability(a, b, 1.0);
  // |X - Y|^2 / 2 ~ chi^2_3, so P(|X - Y| <= 1) = P(chi2_3 <= 0.5).
  CHECK(p == doctest::Approx(oracles::chi2_3_cdf(0.5)).epsilon(1e-4));

  JoinConfig mc_cfg;
  mc_cfg.seed = 99;
  Rng rng(99);
  int hits = 0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    double d2 = 0.0;
    for (int axis = 0; axis < 3; ++axis) {
      const double d = rng.normal() - rng.normal();
      d2 += d * d;
    }
    if (d2 <= 1.0) ++hits;
  }
  CHECK(std::fabs(p - static_cast<double>(hits) / n) <= 0.005);
}

TEST_CASE("match_probability anisotropic quadrature agrees with Monte Carlo") {
  Rng rng(111);
  for (int round = 0; round < 5; ++round) {
    std::vector<double> ca(3), cb(3);
    for (int i = 0; i < 3; ++i) {
      ca[static_cast<size_t>(i)] = rng.uniform(-1.5, 1.5);
      cb[static_cast<size_t>(i)] = rng.uniform(-1.5, 1.5);
    }
    auto rand_cov = [&](double scale) {
      const double a = rng.uniform(0.2, scale), b = rng.uniform(0.2, scale),
                   c = rng.uniform(0.2, scale);
      return std::vector<double>{a, 0, 0, 0, b, 0, 0, 0, c};
    };
    GaussianND A(3, ca, rand_cov(1.5));
    GaussianND B(3, cb, rand_cov(1.0));
    const double eps = rng.uniform(0.5, 2.5);
    const double p = match_probability(A, B, eps);

    Rng mc(777 + static_cast<uint64_t>(round));
    int hits = 0;
    const int n = 400000;
    for (int i = 0; i < n; ++i) {
      const auto xa = sample_vector(A, mc);
      const auto xb = sample_vector(B, mc);
      double d2 = 0.0;
      for (int k = 0; k < 3; ++k) d2 += (xa[static_cast<size_t>(k)] - xb[static_cast<size_t>(k)]) *
                                        (xa[static_cast<size_t>(k)] - xb[static_cast<size_t>(k)]);
      if (d2 <= eps * eps) ++hits;
    }
    CHECK(std::fabs(p - static_cast<double>(hits) / n) <= 0.005);
  }
}

TEST_CASE("match_probability is symmetric") {
  Rng rng(222);
  for (int round = 0; round < 5; ++round) {
    GaussianND a(2, {rng.uniform(-1, 1), rng.uniform(-1, 1)},
                 {rng.uniform(0.2, 2.0), 0, 0, rng.uniform(0.2, 2.0)});
    GaussianND b(2, {rng.uniform(-1, 1), rng.uniform(-1, 1)},
                 {rng.uniform(0.2, 2.0), 0, 0, rng.uniform(0.2, 2.0)});
    const double eps = rng.uniform(0.3, 2.0);
    CHECK(match_probability(a, b, eps) == doctest::Approx(match_probability(b, a, eps)).epsilon(1e-9));
  }
}

TEST_CASE("join_prob_equal merges attributes, existence, and lineage") {
  std::vector<ProbTuple> left, right;
  GaussianND la(3, {1, 1, 1}, {0.01, 0, 0, 0, 0.01, 0, 0, 0, 0.01});
  left.push_back(make_base_tuple(1.0, {{"loc", UncertainValue(la)}, {"tag_id", 7.0}}));
  GaussianND ra(3, {1.1, 1.0, 1.0}, {0.01, 0, 0, 0, 0.01, 0, 0, 0, 0.01});
  right.push_back(make_base_tuple(2.0, {{"loc", UncertainValue(ra)},
                                        {"temp", UncertainValue(Gaussian1D(80, 4))}},
                                  0.9));
  JoinConfig cfg;
  cfg.epsilon = 1.0;
  cfg.match_threshold = 0.5;
  auto joined = join_prob_equal(span_of(left), span_of(right), "loc", "loc", cfg);
  REQUIRE(joined.size() == 1);
  const ProbTuple& j = joined[0];
  CHECK(j.has_attr("temp"));
  CHECK(j.has_attr("right_loc"));
  CHECK(j.ts == 2.0);
  const double p = match_probability(la, ra, 1.0);
  CHECK(j.existence == doctest::Approx(0.9 * p).epsilon(1e-9));
  std::set<uint64_t> expected = left[0].lineage;
  expected.insert(right[0].lineage.begin(), right[0].lineage.end());
  CHECK(j.lineage == expected);

  // Far locations never match.
  std::vector<ProbTuple> far;
  GaussianND fa(3, {9, 9, 9}, {0.01, 0, 0, 0, 0.01, 0, 0, 0, 0.01});
  far.push_back(make_base_tuple(1.0, {{"loc", UncertainValue(fa)}}));
  CHECK(join_prob_equal(span_of(far), span_of(right), "loc", "loc", cfg).empty());
}

// ---------------------------------------------------------------------------

TEST_CASE("archive resolves and evicts by watermark age") {
  BaseTupleArchive archive(10.0);
  ProbTuple t = make_base_tuple(0.0, {{"v", 1.0}});
  archive.insert(t);
  CHECK(archive.resolve(t.id).id == t.id);
  archive.advance_watermark(5.0);
  CHECK(archive.find(t.id) != nullptr);
  archive.advance_watermark(20.0);
  CHECK(archive.find(t.id) == nullptr);
  CHECK_THROWS_AS(archive.resolve(t.id), ArchiveMissError);
}

TEST_CASE("lineage_aware_agg reduces to the independent path on disjoint inputs") {
  Rng rng(31);
  BaseTupleArchive archive;
  std::vector<ProbTuple> tuples;
  for (int i = 0; i < 10; ++i) {
    ProbTuple t = tuple_with("v", random_mixture(rng), i);
    archive.insert(t);
    tuples.push_back(t);
  }
  ProbTuple lineage_result = lineage_aware_agg(span_of(tuples), "v", archive, AggOp::Sum);
  AggConfig cfg;
  ProbTuple direct = agg_sum(span_of(tuples), "v", cfg);
  CHECK(variance_distance(lineage_result.dist("v"), direct.dist("v")) <= 1e-6);
}

TEST_CASE("perfectly correlated affine tuples collapse exactly: 2X + 3X = 5X") {
  BaseTupleArchive archive;
  ProbTuple base = tuple_with("v", Gaussian1D(0, 1));
  archive.insert(base);
  ProbTuple t2 = transform_delta(base, "v", TransformFn::make_affine(2.0, 0.0));
  ProbTuple t3 = transform_delta(base, "v", TransformFn::make_affine(3.0, 0.0));
  std::vector<ProbTuple> tuples = {t2, t3};
  ProbTuple out = lineage_aware_agg(span_of(tuples), "v", archive, AggOp::Sum);
  const Moments m = moments(out.dist("v"));
  CHECK(std::fabs(m.mean - 0.0) <= 1e-3);
  CHECK(std::fabs(m.var - 25.0) <= 1e-3);
  std::set<uint64_t> expected = {base.id};
  CHECK(out.lineage == expected);
}

TEST_CASE("mixed correlated and independent inputs match a joint Monte Carlo") {
  Rng rng(41);
  BaseTupleArchive archive;
  std::vector<ProbTuple> tuples;
  std::vector<UncertainValue> indep_dists;
  // One shared pair: 1.5*X + (X - 2) with X ~ N(1, 2).
  ProbTuple base = tuple_with("v", Gaussian1D(1, 2));
  archive.insert(base);
  tuples.push_back(transform_delta(base, "v", TransformFn::make_affine(1.5, 0.0)));
  tuples.push_back(transform_delta(base, "v", TransformFn::make_affine(1.0, -2.0)));
  for (int i = 0; i < 8; ++i) {
    ProbTuple t = tuple_with("v", random_mixture(rng), 10 + i);
    archive.insert(t);
    tuples.push_back(t);
    indep_dists.push_back(t.dist("v"));
  }
  ProbTuple out = lineage_aware_agg(span_of(tuples), "v", archive, AggOp::Sum);

  Rng mc(4242);
  std::vector<double> draws(1000000);
  for (auto& d : draws) {
    const double x = mc.normal(1.0, std::sqrt(2.0));
    double acc = 1.5 * x + (x - 2.0);
    for (const auto& dist : indep_dists) acc += sample_scalar(dist, mc);
    d = acc;
  }
  CHECK(oracles::tv_vs_samples(out.dist("v"), draws) <= 0.03);
}

TEST_CASE("lineage_aware_agg error paths") {
  BaseTupleArchive archive;
  ProbTuple base = tuple_with("v", Gaussian1D(0, 1));
  // Base never archived -> archive miss.
  std::vector<ProbTuple> tuples = {base};
  CHECK_THROWS_AS(lineage_aware_agg(span_of(tuples), "v", archive, AggOp::Sum), ArchiveMissError);

  archive.insert(base);
  // A non-replayable derivation in a correlated group is rejected.
  ProbTuple opaque = transform_delta(
      base, "v", TransformFn::make_scalar([](double x) { return x * x * x; },
                                          [](double x) { return 3.0 * x * x; }));
  ProbTuple affine = transform_delta(base, "v", TransformFn::make_affine(2.0, 0.0));
  std::vector<ProbTuple> group = {opaque, affine};
  CHECK_THROWS_AS(lineage_aware_agg(span_of(group), "v", archive, AggOp::Sum),
                  UnsupportedLineageError);
}

TEST_CASE("lineage_aware_agg max path") {
  BaseTupleArchive archive;
  ProbTuple base = tuple_with("v", Gaussian1D(0, 1));
  archive.insert(base);
  // max(2X, X + 1) with shared X plus one independent tuple.
  ProbTuple t2 = transform_delta(base, "v", TransformFn::make_affine(2.0, 0.0));
  ProbTuple t3 = transform_delta(base, "v", TransformFn::make_affine(1.0, 1.0));
  ProbTuple indep = tuple_with("v", Gaussian1D(0.5, 0.5), 5);
  archive.insert(indep);
  std::vector<ProbTuple> tuples = {t2, t3, indep};
  ops::McConfig mc;
  mc.samples = 200000;
  ProbTuple out = lineage_aware_agg(span_of(tuples), "v", archive, AggOp::Max, mc);

  Rng check(888);
  std::vector<double> draws(400000);
  for (auto& d : draws) {
    const double x = check.normal();
    d = std::max({2.0 * x, x + 1.0, check.normal(0.5, std::sqrt(0.5))});
  }
  CHECK(std::fabs(moments(out.dist("v")).mean - oracles::mean_of(draws)) <= 0.02);
}

TEST_CASE("output lineage is exactly the union of input lineages") {
  Rng rng(55);
  std::vector<ProbTuple> tuples;
  std::set<uint64_t> expected;
  for (int i = 0; i < 6; ++i) {
    ProbTuple t = tuple_with("v", Gaussian1D(rng.uniform(-1, 1), 1.0), i);
    expected.insert(t.lineage.begin(), t.lineage.end());
    tuples.push_back(t);
  }
  AggConfig cfg;
  CHECK(agg_sum(span_of(tuples), "v", cfg).lineage == expected);
  CHECK(agg_max(span_of(tuples), "v").lineage == expected);
}
