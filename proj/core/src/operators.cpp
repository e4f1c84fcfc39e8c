#include "ustream/operators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "ustream/linalg.hpp"
#include "ustream/random.hpp"

namespace ustream::ops {

namespace {

// Scalars participate in distribution-typed operators as point masses.
UncertainValue attr_as_value(const ProbTuple& t, const std::string& attr) {
  const AttrValue& v = t.attr(attr);
  if (const auto* d = std::get_if<double>(&v)) return PointMass{*d};
  if (const auto* u = std::get_if<UncertainValue>(&v)) return *u;
  throw InputError("attribute '" + attr + "' is not numeric");
}

void require_existence_one(std::span<const ProbTuple> tuples) {
  for (const auto& t : tuples)
    if (t.existence < 1.0 - 1e-12)
      throw MethodError("aggregation requires existence 1; use group_by_region_sum thinning");
}

void require_disjoint_lineages(std::span<const ProbTuple> tuples) {
  size_t total = 0;
  std::set<uint64_t> all;
  for (const auto& t : tuples) {
    total += t.lineage.size();
    all.insert(t.lineage.begin(), t.lineage.end());
  }
  if (all.size() != total)
    throw CorrelationError("overlapping lineages; use lineage_aware_agg");
}

std::set<uint64_t> lineage_union(std::span<const ProbTuple> tuples) {
  std::set<uint64_t> out;
  for (const auto& t : tuples) out.insert(t.lineage.begin(), t.lineage.end());
  return out;
}

double max_ts(std::span<const ProbTuple> tuples) {
  double ts = -std::numeric_limits<double>::infinity();
  for (const auto& t : tuples) ts = std::max(ts, t.ts);
  return ts;
}

// a*X + b on a descriptor, collapsing Gaussian and point-mass leaves exactly.
CharFn cf_affine(double a, double b, const CharFn& cf) {
  if (cf.kind() == CharFn::Kind::Gaussian)
    return CharFn::gaussian(a * cf.gaussian_mean() + b, a * a * cf.gaussian_var());
  if (cf.kind() == CharFn::Kind::PointMass)
    return CharFn::point_mass(a * cf.point_value() + b);
  CharFn out = (a == 1.0) ? cf : CharFn::scaled(a, cf);
  if (b != 0.0) out = CharFn::shifted(b, out);
  return out;
}

UncertainValue value_of_cf_result(const CharFn& cf, int grid_points,
                                  const std::optional<GridSpec>& grid) {
  if (cf.kind() == CharFn::Kind::Gaussian)
    return Gaussian1D(cf.gaussian_mean(), cf.gaussian_var());
  if (cf.kind() == CharFn::Kind::PointMass) return PointMass{cf.point_value()};
  const GridSpec spec = grid ? *grid : GridSpec::for_cf(cf, grid_points);
  return cf_invert(cf, spec);
}

}  // namespace

// ---------------------------------------------------------------------------

std::optional<ProbTuple> select_filter(const ProbTuple& t, const std::string& attr,
                                       const RangePredicate& pred, double tau,
                                       SelectStats* stats) {
  const AttrValue& v = t.attr(attr);
  if (const auto* scalar = std::get_if<double>(&v)) {
    if (pred.contains(*scalar)) {
      ProbTuple out = t;
      out.id = next_tuple_id();
      return out;
    }
    if (stats) ++stats->dropped_scalar;
    return std::nullopt;
  }
  const UncertainValue& dist = t.dist(attr);
  TruncateResult tr;
  try {
    tr = truncate(dist, pred);
  } catch (const ZeroMassError&) {
    if (stats) ++stats->dropped_zero_mass;
    return std::nullopt;
  }
  const double existence = t.existence * tr.mass;
  if (existence < tau) {
    if (stats) ++stats->dropped_threshold;
    return std::nullopt;
  }
  ProbTuple out = t;
  out.id = next_tuple_id();
  out.existence = existence;
  out.attrs[attr] = std::move(tr.conditional);
  Derivation d;
  d.kind = Derivation::Kind::Truncated;
  d.source = t.id;
  d.source_attr = attr;
  out.derivations[attr] = d;
  return out;
}

// ---------------------------------------------------------------------------

TransformFn TransformFn::make_affine(double a, double b) {
  TransformFn fn;
  fn.affine = true;
  fn.a = a;
  fn.b = b;
  fn.g = [a, b](double x) { return a * x + b; };
  fn.dg = [a](double) { return a; };
  return fn;
}

TransformFn TransformFn::make_scalar(std::function<double(double)> g,
                                     std::function<double(double)> dg) {
  TransformFn fn;
  fn.g = std::move(g);
  fn.dg = std::move(dg);
  return fn;
}

ProbTuple transform_delta(const ProbTuple& t, const std::string& attr, const TransformFn& fn,
                          TransformStats* stats) {
  const UncertainValue& dist = t.dist(attr);
  Gaussian1D result(0.0, defaults::var_floor);
  if (const auto* g1 = std::get_if<Gaussian1D>(&dist)) {
    if (fn.affine) {
      result = Gaussian1D(fn.a * g1->mean + fn.b, fn.a * fn.a * g1->var);
    } else {
      if (!fn.g || !fn.dg) throw ParameterError("transform needs g and its derivative");
      const double slope = fn.dg(g1->mean);
      if (slope == 0.0 && g1->var > defaults::var_floor && stats) ++stats->degenerate_gradient;
      result = Gaussian1D(fn.g(g1->mean), slope * slope * g1->var);
    }
  } else if (const auto* gnd = std::get_if<GaussianND>(&dist)) {
    if (!fn.g_nd || !fn.grad_nd)
      throw ParameterError("multivariate transform needs g_nd and grad_nd");
    const std::vector<double>& mu = gnd->mean;
    const std::vector<double> grad = fn.grad_nd(std::span<const double>(mu.data(), mu.size()));
    if (grad.size() != static_cast<size_t>(gnd->dim))
      throw ParameterError("gradient dimension mismatch");
    double var = 0.0;
    for (int i = 0; i < gnd->dim; ++i)
      for (int j = 0; j < gnd->dim; ++j)
        var += grad[static_cast<size_t>(i)] * gnd->cov[static_cast<size_t>(i) * gnd->dim + j] *
               grad[static_cast<size_t>(j)];
    bool all_zero = true;
    for (double gcomp : grad) all_zero = all_zero && gcomp == 0.0;
    if (all_zero && stats) ++stats->degenerate_gradient;
    result = Gaussian1D(fn.g_nd(std::span<const double>(mu.data(), mu.size())), var);
  } else {
    throw MethodError("transform_delta needs a Gaussian or GaussianND attribute");
  }

  ProbTuple out = t;
  out.id = next_tuple_id();
  out.attrs[attr] = UncertainValue(result);
  Derivation d;
  if (fn.affine) {
    d.kind = Derivation::Kind::Affine;
    d.scale = fn.a;
    d.offset = fn.b;
    d.source = t.id;
    d.source_attr = attr;
    // Compose with an existing affine chain so replay always reaches a base.
    auto prev = t.derivations.find(attr);
    if (prev != t.derivations.end()) {
      const Derivation& p = prev->second;
      if (p.kind == Derivation::Kind::Affine || p.kind == Derivation::Kind::Merged) {
        d.source = p.source;
        d.source_attr = p.source_attr;
        d.scale = fn.a * p.scale;
        d.offset = fn.a * p.offset + fn.b;
      } else if (p.kind != Derivation::Kind::Base) {
        d.kind = Derivation::Kind::Opaque;
      }
    }
  } else {
    d.kind = Derivation::Kind::Opaque;
    d.source = t.id;
    d.source_attr = attr;
  }
  out.derivations[attr] = d;
  return out;
}

// ---------------------------------------------------------------------------

WindowAssigner::WindowAssigner(WindowSpec spec, double disorder_bound)
    : spec_(spec), disorder_(disorder_bound) {
  if (spec_.mode == WindowSpec::Mode::Now) {
    if (spec_.range != 0.0) throw ParameterError("NOW windows must have range 0");
  } else {
    if (!(spec_.slide > 0.0)) throw ParameterError("window slide must be positive");
    if (spec_.range < 0.0) throw ParameterError("window range must be >= 0");
  }
}

std::vector<WindowClosure> WindowAssigner::close_up_to(double watermark) {
  std::vector<WindowClosure> out;
  while (!open_.empty()) {
    auto it = open_.begin();
    const double end = static_cast<double>(it->first) * spec_.slide;
    if (end > watermark) break;
    out.push_back({it->first, end, std::move(it->second)});
    closed_up_to_ = std::max(closed_up_to_, it->first);
    open_.erase(it);
  }
  if (watermark > -std::numeric_limits<double>::infinity()) {
    const int64_t idx = static_cast<int64_t>(std::floor(watermark / spec_.slide + 1e-9));
    closed_up_to_ = std::max(closed_up_to_, idx);
  }
  return out;
}

std::vector<WindowClosure> WindowAssigner::push(ProbTuple t) {
  if (spec_.mode == WindowSpec::Mode::Now) {
    WindowClosure c;
    c.window_id = now_seq_++;
    c.window_end = t.ts;
    c.members.push_back(std::move(t));
    return {c};
  }
  const double ts = t.ts;
  // Containing windows (T - range, T]: slide multiples T with T >= ts and
  // T - range < ts.
  const int64_t first = static_cast<int64_t>(std::ceil(ts / spec_.slide - 1e-9));
  int64_t last = static_cast<int64_t>(std::ceil((ts + spec_.range) / spec_.slide - 1e-9)) - 1;
  if (last < first) last = first;  // range < slide: tuple lives in one window
  bool placed = false;
  for (int64_t w = std::max(first, closed_up_to_ + 1); w <= last; ++w) {
    open_[w].push_back(t);
    placed = true;
  }
  if (!placed) {
    ++late_;
    late_tuples_.push_back(std::move(t));
    return {};
  }
  watermark_ = std::max(watermark_, ts - disorder_);
  return close_up_to(watermark_);
}

std::vector<WindowClosure> WindowAssigner::flush() {
  if (spec_.mode == WindowSpec::Mode::Now) return {};
  return close_up_to(std::numeric_limits<double>::infinity());
}

// ---------------------------------------------------------------------------

namespace {

std::vector<CharFn> attr_cfs(std::span<const ProbTuple> tuples, const std::string& attr) {
  std::vector<CharFn> cfs;
  cfs.reserve(tuples.size());
  for (const auto& t : tuples) cfs.push_back(cf_of(attr_as_value(t, attr)));
  return cfs;
}

ProbTuple make_agg_tuple(std::span<const ProbTuple> tuples, const std::string& attr,
                         UncertainValue result) {
  ProbTuple out;
  out.id = next_tuple_id();
  out.ts = max_ts(tuples);
  out.attrs[attr] = std::move(result);
  out.existence = 1.0;
  out.lineage = lineage_union(tuples);
  return out;
}

UncertainValue hist_sample_sum(std::span<const ProbTuple> tuples, const std::string& attr,
                               const AggConfig& cfg, double divisor) {
  const int bins = std::max(cfg.hist_bins, 1);
  std::vector<std::vector<double>> reps(tuples.size());
  for (size_t i = 0; i < tuples.size(); ++i) {
    const UncertainValue v = attr_as_value(tuples[i], attr);
    reps[i].resize(static_cast<size_t>(bins));
    for (int j = 0; j < bins; ++j) {
      const double p = (static_cast<double>(j) + 0.5) / static_cast<double>(bins);
      reps[i][static_cast<size_t>(j)] = quantile(v, p);
    }
  }
  Rng rng(cfg.seed);
  std::vector<double> draws(static_cast<size_t>(cfg.hist_samples));
  for (int s = 0; s < cfg.hist_samples; ++s) {
    double acc = 0.0;
    for (const auto& r : reps) acc += r[static_cast<size_t>(rng.below(static_cast<uint64_t>(bins)))];
    draws[static_cast<size_t>(s)] = acc / divisor;
  }
  return WeightedSamples::uniform_scalar(std::move(draws));
}

UncertainValue sum_by_method(std::span<const ProbTuple> tuples, const std::string& attr,
                             const AggConfig& cfg, double divisor) {
  switch (cfg.method) {
    case SumMethod::CfInvert: {
      CharFn prod = cf_product(attr_cfs(tuples, attr));
      if (divisor != 1.0) prod = cf_affine(1.0 / divisor, 0.0, prod);
      // Fully collapsed products are their own exact inversion.
      if (prod.kind() == CharFn::Kind::Gaussian)
        return Gaussian1D(prod.gaussian_mean(), prod.gaussian_var());
      if (prod.kind() == CharFn::Kind::PointMass) return PointMass{prod.point_value()};
      const GridSpec spec = cfg.grid ? *cfg.grid : GridSpec::for_cf(prod, cfg.grid_points);
      return cf_invert(prod, spec);
    }
    case SumMethod::CfFit: {
      CharFn prod = cf_product(attr_cfs(tuples, attr));
      if (divisor != 1.0) prod = cf_affine(1.0 / divisor, 0.0, prod);
      if (prod.kind() == CharFn::Kind::Gaussian)
        return GaussianMixture({{1.0, prod.gaussian_mean(), prod.gaussian_var()}});
      CfFitConfig fit_cfg;
      fit_cfg.seed = cfg.seed;
      return cf_fit_gmm(prod, cfg.fit_k, fit_cfg).gmm;
    }
    case SumMethod::Clt: {
      if (static_cast<int>(tuples.size()) < cfg.clt_min)
        throw MethodError("CLT requires at least clt_min summands");
      double mean = 0.0, var = 0.0;
      for (const auto& t : tuples) {
        const Moments m = moments(attr_as_value(t, attr));
        mean += m.mean;
        var += m.var;
      }
      return Gaussian1D(mean / divisor, var / (divisor * divisor));
    }
    case SumMethod::HistSample:
      return hist_sample_sum(tuples, attr, cfg, divisor);
  }
  throw MethodError("unknown aggregation method");
}

}  // namespace

ProbTuple agg_sum(std::span<const ProbTuple> tuples, const std::string& attr,
                  const AggConfig& cfg) {
  if (tuples.empty()) throw InputError("agg_sum needs at least one tuple");
  require_existence_one(tuples);
  require_disjoint_lineages(tuples);
  return make_agg_tuple(tuples, attr, sum_by_method(tuples, attr, cfg, 1.0));
}

ProbTuple agg_avg(std::span<const ProbTuple> tuples, const std::string& attr,
                  const AggConfig& cfg) {
  if (tuples.empty()) throw InputError("agg_avg needs at least one tuple");
  require_existence_one(tuples);
  require_disjoint_lineages(tuples);
  return make_agg_tuple(tuples, attr,
                        sum_by_method(tuples, attr, cfg, static_cast<double>(tuples.size())));
}

ProbTuple agg_count(std::span<const ProbTuple> tuples, const std::string& attr) {
  require_existence_one(tuples);
  ProbTuple out;
  out.id = next_tuple_id();
  out.ts = tuples.empty() ? 0.0 : max_ts(tuples);
  out.attrs[attr] = static_cast<double>(tuples.size());
  out.lineage = tuples.empty() ? std::set<uint64_t>{out.id} : lineage_union(tuples);
  return out;
}

namespace {

UncertainValue max_distribution(const std::vector<UncertainValue>& values, int grid_points) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& v : values) {
    const Interval s = support_bounds(v);
    lo = std::min(lo, s.lo);
    hi = std::max(hi, s.hi);
  }
  const double pad = std::max(1e-9, 1e-6 * (hi - lo));
  lo -= pad;
  hi += pad;
  const int n = std::max(grid_points, 64);
  const double dx = (hi - lo) / (n - 1);
  std::vector<double> cdf(static_cast<size_t>(n), 1.0);
  for (const auto& v : values)
    for (int j = 0; j < n; ++j) cdf[static_cast<size_t>(j)] *= cdf_at(v, lo + j * dx);
  std::vector<double> dens(static_cast<size_t>(n), 0.0);
  for (int j = 0; j < n; ++j) {
    if (j == 0) dens[0] = (cdf[1] - cdf[0]) / dx;
    else if (j == n - 1) dens[static_cast<size_t>(j)] = (cdf[static_cast<size_t>(j)] - cdf[static_cast<size_t>(j) - 1]) / dx;
    else dens[static_cast<size_t>(j)] = (cdf[static_cast<size_t>(j) + 1] - cdf[static_cast<size_t>(j) - 1]) / (2.0 * dx);
  }
  return GridPdf::from_raw(lo, dx, std::move(dens));
}

}  // namespace

ProbTuple agg_max(std::span<const ProbTuple> tuples, const std::string& attr, int grid_points) {
  if (tuples.empty()) throw InputError("agg_max needs at least one tuple");
  require_existence_one(tuples);
  require_disjoint_lineages(tuples);
  std::vector<UncertainValue> values;
  values.reserve(tuples.size());
  for (const auto& t : tuples) values.push_back(attr_as_value(t, attr));
  return make_agg_tuple(tuples, attr, max_distribution(values, grid_points));
}

ProbTuple agg_min(std::span<const ProbTuple> tuples, const std::string& attr, int grid_points) {
  if (tuples.empty()) throw InputError("agg_min needs at least one tuple");
  require_existence_one(tuples);
  require_disjoint_lineages(tuples);
  std::vector<UncertainValue> values;
  values.reserve(tuples.size());
  for (const auto& t : tuples) values.push_back(negated(attr_as_value(t, attr)));
  UncertainValue max_neg = max_distribution(values, grid_points);
  return make_agg_tuple(tuples, attr, negated(max_neg));
}

// ---------------------------------------------------------------------------

bool RegionBox::contains(std::span<const double> point) const {
  for (size_t a = 0; a < bounds.size(); ++a) {
    if (a >= point.size()) return false;
    if (point[a] < bounds[a].lo || point[a] > bounds[a].hi) return false;
  }
  return true;
}

RegionPartition RegionPartition::grid2d(double x0, double y0, double w, double h, int nx, int ny) {
  if (nx < 1 || ny < 1 || !(w > 0.0) || !(h > 0.0))
    throw ParameterError("invalid region grid");
  RegionPartition p;
  const double cw = w / nx, ch = h / ny;
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix)
      p.boxes.push_back({iy * nx + ix,
                         {{x0 + ix * cw, x0 + (ix + 1) * cw}, {y0 + iy * ch, y0 + (iy + 1) * ch}}});
  return p;
}

void RegionPartition::validate() const {
  if (boxes.empty()) throw ParameterError("partition needs at least one region");
  const size_t axes = boxes.front().bounds.size();
  for (const auto& b : boxes) {
    if (b.bounds.size() != axes) throw ParameterError("regions must share axis count");
    for (const auto& iv : b.bounds)
      if (!(iv.hi > iv.lo)) throw ParameterError("region bounds must be nonempty");
  }
  for (size_t i = 0; i < boxes.size(); ++i) {
    for (size_t j = i + 1; j < boxes.size(); ++j) {
      bool overlap = true;
      for (size_t a = 0; a < axes; ++a) {
        const auto& u = boxes[i].bounds[a];
        const auto& v = boxes[j].bounds[a];
        if (u.hi <= v.lo + 1e-12 || v.hi <= u.lo + 1e-12) {
          overlap = false;
          break;
        }
      }
      if (overlap) throw ParameterError("regions must be pairwise disjoint");
    }
  }
}

namespace {

// Probability mass of the location inside the box; axis-aligned Gaussians use
// the product of marginal error-function integrals, samples use the weighted
// in-box fraction.
double region_membership(const UncertainValue& loc, const RegionBox& box) {
  const size_t axes = box.bounds.size();
  if (const auto* g = std::get_if<GaussianND>(&loc)) {
    if (static_cast<size_t>(g->dim) < axes)
      throw DimensionError("location dimension below region axis count");
    double p = 1.0;
    for (size_t a = 0; a < axes; ++a) {
      const double mu = g->mean[a];
      const double var = std::max(g->cov[a * static_cast<size_t>(g->dim) + a], defaults::var_floor);
      p *= norm_cdf(box.bounds[a].hi, mu, var) - norm_cdf(box.bounds[a].lo, mu, var);
    }
    return p;
  }
  if (const auto* s = std::get_if<WeightedSamples>(&loc)) {
    if (static_cast<size_t>(s->dim) < axes)
      throw DimensionError("location dimension below region axis count");
    double p = 0.0;
    std::vector<double> point(axes);
    for (size_t i = 0; i < s->size(); ++i) {
      for (size_t a = 0; a < axes; ++a) point[a] = s->value(i, static_cast<int>(a));
      if (box.contains(point)) p += s->weights[i];
    }
    return p;
  }
  throw InputError("group-by location must be GaussianND or multivariate samples");
}

}  // namespace

std::vector<RegionAggregate> group_by_region_sum(std::span<const ProbTuple> tuples,
                                                 const std::string& loc_attr,
                                                 const RegionPartition& partition,
                                                 const std::string& weight_attr,
                                                 double threshold, double alpha,
                                                 const GroupConfig& cfg, GroupStats* stats) {
  partition.validate();
  struct RegionAccum {
    std::vector<CharFn> factors;
    std::set<uint64_t> lineage;
  };
  std::map<int, RegionAccum> accums;
  for (const auto& t : tuples) {
    const UncertainValue loc = t.dist(loc_attr);
    const UncertainValue weight = attr_as_value(t, weight_attr);
    const CharFn weight_cf = cf_of(weight);
    double covered = 0.0;
    for (const auto& box : partition.boxes) {
      const double p = region_membership(loc, box);
      covered += p;
      const double q = p * t.existence;
      if (q < cfg.membership_eps) continue;
      RegionAccum& acc = accums[box.id];
      acc.factors.push_back(bernoulli_thin(std::min(q, 1.0), weight_cf));
      acc.lineage.insert(t.lineage.begin(), t.lineage.end());
    }
    if (stats && 1.0 - covered > 0.01) ++stats->coverage_warnings;
  }

  std::vector<RegionAggregate> out;
  for (auto& [region_id, acc] : accums) {
    CharFn total_cf = cf_product(acc.factors);
    RegionAggregate agg;
    agg.region_id = region_id;
    if (total_cf.kind() == CharFn::Kind::PointMass) {
      agg.total = PointMass{total_cf.point_value()};
      agg.exceed_prob = total_cf.point_value() > threshold ? 1.0 : 0.0;
    } else if (total_cf.kind() == CharFn::Kind::Gaussian) {
      Gaussian1D g(total_cf.gaussian_mean(), total_cf.gaussian_var());
      agg.exceed_prob = clamp01(1.0 - norm_cdf(threshold, g.mean, g.var));
      agg.total = g;
    } else {
      GridSpec spec;
      if (cfg.grid) {
        spec = *cfg.grid;
      } else {
        // Cover the zero atom (all contributors absent) in addition to the
        // mean +- 8 sd window required by the inversion, with 0 snapped onto
        // a grid node so its atom inverts exactly. The threshold itself needs
        // no coverage: the cdf is exactly 0/1 beyond the grid.
        const Moments m = cf_moments(total_cf);
        const double sd = std::sqrt(std::max(m.var, defaults::var_floor));
        double lo = std::min(0.0, m.mean - defaults::grid_sigmas * sd) - 1e-3 * sd;
        double hi = std::max(0.0, m.mean + defaults::grid_sigmas * sd) + 1e-3 * sd;
        const double dx = (hi - lo) / (cfg.grid_points - 2);
        const double x0 = std::floor(lo / dx) * dx;
        spec.n_points = cfg.grid_points;
        spec.center = x0 + 0.5 * cfg.grid_points * dx;
        spec.half_width = 0.5 * cfg.grid_points * dx;
      }
      // Two-cell smoothing: atoms off the grid lattice would otherwise leak
      // Dirichlet ringing across the whole grid, and the smoothing kernel
      // itself must decay within the sampled t-range (sd >= 2 dx).
      const double smooth_sd = 2.0 * spec.dx();
      const CharFn smoothed =
          cf_product({total_cf, CharFn::gaussian(0.0, smooth_sd * smooth_sd)});
      GridPdf total = cf_invert(smoothed, spec);
      agg.exceed_prob = clamp01(1.0 - cdf_at(UncertainValue(total), threshold));
      agg.total = std::move(total);
    }
    agg.alert = agg.exceed_prob > alpha;
    agg.lineage = std::move(acc.lineage);
    out.push_back(std::move(agg));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

double simpson(const std::function<double(double)>& f, double a, double b, int intervals) {
  if (!(b > a)) return 0.0;
  if (intervals % 2 != 0) ++intervals;
  const double h = (b - a) / intervals;
  double acc = f(a) + f(b);
  for (int i = 1; i < intervals; ++i) acc += f(a + i * h) * (i % 2 == 0 ? 2.0 : 4.0);
  return acc * h / 3.0;
}

// P(sum_i (Y_i)^2 <= r2) with independent Y_i ~ N(c_i, lam_i); axes with
// negligible variance contribute their fixed offset to the radius budget.
double gaussian_ball_prob(std::vector<double> c, std::vector<double> lam, double r2,
                          int nodes) {
  std::vector<double> cs, ls;
  for (size_t i = 0; i < c.size(); ++i) {
    if (lam[i] < 1e-9) {
      r2 -= c[i] * c[i];
    } else {
      cs.push_back(c[i]);
      ls.push_back(lam[i]);
    }
  }
  if (r2 < 0.0) return 0.0;
  const double r = std::sqrt(r2);
  if (cs.empty()) return 1.0;
  if (cs.size() == 1)
    return std::max(0.0, norm_cdf(r, cs[0], ls[0]) - norm_cdf(-r, cs[0], ls[0]));
  if (cs.size() == 2) {
    const double sd0 = std::sqrt(ls[0]);
    const double a = std::max(-r, cs[0] - 8.5 * sd0);
    const double b = std::min(r, cs[0] + 8.5 * sd0);
    auto f = [&](double y) {
      const double rem = r2 - y * y;
      if (rem <= 0.0) return 0.0;
      const double w = std::sqrt(rem);
      return norm_pdf(y, cs[0], ls[0]) *
             std::max(0.0, norm_cdf(w, cs[1], ls[1]) - norm_cdf(-w, cs[1], ls[1]));
    };
    return clamp01(simpson(f, a, b, nodes));
  }
  // Three active axes: outer quadrature over the first, 2-D ball inside.
  const double sd0 = std::sqrt(ls[0]);
  const double a = std::max(-r, cs[0] - 8.5 * sd0);
  const double b = std::min(r, cs[0] + 8.5 * sd0);
  auto f = [&](double y) {
    const double rem = r2 - y * y;
    if (rem <= 0.0) return 0.0;
    return norm_pdf(y, cs[0], ls[0]) *
           gaussian_ball_prob({cs[1], cs[2]}, {ls[1], ls[2]}, rem, nodes / 2);
  };
  return clamp01(simpson(f, a, b, nodes));
}

double gaussian_pair_match(const GaussianND& a, const GaussianND& b, double eps, int nodes) {
  if (a.dim != b.dim) throw DimensionError("join locations must share dimension");
  const int d = a.dim;
  std::vector<double> cov(static_cast<size_t>(d) * d);
  for (size_t i = 0; i < cov.size(); ++i) cov[i] = a.cov[i] + b.cov[i];
  std::vector<double> vals, vecs;
  linalg::sym_eigen(d, cov, vals, vecs);
  std::vector<double> diff(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i) diff[static_cast<size_t>(i)] = a.mean[static_cast<size_t>(i)] - b.mean[static_cast<size_t>(i)];
  std::vector<double> c(static_cast<size_t>(d), 0.0);
  for (int k = 0; k < d; ++k)
    for (int i = 0; i < d; ++i)
      c[static_cast<size_t>(k)] += vecs[static_cast<size_t>(i) * d + k] * diff[static_cast<size_t>(i)];
  return gaussian_ball_prob(c, vals, eps * eps, nodes);
}

double vec_dist2(std::span<const double> x, std::span<const double> y) {
  double acc = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace

double match_probability(const UncertainValue& a, const UncertainValue& b, double eps,
                         const JoinConfig& cfg) {
  if (!(eps >= 0.0)) throw ParameterError("epsilon must be >= 0");
  const auto* ga = std::get_if<GaussianND>(&a);
  const auto* gb = std::get_if<GaussianND>(&b);
  const auto* sa = std::get_if<WeightedSamples>(&a);
  const auto* sb = std::get_if<WeightedSamples>(&b);
  if (sa && sa->dim < 2) throw DimensionError("join locations must be multivariate");
  if (sb && sb->dim < 2) throw DimensionError("join locations must be multivariate");

  if (ga && gb) return gaussian_pair_match(*ga, *gb, eps, cfg.quad_nodes);

  const double eps2 = eps * eps;
  if (sa && sb) {
    if (sa->dim != sb->dim) throw DimensionError("join locations must share dimension");
    const size_t pairs = sa->size() * sb->size();
    if (pairs <= 262144) {
      double p = 0.0;
      std::vector<double> xa(static_cast<size_t>(sa->dim)), xb(static_cast<size_t>(sb->dim));
      for (size_t i = 0; i < sa->size(); ++i) {
        for (int ax = 0; ax < sa->dim; ++ax) xa[static_cast<size_t>(ax)] = sa->value(i, ax);
        for (size_t j = 0; j < sb->size(); ++j) {
          for (int ax = 0; ax < sb->dim; ++ax) xb[static_cast<size_t>(ax)] = sb->value(j, ax);
          if (vec_dist2(xa, xb) <= eps2) p += sa->weights[i] * sb->weights[j];
        }
      }
      return clamp01(p);
    }
  }
  if ((ga && sb) || (gb && sa)) {
    const GaussianND& g = ga ? *ga : *gb;
    const WeightedSamples& s = ga ? *sb : *sa;
    if (g.dim != s.dim) throw DimensionError("join locations must share dimension");
    if (s.size() <= 256) {
      double p = 0.0;
      for (size_t j = 0; j < s.size(); ++j) {
        GaussianND shifted = g;
        for (int ax = 0; ax < g.dim; ++ax)
          shifted.mean[static_cast<size_t>(ax)] -= s.value(j, ax);
        GaussianND origin(g.dim, std::vector<double>(static_cast<size_t>(g.dim), 0.0),
                          std::vector<double>(static_cast<size_t>(g.dim) * g.dim, 0.0));
        p += s.weights[j] * gaussian_pair_match(shifted, origin, eps, cfg.quad_nodes);
      }
      return clamp01(p);
    }
  }

  // Seeded Monte Carlo fallback.
  Rng rng(cfg.seed);
  uint64_t hits = 0;
  for (int i = 0; i < cfg.mc_samples; ++i) {
    const std::vector<double> xa = sample_vector(a, rng);
    const std::vector<double> xb = sample_vector(b, rng);
    if (xa.size() != xb.size()) throw DimensionError("join locations must share dimension");
    if (vec_dist2(xa, xb) <= eps2) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(cfg.mc_samples);
}

std::vector<ProbTuple> join_prob_equal(std::span<const ProbTuple> left,
                                       std::span<const ProbTuple> right,
                                       const std::string& left_loc, const std::string& right_loc,
                                       const JoinConfig& cfg) {
  std::vector<ProbTuple> out;
  for (const auto& l : left) {
    const UncertainValue& la = l.dist(left_loc);
    for (const auto& r : right) {
      const double p = match_probability(la, r.dist(right_loc), cfg.epsilon, cfg);
      if (p < cfg.match_threshold) continue;
      ProbTuple joined;
      joined.id = next_tuple_id();
      joined.ts = std::max(l.ts, r.ts);
      joined.existence = l.existence * r.existence * p;
      joined.attrs = l.attrs;
      joined.derivations = l.derivations;
      for (const auto& [name, value] : r.attrs) {
        const std::string key = joined.attrs.count(name) ? "right_" + name : name;
        joined.attrs[key] = value;
        Derivation d;
        d.kind = Derivation::Kind::Merged;
        d.source = r.id;
        d.source_attr = name;
        auto prev = r.derivations.find(name);
        if (prev != r.derivations.end()) {
          const Derivation& pd = prev->second;
          if (pd.kind == Derivation::Kind::Affine || pd.kind == Derivation::Kind::Merged) {
            d.source = pd.source;
            d.source_attr = pd.source_attr;
            d.scale = pd.scale;
            d.offset = pd.offset;
          } else if (pd.kind != Derivation::Kind::Base) {
            d.kind = Derivation::Kind::Opaque;
          }
        }
        joined.derivations[key] = d;
      }
      joined.lineage = l.lineage;
      joined.lineage.insert(r.lineage.begin(), r.lineage.end());
      out.push_back(std::move(joined));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

BaseTupleArchive::BaseTupleArchive(double retention_horizon) : horizon_(retention_horizon) {}

void BaseTupleArchive::insert(const ProbTuple& t) { tuples_[t.id] = t; }

const ProbTuple* BaseTupleArchive::find(uint64_t id) const {
  auto it = tuples_.find(id);
  return it == tuples_.end() ? nullptr : &it->second;
}

const ProbTuple& BaseTupleArchive::resolve(uint64_t id) const {
  const ProbTuple* t = find(id);
  if (!t) throw ArchiveMissError("lineage id " + std::to_string(id) + " not in archive");
  return *t;
}

void BaseTupleArchive::advance_watermark(double watermark) {
  if (!std::isfinite(horizon_)) return;
  for (auto it = tuples_.begin(); it != tuples_.end();) {
    if (it->second.ts < watermark - horizon_) it = tuples_.erase(it);
    else ++it;
  }
}

namespace {

struct AffineLink {
  bool ok = false;
  uint64_t base = 0;
  std::string attr;
  double scale = 1.0;
  double offset = 0.0;
};

AffineLink affine_link(const ProbTuple& t, const std::string& attr) {
  AffineLink link;
  auto it = t.derivations.find(attr);
  const Derivation d = it == t.derivations.end() ? Derivation{} : it->second;
  switch (d.kind) {
    case Derivation::Kind::Base:
      if (t.lineage.size() == 1 && *t.lineage.begin() == t.id) {
        link.ok = true;
        link.base = t.id;
        link.attr = attr;
      }
      break;
    case Derivation::Kind::Affine:
    case Derivation::Kind::Merged:
      link.ok = true;
      link.base = d.source;
      link.attr = d.source_attr;
      link.scale = d.scale;
      link.offset = d.offset;
      break;
    default:
      break;
  }
  return link;
}

struct UnionFind {
  std::vector<size_t> parent;
  explicit UnionFind(size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  size_t find(size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(size_t a, size_t b) { parent[find(a)] = find(b); }
};

}  // namespace

ProbTuple lineage_aware_agg(std::span<const ProbTuple> tuples, const std::string& attr,
                            const BaseTupleArchive& archive, AggOp op, const McConfig& mc) {
  if (tuples.empty()) throw InputError("lineage_aware_agg needs at least one tuple");
  require_existence_one(tuples);
  for (const auto& t : tuples)
    for (uint64_t id : t.lineage) archive.resolve(id);

  // Correlation groups by lineage overlap.
  UnionFind uf(tuples.size());
  std::unordered_map<uint64_t, size_t> owner;
  for (size_t i = 0; i < tuples.size(); ++i) {
    for (uint64_t id : tuples[i].lineage) {
      auto [it, inserted] = owner.emplace(id, i);
      if (!inserted) uf.unite(i, it->second);
    }
  }
  std::map<size_t, std::vector<size_t>> groups;
  for (size_t i = 0; i < tuples.size(); ++i) groups[uf.find(i)].push_back(i);

  std::vector<CharFn> sum_factors;
  std::vector<UncertainValue> max_values;
  Rng rng(mc.seed);
  for (const auto& [root, members] : groups) {
    if (members.size() == 1) {
      const UncertainValue v = attr_as_value(tuples[members[0]], attr);
      if (op == AggOp::Sum) sum_factors.push_back(cf_of(v));
      else max_values.push_back(v);
      continue;
    }
    // Exact collapse: every member is an affine image of one shared base.
    bool affine_ok = op == AggOp::Sum;
    uint64_t shared_base = 0;
    std::string shared_attr;
    double scale_sum = 0.0, offset_sum = 0.0;
    if (affine_ok) {
      for (size_t idx : members) {
        const AffineLink link = affine_link(tuples[idx], attr);
        if (!link.ok) {
          affine_ok = false;
          break;
        }
        if (shared_attr.empty()) {
          shared_base = link.base;
          shared_attr = link.attr;
        } else if (shared_base != link.base || shared_attr != link.attr) {
          affine_ok = false;
          break;
        }
        scale_sum += link.scale;
        offset_sum += link.offset;
      }
    }
    if (affine_ok) {
      const ProbTuple& base = archive.resolve(shared_base);
      sum_factors.push_back(cf_affine(scale_sum, offset_sum, cf_of(attr_as_value(base, shared_attr))));
      continue;
    }
    // Monte Carlo over the group's shared bases, replaying each member's
    // recorded derivation per draw.
    struct MemberPlan {
      uint64_t base;
      std::string attr;
      double scale, offset;
    };
    std::vector<MemberPlan> plans;
    std::vector<std::pair<uint64_t, std::string>> bases;
    for (size_t idx : members) {
      const AffineLink link = affine_link(tuples[idx], attr);
      if (!link.ok)
        throw UnsupportedLineageError("derivation of a correlated tuple is not re-executable");
      plans.push_back({link.base, link.attr, link.scale, link.offset});
      bases.emplace_back(link.base, link.attr);
    }
    std::sort(bases.begin(), bases.end());
    bases.erase(std::unique(bases.begin(), bases.end()), bases.end());
    std::vector<UncertainValue> base_dists;
    base_dists.reserve(bases.size());
    for (const auto& [id, battr] : bases)
      base_dists.push_back(attr_as_value(archive.resolve(id), battr));
    std::vector<double> draws(static_cast<size_t>(mc.samples));
    std::vector<double> base_vals(bases.size());
    for (int s = 0; s < mc.samples; ++s) {
      for (size_t bi = 0; bi < bases.size(); ++bi)
        base_vals[bi] = sample_scalar(base_dists[bi], rng);
      double acc = op == AggOp::Sum ? 0.0 : -std::numeric_limits<double>::infinity();
      for (const auto& plan : plans) {
        const size_t bi = static_cast<size_t>(
            std::lower_bound(bases.begin(), bases.end(), std::make_pair(plan.base, plan.attr)) -
            bases.begin());
        const double v = plan.scale * base_vals[bi] + plan.offset;
        if (op == AggOp::Sum) acc += v;
        else acc = std::max(acc, v);
      }
      draws[static_cast<size_t>(s)] = acc;
    }
    UncertainValue group_value = WeightedSamples::uniform_scalar(std::move(draws));
    if (op == AggOp::Sum) sum_factors.push_back(cf_of(group_value));
    else max_values.push_back(std::move(group_value));
  }

  UncertainValue result;
  if (op == AggOp::Sum) {
    const CharFn total = cf_product(sum_factors);
    result = value_of_cf_result(total, defaults::grid_points, std::nullopt);
  } else {
    if (max_values.size() == 1) result = std::move(max_values.front());
    else result = max_distribution(max_values, 2 * defaults::grid_points);
  }
  return make_agg_tuple(tuples, attr, std::move(result));
}

}  // namespace ustream::ops
