// Relational operators over probabilistic tuples: probabilistic selection,
// delta-method transforms, CQL-style window assignment, the four sum
// aggregation methods, order-statistics max/min, soft group-by over an
// uncertain location attribute, the epsilon-ball probabilistic join, and
// lineage-aware aggregation for correlated inputs.
#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ustream/charfn.hpp"
#include "ustream/fitting.hpp"
#include "ustream/tuple.hpp"

namespace ustream::ops {

// ---------------------------------------------------------------------------
// Selection.

struct SelectStats {
  uint64_t dropped_threshold = 0;  // existence fell below tau
  uint64_t dropped_zero_mass = 0;
  uint64_t dropped_scalar = 0;
};

// Truncates the attribute by the predicate, multiplies existence by the
// retained mass and replaces the attribute by the conditional distribution.
// Returns nothing when the tuple is dropped. Scalar attributes filter crisply.
std::optional<ProbTuple> select_filter(const ProbTuple& t, const std::string& attr,
                                       const RangePredicate& pred,
                                       double tau = defaults::drop_threshold,
                                       SelectStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Transform with the first-order delta method.

struct TransformFn {
  bool affine = false;
  double a = 1.0, b = 0.0;  // exact path for g(x) = a*x + b
  std::function<double(double)> g;
  std::function<double(double)> dg;
  // Multivariate versions for GaussianND inputs.
  std::function<double(std::span<const double>)> g_nd;
  std::function<std::vector<double>(std::span<const double>)> grad_nd;

  static TransformFn make_affine(double a, double b);
  static TransformFn make_scalar(std::function<double(double)> g, std::function<double(double)> dg);
};

struct TransformStats {
  uint64_t degenerate_gradient = 0;
};

ProbTuple transform_delta(const ProbTuple& t, const std::string& attr, const TransformFn& fn,
                          TransformStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Windowing.

struct WindowSpec {
  enum class Mode { Range, Now };
  Mode mode = Mode::Range;
  double range = 0.0;  // seconds
  double slide = 1.0;  // seconds, > 0
};

struct WindowClosure {
  int64_t window_id = 0;
  double window_end = 0.0;
  std::vector<ProbTuple> members;
};

// Assigns timestamp-ordered tuples (within the disorder bound) to sliding
// windows (T - range, T] that close once the watermark passes T. NOW mode
// yields one singleton window per tuple.
class WindowAssigner {
 public:
  WindowAssigner(WindowSpec spec, double disorder_bound = 0.0);

  std::vector<WindowClosure> push(ProbTuple t);
  std::vector<WindowClosure> flush();

  uint64_t late_count() const { return late_; }
  const std::vector<ProbTuple>& late_tuples() const { return late_tuples_; }
  double watermark() const { return watermark_; }

 private:
  std::vector<WindowClosure> close_up_to(double watermark);

  WindowSpec spec_;
  double disorder_;
  double watermark_ = -std::numeric_limits<double>::infinity();
  int64_t closed_up_to_ = std::numeric_limits<int64_t>::min();  // window index
  std::map<int64_t, std::vector<ProbTuple>> open_;
  uint64_t late_ = 0;
  std::vector<ProbTuple> late_tuples_;
  int64_t now_seq_ = 0;
};

// ---------------------------------------------------------------------------
// Aggregation over independent inputs.

enum class SumMethod { CfInvert, CfFit, Clt, HistSample };

struct AggConfig {
  SumMethod method = SumMethod::CfInvert;
  int fit_k = 3;
  int clt_min = defaults::clt_min_terms;
  int hist_bins = 16;
  int hist_samples = 20000;
  int grid_points = defaults::grid_points;
  std::optional<GridSpec> grid;  // overrides the automatic inversion grid
  uint64_t seed = 1;
};

// Sum of the attribute over all tuples. Inputs must be pairwise independent
// (disjoint lineages) and have existence 1; correlated inputs raise
// CorrelationError and belong in lineage_aware_agg.
ProbTuple agg_sum(std::span<const ProbTuple> tuples, const std::string& attr,
                  const AggConfig& cfg = {});
ProbTuple agg_avg(std::span<const ProbTuple> tuples, const std::string& attr,
                  const AggConfig& cfg = {});
ProbTuple agg_count(std::span<const ProbTuple> tuples, const std::string& attr);

// Maximum via the CDF product on a shared grid; minimum by negation.
ProbTuple agg_max(std::span<const ProbTuple> tuples, const std::string& attr,
                  int grid_points = 2 * defaults::grid_points);
ProbTuple agg_min(std::span<const ProbTuple> tuples, const std::string& attr,
                  int grid_points = 2 * defaults::grid_points);

// ---------------------------------------------------------------------------
// Probabilistic group-by over a region partition.

struct RegionBox {
  int id = 0;
  std::vector<Interval> bounds;  // one interval per axis
  bool contains(std::span<const double> point) const;
};

struct RegionPartition {
  std::vector<RegionBox> boxes;

  // Uniform nx-by-ny grid over [x0, x0+w] x [y0, y0+h]; region ids row-major.
  static RegionPartition grid2d(double x0, double y0, double w, double h, int nx, int ny);
  void validate() const;  // pairwise disjoint boxes, identical axis count
};

struct GroupConfig {
  int grid_points = 2 * defaults::grid_points;
  std::optional<GridSpec> grid;
  double membership_eps = 1e-9;
};

struct GroupStats {
  uint64_t coverage_warnings = 0;  // tuples with > 1% mass outside the area
};

struct RegionAggregate {
  int region_id = 0;
  UncertainValue total;
  double exceed_prob = 0.0;
  bool alert = false;
  std::set<uint64_t> lineage;
};

// Soft membership: each tuple contributes a Bernoulli-thinned copy of its
// weight to every region holding location mass. Exceed probability comes from
// the inverted total-weight distribution.
std::vector<RegionAggregate> group_by_region_sum(std::span<const ProbTuple> tuples,
                                                 const std::string& loc_attr,
                                                 const RegionPartition& partition,
                                                 const std::string& weight_attr,
                                                 double threshold, double alpha,
                                                 const GroupConfig& cfg = {},
                                                 GroupStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Probabilistic equality join on location.

struct JoinConfig {
  double epsilon = 0.5;          // meters
  double match_threshold = 0.05;  // emit when p_match >= this
  int mc_samples = 100000;
  int quad_nodes = 256;
  uint64_t seed = 1;
};

// P(|X_a - X_b| <= eps) for independent locations; analytic-quadrature for
// Gaussian pairs, exact pair enumeration or seeded Monte Carlo otherwise.
double match_probability(const UncertainValue& a, const UncertainValue& b, double eps,
                         const JoinConfig& cfg = {});

std::vector<ProbTuple> join_prob_equal(std::span<const ProbTuple> left,
                                       std::span<const ProbTuple> right,
                                       const std::string& left_loc, const std::string& right_loc,
                                       const JoinConfig& cfg = {});

// ---------------------------------------------------------------------------
// Lineage-aware aggregation.

// Bounded archive of base tuples for later recomputation of correlated
// results; eviction only below the watermark minus the retention horizon.
class BaseTupleArchive {
 public:
  explicit BaseTupleArchive(double retention_horizon = std::numeric_limits<double>::infinity());

  void insert(const ProbTuple& t);
  const ProbTuple* find(uint64_t id) const;
  const ProbTuple& resolve(uint64_t id) const;  // ArchiveMissError when absent
  void advance_watermark(double watermark);
  size_t size() const { return tuples_.size(); }

 private:
  double horizon_;
  std::map<uint64_t, ProbTuple> tuples_;
};

enum class AggOp { Sum, Max };

struct McConfig {
  int samples = 20000;
  uint64_t seed = 1;
};

// Partitions inputs into correlation groups by lineage overlap. Singleton
// groups ride the fast independent path; groups that are affine images of a
// single shared base are collapsed exactly; remaining groups are reduced by
// seeded Monte Carlo that samples shared bases once per draw and replays the
// recorded derivations. Group results are then combined independently.
ProbTuple lineage_aware_agg(std::span<const ProbTuple> tuples, const std::string& attr,
                            const BaseTupleArchive& archive, AggOp op,
                            const McConfig& mc = {});

}  // namespace ustream::ops
