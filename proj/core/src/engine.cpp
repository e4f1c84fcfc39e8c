#include "ustream/engine.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <thread>

#include "ustream/charfn.hpp"
#include "ustream/random.hpp"
#include "ustream/rfid.hpp"
#include "ustream/timeseries.hpp"

namespace ustream::engine {

namespace {

const std::set<std::string> kSourceKinds = {"source", "rfid_infer", "series_block_avg"};
const std::set<std::string> kKinds = {
    "source",        "sink",      "rfid_infer", "series_block_avg", "enrich",
    "select",        "transform", "window",     "agg_sum",          "agg_avg",
    "agg_count",     "agg_max",   "agg_min",    "group_region_sum", "join_eq_loc",
    "lineage_agg"};

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

bool DataflowGraph::is_source(size_t i) const { return kSourceKinds.count(boxes[i].kind) > 0; }

DataflowGraph build_graph(const nlohmann::json& pipeline) {
  DataflowGraph g;
  if (!pipeline.contains("boxes")) throw ValidationError("pipeline needs a 'boxes' array");
  for (const auto& b : pipeline.at("boxes")) {
    BoxSpec spec;
    spec.id = b.at("id").get<std::string>();
    spec.kind = b.at("kind").get<std::string>();
    spec.config = b.value("config", nlohmann::json::object());
    if (!kKinds.count(spec.kind))
      throw ValidationError("box '" + spec.id + "' has unknown kind '" + spec.kind + "'");
    if (g.box_index.count(spec.id)) throw ValidationError("duplicate box id '" + spec.id + "'");
    g.box_index[spec.id] = g.boxes.size();
    g.boxes.push_back(std::move(spec));
  }
  g.successors.resize(g.boxes.size());
  g.predecessors.resize(g.boxes.size());
  if (pipeline.contains("arrows")) {
    for (const auto& a : pipeline.at("arrows")) {
      ArrowSpec arrow{a.at("from").get<std::string>(), a.at("to").get<std::string>()};
      auto fi = g.box_index.find(arrow.from);
      auto ti = g.box_index.find(arrow.to);
      if (fi == g.box_index.end() || ti == g.box_index.end())
        throw ValidationError("arrow " + arrow.from + " -> " + arrow.to +
                              " references an unknown box");
      g.successors[fi->second].push_back(ti->second);
      g.predecessors[ti->second].push_back(fi->second);
      g.arrows.push_back(std::move(arrow));
    }
  }
  for (size_t i = 0; i < g.boxes.size(); ++i) {
    const size_t fan_in = g.predecessors[i].size();
    const std::string& kind = g.boxes[i].kind;
    if (g.is_source(i)) {
      if (fan_in != 0)
        throw ValidationError("source box '" + g.boxes[i].id + "' must have no incoming arrows");
    } else if (kind == "join_eq_loc") {
      if (fan_in != 2)
        throw ValidationError("join box '" + g.boxes[i].id + "' must have exactly 2 incoming arrows");
    } else if (kind == "lineage_agg") {
      if (fan_in < 1 || fan_in > 2)
        throw ValidationError("lineage_agg box '" + g.boxes[i].id + "' needs 1 or 2 incoming arrows");
    } else if (fan_in < 1) {
      throw ValidationError("box '" + g.boxes[i].id + "' has no incoming arrow");
    }
  }
  // Kahn topological order; any remainder is a cycle and we name one edge.
  std::vector<size_t> indeg(g.boxes.size(), 0);
  for (size_t i = 0; i < g.boxes.size(); ++i) indeg[i] = g.predecessors[i].size();
  std::deque<size_t> ready;
  for (size_t i = 0; i < g.boxes.size(); ++i)
    if (indeg[i] == 0) ready.push_back(i);
  while (!ready.empty()) {
    const size_t i = ready.front();
    ready.pop_front();
    g.topo_order.push_back(i);
    for (size_t s : g.successors[i])
      if (--indeg[s] == 0) ready.push_back(s);
  }
  if (g.topo_order.size() != g.boxes.size()) {
    for (const auto& a : g.arrows) {
      const size_t from = g.box_index.at(a.from), to = g.box_index.at(a.to);
      if (indeg[from] > 0 && indeg[to] > 0)
        throw ValidationError("pipeline has a cycle through edge " + a.from + " -> " + a.to);
    }
    throw ValidationError("pipeline has a cycle");
  }
  return g;
}

DataflowGraph build_graph_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open pipeline file: " + path);
  nlohmann::json j;
  in >> j;
  return build_graph(j);
}

nlohmann::json RunMetrics::to_json(bool include_times) const {
  nlohmann::json boxes = nlohmann::json::object();
  for (const auto& [id, m] : per_box) {
    boxes[id] = {{"tuples_in", m.tuples_in},
                 {"tuples_out", m.tuples_out},
                 {"processing_seconds", include_times ? m.processing_seconds : 0.0},
                 {"dropped", m.dropped},
                 {"late", m.late}};
  }
  nlohmann::json out{{"boxes", boxes},
                     {"wall_seconds", include_times ? wall_seconds : 0.0},
                     {"throughput_tps", include_times ? throughput_tps : 0.0}};
  if (!error.empty()) out["error"] = error;
  return out;
}

// ---------------------------------------------------------------------------
// Box runtimes.

namespace {

using nlohmann::json;

class BoxRuntime {
 public:
  explicit BoxRuntime(const BoxSpec& spec) : spec_(spec) {}
  virtual ~BoxRuntime() = default;

  virtual std::vector<ProbTuple> start() { return {}; }
  virtual std::vector<ProbTuple> on_tuple(int /*port*/, const ProbTuple& t) = 0;
  virtual std::vector<ProbTuple> on_flush() { return {}; }
  virtual void finalize() {}  // sinks write their files here

  const BoxSpec& spec() const { return spec_; }
  BoxMetrics metrics;

 protected:
  BoxSpec spec_;
};

class SourceBox final : public BoxRuntime {
 public:
  using BoxRuntime::BoxRuntime;
  std::vector<ProbTuple> start() override {
    return read_jsonl(spec_.config.at("path").get<std::string>());
  }
  std::vector<ProbTuple> on_tuple(int, const ProbTuple&) override {
    throw ValidationError("source received input");
  }
};

class SinkBox final : public BoxRuntime {
 public:
  using BoxRuntime::BoxRuntime;
  std::vector<ProbTuple> on_tuple(int, const ProbTuple& t) override {
    buffer_.push_back(t);
    return {};
  }
  void finalize() override {
    write_jsonl(spec_.config.at("path").get<std::string>(), buffer_);
  }

 private:
  std::vector<ProbTuple> buffer_;
};

class RfidInferBox final : public BoxRuntime {
 public:
  using BoxRuntime::BoxRuntime;
  std::vector<ProbTuple> start() override {
    std::ifstream in(spec_.config.at("config").get<std::string>());
    if (!in) throw InputError("cannot open rfid config");
    json cfg_json;
    in >> cfg_json;
    rfid::WorldConfig world = rfid::WorldConfig::from_json(cfg_json.at("world"));
    rfid::FilterConfig filter = rfid::FilterConfig::from_json(
        cfg_json.contains("filter") ? cfg_json.at("filter") : json::object());
    if (spec_.config.contains("seed")) filter.seed = spec_.config.at("seed").get<uint64_t>();
    const auto cycles =
        rfid::read_readings_csv(spec_.config.at("readings").get<std::string>(), world);
    const std::string policy = spec_.config.value("policy", "gaussian");
    const int k_max = spec_.config.value("gmm_k_max", 3);
    rfid::ParticleFilterBank bank(world, filter);
    std::vector<ProbTuple> out;
    for (const auto& cycle : cycles) {
      bank.step(cycle);
      auto tuples = bank.emit(cycle.time,
                              policy == "gmm" ? rfid::EmitPolicy::GmmBic : rfid::EmitPolicy::Gaussian,
                              k_max);
      out.insert(out.end(), std::make_move_iterator(tuples.begin()),
                 std::make_move_iterator(tuples.end()));
    }
    return out;
  }
  std::vector<ProbTuple> on_tuple(int, const ProbTuple&) override {
    throw ValidationError("source received input");
  }
};

class SeriesBlockAvgBox final : public BoxRuntime {
 public:
  using BoxRuntime::BoxRuntime;
  std::vector<ProbTuple> start() override {
    const std::string path = spec_.config.at("input").get<std::string>();
    const std::string format = spec_.config.value("format", "csv");
    const double period = spec_.config.value("sample_period", 1.0);
    ts::BlockAverageConfig cfg;
    cfg.block_size = spec_.config.value("block", 100);
    cfg.max_lag = spec_.config.value("max_lag", 8);
    cfg.max_order = spec_.config.value("max_order", 5);
    cfg.sample_period = period;
    const auto records = format == "bin" ? ts::read_series_bin(path, period)
                                         : ts::read_series_csv(path);
    ts::BlockAverageOperator op(cfg);
    std::vector<ProbTuple> out;
    for (const auto& r : records)
      if (auto t = op.push(r.gate, r.time, r.value)) out.push_back(std::move(*t));
    return out;
  }
  std::vector<ProbTuple> on_tuple(int, const ProbTuple&) override {
    throw ValidationError("source received input");
  }
};

class EnrichBox final : public BoxRuntime {
 public:
  using BoxRuntime::BoxRuntime;
  std::vector<ProbTuple> on_tuple(int, const ProbTuple& t) override {
    const std::string key_attr = spec_.config.at("key_attr").get<std::string>();
    const std::string out_attr = spec_.config.at("out").get<std::string>();
    std::string key;
    const AttrValue& v = t.attr(key_attr);
    if (const auto* d = std::get_if<double>(&v)) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(std::llround(*d)));
      key = buf;
    } else if (const auto* s = std::get_if<std::string>(&v)) {
      key = *s;
    } else {
      throw InputError("enrich key attribute must be scalar or string");
    }
    ProbTuple out = t;
    const json& table = spec_.config.at("table");
    json cell = table.contains(key) ? table.at(key) : spec_.config.value("default", json());
    if (cell.is_null()) throw InputError("enrich: no mapping for key '" + key + "'");
    if (cell.is_number()) out.attrs[out_attr] = cell.get<double>();
    else out.attrs[out_attr] = cell.get<std::string>();
    return {std::move(out)};
  }
};

class SelectBox final : public BoxRuntime {
 public:
  using BoxRuntime::BoxRuntime;
  std::vector<ProbTuple> on_tuple(int, const ProbTuple& t) override {
    const std::string attr = spec_.config.at("attr").get<std::string>();
    const std::string op = spec_.config.at("op").get<std::string>();
    if (op == "eq_str") {
      const std::string want = spec_.config.at("value").get<std::string>();
      const AttrValue& v = t.attr(attr);
      const auto* s = std::get_if<std::string>(&v);
      if (s && *s == want) return {t};
      ++metrics.dropped;
      return {};
    }
    RangePredicate pred;
    if (op == "gt") pred = RangePredicate::greater_than(spec_.config.at("value").get<double>());
    else if (op == "lt") pred = RangePredicate::less_than(spec_.config.at("value").get<double>());
    else if (op == "between")
      pred = RangePredicate::between(spec_.config.at("lo").get<double>(),
                                     spec_.config.at("hi").get<double>());
    else throw ValidationError("select: unknown op '" + op + "'");
    ops::SelectStats stats;
    auto out = ops::select_filter(t, attr, pred, spec_.config.value("tau", defaults::drop_threshold),
                                  &stats);
    if (!out) {
      ++metrics.dropped;
      return {};
    }
    return {std::move(*out)};
  }
};

class TransformBox final : public BoxRuntime {
 public:
  using BoxRuntime::BoxRuntime;
  std::vector<ProbTuple> on_tuple(int, const ProbTuple& t) override {
    const std::string attr = spec_.config.at("attr").get<std::string>();
    const std::string fn_name = spec_.config.value("fn", "affine");
    ops::TransformFn fn;
    if (fn_name == "affine")
      fn = ops::TransformFn::make_affine(spec_.config.value("a", 1.0), spec_.config.value("b", 0.0));
    else if (fn_name == "square")
      fn = ops::TransformFn::make_scalar([](double x) { return x * x; },
                                         [](double x) { return 2.0 * x; });
    else if (fn_name == "log")
      fn = ops::TransformFn::make_scalar([](double x) { return std::log(x); },
                                         [](double x) { return 1.0 / x; });
    else if (fn_name == "exp")
      fn = ops::TransformFn::make_scalar([](double x) { return std::exp(x); },
                                         [](double x) { return std::exp(x); });
    else if (fn_name == "sqrt")
      fn = ops::TransformFn::make_scalar([](double x) { return std::sqrt(x); },
                                         [](double x) { return 0.5 / std::sqrt(x); });
    else throw ValidationError("transform: unknown fn '" + fn_name + "'");
    return {ops::transform_delta(t, attr, fn)};
  }
};

constexpr const char* kWindowAttr = "__window";
constexpr const char* kWindowEndAttr = "__window_end";
constexpr const char* kWindowCloseAttr = "__window_close";

std::vector<ProbTuple> closure_to_tuples(const ops::WindowClosure& c) {
  std::vector<ProbTuple> out;
  out.reserve(c.members.size() + 1);
  for (const ProbTuple& m : c.members) {
    ProbTuple copy = m;
    copy.attrs[kWindowAttr] = static_cast<double>(c.window_id);
    copy.attrs[kWindowEndAttr] = c.window_end;
    out.push_back(std::move(copy));
  }
  ProbTuple punct;
  punct.id = next_tuple_id();
  punct.ts = c.window_end;
  punct.attrs[kWindowCloseAttr] = static_cast<double>(c.window_id);
  punct.attrs[kWindowEndAttr] = c.window_end;
  punct.lineage = {punct.id};
  out.push_back(std::move(punct));
  return out;
}

ops::WindowSpec window_spec_from(const json& cfg) {
  ops::WindowSpec spec;
  const std::string mode = cfg.value("mode", "range");
  spec.mode = mode == "now" ? ops::WindowSpec::Mode::Now : ops::WindowSpec::Mode::Range;
  spec.range = cfg.value("range", 0.0);
  spec.slide = cfg.value("slide", spec.range > 0 ? spec.range : 1.0);
  return spec;
}

class WindowBox final : public BoxRuntime {
 public:
  explicit WindowBox(const BoxSpec& spec)
      : BoxRuntime(spec),
        assigner_(window_spec_from(spec.config), spec.config.value("disorder", 0.0)) {}
  std::vector<ProbTuple> on_tuple(int, const ProbTuple& t) override {
    std::vector<ProbTuple> out;
    for (const auto& c : assigner_.push(t)) {
      auto emitted = closure_to_tuples(c);
      out.insert(out.end(), std::make_move_iterator(emitted.begin()),
                 std::make_move_iterator(emitted.end()));
    }
    metrics.late = assigner_.late_count();
    return out;
  }
  std::vector<ProbTuple> on_flush() override {
    std::vector<ProbTuple> out;
    for (const auto& c : assigner_.flush()) {
      auto emitted = closure_to_tuples(c);
      out.insert(out.end(), std::make_move_iterator(emitted.begin()),
                 std::make_move_iterator(emitted.end()));
    }
    metrics.late = assigner_.late_count();
    return out;
  }

 private:
  ops::WindowAssigner assigner_;
};

// Shared window-buffer plumbing for the aggregation-style boxes.
class WindowedBox : public BoxRuntime {
 public:
  using BoxRuntime::BoxRuntime;
  std::vector<ProbTuple> on_tuple(int port, const ProbTuple& t) override {
    if (t.has_attr(kWindowCloseAttr)) {
      const int64_t wid = static_cast<int64_t>(t.scalar(kWindowCloseAttr));
      const double end = t.scalar(kWindowEndAttr);
      auto it = buffers_.find(wid);
      std::vector<ProbTuple> members = it == buffers_.end() ? std::vector<ProbTuple>{} : std::move(it->second);
      if (it != buffers_.end()) buffers_.erase(it);
      if (members.empty()) return {};
      return aggregate(members, end);
    }
    ProbTuple copy = t;
    int64_t wid = -1;
    if (copy.has_attr(kWindowAttr)) {
      wid = static_cast<int64_t>(copy.scalar(kWindowAttr));
      copy.attrs.erase(kWindowAttr);
      copy.attrs.erase(kWindowEndAttr);
    }
    buffers_[wid].push_back(std::move(copy));
    (void)port;
    return {};
  }
  std::vector<ProbTuple> on_flush() override {
    std::vector<ProbTuple> out;
    for (auto& [wid, members] : buffers_) {
      if (members.empty()) continue;
      const double end = members.back().ts;
      auto emitted = aggregate(members, end);
      out.insert(out.end(), std::make_move_iterator(emitted.begin()),
                 std::make_move_iterator(emitted.end()));
    }
    buffers_.clear();
    return out;
  }

 protected:
  virtual std::vector<ProbTuple> aggregate(const std::vector<ProbTuple>& members,
                                           double window_end) = 0;

 private:
  std::map<int64_t, std::vector<ProbTuple>> buffers_;
};

ops::AggConfig agg_config_from(const json& cfg, uint64_t default_seed) {
  ops::AggConfig out;
  const std::string method = cfg.value("method", "cf_invert");
  if (method == "cf_invert") out.method = ops::SumMethod::CfInvert;
  else if (method == "cf_fit") out.method = ops::SumMethod::CfFit;
  else if (method == "clt") out.method = ops::SumMethod::Clt;
  else if (method == "hist") out.method = ops::SumMethod::HistSample;
  else throw ValidationError("unknown aggregation method '" + method + "'");
  out.fit_k = cfg.value("fit_k", 3);
  out.hist_bins = cfg.value("hist_bins", 16);
  out.hist_samples = cfg.value("hist_samples", 20000);
  out.grid_points = cfg.value("grid_points", defaults::grid_points);
  out.seed = cfg.value("seed", default_seed);
  return out;
}

class AggBox final : public WindowedBox {
 public:
  AggBox(const BoxSpec& spec, uint64_t seed) : WindowedBox(spec), seed_(seed) {}

 protected:
  std::vector<ProbTuple> aggregate(const std::vector<ProbTuple>& members,
                                   double window_end) override {
    const std::string attr = spec_.config.at("attr").get<std::string>();
    const ops::AggConfig cfg = agg_config_from(spec_.config, seed_);
    std::span<const ProbTuple> span(members.data(), members.size());
    ProbTuple result;
    if (spec_.kind == "agg_sum") result = ops::agg_sum(span, attr, cfg);
    else if (spec_.kind == "agg_avg") result = ops::agg_avg(span, attr, cfg);
    else if (spec_.kind == "agg_count") result = ops::agg_count(span, attr);
    else if (spec_.kind == "agg_max") result = ops::agg_max(span, attr);
    else result = ops::agg_min(span, attr);
    result.ts = window_end;
    return {std::move(result)};
  }

 private:
  uint64_t seed_;
};

class GroupRegionBox final : public WindowedBox {
 public:
  using WindowedBox::WindowedBox;

 protected:
  std::vector<ProbTuple> aggregate(const std::vector<ProbTuple>& members,
                                   double window_end) override {
    const auto& c = spec_.config;
    const auto area = c.at("area").get<std::vector<double>>();
    if (area.size() != 4) throw ValidationError("group_region_sum area must be [x0,y0,w,h]");
    const ops::RegionPartition partition = ops::RegionPartition::grid2d(
        area[0], area[1], area[2], area[3], c.value("nx", 1), c.value("ny", 1));
    std::span<const ProbTuple> span(members.data(), members.size());
    const auto regions = ops::group_by_region_sum(
        span, c.at("loc_attr").get<std::string>(), partition,
        c.at("weight_attr").get<std::string>(), c.at("threshold").get<double>(),
        c.value("alpha", 0.5));
    std::vector<ProbTuple> out;
    for (const auto& r : regions) {
      ProbTuple t;
      t.id = next_tuple_id();
      t.ts = window_end;
      t.attrs["region"] = static_cast<double>(r.region_id);
      t.attrs["total"] = r.total;
      t.attrs["exceed_prob"] = r.exceed_prob;
      t.attrs["alert"] = r.alert ? 1.0 : 0.0;
      t.lineage = r.lineage.empty() ? std::set<uint64_t>{t.id} : r.lineage;
      out.push_back(std::move(t));
    }
    return out;
  }
};

class JoinBox final : public BoxRuntime {
 public:
  explicit JoinBox(const BoxSpec& spec)
      : BoxRuntime(spec),
        left_(window_spec_from(spec.config), spec.config.value("disorder", 0.0)),
        right_(window_spec_from(spec.config), spec.config.value("disorder", 0.0)) {}

  std::vector<ProbTuple> on_tuple(int port, const ProbTuple& t) override {
    auto closures = port == 0 ? left_.push(t) : right_.push(t);
    return absorb(port, std::move(closures));
  }
  std::vector<ProbTuple> on_flush() override {
    std::vector<ProbTuple> out = absorb(0, left_.flush());
    auto more = absorb(1, right_.flush());
    out.insert(out.end(), std::make_move_iterator(more.begin()),
               std::make_move_iterator(more.end()));
    return out;
  }

 private:
  std::vector<ProbTuple> absorb(int port, std::vector<ops::WindowClosure> closures) {
    std::vector<ProbTuple> out;
    for (auto& c : closures) {
      auto& mine = port == 0 ? left_closed_ : right_closed_;
      mine[c.window_id] = std::move(c.members);
      auto& theirs = port == 0 ? right_closed_ : left_closed_;
      auto other = theirs.find(c.window_id);
      if (other == theirs.end()) continue;
      const auto& lm = port == 0 ? mine[c.window_id] : other->second;
      const auto& rm = port == 0 ? other->second : mine[c.window_id];
      ops::JoinConfig cfg;
      cfg.epsilon = spec_.config.value("epsilon", 0.5);
      cfg.match_threshold = spec_.config.value("rho", 0.05);
      cfg.mc_samples = spec_.config.value("mc_samples", 100000);
      cfg.seed = spec_.config.value("seed", 1ull);
      auto joined = ops::join_prob_equal(
          std::span<const ProbTuple>(lm.data(), lm.size()),
          std::span<const ProbTuple>(rm.data(), rm.size()),
          spec_.config.at("left_loc").get<std::string>(),
          spec_.config.at("right_loc").get<std::string>(), cfg);
      out.insert(out.end(), std::make_move_iterator(joined.begin()),
                 std::make_move_iterator(joined.end()));
      mine.erase(c.window_id);
      theirs.erase(c.window_id);
    }
    return out;
  }

  ops::WindowAssigner left_, right_;
  std::map<int64_t, std::vector<ProbTuple>> left_closed_, right_closed_;
};

class LineageAggBox final : public WindowedBox {
 public:
  LineageAggBox(const BoxSpec& spec, uint64_t seed)
      : WindowedBox(spec), archive_(spec.config.value("retention", 1e18)), seed_(seed) {}

  std::vector<ProbTuple> on_tuple(int port, const ProbTuple& t) override {
    archive_.insert(t);
    if (port == 1) return {};  // archive feed only
    return WindowedBox::on_tuple(port, t);
  }

 protected:
  std::vector<ProbTuple> aggregate(const std::vector<ProbTuple>& members,
                                   double window_end) override {
    ops::McConfig mc;
    mc.samples = spec_.config.value("samples", 20000);
    mc.seed = spec_.config.value("seed", seed_);
    const std::string op = spec_.config.value("op", "sum");
    ProbTuple result = ops::lineage_aware_agg(
        std::span<const ProbTuple>(members.data(), members.size()),
        spec_.config.at("attr").get<std::string>(), archive_,
        op == "max" ? ops::AggOp::Max : ops::AggOp::Sum, mc);
    result.ts = window_end;
    return {std::move(result)};
  }

 private:
  ops::BaseTupleArchive archive_;
  uint64_t seed_;
};

std::unique_ptr<BoxRuntime> make_box(const BoxSpec& spec, uint64_t seed) {
  if (spec.kind == "source") return std::make_unique<SourceBox>(spec);
  if (spec.kind == "sink") return std::make_unique<SinkBox>(spec);
  if (spec.kind == "rfid_infer") return std::make_unique<RfidInferBox>(spec);
  if (spec.kind == "series_block_avg") return std::make_unique<SeriesBlockAvgBox>(spec);
  if (spec.kind == "enrich") return std::make_unique<EnrichBox>(spec);
  if (spec.kind == "select") return std::make_unique<SelectBox>(spec);
  if (spec.kind == "transform") return std::make_unique<TransformBox>(spec);
  if (spec.kind == "window") return std::make_unique<WindowBox>(spec);
  if (spec.kind == "group_region_sum") return std::make_unique<GroupRegionBox>(spec);
  if (spec.kind == "join_eq_loc") return std::make_unique<JoinBox>(spec);
  if (spec.kind == "lineage_agg") return std::make_unique<LineageAggBox>(spec, seed);
  return std::make_unique<AggBox>(spec, seed);
}

// ---------------------------------------------------------------------------
// Deterministic sequential execution.

struct SourceEvent {
  double ts;
  size_t source_rank;
  uint64_t seq;
  size_t box;
  ProbTuple tuple;
};

RunMetrics run_deterministic(const DataflowGraph& g, const RunOptions& opts) {
  reset_tuple_ids(1);
  std::vector<std::unique_ptr<BoxRuntime>> boxes;
  boxes.reserve(g.boxes.size());
  for (size_t i = 0; i < g.boxes.size(); ++i) boxes.push_back(make_box(g.boxes[i], opts.seed + i));

  // Port of box `to` fed by box `from` = position of `from` among preds.
  auto port_of = [&](size_t from, size_t to) {
    const auto& preds = g.predecessors[to];
    for (size_t p = 0; p < preds.size(); ++p)
      if (preds[p] == from) return static_cast<int>(p);
    return 0;
  };

  uint64_t source_tuples = 0;
  const double t_start = now_seconds();

  std::function<void(size_t, const ProbTuple&)> deliver = [&](size_t box, const ProbTuple& t) {
    for (size_t succ : g.successors[box]) {
      auto& runtime = *boxes[succ];
      ++runtime.metrics.tuples_in;
      const double t0 = now_seconds();
      auto outs = runtime.on_tuple(port_of(box, succ), t);
      runtime.metrics.processing_seconds += now_seconds() - t0;
      runtime.metrics.tuples_out += outs.size() * std::max<size_t>(g.successors[succ].size(), 1);
      for (const auto& out : outs) deliver(succ, out);
    }
  };

  RunMetrics metrics;
  try {
    // Merge all source outputs into one timestamp-ordered event stream.
    std::vector<SourceEvent> events;
    for (size_t rank = 0; rank < g.topo_order.size(); ++rank) {
      const size_t i = g.topo_order[rank];
      if (!g.is_source(i)) continue;
      auto& runtime = *boxes[i];
      const double t0 = now_seconds();
      auto outs = runtime.start();
      runtime.metrics.processing_seconds += now_seconds() - t0;
      runtime.metrics.tuples_out += outs.size() * std::max<size_t>(g.successors[i].size(), 1);
      source_tuples += outs.size();
      uint64_t seq = 0;
      for (auto& t : outs) events.push_back({t.ts, rank, seq++, i, std::move(t)});
    }
    std::stable_sort(events.begin(), events.end(), [](const SourceEvent& a, const SourceEvent& b) {
      if (a.ts != b.ts) return a.ts < b.ts;
      if (a.source_rank != b.source_rank) return a.source_rank < b.source_rank;
      return a.seq < b.seq;
    });
    for (const auto& e : events) deliver(e.box, e.tuple);

    // Flush in topological order so upstream closures arrive before
    // downstream flushes.
    for (size_t i : g.topo_order) {
      auto& runtime = *boxes[i];
      const double t0 = now_seconds();
      auto outs = runtime.on_flush();
      runtime.metrics.processing_seconds += now_seconds() - t0;
      runtime.metrics.tuples_out += outs.size() * std::max<size_t>(g.successors[i].size(), 1);
      for (const auto& out : outs) deliver(i, out);
    }
    for (auto& b : boxes) b->finalize();
  } catch (const std::exception& e) {
    metrics.error = e.what();
  }

  metrics.wall_seconds = now_seconds() - t_start;
  metrics.throughput_tps =
      metrics.wall_seconds > 0 ? static_cast<double>(source_tuples) / metrics.wall_seconds : 0.0;
  for (size_t i = 0; i < g.boxes.size(); ++i)
    metrics.per_box.emplace_back(g.boxes[i].id, boxes[i]->metrics);
  return metrics;
}

// ---------------------------------------------------------------------------
// Threaded execution: one thread per box, one bounded MPSC queue per box.

struct QueueItem {
  int port = 0;
  bool eos = false;
  ProbTuple tuple;
};

class BoxQueue {
 public:
  explicit BoxQueue(size_t capacity) : capacity_(capacity) {}
  void push(QueueItem item) {
    std::unique_lock lock(m_);
    cv_space_.wait(lock, [&] { return q_.size() < capacity_; });
    q_.push_back(std::move(item));
    cv_data_.notify_one();
  }
  QueueItem pop() {
    std::unique_lock lock(m_);
    cv_data_.wait(lock, [&] { return !q_.empty(); });
    QueueItem item = std::move(q_.front());
    q_.pop_front();
    cv_space_.notify_one();
    return item;
  }

 private:
  size_t capacity_;
  std::mutex m_;
  std::condition_variable cv_data_, cv_space_;
  std::deque<QueueItem> q_;
};

RunMetrics run_threaded(const DataflowGraph& g, const RunOptions& opts) {
  reset_tuple_ids(1);
  std::vector<std::unique_ptr<BoxRuntime>> boxes;
  for (size_t i = 0; i < g.boxes.size(); ++i) boxes.push_back(make_box(g.boxes[i], opts.seed + i));
  std::vector<std::unique_ptr<BoxQueue>> queues;
  for (size_t i = 0; i < g.boxes.size(); ++i)
    queues.push_back(std::make_unique<BoxQueue>(opts.queue_capacity));

  auto port_of = [&](size_t from, size_t to) {
    const auto& preds = g.predecessors[to];
    for (size_t p = 0; p < preds.size(); ++p)
      if (preds[p] == from) return static_cast<int>(p);
    return 0;
  };

  std::atomic<uint64_t> source_tuples{0};
  std::mutex error_mutex;
  std::string first_error;
  auto record_error = [&](const std::string& what) {
    std::lock_guard lock(error_mutex);
    if (first_error.empty()) first_error = what;
  };

  const double t_start = now_seconds();
  std::vector<std::thread> threads;
  for (size_t i = 0; i < g.boxes.size(); ++i) {
    threads.emplace_back([&, i] {
      auto& runtime = *boxes[i];
      auto send_all = [&](std::vector<ProbTuple> outs) {
        runtime.metrics.tuples_out += outs.size() * std::max<size_t>(g.successors[i].size(), 1);
        for (auto& t : outs)
          for (size_t succ : g.successors[i])
            queues[succ]->push({port_of(i, succ), false, t});
      };
      try {
        if (g.is_source(i)) {
          const double t0 = now_seconds();
          auto outs = runtime.start();
          runtime.metrics.processing_seconds += now_seconds() - t0;
          source_tuples += outs.size();
          send_all(std::move(outs));
        } else {
          size_t eos_needed = g.predecessors[i].size();
          bool failed = false;
          while (eos_needed > 0) {
            QueueItem item = queues[i]->pop();
            if (item.eos) {
              --eos_needed;
              continue;
            }
            if (failed) continue;  // drain inputs after a failure
            ++runtime.metrics.tuples_in;
            try {
              const double t0 = now_seconds();
              auto outs = runtime.on_tuple(item.port, item.tuple);
              runtime.metrics.processing_seconds += now_seconds() - t0;
              send_all(std::move(outs));
            } catch (const std::exception& e) {
              record_error(e.what());
              failed = true;
            }
          }
          if (!failed) {
            const double t0 = now_seconds();
            auto outs = runtime.on_flush();
            runtime.metrics.processing_seconds += now_seconds() - t0;
            send_all(std::move(outs));
            runtime.finalize();
          }
        }
      } catch (const std::exception& e) {
        record_error(e.what());
      }
      for (size_t succ : g.successors[i]) queues[succ]->push({port_of(i, succ), true, {}});
    });
  }
  for (auto& t : threads) t.join();

  RunMetrics metrics;
  metrics.error = first_error;
  metrics.wall_seconds = now_seconds() - t_start;
  metrics.throughput_tps =
      metrics.wall_seconds > 0 ? static_cast<double>(source_tuples.load()) / metrics.wall_seconds
                               : 0.0;
  for (size_t i = 0; i < g.boxes.size(); ++i)
    metrics.per_box.emplace_back(g.boxes[i].id, boxes[i]->metrics);
  return metrics;
}

}  // namespace

RunMetrics run(const DataflowGraph& graph, const RunOptions& opts) {
  return opts.deterministic ? run_deterministic(graph, opts) : run_threaded(graph, opts);
}

// ---------------------------------------------------------------------------

std::string BenchReport::to_csv() const {
  std::string out = "method,throughput_tps,variance_distance\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.3f,%.6f\n", r.method.c_str(), r.throughput_tps,
                  r.variance_distance);
    out += buf;
  }
  return out;
}

nlohmann::json BenchReport::to_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows)
    rows_j.push_back({{"method", r.method},
                      {"throughput_tps", r.throughput_tps},
                      {"variance_distance", r.variance_distance}});
  return nlohmann::json{{"rows", rows_j}};
}

BenchReport bench_sum_methods(const BenchConfig& cfg) {
  // Identical pre-generated windows for every method: per-tuple random
  // Gaussian mixtures standing in for arbitrary real-world distributions.
  Rng rng(cfg.seed);
  std::vector<std::vector<ProbTuple>> windows(static_cast<size_t>(cfg.windows));
  for (auto& window : windows) {
    window.reserve(static_cast<size_t>(cfg.window_size));
    for (int i = 0; i < cfg.window_size; ++i) {
      const int ncomp = 1 + static_cast<int>(rng.below(3));
      std::vector<MixtureComponent> comps;
      double total = 0.0;
      for (int c = 0; c < ncomp; ++c) {
        MixtureComponent mc;
        mc.weight = rng.uniform(0.2, 1.0);
        mc.mean = rng.uniform(-5.0, 5.0);
        const double sd = rng.uniform(0.3, 2.0);
        mc.var = sd * sd;
        total += mc.weight;
        comps.push_back(mc);
      }
      for (auto& c : comps) c.weight /= total;
      window.push_back(make_base_tuple(static_cast<double>(i),
                                       {{"v", UncertainValue(GaussianMixture(comps))}}));
    }
  }

  auto run_method = [&](const ops::AggConfig& acfg, std::vector<UncertainValue>& results) {
    const double t0 = now_seconds();
    for (const auto& window : windows) {
      ProbTuple r = ops::agg_sum(std::span<const ProbTuple>(window.data(), window.size()), "v", acfg);
      results.push_back(r.dist("v"));
    }
    return now_seconds() - t0;
  };

  ops::AggConfig invert_cfg;
  invert_cfg.method = ops::SumMethod::CfInvert;
  invert_cfg.grid_points = cfg.invert_points;
  invert_cfg.seed = cfg.seed;
  ops::AggConfig fit_cfg;
  fit_cfg.method = ops::SumMethod::CfFit;
  fit_cfg.fit_k = cfg.fit_k;
  fit_cfg.seed = cfg.seed;
  ops::AggConfig hist_cfg;
  hist_cfg.method = ops::SumMethod::HistSample;
  hist_cfg.hist_bins = cfg.hist_bins;
  hist_cfg.hist_samples = cfg.hist_samples;
  hist_cfg.seed = cfg.seed;

  std::vector<UncertainValue> invert_results, fit_results, hist_results;
  const double invert_seconds = run_method(invert_cfg, invert_results);
  const double fit_seconds = run_method(fit_cfg, fit_results);
  const double hist_seconds = run_method(hist_cfg, hist_results);

  double fit_dist = 0.0, hist_dist = 0.0;
  for (int w = 0; w < cfg.windows; ++w) {
    fit_dist += variance_distance(fit_results[static_cast<size_t>(w)],
                                  invert_results[static_cast<size_t>(w)]);
    hist_dist += variance_distance(hist_results[static_cast<size_t>(w)],
                                   invert_results[static_cast<size_t>(w)]);
  }
  fit_dist /= cfg.windows;
  hist_dist /= cfg.windows;

  const double total_tuples = static_cast<double>(cfg.windows) * cfg.window_size;
  double invert_tps, fit_tps, hist_tps;
  if (cfg.deterministic_timing) {
    // Modeled operation counts (dominant kernels) instead of wall clock so the
    // report replays byte-identically: CF leaf evaluations cost ~20 RNG-draw
    // units, quantile bisections ~60.
    double leaf_per_window = 0.0;
    for (const auto& window : windows)
      for (const auto& t : window)
        leaf_per_window += static_cast<double>(cf_of(t.dist("v")).leaf_count());
    leaf_per_window /= cfg.windows;
    const double invert_ops = 20.0 * leaf_per_window * cfg.invert_points / cfg.window_size;
    const double fit_ops =
        20.0 * (leaf_per_window * 128.0 + 3.0 * 2000.0 * cfg.fit_k * 128.0 / cfg.window_size) /
        cfg.window_size;
    const double hist_ops = 60.0 * cfg.hist_bins + 1.0 * cfg.hist_samples;
    invert_tps = 1e6 / invert_ops;
    fit_tps = 1e6 / fit_ops;
    hist_tps = 1e6 / hist_ops;
  } else {
    invert_tps = total_tuples / std::max(invert_seconds, 1e-9);
    fit_tps = total_tuples / std::max(fit_seconds, 1e-9);
    hist_tps = total_tuples / std::max(hist_seconds, 1e-9);
  }

  BenchReport report;
  report.rows.push_back({"cf_invert", invert_tps, 0.0});
  report.rows.push_back({"cf_fit", fit_tps, fit_dist});
  report.rows.push_back({"hist_sample", hist_tps, hist_dist});
  return report;
}

void write_bench_report(const BenchReport& report, const std::string& csv_path) {
  {
    std::ofstream out(csv_path);
    if (!out) throw InputError("cannot open for writing: " + csv_path);
    out << report.to_csv();
  }
  std::string json_path = csv_path;
  const size_t dot = json_path.find_last_of('.');
  if (dot != std::string::npos) json_path = json_path.substr(0, dot);
  json_path += ".json";
  std::ofstream out(json_path);
  if (!out) throw InputError("cannot open for writing: " + json_path);
  out << report.to_json().dump(2) << '\n';
}

}  // namespace ustream::engine
