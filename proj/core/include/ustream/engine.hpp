// Box-arrow dataflow assembly and execution. Pipelines are declared
// structurally in JSON (boxes + arrows); execution is either deterministic
// (sequential, topological, bitwise reproducible) or threaded with bounded
// queues between boxes. Also hosts the sum-method benchmark harness.
#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ustream/operators.hpp"
#include "ustream/tuple.hpp"

namespace ustream::engine {

struct BoxSpec {
  std::string id;
  std::string kind;
  nlohmann::json config;
};

struct ArrowSpec {
  std::string from;
  std::string to;
};

struct DataflowGraph {
  std::vector<BoxSpec> boxes;
  std::vector<ArrowSpec> arrows;

  std::map<std::string, size_t> box_index;
  std::vector<std::vector<size_t>> successors;    // by box index
  std::vector<std::vector<size_t>> predecessors;  // by box index, arrow order
  std::vector<size_t> topo_order;

  const BoxSpec& box(size_t i) const { return boxes[i]; }
  bool is_source(size_t i) const;
};

// Parses and validates the pipeline description: known kinds, unique ids,
// resolvable arrows, acyclicity (the diagnostic names a back edge), input
// arity per kind.
DataflowGraph build_graph(const nlohmann::json& pipeline);
DataflowGraph build_graph_file(const std::string& path);

struct BoxMetrics {
  uint64_t tuples_in = 0;
  uint64_t tuples_out = 0;
  double processing_seconds = 0.0;
  uint64_t dropped = 0;
  uint64_t late = 0;
};

struct RunMetrics {
  std::vector<std::pair<std::string, BoxMetrics>> per_box;
  double wall_seconds = 0.0;
  double throughput_tps = 0.0;  // source tuples per wall-clock second
  // First operator runtime error, empty on success. The graph halts on error
  // but partial metrics are still assembled.
  std::string error;

  bool ok() const { return error.empty(); }
  // Deterministic runs zero the wall-clock fields so outputs stay
  // byte-identical across repetitions.
  nlohmann::json to_json(bool include_times) const;
};

struct RunOptions {
  bool deterministic = false;
  uint64_t seed = 1;
  size_t queue_capacity = 1024;
};

RunMetrics run(const DataflowGraph& graph, const RunOptions& opts);

// ---------------------------------------------------------------------------
// Benchmark: sum over tumbling windows of per-tuple random Gaussian mixtures,
// identical pre-generated windows for every method, accuracy measured as
// variance distance against the inversion result.

struct BenchConfig {
  int window_size = 100;
  int windows = 50;
  uint64_t seed = 1;
  int fit_k = 3;
  int hist_bins = 16;
  int hist_samples = 20000;
  int invert_points = 4096;
  // Deterministic timing replaces wall-clock throughput by a modeled count of
  // dominant operations so report files replay byte-identically.
  bool deterministic_timing = false;
};

struct BenchRow {
  std::string method;
  double throughput_tps = 0.0;
  double variance_distance = 0.0;
};

struct BenchReport {
  std::vector<BenchRow> rows;  // cf_invert, cf_fit, hist_sample
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

BenchReport bench_sum_methods(const BenchConfig& cfg);
void write_bench_report(const BenchReport& report, const std::string& csv_path);

}  // namespace ustream::engine
