// ustream command-line interface: simulation and inference for RFID traces,
// synthetic series generation and ACF inspection, pipeline execution, and the
// sum-method benchmark. All randomness flows from --seed.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ustream/engine.hpp"
#include "ustream/rfid.hpp"
#include "ustream/timeseries.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ustream;

namespace {

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open: " + path);
  json j;
  in >> j;
  return j;
}

std::vector<double> parse_coeffs(const std::string& csv) {
  std::vector<double> out;
  std::istringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stod(tok));
  return out;
}

int cmd_simulate_rfid(const std::string& config_path, uint64_t seed, bool seed_given,
                      const std::string& out_dir) {
  json cfg_json = load_json(config_path);
  rfid::WorldConfig world = rfid::WorldConfig::from_json(cfg_json.at("world"));
  if (seed_given) world.seed = seed;
  const rfid::SimulationResult sim = rfid::simulate(world);
  fs::create_directories(out_dir);
  rfid::write_readings_csv((fs::path(out_dir) / "readings.csv").string(), sim.cycles);
  rfid::write_truth_csv((fs::path(out_dir) / "truth.csv").string(), world, sim);
  std::cout << "wrote " << sim.cycles.size() << " read cycles for " << world.object_count
            << " objects to " << out_dir << "\n";
  return 0;
}

struct TruthTable {
  // scan time -> object id -> position
  std::map<double, std::map<uint32_t, rfid::Vec3>> by_time;
};

TruthTable load_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open: " + path);
  TruthTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first && line.rfind("time,", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    std::istringstream ss(line);
    std::string f;
    std::getline(ss, f, ',');
    const double time = std::stod(f);
    std::getline(ss, f, ',');
    const uint32_t id = static_cast<uint32_t>(std::stoul(f));
    rfid::Vec3 pos;
    for (int a = 0; a < 3; ++a) {
      std::getline(ss, f, ',');
      pos[static_cast<size_t>(a)] = std::stod(f);
    }
    t.by_time[time][id] = pos;
  }
  return t;
}

int cmd_infer_rfid(const std::string& readings_path, const std::string& config_path,
                   const std::string& policy, const std::string& out_path,
                   const std::string& truth_path, const std::string& report_path,
                   int particles, uint64_t seed, bool seed_given, bool controller,
                   double target_error, int eval_interval) {
  json cfg_json = load_json(config_path);
  rfid::WorldConfig world = rfid::WorldConfig::from_json(cfg_json.at("world"));
  rfid::FilterConfig filter = rfid::FilterConfig::from_json(
      cfg_json.contains("filter") ? cfg_json.at("filter") : json::object());
  if (particles > 0) filter.particle_count = particles;
  if (seed_given) filter.seed = seed;

  const auto cycles = rfid::read_readings_csv(readings_path, world);
  rfid::ParticleFilterBank bank(world, filter);
  reset_tuple_ids(1);

  rfid::ControllerState ctl;
  ctl.count = filter.particle_count;
  ctl.prev_count = filter.particle_count;
  ctl.decrement = std::max(filter.n_min, 1);
  ctl.target_error = target_error;
  ctl.n_min = filter.n_min;
  ctl.n_max = filter.n_max;

  std::optional<TruthTable> truth;
  if (!truth_path.empty()) truth = load_truth(truth_path);

  std::vector<ProbTuple> emitted;
  json per_scan = json::array();
  json controller_trace = json::array();
  size_t scan_index = 0;
  for (const auto& cycle : cycles) {
    bank.step(cycle);
    auto tuples = bank.emit(cycle.time,
                            policy == "gmm" ? rfid::EmitPolicy::GmmBic : rfid::EmitPolicy::Gaussian);
    emitted.insert(emitted.end(), std::make_move_iterator(tuples.begin()),
                   std::make_move_iterator(tuples.end()));

    if (truth) {
      auto it = truth->by_time.find(cycle.time);
      if (it != truth->by_time.end()) {
        double sq = 0.0;
        size_t n = 0;
        for (const auto& [id, pos] : it->second) {
          const double d = rfid::distance(bank.estimate(id), pos);
          sq += d * d;
          ++n;
        }
        if (n > 0)
          per_scan.push_back({{"time", cycle.time}, {"rmse", std::sqrt(sq / n)}});
      }
    }
    ++scan_index;
    if (controller && scan_index % static_cast<size_t>(eval_interval) == 0 &&
        !filter.reference_tags.empty()) {
      const double err = bank.measure_accuracy();
      ctl = rfid::tune_particles(ctl, err);
      if (ctl.count != bank.particle_count()) bank.resize_particles(ctl.count);
      controller_trace.push_back(
          {{"scan", scan_index},
           {"error", err},
           {"count", ctl.count},
           {"phase", ctl.phase == rfid::ControllerPhase::Doubling
                         ? "doubling"
                         : (ctl.phase == rfid::ControllerPhase::Decreasing ? "decreasing"
                                                                           : "steady")}});
    }
  }
  write_jsonl(out_path, emitted);

  if (!report_path.empty()) {
    json report;
    report["tuples"] = emitted.size();
    report["scans"] = cycles.size();
    report["recoveries"] = bank.recoveries();
    report["particle_count"] = bank.particle_count();
    if (truth) {
      report["per_scan_rmse"] = per_scan;
      double acc = 0.0;
      for (const auto& row : per_scan) acc += row.at("rmse").get<double>();
      report["mean_rmse"] = per_scan.empty() ? 0.0 : acc / per_scan.size();
    }
    if (controller) report["controller"] = controller_trace;
    std::ofstream out(report_path);
    if (!out) throw InputError("cannot open: " + report_path);
    out << report.dump(2) << '\n';
  }
  std::cout << "wrote " << emitted.size() << " tuples to " << out_path << "\n";
  return 0;
}

int cmd_gen_series(const std::string& out_path, const std::string& format, int gates, int count,
                   double mean, double sd, const std::string& ma_csv, const std::string& ar_csv,
                   double period, uint64_t seed) {
  ts::SeriesModel model;
  model.ma = parse_coeffs(ma_csv);
  model.ar = parse_coeffs(ar_csv);
  model.mean = mean;
  model.noise_sd = sd;
  Rng root(seed);
  std::vector<std::vector<double>> per_gate(static_cast<size_t>(gates));
  for (int g = 0; g < gates; ++g) {
    Rng rng = root.fork(static_cast<uint64_t>(g));
    per_gate[static_cast<size_t>(g)] = ts::generate_series(model, count, rng);
  }
  std::vector<ts::SeriesRecord> records;
  records.reserve(static_cast<size_t>(gates) * count);
  for (int i = 0; i < count; ++i)
    for (int g = 0; g < gates; ++g)
      records.push_back({i * period, static_cast<uint32_t>(g), per_gate[static_cast<size_t>(g)][static_cast<size_t>(i)]});
  if (format == "bin") ts::write_series_bin(out_path, records);
  else ts::write_series_csv(out_path, records);
  std::cout << "wrote " << records.size() << " records to " << out_path << "\n";
  return 0;
}

int cmd_acf(const std::string& in_path, int max_lag, int gate, const std::string& format,
            double period) {
  const auto records = format == "bin" ? ts::read_series_bin(in_path, period)
                                       : ts::read_series_csv(in_path);
  uint32_t pick = gate >= 0 ? static_cast<uint32_t>(gate)
                            : (records.empty() ? 0 : records.front().gate);
  ts::SeriesWindow w;
  w.gate_id = pick;
  w.sample_period = period;
  for (const auto& r : records)
    if (r.gate == pick) w.values.push_back(r.value);
  const ts::AcfResult acf = ts::sample_acf(w, max_lag);
  std::cout << "gate " << pick << ", n=" << acf.n << ", band=" << acf.band << "\n";
  std::cout << "lag,gamma,rho\n";
  char buf[96];
  for (int k = 0; k <= acf.max_lag(); ++k) {
    std::snprintf(buf, sizeof(buf), "%d,%.9f,%.9f\n", k, acf.gamma[static_cast<size_t>(k)],
                  acf.rho[static_cast<size_t>(k)]);
    std::cout << buf;
  }
  if (max_lag >= 2) {
    const ts::MaModel model = ts::identify_ma_order(acf, std::min(max_lag - 2, 5));
    if (model.accepted) std::cout << "identified MA order: " << model.order << "\n";
    else std::cout << "MA assumption rejected up to order " << model.order << "\n";
  }
  return 0;
}

int cmd_run(const std::string& pipeline_path, bool deterministic, uint64_t seed,
            const std::string& metrics_path) {
  const engine::DataflowGraph graph = engine::build_graph_file(pipeline_path);
  engine::RunOptions opts;
  opts.deterministic = deterministic;
  opts.seed = seed;
  const engine::RunMetrics metrics = engine::run(graph, opts);
  if (!metrics_path.empty()) {
    std::ofstream out(metrics_path);
    if (!out) throw InputError("cannot open: " + metrics_path);
    out << metrics.to_json(!deterministic).dump(2) << '\n';
  }
  if (!metrics.ok()) {
    std::cerr << "error: pipeline halted: " << metrics.error << "\n";
    return 1;
  }
  std::cout << "pipeline finished";
  if (!deterministic)
    std::cout << " in " << metrics.wall_seconds << " s (" << metrics.throughput_tps
              << " source tuples/s)";
  std::cout << "\n";
  return 0;
}

int cmd_bench_sum(int window, int windows, uint64_t seed, const std::string& out_path,
                  bool deterministic, int fit_k, int hist_bins, int hist_samples,
                  int invert_points) {
  engine::BenchConfig cfg;
  cfg.window_size = window;
  cfg.windows = windows;
  cfg.seed = seed;
  cfg.fit_k = fit_k;
  cfg.hist_bins = hist_bins;
  cfg.hist_samples = hist_samples;
  cfg.invert_points = invert_points;
  cfg.deterministic_timing = deterministic;
  const engine::BenchReport report = engine::bench_sum_methods(cfg);
  if (!out_path.empty()) engine::write_bench_report(report, out_path);
  std::cout << report.to_csv();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uncertainty-aware stream processing engine"};
  app.require_subcommand(1);

  uint64_t seed = 1;
  bool deterministic = false;

  // simulate-rfid
  auto* sim = app.add_subcommand("simulate-rfid", "simulate a warehouse RFID reader trace");
  std::string sim_config, sim_out;
  sim->add_option("--config", sim_config, "world config JSON")->required();
  sim->add_option("--out", sim_out, "output directory")->required();
  bool sim_seed_given = false;
  sim->add_option("--seed", seed, "simulation seed")->each([&](const std::string&) {
    sim_seed_given = true;
  });
  sim->add_flag("--deterministic", deterministic, "fixed-seed replay (simulation always is)");

  // infer-rfid
  auto* infer = app.add_subcommand("infer-rfid", "particle-filter object localization");
  std::string inf_readings, inf_config, inf_policy = "gaussian", inf_out, inf_truth, inf_report;
  int inf_particles = 0, inf_eval_interval = 10;
  bool inf_controller = false;
  bool inf_seed_given = false;
  double inf_target = 0.3;
  infer->add_option("--readings", inf_readings, "readings CSV")->required();
  infer->add_option("--config", inf_config, "world+filter config JSON")->required();
  infer->add_option("--policy", inf_policy, "gaussian|gmm")
      ->check(CLI::IsMember({"gaussian", "gmm"}));
  infer->add_option("--out", inf_out, "output tuple JSONL")->required();
  infer->add_option("--truth", inf_truth, "ground-truth CSV for accuracy reporting");
  infer->add_option("--report", inf_report, "report JSON path");
  infer->add_option("--particles", inf_particles, "override particle count");
  infer->add_option("--seed", seed, "filter seed")->each([&](const std::string&) {
    inf_seed_given = true;
  });
  infer->add_flag("--controller", inf_controller, "enable the particle-count controller");
  infer->add_option("--target", inf_target, "controller target RMSE (m)");
  infer->add_option("--eval-interval", inf_eval_interval, "scans between controller updates");
  infer->add_flag("--deterministic", deterministic, "fixed-seed replay (inference always is)");

  // gen-series
  auto* gen = app.add_subcommand("gen-series", "generate synthetic gate series");
  std::string gen_out, gen_format = "csv", gen_ma, gen_ar;
  int gen_gates = 1, gen_count = 1000;
  double gen_mean = 0.0, gen_sd = 1.0, gen_period = 1.0;
  gen->add_option("--out", gen_out, "output path")->required();
  gen->add_option("--format", gen_format, "csv|bin")->check(CLI::IsMember({"csv", "bin"}));
  gen->add_option("--gates", gen_gates, "number of gates");
  gen->add_option("--count", gen_count, "values per gate");
  gen->add_option("--mean", gen_mean, "series mean");
  gen->add_option("--sd", gen_sd, "noise standard deviation");
  gen->add_option("--ma", gen_ma, "moving-average coefficients, comma separated");
  gen->add_option("--ar", gen_ar, "autoregressive coefficients (generator only)");
  gen->add_option("--period", gen_period, "sample period (s)");
  gen->add_option("--seed", seed, "generator seed");
  gen->add_flag("--deterministic", deterministic, "fixed-seed replay (generation always is)");

  // acf
  auto* acf = app.add_subcommand("acf", "sample autocorrelation of a gate series");
  std::string acf_in, acf_format = "csv";
  int acf_max_lag = 20, acf_gate = -1;
  double acf_period = 1.0;
  acf->add_option("--in", acf_in, "series CSV or binary")->required();
  acf->add_option("--max-lag", acf_max_lag, "maximum lag");
  acf->add_option("--gate", acf_gate, "gate id (default: first seen)");
  acf->add_option("--format", acf_format, "csv|bin")->check(CLI::IsMember({"csv", "bin"}));
  acf->add_option("--period", acf_period, "sample period for binary input");
  acf->add_flag("--deterministic", deterministic, "no-op (acf is deterministic)");
  acf->add_option("--seed", seed, "unused; accepted for interface uniformity");

  // run
  auto* runc = app.add_subcommand("run", "execute a pipeline file");
  std::string run_pipeline, run_metrics;
  runc->add_option("--pipeline", run_pipeline, "pipeline JSON")->required();
  runc->add_option("--metrics", run_metrics, "metrics JSON output");
  runc->add_flag("--deterministic", deterministic, "sequential bitwise-stable execution");
  runc->add_option("--seed", seed, "run seed");

  // bench-sum
  auto* bench = app.add_subcommand("bench-sum", "compare sum aggregation methods");
  int bench_window = 100, bench_windows = 50, bench_fit_k = 3, bench_bins = 16,
      bench_samples = 20000, bench_invert = 4096;
  std::string bench_out;
  bench->add_option("--window", bench_window, "tuples per tumbling window");
  bench->add_option("--windows", bench_windows, "number of windows");
  bench->add_option("--seed", seed, "input generation seed");
  bench->add_option("--out", bench_out, "report CSV path (JSON twin written alongside)");
  bench->add_option("--fit-k", bench_fit_k, "mixture components for cf_fit");
  bench->add_option("--hist-bins", bench_bins, "histogram bins per input");
  bench->add_option("--hist-samples", bench_samples, "joint samples for hist method");
  bench->add_option("--invert-points", bench_invert, "inversion grid points");
  bench->add_flag("--deterministic", deterministic,
                  "report modeled throughput for byte-identical replays");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") {
      app.exit(e);
      return 0;
    }
    std::cerr << e.what() << "\n";
    std::cerr << app.help() << "\n";
    return 2;
  }

  try {
    if (sim->parsed())
      return cmd_simulate_rfid(sim_config, seed, sim_seed_given, sim_out);
    if (infer->parsed())
      return cmd_infer_rfid(inf_readings, inf_config, inf_policy, inf_out, inf_truth, inf_report,
                            inf_particles, seed, inf_seed_given, inf_controller, inf_target,
                            inf_eval_interval);
    if (gen->parsed())
      return cmd_gen_series(gen_out, gen_format, gen_gates, gen_count, gen_mean, gen_sd, gen_ma,
                            gen_ar, gen_period, seed);
    if (acf->parsed()) return cmd_acf(acf_in, acf_max_lag, acf_gate, acf_format, acf_period);
    if (runc->parsed()) return cmd_run(run_pipeline, deterministic, seed, run_metrics);
    if (bench->parsed())
      return cmd_bench_sum(bench_window, bench_windows, seed, bench_out, deterministic,
                           bench_fit_k, bench_bins, bench_samples, bench_invert);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
