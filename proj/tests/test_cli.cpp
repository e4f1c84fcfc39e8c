// End-to-end CLI contract checks: exit codes, file outputs, diagnostics.
// Usage: test_cli <path-to-ustream> <scratch-dir>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

std::string g_cli;
fs::path g_dir;
int g_failures = 0;

void check(bool ok, const std::string& what) {
  std::printf("%s  %s\n", ok ? "ok " : "FAIL", what.c_str());
  if (!ok) ++g_failures;
}

int run(const std::string& args, const std::string& stdout_path = "") {
  std::string cmd = g_cli + " " + args + " > " +
                    (stdout_path.empty() ? "/dev/null" : stdout_path) + " 2>/dev/null";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

int main(int argc, char** argv) {
  g_cli = argc > 1 ? argv[1] : "./tools/ustream";
  g_dir = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "ustream_cli_test";
  fs::remove_all(g_dir);
  fs::create_directories(g_dir);

  check(run("--help", (g_dir / "help.txt").string()) == 0, "--help exits 0");
  {
    std::ifstream help(g_dir / "help.txt");
    std::string text((std::istreambuf_iterator<char>(help)), std::istreambuf_iterator<char>());
    check(text.find("bench-sum") != std::string::npos &&
              text.find("simulate-rfid") != std::string::npos,
          "--help documents the subcommands");
  }
  check(run("bench-sum --no-such-flag") == 2, "unknown flag exits 2");
  check(run("no-such-subcommand") == 2, "unknown subcommand exits 2");
  check(run("acf --max-lag 4") == 2, "missing required option exits 2");

  // Constant series: degenerate-series diagnostic, exit 1.
  const std::string flat = (g_dir / "flat.csv").string();
  {
    std::ofstream out(flat);
    out << "time,gate_id,value\n";
    for (int i = 0; i < 64; ++i) out << i << ",0,3.25\n";
  }
  check(run("acf --in " + flat + " --max-lag 4") == 1, "constant series exits 1");

  // Happy path: generate, inspect, and consume a series.
  const std::string series = (g_dir / "series.csv").string();
  check(run("gen-series --out " + series + " --gates 1 --count 2000 --ma 0.5 --mean 2 --seed 3") == 0,
        "gen-series exits 0");
  check(run("acf --in " + series + " --max-lag 8", (g_dir / "acf.txt").string()) == 0,
        "acf exits 0 on a healthy series");
  {
    std::ifstream acf(g_dir / "acf.txt");
    std::string text((std::istreambuf_iterator<char>(acf)), std::istreambuf_iterator<char>());
    check(text.find("identified MA order: 1") != std::string::npos, "acf identifies MA(1)");
  }

  // Binary format round-trips through the tooling.
  const std::string series_bin = (g_dir / "series.bin").string();
  check(run("gen-series --out " + series_bin + " --format bin --gates 2 --count 512 --seed 4") == 0,
        "gen-series binary exits 0");
  check(fs::file_size(series_bin) == 2 * 512 * 8, "binary series is 8 bytes per record");
  check(run("acf --in " + series_bin + " --format bin --max-lag 6") == 0, "acf reads binary input");

  // Bench report has the documented columns.
  const std::string bench_csv = (g_dir / "bench.csv").string();
  check(run("bench-sum --window 10 --windows 2 --hist-samples 500 --invert-points 1024 --seed 2 --out " +
            bench_csv) == 0,
        "bench-sum exits 0");
  {
    std::ifstream csv(bench_csv);
    std::string header;
    std::getline(csv, header);
    check(header == "method,throughput_tps,variance_distance", "bench CSV header");
    std::ifstream twin(g_dir / "bench.json");
    check(twin.good(), "bench JSON twin exists");
  }

  // Broken pipeline file produces a nonzero exit with a diagnostic.
  const std::string bad_pipeline = (g_dir / "bad.json").string();
  {
    std::ofstream out(bad_pipeline);
    out << R"({"boxes":[{"id":"a","kind":"mystery"}],"arrows":[]})";
  }
  check(run("run --pipeline " + bad_pipeline) == 1, "invalid pipeline exits 1");

  // The shipped example pipelines run end to end from a scratch working
  // directory (paths inside them are CWD-relative).
  if (argc > 3) {
    const fs::path repo(argv[3]);
    const fs::path wd = g_dir / "examples";
    fs::create_directories(wd / "pipelines");
    for (const auto& entry : fs::directory_iterator(repo / "pipelines"))
      fs::copy_file(entry.path(), wd / "pipelines" / entry.path().filename(),
                    fs::copy_options::overwrite_existing);
    auto run_in = [&](const std::string& args) {
      const std::string cmd = "cd " + wd.string() + " && " + g_cli + " " + args +
                              " > /dev/null 2>&1";
      const int rc = std::system(cmd.c_str());
      return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    };
    check(run_in("simulate-rfid --config pipelines/rfid_config.json --seed 1 --out trace") == 0,
          "example trace simulation");
    check(run_in("run --pipeline pipelines/q1_weight_per_region.json --deterministic --seed 1") == 0,
          "shipped Q1 pipeline runs");
    size_t q1_rows = 0;
    {
      std::ifstream in(wd / "q1_region_totals.jsonl");
      std::string line;
      while (std::getline(in, line))
        if (!line.empty()) {
          const auto j = nlohmann::json::parse(line);
          check(j.at("attrs").contains("exceed_prob") && j.at("attrs").contains("region"),
                "Q1 output row " + std::to_string(q1_rows) + " schema");
          ++q1_rows;
          if (q1_rows > 3) break;
        }
    }
    check(q1_rows > 0, "Q1 pipeline produced region totals");

    // Temperature fixture for Q2: a hot reading over every shelf late in the
    // trace, when the location estimates have converged.
    {
      std::ofstream out(wd / "temps.jsonl");
      int id = 900000;
      for (double x : {1.0, 3.0, 5.0, 7.0, 9.0}) {
        for (double y : {1.0, 3.0, 5.0, 7.0, 9.0}) {
          nlohmann::json t = {
              {"id", id}, {"ts", 145.0}, {"existence", 1.0}, {"lineage", {id}},
              {"attrs",
               {{"location",
                 {{"kind", "gaussian_nd"}, {"dim", 3}, {"mean", {x, y, 1.0}},
                  {"cov", {0.04, 0, 0, 0, 0.04, 0, 0, 0, 0.04}}}},
                {"temp", {{"kind", "gaussian"}, {"mean", 85.0}, {"var", 9.0}}}}}};
          out << t.dump() << "\n";
          ++id;
        }
      }
    }
    check(run_in("run --pipeline pipelines/q2_flammable_hot.json --deterministic --seed 1") == 0,
          "shipped Q2 pipeline runs");
    size_t q2_rows = 0;
    {
      std::ifstream in(wd / "q2_alerts.jsonl");
      std::string line;
      while (std::getline(in, line))
        if (!line.empty()) ++q2_rows;
    }
    check(q2_rows > 0, "Q2 pipeline raised co-location alerts");
  }

  if (g_failures == 0) std::printf("all cli checks passed\n");
  return g_failures;
}
