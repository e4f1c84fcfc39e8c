// T-operator for correlated raw series: sample autocorrelation (two passes),
// moving-average order identification via the whiteness band, CLT-based block
// averaging into Gaussian-uncertain moment tuples, and the synthetic series
// generator used for testing and the gen-series CLI.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ustream/random.hpp"
#include "ustream/tuple.hpp"

namespace ustream::ts {

struct SeriesWindow {
  uint32_t gate_id = 0;
  std::vector<double> values;
  double sample_period = 1.0;  // seconds
};

struct AcfResult {
  int n = 0;
  std::vector<double> gamma;  // autocovariances, lag 0..max_lag
  std::vector<double> rho;    // autocorrelations, rho[0] = 1
  double band = 0.0;          // 1.96 / sqrt(n)
  int passes_used = 0;
  int max_lag() const { return static_cast<int>(gamma.size()) - 1; }
};

struct MaModel {
  int order = 0;
  bool accepted = false;
  std::vector<double> gammas;  // gamma_0..gamma_order from identification
};

// Biased (1/n) autocovariances up to max_lag using exactly two passes over
// the data (mean, then a ring-buffered covariance scan).
AcfResult sample_acf(const SeriesWindow& w, int max_lag);

// Smallest q such that |rho_k| stays inside the +-1.96/sqrt(n) band for every
// lag k in (q, max_lag]; not accepted when no q <= max_order qualifies.
MaModel identify_ma_order(const AcfResult& acf, int max_order);

// Asymptotic distribution of the window mean under the accepted MA model:
// mean = sample mean, var = (gamma_0 + 2 sum_{k<=q} gamma_k) / n.
Gaussian1D clt_mean_distribution(const SeriesWindow& w, const MaModel& model,
                                 bool* variance_clamped = nullptr);

struct BlockAverageConfig {
  int block_size = 100;  // >= 8
  int max_lag = 8;       // clipped to block_size/4 - 1
  int max_order = 5;     // clipped to max_lag - 2
  double sample_period = 1.0;
};

// Per-gate accumulation of non-overlapping blocks. Accepted blocks emit a
// Gaussian moment tuple; rejected blocks fall back to the raw samples with a
// model_rejected flag so the stream stays complete.
class BlockAverageOperator {
 public:
  explicit BlockAverageOperator(BlockAverageConfig cfg);

  std::optional<ProbTuple> push(uint32_t gate, double time, double value);
  std::vector<ProbTuple> process(const SeriesWindow& w);

  uint64_t emitted() const { return emitted_; }
  uint64_t rejected() const { return rejected_; }

 private:
  struct GateBuffer {
    std::vector<double> values;
    double last_time = 0.0;
    uint64_t consumed = 0;
  };
  ProbTuple emit_block(uint32_t gate, GateBuffer& buf);

  BlockAverageConfig cfg_;
  std::unordered_map<uint32_t, GateBuffer> gates_;
  uint64_t emitted_ = 0;
  uint64_t rejected_ = 0;
};

// ---------------------------------------------------------------------------
// Synthetic generator: X_t = sum a_i X_{t-i} + sum b_i eps_{t-i} + eps_t + C.
// The autoregressive part exists only to produce test series.

struct SeriesModel {
  std::vector<double> ar;
  std::vector<double> ma;
  double mean = 0.0;  // realized through the constant term
  double noise_sd = 1.0;
};

std::vector<double> generate_series(const SeriesModel& model, int n, Rng& rng);

// ---------------------------------------------------------------------------
// Raw series I/O: CSV rows time,gate_id,value or packed little-endian
// (uint32 gate, float32 value) records.

struct SeriesRecord {
  double time = 0.0;
  uint32_t gate = 0;
  double value = 0.0;
};

void write_series_csv(const std::string& path, const std::vector<SeriesRecord>& records);
std::vector<SeriesRecord> read_series_csv(const std::string& path);
void write_series_bin(const std::string& path, const std::vector<SeriesRecord>& records);
// Binary records carry no timestamps; times are assigned per gate as
// index * sample_period.
std::vector<SeriesRecord> read_series_bin(const std::string& path, double sample_period);

}  // namespace ustream::ts
