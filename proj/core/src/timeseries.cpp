#include "ustream/timeseries.hpp"

#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <sstream>

namespace ustream::ts {

AcfResult sample_acf(const SeriesWindow& w, int max_lag) {
  const int n = static_cast<int>(w.values.size());
  if (n < 8) throw InputError("series window needs at least 8 values");
  if (max_lag < 0 || max_lag >= n / 4)
    throw ParameterError("max_lag must satisfy 0 <= max_lag < n/4");

  AcfResult out;
  out.n = n;
  out.band = 1.96 / std::sqrt(static_cast<double>(n));

  // Pass 1: mean.
  double mean = 0.0;
  for (double x : w.values) mean += x;
  mean /= n;

  // Pass 2: all autocovariances in one scan with a lag ring buffer.
  std::vector<double> acc(static_cast<size_t>(max_lag) + 1, 0.0);
  std::deque<double> ring;
  for (int t = 0; t < n; ++t) {
    const double c = w.values[static_cast<size_t>(t)] - mean;
    acc[0] += c * c;
    int k = 1;
    for (auto it = ring.rbegin(); it != ring.rend() && k <= max_lag; ++it, ++k)
      acc[static_cast<size_t>(k)] += c * *it;
    ring.push_back(c);
    if (static_cast<int>(ring.size()) > max_lag) ring.pop_front();
  }
  out.passes_used = 2;

  out.gamma.resize(static_cast<size_t>(max_lag) + 1);
  for (int k = 0; k <= max_lag; ++k) out.gamma[static_cast<size_t>(k)] = acc[static_cast<size_t>(k)] / n;
  if (out.gamma[0] < defaults::var_floor)
    throw DegenerateSeriesError("series is (numerically) constant");
  out.rho.resize(out.gamma.size());
  for (size_t k = 0; k < out.gamma.size(); ++k) out.rho[k] = out.gamma[k] / out.gamma[0];
  return out;
}

MaModel identify_ma_order(const AcfResult& acf, int max_order) {
  if (max_order > acf.max_lag() - 2)
    throw ParameterError("max_order must be <= max_lag - 2");
  if (max_order < 0) throw ParameterError("max_order must be >= 0");
  for (int q = 0; q <= max_order; ++q) {
    bool white_beyond = true;
    for (int k = q + 1; k <= acf.max_lag(); ++k) {
      if (std::fabs(acf.rho[static_cast<size_t>(k)]) > acf.band) {
        white_beyond = false;
        break;
      }
    }
    if (white_beyond) {
      MaModel m;
      m.order = q;
      m.accepted = true;
      m.gammas.assign(acf.gamma.begin(), acf.gamma.begin() + q + 1);
      return m;
    }
  }
  MaModel m;
  m.order = max_order;
  m.accepted = false;
  m.gammas.assign(acf.gamma.begin(), acf.gamma.begin() + max_order + 1);
  return m;
}

Gaussian1D clt_mean_distribution(const SeriesWindow& w, const MaModel& model,
                                 bool* variance_clamped) {
  if (!model.accepted) throw MaAssumptionError("MA model was not accepted for this window");
  const int n = static_cast<int>(w.values.size());
  if (n < 8) throw InputError("series window needs at least 8 values");
  double mean = 0.0;
  for (double x : w.values) mean += x;
  mean /= n;
  double long_run = model.gammas.at(0);
  for (int k = 1; k <= model.order; ++k) long_run += 2.0 * model.gammas.at(static_cast<size_t>(k));
  double var = long_run / n;
  bool clamped = false;
  if (var < defaults::var_floor) {
    var = defaults::var_floor;
    clamped = true;
  }
  if (variance_clamped) *variance_clamped = clamped;
  return Gaussian1D(mean, var);
}

// ---------------------------------------------------------------------------

BlockAverageOperator::BlockAverageOperator(BlockAverageConfig cfg) : cfg_(cfg) {
  if (cfg_.block_size < 8) throw ParameterError("block size must be >= 8");
}

ProbTuple BlockAverageOperator::emit_block(uint32_t gate, GateBuffer& buf) {
  SeriesWindow w{gate, std::move(buf.values), cfg_.sample_period};
  buf.values.clear();
  const int max_lag = std::min(cfg_.max_lag, cfg_.block_size / 4 - 1);
  const int max_order = std::min(cfg_.max_order, max_lag - 2);
  const AcfResult acf = sample_acf(w, max_lag);
  const MaModel model = identify_ma_order(acf, max_order);

  std::map<std::string, AttrValue> attrs;
  attrs["gate"] = static_cast<double>(gate);
  if (model.accepted) {
    attrs["value"] = UncertainValue(clt_mean_distribution(w, model));
  } else {
    attrs["value"] = UncertainValue(WeightedSamples::uniform_scalar(w.values));
    attrs["model_rejected"] = 1.0;
    ++rejected_;
  }
  ++emitted_;
  return make_base_tuple(buf.last_time, std::move(attrs));
}

std::optional<ProbTuple> BlockAverageOperator::push(uint32_t gate, double time, double value) {
  GateBuffer& buf = gates_[gate];
  buf.values.push_back(value);
  buf.last_time = time;
  ++buf.consumed;
  if (static_cast<int>(buf.values.size()) < cfg_.block_size) return std::nullopt;
  return emit_block(gate, buf);
}

std::vector<ProbTuple> BlockAverageOperator::process(const SeriesWindow& w) {
  std::vector<ProbTuple> out;
  for (size_t i = 0; i < w.values.size(); ++i) {
    const double time = static_cast<double>(gates_[w.gate_id].consumed) * w.sample_period;
    if (auto t = push(w.gate_id, time, w.values[i])) out.push_back(std::move(*t));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> generate_series(const SeriesModel& model, int n, Rng& rng) {
  if (n <= 0) throw ParameterError("series length must be positive");
  const size_t p = model.ar.size(), q = model.ma.size();
  double ar_sum = 0.0;
  for (double a : model.ar) ar_sum += a;
  if (std::fabs(ar_sum) >= 1.0 && !model.ar.empty())
    throw ParameterError("autoregressive coefficients must sum inside (-1,1)");
  const double c = model.mean * (1.0 - ar_sum);

  const int burn = 200 + static_cast<int>(8 * (p + q));
  std::vector<double> x;
  x.reserve(static_cast<size_t>(n + burn));
  std::deque<double> eps_hist;
  for (int t = 0; t < n + burn; ++t) {
    const double eps = rng.normal(0.0, model.noise_sd);
    double v = c + eps;
    for (size_t i = 0; i < q && i < eps_hist.size(); ++i) v += model.ma[i] * eps_hist[i];
    for (size_t i = 0; i < p && i < x.size(); ++i) v += model.ar[i] * x[x.size() - 1 - i];
    eps_hist.push_front(eps);
    if (eps_hist.size() > q) eps_hist.pop_back();
    x.push_back(v);
  }
  return std::vector<double>(x.end() - n, x.end());
}

// ---------------------------------------------------------------------------

void write_series_csv(const std::string& path, const std::vector<SeriesRecord>& records) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open for writing: " + path);
  out << "time,gate_id,value\n";
  char buf[96];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%.9f,%u,%.9f\n", r.time, r.gate, r.value);
    out << buf;
  }
}

std::vector<SeriesRecord> read_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open for reading: " + path);
  std::vector<SeriesRecord> out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first && line.rfind("time,", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    SeriesRecord r;
    std::istringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    r.time = std::stod(field);
    std::getline(ss, field, ',');
    r.gate = static_cast<uint32_t>(std::stoul(field));
    std::getline(ss, field, ',');
    r.value = std::stod(field);
    out.push_back(r);
  }
  return out;
}

void write_series_bin(const std::string& path, const std::vector<SeriesRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open for writing: " + path);
  for (const auto& r : records) {
    const uint32_t gate = r.gate;
    const float value = static_cast<float>(r.value);
    char rec[8];
    std::memcpy(rec, &gate, 4);
    std::memcpy(rec + 4, &value, 4);
    out.write(rec, 8);
  }
}

std::vector<SeriesRecord> read_series_bin(const std::string& path, double sample_period) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open for reading: " + path);
  std::vector<SeriesRecord> out;
  std::unordered_map<uint32_t, uint64_t> counts;
  char rec[8];
  while (in.read(rec, 8)) {
    uint32_t gate;
    float value;
    std::memcpy(&gate, rec, 4);
    std::memcpy(&value, rec + 4, 4);
    SeriesRecord r;
    r.gate = gate;
    r.value = static_cast<double>(value);
    r.time = static_cast<double>(counts[gate]++) * sample_period;
    out.push_back(r);
  }
  return out;
}

}  // namespace ustream::ts
