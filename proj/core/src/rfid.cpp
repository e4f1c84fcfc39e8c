#include "ustream/rfid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ustream::rfid {

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

namespace {
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void validate_heading(const Vec3& h) {
  const double norm = std::sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2]);
  if (std::fabs(norm - 1.0) > 1e-9) throw ParameterError("reader heading must be a unit vector");
}
}  // namespace

void WorldConfig::validate() const {
  if (shelves.empty()) throw ParameterError("world needs at least one shelf");
  if (!(move_prob >= 0.0 && move_prob < 0.5))
    throw ParameterError("move probability must be in [0, 0.5)");
  if (!(reader_range > 0.0)) throw ParameterError("reader range must be positive");
  if (object_count < 0) throw ParameterError("object count must be >= 0");
  std::set<uint32_t> ids;
  for (const auto& s : shelves) {
    if (!ids.insert(s.id).second) throw ParameterError("duplicate shelf id");
    if (s.id < static_cast<uint32_t>(object_count))
      throw ParameterError("shelf ids must not collide with object ids 0..object_count-1");
    for (int a = 0; a < 3; ++a)
      if (s.pos[a] < 0.0 || s.pos[a] > area[a])
        throw ParameterError("shelf outside monitored area");
  }
  for (const auto& p : reader_path) validate_heading(p.heading);
}

const Shelf& WorldConfig::shelf_by_id(uint32_t id) const {
  for (const auto& s : shelves)
    if (s.id == id) return s;
  throw ParameterError("unknown shelf id");
}

WorldConfig WorldConfig::from_json(const nlohmann::json& j) {
  WorldConfig cfg;
  if (j.contains("area")) {
    auto a = j.at("area").get<std::vector<double>>();
    if (a.size() != 3) throw ValidationError("area must have 3 entries");
    cfg.area = {a[0], a[1], a[2]};
  }
  for (const auto& s : j.at("shelves")) {
    auto p = s.at("pos").get<std::vector<double>>();
    cfg.shelves.push_back({s.at("id").get<uint32_t>(), {p[0], p[1], p[2]}});
  }
  cfg.object_count = j.at("objects").get<int>();
  cfg.move_prob = j.value("move_prob", 0.02);
  if (j.contains("beta")) {
    auto b = j.at("beta").get<std::vector<double>>();
    if (b.size() != 3) throw ValidationError("beta must have 3 entries");
    cfg.beta = {b[0], b[1], b[2]};
  }
  cfg.reader_range = j.value("reader_range", 3.0);
  cfg.seed = j.value("seed", 1ull);
  if (j.contains("reader_path")) {
    for (const auto& p : j.at("reader_path")) {
      ReaderPose pose;
      pose.time = p.at("time").get<double>();
      auto pos = p.at("pos").get<std::vector<double>>();
      auto h = p.at("heading").get<std::vector<double>>();
      pose.pos = {pos[0], pos[1], pos[2]};
      pose.heading = {h[0], h[1], h[2]};
      cfg.reader_path.push_back(pose);
    }
  } else if (j.contains("sweep")) {
    // Lawnmower sweep across the floor at fixed height.
    const auto& s = j.at("sweep");
    const int scans = s.at("scans").get<int>();
    const double period = s.value("period", 1.0);
    const double height = s.value("height", 1.5);
    const double margin = s.value("margin", 1.0);
    const int rows = std::max(1, s.value("rows", 4));
    for (int i = 0; i < scans; ++i) {
      const double u = scans > 1 ? static_cast<double>(i) / (scans - 1) : 0.0;
      const double row_f = u * rows;
      const int row = std::min(static_cast<int>(row_f), rows - 1);
      double along = row_f - row;
      if (row % 2 == 1) along = 1.0 - along;
      ReaderPose pose;
      pose.time = i * period;
      pose.pos = {margin + along * (cfg.area[0] - 2 * margin),
                  margin + (rows > 1 ? row / (rows - 1.0) : 0.0) * (cfg.area[1] - 2 * margin),
                  height};
      pose.heading = {row % 2 == 1 ? -1.0 : 1.0, 0.0, 0.0};
      cfg.reader_path.push_back(pose);
    }
  }
  cfg.validate();
  return cfg;
}

nlohmann::json WorldConfig::to_json() const {
  nlohmann::json shelves_j = nlohmann::json::array();
  for (const auto& s : shelves)
    shelves_j.push_back({{"id", s.id}, {"pos", {s.pos[0], s.pos[1], s.pos[2]}}});
  nlohmann::json path_j = nlohmann::json::array();
  for (const auto& p : reader_path)
    path_j.push_back({{"time", p.time},
                      {"pos", {p.pos[0], p.pos[1], p.pos[2]}},
                      {"heading", {p.heading[0], p.heading[1], p.heading[2]}}});
  return nlohmann::json{{"area", {area[0], area[1], area[2]}},
                        {"shelves", shelves_j},
                        {"objects", object_count},
                        {"move_prob", move_prob},
                        {"beta", {beta.b0, beta.b_dist, beta.b_angle}},
                        {"reader_range", reader_range},
                        {"reader_path", path_j},
                        {"seed", seed}};
}

double detection_prob(const SensingModel& beta, double range, const ReaderPose& reader,
                      const Vec3& tag_pos) {
  const double d = distance(reader.pos, tag_pos);
  if (d > range) return 0.0;
  double angle = 0.0;
  if (d > 1e-12) {
    double dot = 0.0;
    for (int a = 0; a < 3; ++a) dot += reader.heading[a] * (tag_pos[a] - reader.pos[a]);
    dot /= d;
    dot = std::clamp(dot, -1.0, 1.0);
    angle = std::acos(dot);
  }
  return sigmoid(beta.b0 + beta.b_dist * d + beta.b_angle * std::fabs(angle));
}

SimulationResult simulate(const WorldConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const size_t n_shelves = cfg.shelves.size();

  // Initial placement: each object on a uniformly chosen shelf.
  std::vector<size_t> on_shelf(static_cast<size_t>(cfg.object_count));
  for (auto& s : on_shelf) s = rng.below(n_shelves);

  SimulationResult out;
  out.cycles.reserve(cfg.reader_path.size());
  out.truth.reserve(cfg.reader_path.size());
  for (const auto& pose : cfg.reader_path) {
    // Motion: stay, or jump to a uniformly chosen *other* shelf.
    for (auto& s : on_shelf) {
      if (rng.uniform01() < cfg.move_prob && n_shelves > 1) {
        const size_t jump = rng.below(n_shelves - 1);
        s = jump >= s ? jump + 1 : jump;
      }
    }
    ReadCycle cycle;
    cycle.time = pose.time;
    cycle.reader = pose;
    std::vector<Vec3> positions(static_cast<size_t>(cfg.object_count));
    for (int i = 0; i < cfg.object_count; ++i) {
      positions[static_cast<size_t>(i)] = cfg.shelves[on_shelf[static_cast<size_t>(i)]].pos;
      const double p = detection_prob(cfg.beta, cfg.reader_range, pose,
                                      positions[static_cast<size_t>(i)]);
      if (p > 0.0 && rng.uniform01() < p) cycle.detected_objects.push_back(static_cast<uint32_t>(i));
    }
    for (const auto& shelf : cfg.shelves) {
      const double p = detection_prob(cfg.beta, cfg.reader_range, pose, shelf.pos);
      if (p > 0.0 && rng.uniform01() < p) cycle.detected_shelves.push_back(shelf.id);
    }
    out.cycles.push_back(std::move(cycle));
    out.truth.push_back(std::move(positions));
  }
  return out;
}

void write_readings_csv(const std::string& path, const std::vector<ReadCycle>& cycles) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open for writing: " + path);
  out << "time,reader_x,reader_y,reader_z,heading_x,heading_y,heading_z,detected_ids\n";
  char buf[256];
  for (const auto& c : cycles) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%.9f,%.9f,%.9f,", c.time,
                  c.reader.pos[0], c.reader.pos[1], c.reader.pos[2], c.reader.heading[0],
                  c.reader.heading[1], c.reader.heading[2]);
    out << buf;
    bool first = true;
    for (uint32_t id : c.detected_objects) {
      out << (first ? "" : ";") << id;
      first = false;
    }
    for (uint32_t id : c.detected_shelves) {
      out << (first ? "" : ";") << id;
      first = false;
    }
    out << '\n';
  }
}

std::vector<ReadCycle> read_readings_csv(const std::string& path, const WorldConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open for reading: " + path);
  std::set<uint32_t> shelf_ids;
  for (const auto& s : cfg.shelves) shelf_ids.insert(s.id);
  std::vector<ReadCycle> out;
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
    std::string field;
    ReadCycle c;
    auto next = [&]() {
      std::getline(ss, field, ',');
      return std::stod(field);
    };
    c.time = next();
    c.reader.time = c.time;
    for (int a = 0; a < 3; ++a) c.reader.pos[static_cast<size_t>(a)] = next();
    for (int a = 0; a < 3; ++a) c.reader.heading[static_cast<size_t>(a)] = next();
    std::getline(ss, field);
    std::istringstream ids(field);
    std::string tok;
    while (std::getline(ids, tok, ';')) {
      if (tok.empty()) continue;
      const uint32_t id = static_cast<uint32_t>(std::stoul(tok));
      if (shelf_ids.count(id)) c.detected_shelves.push_back(id);
      else c.detected_objects.push_back(id);
    }
    out.push_back(std::move(c));
  }
  return out;
}

void write_truth_csv(const std::string& path, const WorldConfig& cfg,
                     const SimulationResult& sim) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open for writing: " + path);
  out << "time,object_id,x,y,z\n";
  char buf[160];
  for (size_t scan = 0; scan < sim.cycles.size(); ++scan) {
    for (int i = 0; i < cfg.object_count; ++i) {
      const Vec3& p = sim.truth[scan][static_cast<size_t>(i)];
      std::snprintf(buf, sizeof(buf), "%.6f,%d,%.6f,%.6f,%.6f\n", sim.cycles[scan].time, i,
                    p[0], p[1], p[2]);
      out << buf;
    }
  }
}

// ---------------------------------------------------------------------------

Vec3 ParticleSet::weighted_mean() const {
  Vec3 m{0, 0, 0};
  for (const auto& p : particles)
    for (int a = 0; a < 3; ++a) m[static_cast<size_t>(a)] += p.weight * p.pos[static_cast<size_t>(a)];
  return m;
}

double ParticleSet::max_axis_sd() const {
  const Vec3 m = weighted_mean();
  Vec3 var{0, 0, 0};
  for (const auto& p : particles)
    for (int a = 0; a < 3; ++a) {
      const double d = p.pos[static_cast<size_t>(a)] - m[static_cast<size_t>(a)];
      var[static_cast<size_t>(a)] += p.weight * d * d;
    }
  return std::sqrt(std::max({var[0], var[1], var[2]}));
}

FilterConfig FilterConfig::from_json(const nlohmann::json& j) {
  FilterConfig cfg;
  cfg.particle_count = j.value("particles", 128);
  cfg.n_min = j.value("n_min", 8);
  cfg.n_max = j.value("n_max", 4096);
  cfg.sigma_stay = j.value("sigma_stay", 0.05);
  cfg.sigma_shelf = j.value("sigma_shelf", 0.3);
  cfg.move_prob = j.value("move_prob", 0.02);
  cfg.cell_size = j.value("cell_size", 2.0);
  cfg.candidate_margin = j.value("candidate_margin", 1.0);
  cfg.ess_fraction = j.value("ess_fraction", 0.5);
  cfg.sigma_compress = j.value("sigma_compress", 0.1);
  cfg.compress = j.value("compress", false);
  if (j.contains("reference_tags"))
    cfg.reference_tags = j.at("reference_tags").get<std::vector<uint32_t>>();
  cfg.seed = j.value("seed", 1ull);
  return cfg;
}

nlohmann::json FilterConfig::to_json() const {
  return nlohmann::json{{"particles", particle_count},
                        {"n_min", n_min},
                        {"n_max", n_max},
                        {"sigma_stay", sigma_stay},
                        {"sigma_shelf", sigma_shelf},
                        {"move_prob", move_prob},
                        {"cell_size", cell_size},
                        {"candidate_margin", candidate_margin},
                        {"ess_fraction", ess_fraction},
                        {"sigma_compress", sigma_compress},
                        {"compress", compress},
                        {"reference_tags", reference_tags},
                        {"seed", seed}};
}

SpatialIndex::SpatialIndex(double cell_size) : cell_size_(cell_size) {
  if (!(cell_size > 0.0)) throw ParameterError("cell size must be positive");
}

size_t SpatialIndex::KeyHash::operator()(const CellKey& k) const {
  size_t h = 1469598103934665603ull;
  for (int64_t v : k) {
    h ^= static_cast<size_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  }
  return h;
}

SpatialIndex::CellKey SpatialIndex::key_of(const Vec3& pos) const {
  return {static_cast<int64_t>(std::floor(pos[0] / cell_size_)),
          static_cast<int64_t>(std::floor(pos[1] / cell_size_)),
          static_cast<int64_t>(std::floor(pos[2] / cell_size_))};
}

void SpatialIndex::update(uint32_t id, const Vec3& pos) {
  const CellKey key = key_of(pos);
  auto it = positions_.find(id);
  if (it != positions_.end()) {
    if (it->second == key) return;
    auto cell = cells_.find(it->second);
    if (cell != cells_.end()) {
      cell->second.erase(id);
      if (cell->second.empty()) cells_.erase(cell);
    }
  }
  cells_[key].insert(id);
  positions_[id] = key;
}

void SpatialIndex::remove(uint32_t id) {
  auto it = positions_.find(id);
  if (it == positions_.end()) return;
  auto cell = cells_.find(it->second);
  if (cell != cells_.end()) {
    cell->second.erase(id);
    if (cell->second.empty()) cells_.erase(cell);
  }
  positions_.erase(it);
}

std::vector<uint32_t> SpatialIndex::query_ball(const Vec3& center, double radius) const {
  if (!(radius >= 0.0)) throw ParameterError("radius must be >= 0");
  std::vector<uint32_t> out;
  const CellKey lo = key_of({center[0] - radius, center[1] - radius, center[2] - radius});
  const CellKey hi = key_of({center[0] + radius, center[1] + radius, center[2] + radius});
  for (int64_t ix = lo[0]; ix <= hi[0]; ++ix) {
    for (int64_t iy = lo[1]; iy <= hi[1]; ++iy) {
      for (int64_t iz = lo[2]; iz <= hi[2]; ++iz) {
        // Closest point of the cell box to the center; keep the cell when the
        // box intersects the closed ball.
        double d2 = 0.0;
        const double blo[3] = {ix * cell_size_, iy * cell_size_, iz * cell_size_};
        for (int a = 0; a < 3; ++a) {
          const double nearest = std::clamp(center[static_cast<size_t>(a)], blo[a], blo[a] + cell_size_);
          const double d = center[static_cast<size_t>(a)] - nearest;
          d2 += d * d;
        }
        if (d2 > radius * radius) continue;
        auto it = cells_.find({ix, iy, iz});
        if (it == cells_.end()) continue;
        out.insert(out.end(), it->second.begin(), it->second.end());
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

ParticleSet resample_systematic(const ParticleSet& p, int count, Rng& rng) {
  ParticleSet out;
  out.object_id = p.object_id;
  out.particles.resize(static_cast<size_t>(count));
  std::vector<double> cum(p.particles.size());
  double acc = 0.0;
  for (size_t i = 0; i < p.particles.size(); ++i) {
    acc += p.particles[i].weight;
    cum[i] = acc;
  }
  const double u0 = rng.uniform01();
  size_t src = 0;
  for (int m = 0; m < count; ++m) {
    const double u = (static_cast<double>(m) + u0) / static_cast<double>(count) * acc;
    while (src + 1 < cum.size() && cum[src] < u) ++src;
    out.particles[static_cast<size_t>(m)].pos = p.particles[src].pos;
    out.particles[static_cast<size_t>(m)].weight = 1.0 / static_cast<double>(count);
  }
  return out;
}

ParticleSet compress_particles(const ParticleSet& p, const FilterConfig& cfg, Rng& rng) {
  if (static_cast<int>(p.particles.size()) <= cfg.n_min) return p;
  if (p.max_axis_sd() >= cfg.sigma_compress) return p;
  return resample_systematic(p, cfg.n_min, rng);
}

// ---------------------------------------------------------------------------

ParticleFilterBank::ParticleFilterBank(const WorldConfig& world, const FilterConfig& cfg)
    : world_(world), cfg_(cfg), index_(cfg.cell_size), rng_(cfg.seed) {
  world_.validate();
  for (int i = 0; i < world_.object_count; ++i) {
    object_ids_.push_back(static_cast<uint32_t>(i));
    tracked_ids_.push_back(static_cast<uint32_t>(i));
  }
  for (uint32_t ref : cfg_.reference_tags) {
    world_.shelf_by_id(ref);  // must exist
    tracked_ids_.push_back(ref);
  }
  std::sort(tracked_ids_.begin(), tracked_ids_.end());
  for (uint32_t id : tracked_ids_) {
    ParticleSet set;
    set.object_id = id;
    set.particles.resize(static_cast<size_t>(cfg_.particle_count));
    reinitialize(set);
    filters_[id] = std::move(set);
    index_.update(id, filters_[id].weighted_mean());
  }
}

void ParticleFilterBank::reinitialize(ParticleSet& p) {
  // Uniform over shelf vicinities: shelf chosen uniformly, Gaussian spread.
  const size_t n_shelves = world_.shelves.size();
  for (auto& particle : p.particles) {
    const Shelf& s = world_.shelves[rng_.below(n_shelves)];
    for (int a = 0; a < 3; ++a)
      particle.pos[static_cast<size_t>(a)] =
          s.pos[static_cast<size_t>(a)] + rng_.normal(0.0, cfg_.sigma_shelf);
    particle.weight = 1.0 / static_cast<double>(p.particles.size());
  }
}

void ParticleFilterBank::propagate(Particle& particle) {
  if (rng_.uniform01() < cfg_.move_prob) {
    const Shelf& s = world_.shelves[rng_.below(world_.shelves.size())];
    for (int a = 0; a < 3; ++a)
      particle.pos[static_cast<size_t>(a)] =
          s.pos[static_cast<size_t>(a)] + rng_.normal(0.0, cfg_.sigma_shelf);
  } else if (cfg_.sigma_stay > 0.0) {
    for (int a = 0; a < 3; ++a)
      particle.pos[static_cast<size_t>(a)] += rng_.normal(0.0, cfg_.sigma_stay);
  }
}

void ParticleFilterBank::step(const ReadCycle& cycle) {
  // Candidate set: spatial neighborhood of the reader plus everything the
  // reader actually saw this scan.
  std::vector<uint32_t> candidates =
      index_.query_ball(cycle.reader.pos, world_.reader_range + cfg_.candidate_margin);
  std::set<uint32_t> detected(cycle.detected_objects.begin(), cycle.detected_objects.end());
  for (uint32_t id : cycle.detected_shelves)
    if (filters_.count(id)) detected.insert(id);
  for (uint32_t id : detected) candidates.push_back(id);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  for (uint32_t id : candidates) {
    auto it = filters_.find(id);
    if (it == filters_.end()) continue;
    ParticleSet& set = it->second;
    const bool was_detected = detected.count(id) > 0;

    double total = 0.0;
    for (auto& particle : set.particles) {
      propagate(particle);
      const double p =
          detection_prob(world_.beta, world_.reader_range, cycle.reader, particle.pos);
      particle.weight *= was_detected ? p : (1.0 - p);
      total += particle.weight;
    }
    if (total <= 1e-300) {
      reinitialize(set);
      ++recoveries_;
    } else {
      double ess_denom = 0.0;
      for (auto& particle : set.particles) {
        particle.weight /= total;
        ess_denom += particle.weight * particle.weight;
      }
      const double ess = 1.0 / ess_denom;
      if (ess < cfg_.ess_fraction * static_cast<double>(set.particles.size()))
        set = resample_systematic(set, static_cast<int>(set.particles.size()), rng_);
    }
    if (cfg_.compress) set = compress_particles(set, cfg_, rng_);
    index_.update(id, set.weighted_mean());
    ++candidate_updates_;
  }
}

const ParticleSet& ParticleFilterBank::particles(uint32_t id) const {
  auto it = filters_.find(id);
  if (it == filters_.end()) throw ParameterError("unknown tracked id");
  return it->second;
}

Vec3 ParticleFilterBank::estimate(uint32_t id) const { return particles(id).weighted_mean(); }

double ParticleFilterBank::measure_accuracy() const {
  return measure_accuracy(cfg_.reference_tags);
}

double ParticleFilterBank::measure_accuracy(const std::vector<uint32_t>& reference_tags) const {
  if (reference_tags.empty()) throw ParameterError("reference tag set must not be empty");
  double sq = 0.0;
  for (uint32_t ref : reference_tags) {
    const Vec3 est = estimate(ref);
    const Vec3& truth = world_.shelf_by_id(ref).pos;
    const double d = distance(est, truth);
    sq += d * d;
  }
  return std::sqrt(sq / static_cast<double>(reference_tags.size()));
}

std::vector<ProbTuple> ParticleFilterBank::emit(double time, EmitPolicy policy, int gmm_k_max) {
  std::vector<ProbTuple> out;
  out.reserve(object_ids_.size());
  for (uint32_t id : object_ids_) {
    const ParticleSet& set = filters_.at(id);
    const size_t n = set.particles.size();
    std::map<std::string, AttrValue> attrs;
    attrs["tag_id"] = static_cast<double>(id);
    if (policy == EmitPolicy::Gaussian) {
      std::vector<double> vals(n * 3);
      std::vector<double> wts(n);
      for (size_t i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) vals[i * 3 + static_cast<size_t>(a)] = set.particles[i].pos[static_cast<size_t>(a)];
        wts[i] = set.particles[i].weight;
      }
      attrs["location"] = UncertainValue(fit_gaussian_nd(WeightedSamples(3, vals, wts)));
    } else {
      const char* names[3] = {"x", "y", "z"};
      for (int a = 0; a < 3; ++a) {
        std::vector<double> vals(n);
        std::vector<double> wts(n);
        for (size_t i = 0; i < n; ++i) {
          vals[i] = set.particles[i].pos[static_cast<size_t>(a)];
          wts[i] = set.particles[i].weight;
        }
        GmmFit fit = select_k(WeightedSamples::scalar(vals, wts), gmm_k_max, Criterion::Bic);
        attrs[names[a]] = UncertainValue(std::move(fit.gmm));
      }
    }
    out.push_back(make_base_tuple(time, std::move(attrs)));
  }
  return out;
}

void ParticleFilterBank::resize_particles(int count) {
  count = std::clamp(count, cfg_.n_min, cfg_.n_max);
  if (count == cfg_.particle_count) return;
  for (uint32_t id : tracked_ids_) {
    ParticleSet& set = filters_.at(id);
    set = resample_systematic(set, count, rng_);
  }
  cfg_.particle_count = count;
}

// ---------------------------------------------------------------------------

ControllerState tune_particles(const ControllerState& state, double measured_error) {
  ControllerState next = state;
  switch (state.phase) {
    case ControllerPhase::Doubling:
      if (measured_error > state.target_error) {
        next.prev_count = state.count;
        next.count = std::min(state.count * 2, state.n_max);
        if (next.count == state.count) next.phase = ControllerPhase::Steady;  // capped
      } else {
        // Current count met the target; it becomes the restore point.
        next.prev_count = state.count;
        next.phase = ControllerPhase::Decreasing;
      }
      break;
    case ControllerPhase::Decreasing:
      if (measured_error <= state.target_error) {
        next.prev_count = state.count;
        next.count = std::max(state.count - state.decrement, state.n_min);
        // No further progress possible at the floor.
        if (next.count == state.count) next.phase = ControllerPhase::Steady;
      } else {
        next.count = state.prev_count;
        next.phase = ControllerPhase::Steady;
      }
      break;
    case ControllerPhase::Steady:
      break;
  }
  return next;
}

}  // namespace ustream::rfid
