// Data capture and transformation operator for mobile RFID readings: a
// seeded warehouse/reader simulator, per-object (factored) particle filters
// with spatial candidate indexing and particle compression, reference-tag
// accuracy measurement, and the feedback particle-count controller.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ustream/fitting.hpp"
#include "ustream/random.hpp"
#include "ustream/tuple.hpp"

namespace ustream::rfid {

using Vec3 = std::array<double, 3>;

double distance(const Vec3& a, const Vec3& b);

struct ReaderPose {
  double time = 0.0;
  Vec3 pos{0, 0, 0};
  Vec3 heading{1, 0, 0};  // unit vector, validated to 1e-9
};

struct Shelf {
  uint32_t id = 0;
  Vec3 pos{0, 0, 0};
};

// Logistic read-rate model over distance and reader/tag angle; probability is
// exactly 0 beyond the reader range.
struct SensingModel {
  double b0 = 0.0;
  double b_dist = 0.0;   // per meter
  double b_angle = 0.0;  // per radian
};

struct WorldConfig {
  Vec3 area{10.0, 10.0, 3.0};
  std::vector<Shelf> shelves;
  int object_count = 0;
  double move_prob = 0.02;  // per scan, < 0.5
  SensingModel beta;
  double reader_range = 3.0;
  std::vector<ReaderPose> reader_path;
  uint64_t seed = 1;

  void validate() const;
  const Shelf& shelf_by_id(uint32_t id) const;

  static WorldConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct ReadCycle {
  double time = 0.0;
  ReaderPose reader;
  std::vector<uint32_t> detected_objects;  // sorted
  std::vector<uint32_t> detected_shelves;  // sorted
};

struct SimulationResult {
  std::vector<ReadCycle> cycles;
  // truth[scan][object] = position after that scan's moves.
  std::vector<std::vector<Vec3>> truth;
};

double detection_prob(const SensingModel& beta, double range, const ReaderPose& reader,
                      const Vec3& tag_pos);

// Deterministic given cfg.seed: per scan each object stays or jumps to a
// uniformly chosen other shelf, then every in-range tag is detected with the
// logistic read-rate probability.
SimulationResult simulate(const WorldConfig& cfg);

// Readings CSV: time,reader_x..z,heading_x..z,detected_ids (semicolon-joined;
// object and shelf ids share the column and are classified via the config).
void write_readings_csv(const std::string& path, const std::vector<ReadCycle>& cycles);
std::vector<ReadCycle> read_readings_csv(const std::string& path, const WorldConfig& cfg);
// Ground truth CSV: time,object_id,x,y,z.
void write_truth_csv(const std::string& path, const WorldConfig& cfg,
                     const SimulationResult& sim);

// ---------------------------------------------------------------------------

struct Particle {
  Vec3 pos{0, 0, 0};
  double weight = 0.0;
};

struct ParticleSet {
  uint32_t object_id = 0;
  std::vector<Particle> particles;

  Vec3 weighted_mean() const;
  // Largest per-axis weighted standard deviation.
  double max_axis_sd() const;
};

struct FilterConfig {
  int particle_count = 128;
  int n_min = 8;
  int n_max = 4096;
  double sigma_stay = 0.05;     // stay-on-shelf jitter (m)
  double sigma_shelf = 0.3;     // spread around a shelf after a move (m)
  double move_prob = 0.02;      // motion-model move probability
  double cell_size = 2.0;       // spatial index cell edge (m)
  double candidate_margin = 1.0;  // added to reader range for candidate lookup
  double ess_fraction = 0.5;    // resample when ESS < fraction * N
  double sigma_compress = 0.1;  // compression trigger (m)
  bool compress = false;
  std::vector<uint32_t> reference_tags;  // shelf ids tracked as hidden objects
  uint64_t seed = 1;

  static FilterConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Uniform cell grid over object estimates; every tracked object lives in
// exactly one cell keyed by its current weighted-mean position.
class SpatialIndex {
 public:
  explicit SpatialIndex(double cell_size);

  void update(uint32_t id, const Vec3& pos);
  void remove(uint32_t id);
  // Ids whose cell intersects the closed ball around `center`; a superset of
  // all objects whose cell center lies within `radius`.
  std::vector<uint32_t> query_ball(const Vec3& center, double radius) const;
  size_t size() const { return positions_.size(); }

 private:
  using CellKey = std::array<int64_t, 3>;
  struct KeyHash {
    size_t operator()(const CellKey& k) const;
  };
  CellKey key_of(const Vec3& pos) const;

  double cell_size_;
  std::unordered_map<CellKey, std::set<uint32_t>, KeyHash> cells_;
  std::unordered_map<uint32_t, CellKey> positions_;
};

// Systematic resampling down/up to `count` particles (weights become uniform).
ParticleSet resample_systematic(const ParticleSet& p, int count, Rng& rng);

// Resamples concentrated clouds down to n_min particles; sets whose largest
// axis deviation exceeds sigma_compress are returned unchanged.
ParticleSet compress_particles(const ParticleSet& p, const FilterConfig& cfg, Rng& rng);

enum class EmitPolicy { Gaussian, GmmBic };

// One independent particle filter per tracked id (objects plus reference
// tags); candidates for each scan come from the spatial index.
class ParticleFilterBank {
 public:
  ParticleFilterBank(const WorldConfig& world, const FilterConfig& cfg);

  void step(const ReadCycle& cycle);

  const ParticleSet& particles(uint32_t id) const;
  Vec3 estimate(uint32_t id) const;
  const std::vector<uint32_t>& tracked_ids() const { return tracked_ids_; }

  // RMSE of reference-tag estimates against their known shelf positions.
  double measure_accuracy() const;
  double measure_accuracy(const std::vector<uint32_t>& reference_tags) const;

  // One location tuple per (non-reference) object for the given scan time.
  std::vector<ProbTuple> emit(double time, EmitPolicy policy, int gmm_k_max = 3);

  void resize_particles(int count);
  int particle_count() const { return cfg_.particle_count; }
  uint64_t recoveries() const { return recoveries_; }
  uint64_t candidate_updates() const { return candidate_updates_; }

 private:
  void reinitialize(ParticleSet& p);
  void propagate(Particle& particle);

  WorldConfig world_;
  FilterConfig cfg_;
  std::vector<uint32_t> tracked_ids_;   // objects then reference tags, sorted
  std::vector<uint32_t> object_ids_;
  std::map<uint32_t, ParticleSet> filters_;
  SpatialIndex index_;
  Rng rng_;
  uint64_t recoveries_ = 0;
  uint64_t candidate_updates_ = 0;
};

// ---------------------------------------------------------------------------
// Feedback controller for the particle count. Doubles while the measured
// error exceeds the target, then walks the count back down by a constant
// decrement until the error resurfaces, and holds steady from then on.

enum class ControllerPhase { Doubling, Decreasing, Steady };

struct ControllerState {
  ControllerPhase phase = ControllerPhase::Doubling;
  int count = 8;
  int prev_count = 8;
  int decrement = 8;
  double target_error = 0.3;  // meters
  int n_min = 8;
  int n_max = 4096;
};

ControllerState tune_particles(const ControllerState& state, double measured_error);

}  // namespace ustream::rfid
