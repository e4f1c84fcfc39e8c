// Probabilistic tuples: the unit flowing between operators. Each tuple
// carries a timestamp, named attributes (scalars, strings or distributions),
// an existence probability and the set of base-tuple ids it derives from.
#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>

#include <json.hpp>

#include "ustream/distribution.hpp"

namespace ustream {

using AttrValue = std::variant<double, std::string, UncertainValue>;

// Replayable record of how a derived attribute was computed from a base
// tuple, consumed by lineage-aware aggregation. Kind::Opaque marks
// derivations that cannot be re-executed.
struct Derivation {
  enum class Kind { Base, Affine, Truncated, Merged, Opaque };
  Kind kind = Kind::Base;
  uint64_t source = 0;      // base tuple id (Affine/Truncated/Merged)
  std::string source_attr;  // attribute on the source tuple
  double scale = 1.0;
  double offset = 0.0;
};

struct ProbTuple {
  uint64_t id = 0;
  double ts = 0.0;
  std::map<std::string, AttrValue> attrs;
  double existence = 1.0;
  std::set<uint64_t> lineage;
  std::map<std::string, Derivation> derivations;  // in-memory only

  bool has_attr(const std::string& name) const { return attrs.count(name) > 0; }
  const AttrValue& attr(const std::string& name) const;
  double scalar(const std::string& name) const;
  const UncertainValue& dist(const std::string& name) const;
};

// Globally unique tuple ids for this process.
uint64_t next_tuple_id();
// Resets the counter; used by deterministic replays so that two runs with the
// same seed produce identical ids.
void reset_tuple_ids(uint64_t start = 1);

// Creates a base tuple whose lineage is {own id}.
ProbTuple make_base_tuple(double ts, std::map<std::string, AttrValue> attrs,
                          double existence = 1.0);

nlohmann::json tuple_to_json(const ProbTuple& t);
ProbTuple tuple_from_json(const nlohmann::json& j);

void write_jsonl(const std::string& path, const std::vector<ProbTuple>& tuples);
std::vector<ProbTuple> read_jsonl(const std::string& path);

}  // namespace ustream
