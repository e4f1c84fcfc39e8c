#include "ustream/tuple.hpp"

#include <fstream>

namespace ustream {

namespace {
std::atomic<uint64_t> g_next_id{1};
}

const AttrValue& ProbTuple::attr(const std::string& name) const {
  auto it = attrs.find(name);
  if (it == attrs.end()) throw InputError("tuple has no attribute '" + name + "'");
  return it->second;
}

double ProbTuple::scalar(const std::string& name) const {
  const AttrValue& v = attr(name);
  if (const auto* d = std::get_if<double>(&v)) return *d;
  throw InputError("attribute '" + name + "' is not a scalar");
}

const UncertainValue& ProbTuple::dist(const std::string& name) const {
  const AttrValue& v = attr(name);
  if (const auto* d = std::get_if<UncertainValue>(&v)) return *d;
  throw InputError("attribute '" + name + "' is not a distribution");
}

uint64_t next_tuple_id() { return g_next_id.fetch_add(1, std::memory_order_relaxed); }

void reset_tuple_ids(uint64_t start) { g_next_id.store(start, std::memory_order_relaxed); }

ProbTuple make_base_tuple(double ts, std::map<std::string, AttrValue> attrs, double existence) {
  if (!(existence > 0.0 && existence <= 1.0))
    throw ParameterError("tuple existence must be in (0, 1]");
  ProbTuple t;
  t.id = next_tuple_id();
  t.ts = ts;
  t.attrs = std::move(attrs);
  t.existence = existence;
  t.lineage = {t.id};
  return t;
}

nlohmann::json tuple_to_json(const ProbTuple& t) {
  nlohmann::json attrs = nlohmann::json::object();
  for (const auto& [name, value] : t.attrs) {
    if (const auto* d = std::get_if<double>(&value)) {
      attrs[name] = *d;
    } else if (const auto* s = std::get_if<std::string>(&value)) {
      attrs[name] = *s;
    } else {
      attrs[name] = value_to_json(std::get<UncertainValue>(value));
    }
  }
  return nlohmann::json{{"id", t.id},
                        {"ts", t.ts},
                        {"attrs", attrs},
                        {"existence", t.existence},
                        {"lineage", std::vector<uint64_t>(t.lineage.begin(), t.lineage.end())}};
}

ProbTuple tuple_from_json(const nlohmann::json& j) {
  ProbTuple t;
  t.id = j.at("id").get<uint64_t>();
  t.ts = j.at("ts").get<double>();
  t.existence = j.at("existence").get<double>();
  if (!(t.existence > 0.0 && t.existence <= 1.0))
    throw ValidationError("tuple existence must be in (0, 1]");
  for (uint64_t id : j.at("lineage").get<std::vector<uint64_t>>()) t.lineage.insert(id);
  if (t.lineage.empty()) throw ValidationError("tuple lineage must be nonempty");
  for (const auto& [name, value] : j.at("attrs").items()) {
    if (value.is_number()) {
      t.attrs[name] = value.get<double>();
    } else if (value.is_string()) {
      t.attrs[name] = value.get<std::string>();
    } else if (value.is_object()) {
      t.attrs[name] = value_from_json(value);
    } else {
      throw ValidationError("unsupported attribute payload for '" + name + "'");
    }
  }
  return t;
}

void write_jsonl(const std::string& path, const std::vector<ProbTuple>& tuples) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open for writing: " + path);
  for (const auto& t : tuples) out << tuple_to_json(t).dump() << '\n';
}

std::vector<ProbTuple> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open for reading: " + path);
  std::vector<ProbTuple> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(tuple_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace ustream
