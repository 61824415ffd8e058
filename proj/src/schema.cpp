#include "evad/schema.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include "evad/error.hpp"
#include "evad/textio.hpp"

namespace evad {

char label_code(Label label) {
  switch (label) {
    case Label::Benign: return '0';
    case Label::Malicious: return '1';
    default: return '?';
  }
}

Label parse_label(std::string_view code) {
  if (code == "0") return Label::Benign;
  if (code == "1") return Label::Malicious;
  if (code == "?" || code.empty()) return Label::Unlabelled;
  throw DataError("invalid label '" + std::string(code) + "'");
}

EntityTypeId Schema::register_entity_type(std::string_view name) {
  if (name.empty()) throw SchemaError("entity type name must not be empty");
  if (auto id = find_entity_type(name)) return *id;
  auto id = static_cast<EntityTypeId>(entity_types_.size());
  entity_types_.push_back({id, std::string(name)});
  return id;
}

const EventTypeSpec& Schema::register_event_type(std::string_view name,
                                                 const std::vector<std::string>& signature) {
  if (signature.size() < 2)
    throw SchemaError("event type '" + std::string(name) +
                      "' needs at least two entities (one to condition on, one to predict)");
  std::vector<EntityTypeId> ids;
  for (const auto& s : signature) {
    auto id = find_entity_type(s);
    if (!id) throw SchemaError("unknown entity type '" + s + "' in event type '" + std::string(name) + "'");
    ids.push_back(*id);
  }
  if (auto existing = find_event_type(name)) {
    const auto& spec = event_types_[*existing];
    if (spec.signature != ids)
      throw SchemaError("event type '" + std::string(name) + "' already registered with another signature");
    return spec;
  }
  auto id = static_cast<EventTypeId>(event_types_.size());
  event_types_.push_back({id, std::string(name), std::move(ids)});
  return event_types_.back();
}

std::optional<EntityTypeId> Schema::find_entity_type(std::string_view name) const {
  for (const auto& t : entity_types_)
    if (t.name == name) return t.id;
  return std::nullopt;
}

std::optional<EventTypeId> Schema::find_event_type(std::string_view name) const {
  for (const auto& t : event_types_)
    if (t.name == name) return t.id;
  return std::nullopt;
}

EntityTypeId Schema::entity_type_id(std::string_view name) const {
  if (auto id = find_entity_type(name)) return *id;
  throw SchemaError("unknown entity type '" + std::string(name) + "'");
}

EventTypeId Schema::event_type_id(std::string_view name) const {
  if (auto id = find_event_type(name)) return *id;
  throw SchemaError("unknown event type '" + std::string(name) + "'");
}

const EventTypeSpec& Schema::event_type(EventTypeId id) const {
  if (id >= event_types_.size()) throw SchemaError("event type id out of range");
  return event_types_[id];
}

const EntityType& Schema::entity_type(EntityTypeId id) const {
  if (id >= entity_types_.size()) throw SchemaError("entity type id out of range");
  return entity_types_[id];
}

Schema Schema::authentication_default() {
  Schema s;
  s.register_entity_type("user");
  s.register_entity_type("auth_type");
  s.register_entity_type("computer");
  s.register_entity_type("process");
  s.register_event_type("local_auth", {"user", "auth_type", "computer"});
  s.register_event_type("remote_auth", {"user", "auth_type", "computer", "computer"});
  s.register_event_type("proc_start", {"computer", "user", "process"});
  return s;
}

// ---------------------------------------------------------------------------

Catalog::Catalog(Schema schema) : schema_(std::move(schema)) {
  entities_.resize(schema_.entity_types().size());
  counts_.resize(schema_.event_types().size());
  for (const auto& spec : schema_.event_types()) counts_[spec.id].resize(spec.arity());
}

EntityId Catalog::intern(EntityTypeId type, std::string_view name, int step) {
  if (type >= entities_.size()) throw DataError("unknown entity type id " + std::to_string(type));
  auto& n = entities_[type];
  std::string key(name);
  if (auto it = n.ids.find(key); it != n.ids.end()) return it->second;
  auto id = static_cast<EntityId>(n.names.size());
  n.ids.emplace(key, id);
  n.names.push_back(std::move(key));
  n.first_seen.push_back(step);
  return id;
}

std::optional<EntityId> Catalog::find(EntityTypeId type, std::string_view name) const {
  if (type >= entities_.size()) return std::nullopt;
  const auto& n = entities_[type];
  if (auto it = n.ids.find(std::string(name)); it != n.ids.end()) return it->second;
  return std::nullopt;
}

const std::string& Catalog::name(EntityTypeId type, EntityId id) const {
  return entities_.at(type).names.at(id);
}

std::size_t Catalog::size(EntityTypeId type) const { return entities_.at(type).names.size(); }

int Catalog::first_seen(EntityTypeId type, EntityId id) const {
  return entities_.at(type).first_seen.at(id);
}

std::vector<EntityId> Catalog::new_entities_in_window(EntityTypeId type, int step) const {
  if (step < 1) throw DataError("new_entities_in_window requires a window index >= 1");
  std::vector<EntityId> out;
  const auto& fs = entities_.at(type).first_seen;
  for (std::size_t i = 0; i < fs.size(); ++i)
    if (fs[i] == step) out.push_back(static_cast<EntityId>(i));
  return out;
}

std::vector<EntityId> Catalog::seen_up_to(EntityTypeId type, int step) const {
  std::vector<EntityId> out;
  const auto& fs = entities_.at(type).first_seen;
  for (std::size_t i = 0; i < fs.size(); ++i)
    if (fs[i] <= step) out.push_back(static_cast<EntityId>(i));
  return out;
}

Event Catalog::intern_event(const RawEvent& raw, int step, bool count) {
  auto type = schema_.find_event_type(raw.type);
  if (!type) throw DataError("unknown event type '" + raw.type + "'");
  const auto& spec = schema_.event_type(*type);
  if (raw.entities.size() != spec.arity())
    throw DataError("event type '" + raw.type + "' expects " + std::to_string(spec.arity()) +
                    " entities, got " + std::to_string(raw.entities.size()));
  Event ev;
  ev.timestamp = raw.timestamp;
  ev.type = *type;
  ev.label = raw.label;
  ev.entities.reserve(spec.arity());
  for (std::size_t i = 0; i < spec.arity(); ++i)
    ev.entities.push_back(intern(spec.signature[i], raw.entities[i], step));
  if (count) add_count(ev);
  return ev;
}

void Catalog::validate(const Event& event) const {
  const auto& spec = schema_.event_type(event.type);
  if (event.entities.size() != spec.arity())
    throw DataError("event of type '" + spec.name + "' has wrong arity");
  for (std::size_t i = 0; i < spec.arity(); ++i)
    if (event.entities[i] >= size(spec.signature[i]))
      throw DataError("event of type '" + spec.name + "' references an unknown entity");
}

std::vector<std::string> Catalog::entity_names(const Event& event) const {
  const auto& spec = schema_.event_type(event.type);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < event.entities.size(); ++i)
    out.push_back(name(spec.signature[i], event.entities[i]));
  return out;
}

RawEvent Catalog::to_raw(const Event& event) const {
  RawEvent r;
  r.timestamp = event.timestamp;
  r.type = schema_.event_type(event.type).name;
  r.entities = entity_names(event);
  r.label = event.label;
  return r;
}

void Catalog::add_count(const Event& event) {
  auto& per_pos = counts_.at(event.type);
  for (std::size_t i = 0; i < event.entities.size(); ++i) {
    auto& c = per_pos.at(i);
    if (c.size() <= event.entities[i]) c.resize(event.entities[i] + 1, 0);
    ++c[event.entities[i]];
  }
}

std::uint64_t Catalog::count(EventTypeId type, std::size_t position, EntityId id) const {
  const auto& c = counts_.at(type).at(position);
  return id < c.size() ? c[id] : 0;
}

std::vector<std::uint64_t> Catalog::counts(EventTypeId type, std::size_t position) const {
  auto c = counts_.at(type).at(position);
  c.resize(size(schema_.event_type(type).signature.at(position)), 0);
  return c;
}

void Catalog::clear_counts() {
  for (auto& per_pos : counts_)
    for (auto& c : per_pos) c.clear();
}

Catalog Catalog::truncated(int step) const {
  Catalog out(schema_);
  for (std::size_t t = 0; t < entities_.size(); ++t) {
    const auto& n = entities_[t];
    bool in_prefix = true;
    for (std::size_t i = 0; i < n.names.size(); ++i) {
      if (n.first_seen[i] <= step) {
        if (!in_prefix)
          throw DataError("catalog ids are not in chronological order for entity type '" +
                          schema_.entity_type(static_cast<EntityTypeId>(t)).name + "'");
        out.intern(static_cast<EntityTypeId>(t), n.names[i], n.first_seen[i]);
      } else {
        in_prefix = false;
      }
    }
  }
  for (std::size_t e = 0; e < counts_.size(); ++e) {
    for (std::size_t p = 0; p < counts_[e].size(); ++p) {
      auto c = counts_[e][p];
      c.resize(std::min(c.size(), out.size(schema_.event_types()[e].signature[p])));
      out.counts_[e][p] = std::move(c);
    }
  }
  return out;
}

// Text snapshot, one record per line, tab separated with escaping:
//   evad-catalog <version>
//   entity_type <name>
//   event_type <name> <entity type>...
//   entity <entity type> <id> <first_seen> <name>
//   count <event type> <position> <id> <count>
void Catalog::save(std::ostream& out) const {
  using textio::escape;
  out << "evad-catalog\t1\n";
  for (const auto& t : schema_.entity_types()) out << "entity_type\t" << escape(t.name) << '\n';
  for (const auto& e : schema_.event_types()) {
    out << "event_type\t" << escape(e.name);
    for (auto s : e.signature) out << '\t' << escape(schema_.entity_type(s).name);
    out << '\n';
  }
  for (std::size_t t = 0; t < entities_.size(); ++t) {
    const auto& n = entities_[t];
    const auto& tname = escape(schema_.entity_types()[t].name);
    for (std::size_t i = 0; i < n.names.size(); ++i)
      out << "entity\t" << tname << '\t' << i << '\t' << n.first_seen[i] << '\t' << escape(n.names[i])
          << '\n';
  }
  for (std::size_t e = 0; e < counts_.size(); ++e) {
    const auto& ename = escape(schema_.event_types()[e].name);
    for (std::size_t p = 0; p < counts_[e].size(); ++p)
      for (std::size_t i = 0; i < counts_[e][p].size(); ++i)
        if (counts_[e][p][i] > 0)
          out << "count\t" << ename << '\t' << p << '\t' << i << '\t' << counts_[e][p][i] << '\n';
  }
}

Catalog Catalog::load(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line) || line != "evad-catalog\t1") throw ParseError(1, "not a catalog snapshot (v1)");
  ++line_no;
  Schema schema;
  std::vector<std::vector<std::string>> deferred;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = textio::split_tsv(line);
    try {
      if (f[0] == "entity_type" && f.size() == 2) {
        schema.register_entity_type(f[1]);
      } else if (f[0] == "event_type" && f.size() >= 3) {
        schema.register_event_type(f[1], {f.begin() + 2, f.end()});
      } else if ((f[0] == "entity" && f.size() == 5) || (f[0] == "count" && f.size() == 5)) {
        f.push_back(std::to_string(line_no));
        deferred.push_back(std::move(f));
      } else {
        throw ParseError(line_no, "unrecognized catalog record");
      }
    } catch (const SchemaError& e) {
      throw ParseError(line_no, e.what());
    }
  }
  Catalog cat(std::move(schema));
  for (const auto& f : deferred) {
    const auto ln = static_cast<std::size_t>(textio::parse_int(f[5]));
    try {
      if (f[0] == "entity") {
        auto type = cat.schema_.entity_type_id(f[1]);
        auto id = textio::parse_int(f[2]);
        if (static_cast<std::size_t>(id) != cat.size(type)) throw ParseError(ln, "entity ids must be dense and ordered");
        cat.intern(type, f[4], static_cast<int>(textio::parse_int(f[3])));
      } else {
        auto type = cat.schema_.event_type_id(f[1]);
        auto pos = static_cast<std::size_t>(textio::parse_int(f[2]));
        auto id = static_cast<std::size_t>(textio::parse_int(f[3]));
        auto& c = cat.counts_.at(type).at(pos);
        if (c.size() <= id) c.resize(id + 1, 0);
        c[id] = static_cast<std::uint64_t>(textio::parse_int(f[4]));
      }
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(ln, e.what());
    }
  }
  return cat;
}

void Catalog::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write catalog " + path);
  save(out);
}

Catalog Catalog::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open catalog " + path);
  return load(in);
}

}  // namespace evad
