#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace evad {

using EntityTypeId = std::uint32_t;
using EventTypeId = std::uint32_t;
/// Dense index of an entity within its own entity type.
using EntityId = std::uint32_t;

enum class Label : std::uint8_t { Benign, Malicious, Unlabelled };

char label_code(Label label);  // '0', '1', '?'
Label parse_label(std::string_view code);

struct EntityType {
  EntityTypeId id = 0;
  std::string name;
};

struct EventTypeSpec {
  EventTypeId id = 0;
  std::string name;
  /// signature[i] is the entity type of the i-th entity of the event.
  std::vector<EntityTypeId> signature;

  std::size_t arity() const { return signature.size(); }
};

/// A typed tuple of interned entities. entities[0] is the conditioning entity.
struct Event {
  std::int64_t timestamp = 0;
  EventTypeId type = 0;
  std::vector<EntityId> entities;
  Label label = Label::Unlabelled;
};

/// An event whose entities are still names (ingest output, canonical files).
struct RawEvent {
  std::int64_t timestamp = 0;
  std::string type;
  std::vector<std::string> entities;
  Label label = Label::Unlabelled;
  /// Position in the originating file; used as a stable event id.
  std::uint64_t source_index = 0;

  bool operator==(const RawEvent&) const = default;
};

/// Registry of entity and event types. Registrations are append-only.
class Schema {
 public:
  EntityTypeId register_entity_type(std::string_view name);

  /// Idempotent for an identical (name, signature); throws SchemaError on a
  /// conflicting redefinition or when the signature has fewer than 2 entries.
  const EventTypeSpec& register_event_type(std::string_view name,
                                           const std::vector<std::string>& signature);

  std::optional<EntityTypeId> find_entity_type(std::string_view name) const;
  std::optional<EventTypeId> find_event_type(std::string_view name) const;
  EntityTypeId entity_type_id(std::string_view name) const;  // throws
  EventTypeId event_type_id(std::string_view name) const;    // throws

  const std::vector<EntityType>& entity_types() const { return entity_types_; }
  const std::vector<EventTypeSpec>& event_types() const { return event_types_; }
  const EventTypeSpec& event_type(EventTypeId id) const;
  const EntityType& entity_type(EntityTypeId id) const;

  /// user / auth_type / computer / process with local_auth (U,T,C),
  /// remote_auth (U,T,C,C) and proc_start (C,U,P).
  static Schema authentication_default();

 private:
  std::vector<EntityType> entity_types_;
  std::vector<EventTypeSpec> event_types_;
};

/// Interning of entity names, first-seen steps and per-position
/// occurrence counts. Step 0 is the training period, step T >= 1 the T-th
/// streaming window.
class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(Schema schema);

  const Schema& schema() const { return schema_; }

  /// Returns the existing id, or assigns the next dense id with
  /// first_seen = step.
  EntityId intern(EntityTypeId type, std::string_view name, int step);
  std::optional<EntityId> find(EntityTypeId type, std::string_view name) const;
  const std::string& name(EntityTypeId type, EntityId id) const;
  std::size_t size(EntityTypeId type) const;
  int first_seen(EntityTypeId type, EntityId id) const;

  /// Entities of `type` first seen exactly at step T (T >= 1).
  std::vector<EntityId> new_entities_in_window(EntityTypeId type, int step) const;
  /// Entities of `type` with first_seen <= step.
  std::vector<EntityId> seen_up_to(EntityTypeId type, int step) const;

  /// Validates the raw event against the schema, interns its entities and
  /// optionally adds it to the occurrence counts.
  Event intern_event(const RawEvent& raw, int step, bool count);
  /// Validation only: the event must already reference known entities.
  void validate(const Event& event) const;
  std::vector<std::string> entity_names(const Event& event) const;
  RawEvent to_raw(const Event& event) const;

  void add_count(const Event& event);
  std::uint64_t count(EventTypeId type, std::size_t position, EntityId id) const;
  /// Counts for every entity of the position's entity type (zero-padded).
  std::vector<std::uint64_t> counts(EventTypeId type, std::size_t position) const;
  void clear_counts();

  /// Copy restricted to entities with first_seen <= step. Requires those
  /// entities to form an id prefix of every type (chronological interning).
  Catalog truncated(int step) const;

  void save(std::ostream& out) const;
  static Catalog load(std::istream& in);
  void save(const std::string& path) const;
  static Catalog load(const std::string& path);

 private:
  struct Names {
    std::vector<std::string> names;
    std::vector<int> first_seen;
    std::unordered_map<std::string, EntityId> ids;
  };

  Schema schema_;
  std::vector<Names> entities_;
  // counts_[event type][position][entity id]
  std::vector<std::vector<std::vector<std::uint64_t>>> counts_;
};

}  // namespace evad
