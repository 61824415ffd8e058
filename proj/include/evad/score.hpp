#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evad/kernels.hpp"
#include "evad/model.hpp"
#include "evad/schema.hpp"

namespace evad {

/// Floor applied to per-type standard deviations.
inline constexpr double kStdFloor = 1e-6;

struct ScoredEvent {
  Event event;
  std::vector<double> p_values;  // positions 1..N-1
  double raw_score = 0.0;
  double z_score = 0.0;
  bool standardized = true;  // false: event type unknown to the standardizer
};

/// Total probability of the candidates no more likely than the observed
/// entity at `position` (ties count).
double discrete_p_value(const ModelParams& params, const Event& event, std::size_t position);
std::vector<double> event_p_values(const ModelParams& params, const Event& event);

/// y = -(1/(N-1)) sum log p. Throws DataError for a p-value outside (0, 1].
double raw_event_score(std::span<const double> p_values);

struct TypeMoments {
  double mean = 0.0;
  double stddev = 1.0;
  std::size_t count = 0;
  bool floored = false;
};

/// Per-event-type mean and (sample) standard deviation of training scores.
class Standardizer {
 public:
  Standardizer() = default;

  /// Raw training scores grouped by event type id. Types with fewer than two
  /// scores are left unfitted.
  static Standardizer fit(const std::vector<std::vector<double>>& raw_by_type);
  static Standardizer fit(std::span<const ScoredEvent> training);

  bool fitted(EventTypeId type) const;
  const TypeMoments& moments(EventTypeId type) const;  // throws DataError if unfitted
  /// (y - mean) / std; throws DataError for an unfitted type.
  double standardize(EventTypeId type, double raw) const;
  /// Unfitted types fall back to mean 0, std 1; *flag is set false then.
  double standardize_or_identity(EventTypeId type, double raw, bool* standardized) const;

  /// Replaces the moments of every type fitted in `newer`.
  void update_from(const Standardizer& newer);

  void save(std::ostream& out, const Schema& schema) const;
  static Standardizer load(std::istream& in, const Schema& schema);
  void save(const std::string& path, const Schema& schema) const;
  static Standardizer load(const std::string& path, const Schema& schema);

 private:
  std::vector<std::optional<TypeMoments>> moments_;
};

Standardizer fit_standardizer(std::span<const ScoredEvent> training);
double standardized_score(const Standardizer& standardizer, EventTypeId type, double raw);

/// Scores events with fixed parameters. A null standardizer leaves z = y.
std::vector<ScoredEvent> score_events(const ModelParams& params, std::span<const Event> events,
                                      const Standardizer* standardizer, Execution exec = Execution::Parallel);

// Scored-event records, one per line, tab separated (escaped):
//   event_id timestamp event_type label y z standardized N entity_1..entity_N p_2..p_N
struct ScoredRecord {
  std::uint64_t event_id = 0;
  std::int64_t timestamp = 0;
  std::string event_type;
  Label label = Label::Unlabelled;
  double raw_score = 0.0;
  double z_score = 0.0;
  bool standardized = true;
  std::vector<std::string> entities;
  std::vector<double> p_values;

  bool operator==(const ScoredRecord&) const = default;
};

ScoredRecord to_record(const ScoredEvent& scored, const Catalog& catalog, std::uint64_t event_id);
std::string format_scored_record(const ScoredRecord& record);
ScoredRecord parse_scored_record(const std::string& line, std::size_t line_no);
std::vector<ScoredRecord> read_scored_file(const std::string& path);

}  // namespace evad
