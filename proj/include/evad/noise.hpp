#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "evad/rng.hpp"
#include "evad/schema.hpp"

namespace evad {

/// Log-unigram noise distribution for one (event type, position):
/// Q(v) proportional to log(1 + C(v)) over entities with C(v) >= 1.
class NoiseDistribution {
 public:
  NoiseDistribution() = default;

  EventTypeId event_type() const { return event_type_; }
  std::size_t position() const { return position_; }
  bool empty() const { return support_.empty(); }

  const std::vector<EntityId>& support() const { return support_; }
  /// Aligned with support().
  const std::vector<double>& probabilities() const { return probabilities_; }

  /// Q(v); zero for entities outside the support.
  double probability(EntityId v) const { return v < dense_.size() ? dense_[v] : 0.0; }
  /// Q(v) for an observed (positive) entity. Entities outside the support
  /// are treated as if seen once, i.e. log(2) / sum log(1 + C).
  double positive_probability(EntityId v) const {
    const double q = probability(v);
    return q > 0.0 ? q : unseen_probability_;
  }

  EntityId sample(Rng& rng) const;

  friend NoiseDistribution build_noise_distribution(std::span<const std::uint64_t> counts,
                                                    EventTypeId event_type, std::size_t position);

 private:
  EventTypeId event_type_ = 0;
  std::size_t position_ = 0;
  std::vector<EntityId> support_;
  std::vector<double> probabilities_;
  std::vector<double> cumulative_;  // unnormalised running sums of log(1 + C)
  std::vector<double> dense_;       // Q indexed by entity id
  double unseen_probability_ = 0.0;
};

/// counts[v] = C(v) for every entity id of the position's entity type.
/// Throws DataError when no entity has a positive count.
NoiseDistribution build_noise_distribution(std::span<const std::uint64_t> counts, EventTypeId event_type,
                                           std::size_t position);

/// K i.i.d. draws with replacement.
std::vector<EntityId> sample_negatives(const NoiseDistribution& noise, std::size_t k, Rng& rng);

/// One distribution per (event type, predicted position), built from the
/// training counts held by a catalog. Event types without training events
/// get empty entries.
class NoiseTables {
 public:
  NoiseTables() = default;
  static NoiseTables from_catalog(const Catalog& catalog);

  bool has(EventTypeId type) const;
  /// Throws DataError for an empty entry.
  const NoiseDistribution& at(EventTypeId type, std::size_t position) const;

 private:
  std::vector<std::vector<NoiseDistribution>> tables_;
};

}  // namespace evad
