#include "evad/noise.hpp"

#include <algorithm>
#include <cmath>

#include "evad/error.hpp"

namespace evad {

NoiseDistribution build_noise_distribution(std::span<const std::uint64_t> counts, EventTypeId event_type,
                                           std::size_t position) {
  NoiseDistribution d;
  d.event_type_ = event_type;
  d.position_ = position;
  double total = 0.0;
  for (std::size_t v = 0; v < counts.size(); ++v) {
    if (counts[v] == 0) continue;
    total += std::log1p(static_cast<double>(counts[v]));
    d.support_.push_back(static_cast<EntityId>(v));
    d.cumulative_.push_back(total);
  }
  if (d.support_.empty()) throw DataError("noise distribution needs at least one entity with a positive count");
  d.dense_.assign(counts.size(), 0.0);
  d.probabilities_.reserve(d.support_.size());
  for (auto v : d.support_) {
    const double q = std::log1p(static_cast<double>(counts[v])) / total;
    d.probabilities_.push_back(q);
    d.dense_[v] = q;
  }
  d.unseen_probability_ = std::log(2.0) / total;
  return d;
}

EntityId NoiseDistribution::sample(Rng& rng) const {
  const double u = rng.uniform() * cumulative_.back();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  auto idx = static_cast<std::size_t>(it - cumulative_.begin());
  if (idx >= support_.size()) idx = support_.size() - 1;
  return support_[idx];
}

std::vector<EntityId> sample_negatives(const NoiseDistribution& noise, std::size_t k, Rng& rng) {
  if (noise.empty()) throw DataError("cannot sample from an empty noise distribution");
  std::vector<EntityId> out(k);
  for (auto& v : out) v = noise.sample(rng);
  return out;
}

NoiseTables NoiseTables::from_catalog(const Catalog& catalog) {
  NoiseTables t;
  for (const auto& spec : catalog.schema().event_types()) {
    std::vector<NoiseDistribution> per_pos(spec.arity());
    for (std::size_t i = 1; i < spec.arity(); ++i) {
      auto c = catalog.counts(spec.id, i);
      if (std::any_of(c.begin(), c.end(), [](auto x) { return x > 0; }))
        per_pos[i] = build_noise_distribution(c, spec.id, i);
    }
    t.tables_.push_back(std::move(per_pos));
  }
  return t;
}

bool NoiseTables::has(EventTypeId type) const {
  return type < tables_.size() && tables_[type].size() > 1 && !tables_[type][1].empty();
}

const NoiseDistribution& NoiseTables::at(EventTypeId type, std::size_t position) const {
  if (type >= tables_.size() || position >= tables_[type].size() || tables_[type][position].empty())
    throw DataError("no noise distribution for event type " + std::to_string(type) + " position " +
                    std::to_string(position) + " (type absent from training)");
  return tables_[type][position];
}

}  // namespace evad
