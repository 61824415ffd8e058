#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "evad/rng.hpp"
#include "evad/schema.hpp"

namespace evad {

/// Inner products beta . (x (.) h) are clamped to this range before
/// exponentiation so affinities stay finite.
inline constexpr double kLogitClamp = 30.0;

/// Row-major table of entity embeddings for one entity type.
struct EmbeddingTable {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  EmbeddingTable() = default;
  EmbeddingTable(std::size_t rows, std::size_t dim) : rows(rows), dim(dim), data(rows * dim, 0.0) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * dim, dim}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  void resize_rows(std::size_t n) {
    rows = n;
    data.resize(n * dim, 0.0);
  }
  bool operator==(const EmbeddingTable&) const = default;
};

/// Parameters specific to one event type.
struct EventTypeParams {
  std::vector<EntityTypeId> signature;
  /// arity x arity, weights[j * arity + i] is the weight of entity j when
  /// predicting entity i; only j < i is used.
  std::vector<double> weights;
  std::vector<double> beta;
  /// log of the task uncertainty for each predicted position; entry 0 unused.
  std::vector<double> log_sigma;

  std::size_t arity() const { return signature.size(); }
  double weight(std::size_t j, std::size_t i) const { return weights[j * arity() + i]; }
  double& weight(std::size_t j, std::size_t i) { return weights[j * arity() + i]; }
  bool operator==(const EventTypeParams&) const = default;
};

enum class ParamGroup : std::uint8_t { Embeddings = 1, Weights = 2, Beta = 4, LogSigma = 8 };

/// Bit set of parameter groups, used to freeze groups during optimisation.
struct ParamMask {
  std::uint8_t bits = 0x0f;
  static ParamMask all() { return {0x0f}; }
  static ParamMask embeddings_only() { return {static_cast<std::uint8_t>(ParamGroup::Embeddings)}; }
  bool has(ParamGroup g) const { return bits & static_cast<std::uint8_t>(g); }
};

struct ModelParams {
  std::size_t dim = 0;
  std::vector<EmbeddingTable> embeddings;  // indexed by entity type
  std::vector<EventTypeParams> event_types;

  /// Random initialisation: embeddings and beta ~ N(0, 1/d), weights 1/(i-1)
  /// so each initial context vector is the prefix mean, log sigma = 0.
  static ModelParams initialize(const Catalog& catalog, std::size_t dim, Rng& rng);
  /// Same shapes, all zeros. Used for gradients and optimizer moments.
  static ModelParams zeros_like(const ModelParams& other);

  /// Grows every embedding table to the catalog's entity counts (new rows 0).
  void sync_rows(const Catalog& catalog);
  std::size_t candidates(EntityTypeId type) const { return embeddings.at(type).rows; }

  /// Visits every tensor of the selected groups in a fixed order.
  void for_each(ParamMask mask, const std::function<void(ParamGroup, std::span<double>)>& fn);
  void for_each(ParamMask mask, const std::function<void(ParamGroup, std::span<const double>)>& fn) const;
  std::size_t parameter_count() const;

  bool operator==(const ModelParams&) const = default;
};

/// h = sum_{j < position} w_{j,position} x_j over the given prefix rows.
std::vector<double> context_vector(const EventTypeParams& params, std::size_t position,
                                   const std::vector<std::span<const double>>& prefix);
void context_vector_into(const EventTypeParams& params, std::size_t position,
                         const std::vector<std::span<const double>>& prefix, std::span<double> out);

/// Clamped inner product beta . (candidate (.) context).
double affinity_logit(std::span<const double> candidate, std::span<const double> context,
                      std::span<const double> beta);
/// kappa = exp(affinity_logit(...)); throws NumericError on non-finite input.
double affinity(std::span<const double> candidate, std::span<const double> context,
                std::span<const double> beta);

/// Context vector of `event` at signature index `position` (>= 1).
std::vector<double> event_context(const ModelParams& params, const Event& event, std::size_t position);

/// Exact softmax over all candidates of the position's entity type,
/// conditioned on the first `position` entities of `prefix`.
std::vector<double> conditional_distribution(const ModelParams& params, EventTypeId type,
                                             std::size_t position, std::span<const EntityId> prefix);
double conditional_probability(const ModelParams& params, EventTypeId type, std::size_t position,
                               std::span<const EntityId> prefix, EntityId candidate);

/// Sum over predicted positions of log p(entity_i | entities_<i, type).
double event_log_probability(const ModelParams& params, const Event& event);

// Versioned little-endian binary snapshot ("EVADPRM1" magic).
void save_params(const ModelParams& params, std::ostream& out);
ModelParams load_params(std::istream& in);
void save_params(const ModelParams& params, const std::string& path);
ModelParams load_params(const std::string& path);

}  // namespace evad
