#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "evad/kernels.hpp"
#include "evad/model.hpp"
#include "evad/noise.hpp"
#include "evad/rng.hpp"
#include "evad/schema.hpp"

namespace evad {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  std::size_t dim = 64;
  std::size_t negatives = 20;  // K, per predicted entity
  std::size_t epochs = 30;
  std::size_t batch_size = 5000;
  AdamConfig adam{};
  std::uint64_t seed = 0;
  Execution execution = Execution::Parallel;

  void validate() const;  // throws ConfigError
};

struct AdamState {
  ModelParams first_moment;
  ModelParams second_moment;
  std::uint64_t step = 0;

  static AdamState for_params(const ModelParams& params);
  /// Adds zero moment rows for newly grown embedding tables.
  void sync_shapes(const ModelParams& params);
};

/// One bias-corrected Adam update on the groups selected by `mask`.
/// Returns false, leaving params and state untouched, if any selected
/// gradient component is non-finite.
bool adam_step(ModelParams& params, const ModelParams& grad, AdamState& state, const AdamConfig& config,
               ParamMask mask = ParamMask::all());

/// NCE loss of one predicted position:
///   -log s(true) - sum_j log(1 - s(neg_j)),  s(v) = kappa / (kappa + K Q(v)),
/// with K = negatives.size().
double nce_entity_loss(const ModelParams& params, const Event& event, std::size_t position,
                       std::span<const EntityId> negatives, const NoiseDistribution& noise);

/// Uncertainty-weighted event loss: sum_i l_i / sigma_i^2 + log sigma_i.
double mtl_event_loss(const ModelParams& params, const Event& event, const Negatives& negatives,
                      const NoiseTables& noise);

/// Same loss with its gradient added (times `scale`) into `grad`.
double mtl_event_loss_gradient(const ModelParams& params, const Event& event, const Negatives& negatives,
                               const NoiseTables& noise, ModelParams& grad, double scale = 1.0);

/// Draws K negatives per predicted position of the event.
Negatives draw_negatives(const Event& event, const NoiseTables& noise, std::size_t k, Rng& rng);

struct EpochOptions {
  std::size_t batch_size = 5000;
  std::size_t negatives = 20;
  AdamConfig adam{};
  ParamMask mask = ParamMask::all();
  Execution execution = Execution::Parallel;
};

struct EpochStats {
  double mean_loss = 0.0;
  std::vector<double> mean_loss_by_type;
  std::size_t batches = 0;
  std::size_t rejected_batches = 0;
};

/// Extra gradient contribution evaluated once per batch, after the data
/// gradient has been averaged (used for retraining regularisers).
using BatchGradientHook = std::function<void(const ModelParams& params, ModelParams& grad)>;

/// One pass over `events` in a seeded random order. Per batch: draw fresh
/// negatives, average l_MT gradients over the batch, add the hook term,
/// apply Adam on the masked groups.
EpochStats run_epoch(ModelParams& params, AdamState& adam, std::span<const Event> events,
                     const NoiseTables& noise, const EpochOptions& options, Rng& rng,
                     const BatchGradientHook& hook = {});

struct TrainResult {
  ModelParams params;
  NoiseTables noise;
  std::vector<EpochStats> epochs;
};

/// Initial fit on training events whose entities are interned in `catalog`
/// (counts in the catalog define the noise distributions). Writes one
/// metrics line per epoch to `metrics` when given.
TrainResult train(std::span<const Event> events, const Catalog& catalog, const TrainConfig& config,
                  std::ostream* metrics = nullptr);

}  // namespace evad
