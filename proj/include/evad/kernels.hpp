#pragma once

// Data-parallel kernels. Each kernel has a serial reference implementation
// and an OpenMP implementation that produces bit-identical results: work is
// split into fixed-size chunks whose partial results are reduced in chunk
// order, independent of the number of threads.

#include <cstddef>
#include <span>
#include <vector>

#include "evad/model.hpp"
#include "evad/noise.hpp"

namespace evad {

enum class Execution { Serial, Parallel };

/// Events per gradient chunk. Part of the reduction order, so changing it
/// changes low-order bits of the results.
inline constexpr std::size_t kGradientChunk = 32;

/// Negative samples for one event: entry i holds the draws for signature
/// position i (entry 0 is empty).
using Negatives = std::vector<std::vector<EntityId>>;

struct LossTotals {
  double total = 0.0;
  std::vector<double> by_type;
  std::vector<std::size_t> count_by_type;
};

/// Adds the gradient of sum_k l_MT(event_k) to `grad` (which must have the
/// shapes of `params`) and returns the summed losses.
LossTotals accumulate_gradients_serial(const ModelParams& params, std::span<const Event* const> events,
                                       std::span<const Negatives> negatives, const NoiseTables& noise,
                                       ModelParams& grad);
LossTotals accumulate_gradients_omp(const ModelParams& params, std::span<const Event* const> events,
                                    std::span<const Negatives> negatives, const NoiseTables& noise,
                                    ModelParams& grad);
LossTotals accumulate_gradients(const ModelParams& params, std::span<const Event* const> events,
                                std::span<const Negatives> negatives, const NoiseTables& noise,
                                ModelParams& grad, Execution exec);

/// Sum of l_MT over events with the given negatives; no gradients.
LossTotals evaluate_losses(const ModelParams& params, std::span<const Event* const> events,
                           std::span<const Negatives> negatives, const NoiseTables& noise, Execution exec);

/// Discrete p-values for every predicted position of every event
/// (row k holds positions 1..N-1 of event k).
std::vector<std::vector<double>> p_values_serial(const ModelParams& params, std::span<const Event> events);
std::vector<std::vector<double>> p_values_omp(const ModelParams& params, std::span<const Event> events);
std::vector<std::vector<double>> p_values(const ModelParams& params, std::span<const Event> events,
                                          Execution exec);

int max_threads();

}  // namespace evad
