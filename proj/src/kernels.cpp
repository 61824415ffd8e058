#include "evad/kernels.hpp"

#include <algorithm>
#include <exception>
#include <unordered_map>

#ifdef EVAD_HAVE_OPENMP
#include <omp.h>
#endif

#include "event_gradient.hpp"
#include "evad/score.hpp"

namespace evad {

namespace {

// Sparse gradient of one chunk of events. Rows are kept in first-touch
// order so that reduction into the dense gradient is deterministic.
class ChunkAccumulator {
 public:
  explicit ChunkAccumulator(const ModelParams& shape) : dim_(shape.dim) {
    for (const auto& e : shape.event_types) {
      EventTypeParams z = e;
      std::fill(z.weights.begin(), z.weights.end(), 0.0);
      std::fill(z.beta.begin(), z.beta.end(), 0.0);
      std::fill(z.log_sigma.begin(), z.log_sigma.end(), 0.0);
      types_.push_back(std::move(z));
    }
    touched_.assign(types_.size(), false);
    totals_.by_type.assign(types_.size(), 0.0);
    totals_.count_by_type.assign(types_.size(), 0);
  }

  void reset() {
    index_.clear();
    rows_.clear();
    values_.clear();
    for (std::size_t e = 0; e < types_.size(); ++e) {
      if (!touched_[e]) continue;
      auto& z = types_[e];
      std::fill(z.weights.begin(), z.weights.end(), 0.0);
      std::fill(z.beta.begin(), z.beta.end(), 0.0);
      std::fill(z.log_sigma.begin(), z.log_sigma.end(), 0.0);
      touched_[e] = false;
    }
    totals_.total = 0.0;
    std::fill(totals_.by_type.begin(), totals_.by_type.end(), 0.0);
    std::fill(totals_.count_by_type.begin(), totals_.count_by_type.end(), 0);
  }

  std::span<double> embedding_row(EntityTypeId t, EntityId id) {
    const auto key = (static_cast<std::uint64_t>(t) << 32) | id;
    auto [it, inserted] = index_.try_emplace(key, rows_.size());
    if (inserted) {
      rows_.emplace_back(t, id);
      values_.resize(values_.size() + dim_, 0.0);
    }
    return {values_.data() + it->second * dim_, dim_};
  }

  EventTypeParams& type_grad(EventTypeId e) {
    touched_[e] = true;
    return types_[e];
  }

  void record_loss(EventTypeId type, double loss) {
    totals_.total += loss;
    totals_.by_type[type] += loss;
    ++totals_.count_by_type[type];
  }

  void add_into(ModelParams& grad, LossTotals& totals) const {
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      auto dst = grad.embeddings[rows_[r].first].row(rows_[r].second);
      const double* src = values_.data() + r * dim_;
      for (std::size_t k = 0; k < dim_; ++k) dst[k] += src[k];
    }
    for (std::size_t e = 0; e < types_.size(); ++e) {
      if (!touched_[e]) continue;
      auto& g = grad.event_types[e];
      const auto& z = types_[e];
      for (std::size_t k = 0; k < z.weights.size(); ++k) g.weights[k] += z.weights[k];
      for (std::size_t k = 0; k < z.beta.size(); ++k) g.beta[k] += z.beta[k];
      for (std::size_t k = 0; k < z.log_sigma.size(); ++k) g.log_sigma[k] += z.log_sigma[k];
    }
    totals.total += totals_.total;
    for (std::size_t e = 0; e < types_.size(); ++e) {
      totals.by_type[e] += totals_.by_type[e];
      totals.count_by_type[e] += totals_.count_by_type[e];
    }
  }

  void run(const ModelParams& params, std::span<const Event* const> events, std::span<const Negatives> negatives,
           const NoiseTables& noise, std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const double loss = detail::event_loss(params, *events[k], negatives[k], noise, this, 1.0, h_, gh_);
      record_loss(events[k]->type, loss);
    }
  }

 private:
  std::size_t dim_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
  std::vector<std::pair<EntityTypeId, EntityId>> rows_;
  std::vector<double> values_;
  std::vector<EventTypeParams> types_;
  std::vector<bool> touched_;
  LossTotals totals_;
  std::vector<double> h_, gh_;
};

LossTotals empty_totals(const ModelParams& params) {
  LossTotals t;
  t.by_type.assign(params.event_types.size(), 0.0);
  t.count_by_type.assign(params.event_types.size(), 0);
  return t;
}

void check_inputs(std::span<const Event* const> events, std::span<const Negatives> negatives) {
  if (events.size() != negatives.size()) throw DataError("one negative set per event is required");
}

}  // namespace

int max_threads() {
#ifdef EVAD_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

LossTotals accumulate_gradients_serial(const ModelParams& params, std::span<const Event* const> events,
                                       std::span<const Negatives> negatives, const NoiseTables& noise,
                                       ModelParams& grad) {
  check_inputs(events, negatives);
  LossTotals totals = empty_totals(params);
  ChunkAccumulator acc(params);
  for (std::size_t begin = 0; begin < events.size(); begin += kGradientChunk) {
    const auto end = std::min(events.size(), begin + kGradientChunk);
    acc.reset();
    acc.run(params, events, negatives, noise, begin, end);
    acc.add_into(grad, totals);
  }
  return totals;
}

LossTotals accumulate_gradients_omp(const ModelParams& params, std::span<const Event* const> events,
                                    std::span<const Negatives> negatives, const NoiseTables& noise,
                                    ModelParams& grad) {
#ifndef EVAD_HAVE_OPENMP
  return accumulate_gradients_serial(params, events, negatives, noise, grad);
#else
  check_inputs(events, negatives);
  LossTotals totals = empty_totals(params);
  const std::size_t n_chunks = (events.size() + kGradientChunk - 1) / kGradientChunk;
  const auto wave = static_cast<std::size_t>(std::max(1, omp_get_max_threads()));
  std::vector<ChunkAccumulator> accs(std::min(wave, std::max<std::size_t>(n_chunks, 1)), ChunkAccumulator(params));
  std::exception_ptr failure;

  // Chunks are computed a wave at a time and reduced in chunk order.
  for (std::size_t first = 0; first < n_chunks; first += accs.size()) {
    const auto count = static_cast<long>(std::min(accs.size(), n_chunks - first));
#pragma omp parallel for schedule(static)
    for (long c = 0; c < count; ++c) {
      try {
        const auto begin = (first + static_cast<std::size_t>(c)) * kGradientChunk;
        const auto end = std::min(events.size(), begin + kGradientChunk);
        accs[static_cast<std::size_t>(c)].reset();
        accs[static_cast<std::size_t>(c)].run(params, events, negatives, noise, begin, end);
      } catch (...) {
#pragma omp critical(evad_gradient_failure)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
    for (long c = 0; c < count; ++c) accs[static_cast<std::size_t>(c)].add_into(grad, totals);
  }
  return totals;
#endif
}

LossTotals accumulate_gradients(const ModelParams& params, std::span<const Event* const> events,
                                std::span<const Negatives> negatives, const NoiseTables& noise,
                                ModelParams& grad, Execution exec) {
  return exec == Execution::Parallel ? accumulate_gradients_omp(params, events, negatives, noise, grad)
                                     : accumulate_gradients_serial(params, events, negatives, noise, grad);
}

LossTotals evaluate_losses(const ModelParams& params, std::span<const Event* const> events,
                           std::span<const Negatives> negatives, const NoiseTables& noise, [[maybe_unused]] Execution exec) {
  check_inputs(events, negatives);
  std::vector<double> losses(events.size());
  std::exception_ptr failure;
  const auto n = static_cast<long>(events.size());
#ifdef EVAD_HAVE_OPENMP
#pragma omp parallel for schedule(static) if (exec == Execution::Parallel)
#endif
  for (long k = 0; k < n; ++k) {
    try {
      std::vector<double> h, gh;
      const auto i = static_cast<std::size_t>(k);
      losses[i] =
          detail::event_loss<detail::NoSink>(params, *events[i], negatives[i], noise, nullptr, 1.0, h, gh);
    } catch (...) {
#ifdef EVAD_HAVE_OPENMP
#pragma omp critical(evad_loss_failure)
#endif
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  LossTotals totals = empty_totals(params);
  for (std::size_t k = 0; k < events.size(); ++k) {
    totals.total += losses[k];
    totals.by_type[events[k]->type] += losses[k];
    ++totals.count_by_type[events[k]->type];
  }
  return totals;
}

std::vector<std::vector<double>> p_values_serial(const ModelParams& params, std::span<const Event> events) {
  std::vector<std::vector<double>> out(events.size());
  for (std::size_t k = 0; k < events.size(); ++k) out[k] = event_p_values(params, events[k]);
  return out;
}

std::vector<std::vector<double>> p_values_omp(const ModelParams& params, std::span<const Event> events) {
#ifndef EVAD_HAVE_OPENMP
  return p_values_serial(params, events);
#else
  std::vector<std::vector<double>> out(events.size());
  std::exception_ptr failure;
  const auto n = static_cast<long>(events.size());
#pragma omp parallel for schedule(dynamic, 64)
  for (long k = 0; k < n; ++k) {
    try {
      out[static_cast<std::size_t>(k)] = event_p_values(params, events[static_cast<std::size_t>(k)]);
    } catch (...) {
#pragma omp critical(evad_score_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
#endif
}

std::vector<std::vector<double>> p_values(const ModelParams& params, std::span<const Event> events,
                                          Execution exec) {
  return exec == Execution::Parallel ? p_values_omp(params, events) : p_values_serial(params, events);
}

}  // namespace evad
