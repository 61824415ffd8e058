#pragma once

// Closed-form loss and hand-derived gradient of the uncertainty-weighted NCE
// event loss, shared by the dense API and the chunked kernels.

#include <cmath>
#include <span>
#include <type_traits>
#include <vector>

#include "evad/error.hpp"
#include "evad/kernels.hpp"
#include "evad/model.hpp"
#include "evad/noise.hpp"

namespace evad::detail {

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Writes gradients straight into a ModelParams-shaped buffer.
struct DenseSink {
  ModelParams& grad;
  std::span<double> embedding_row(EntityTypeId t, EntityId id) { return grad.embeddings[t].row(id); }
  EventTypeParams& type_grad(EventTypeId e) { return grad.event_types[e]; }
};

/// Loss-only evaluation.
struct NoSink {
  std::span<double> embedding_row(EntityTypeId, EntityId) { return {}; }
  EventTypeParams& type_grad(EventTypeId);
};

/// Returns l_MT(event). When `sink` is non-null, adds scale * d l_MT / d theta.
template <class Sink>
double event_loss(const ModelParams& p, const Event& ev, const Negatives& negs, const NoiseTables& noise,
                  Sink* sink, double scale, std::vector<double>& h, std::vector<double>& gh) {
  const auto& tp = p.event_types[ev.type];
  const std::size_t n = tp.arity();
  const std::size_t d = p.dim;
  const auto& beta = tp.beta;
  h.assign(d, 0.0);
  gh.assign(d, 0.0);
  double total = 0.0;

  for (std::size_t i = 1; i < n; ++i) {
    const auto& q = noise.at(ev.type, i);
    const auto& sample_ids = negs.at(i);
    if (sample_ids.empty()) throw DataError("at least one negative sample per position is required");
    const double log_k = std::log(static_cast<double>(sample_ids.size()));

    std::fill(h.begin(), h.end(), 0.0);
    for (std::size_t j = 0; j < i; ++j) {
      const auto xj = p.embeddings[tp.signature[j]].row(ev.entities[j]);
      const double w = tp.weight(j, i);
      for (std::size_t k = 0; k < d; ++k) h[k] += w * xj[k];
    }

    const double ls = tp.log_sigma[i];
    const double c = std::exp(-2.0 * ls);
    const auto& table = p.embeddings[tp.signature[i]];
    if constexpr (!std::is_same_v<Sink, NoSink>) std::fill(gh.begin(), gh.end(), 0.0);

    double li = 0.0;
    auto visit = [&](EntityId v, bool positive) {
      const auto x = table.row(v);
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += beta[k] * x[k] * h[k];
      if (!std::isfinite(s)) throw NumericError("non-finite affinity during training");
      const bool inside = s > -kLogitClamp && s < kLogitClamp;
      const double a = inside ? s : (s > 0 ? kLogitClamp : -kLogitClamp);
      const double qv = positive ? q.positive_probability(v) : q.probability(v);
      if (qv <= 0.0) throw NumericError("negative sample outside the noise support");
      const double u = a - (log_k + std::log(qv));
      double du;
      if (positive) {
        li += softplus(-u);
        du = -sigmoid(-u);
      } else {
        li += softplus(u);
        du = sigmoid(u);
      }
      if constexpr (!std::is_same_v<Sink, NoSink>) {
        if (sink && inside) {
          const double g = scale * c * du;
          auto gx = sink->embedding_row(tp.signature[i], v);
          for (std::size_t k = 0; k < d; ++k) gx[k] += g * beta[k] * h[k];
          auto& gt = sink->type_grad(ev.type);
          for (std::size_t k = 0; k < d; ++k) gt.beta[k] += g * x[k] * h[k];
          for (std::size_t k = 0; k < d; ++k) gh[k] += g * beta[k] * x[k];
        }
      }
    };
    visit(ev.entities[i], true);
    for (auto v : sample_ids) visit(v, false);

    if constexpr (!std::is_same_v<Sink, NoSink>) {
      if (sink) {
        auto& gt = sink->type_grad(ev.type);
        for (std::size_t j = 0; j < i; ++j) {
          const auto xj = p.embeddings[tp.signature[j]].row(ev.entities[j]);
          double dw = 0.0;
          for (std::size_t k = 0; k < d; ++k) dw += gh[k] * xj[k];
          gt.weight(j, i) += dw;
        }
        gt.log_sigma[i] += scale * (1.0 - 2.0 * c * li);
        for (std::size_t j = 0; j < i; ++j) {
          const double w = tp.weight(j, i);
          auto gxj = sink->embedding_row(tp.signature[j], ev.entities[j]);
          for (std::size_t k = 0; k < d; ++k) gxj[k] += w * gh[k];
        }
      }
    }
    total += c * li + ls;
  }
  return total;
}

}  // namespace evad::detail
