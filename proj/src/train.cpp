#include "evad/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "event_gradient.hpp"
#include "evad/error.hpp"
#include "evad/textio.hpp"

namespace evad {

void TrainConfig::validate() const {
  if (dim == 0) throw ConfigError("train.dim must be positive");
  if (negatives == 0) throw ConfigError("train.negatives (K) must be at least 1");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ConfigError("Adam decay rates must lie in [0, 1)");
  if (!(adam.epsilon > 0.0)) throw ConfigError("train.adam_epsilon must be positive");
}

AdamState AdamState::for_params(const ModelParams& params) {
  AdamState s;
  s.first_moment = ModelParams::zeros_like(params);
  s.second_moment = ModelParams::zeros_like(params);
  return s;
}

void AdamState::sync_shapes(const ModelParams& params) {
  for (std::size_t t = 0; t < params.embeddings.size(); ++t) {
    first_moment.embeddings[t].resize_rows(params.embeddings[t].rows);
    second_moment.embeddings[t].resize_rows(params.embeddings[t].rows);
  }
}

bool adam_step(ModelParams& params, const ModelParams& grad, AdamState& state, const AdamConfig& config,
               ParamMask mask) {
  bool finite = true;
  grad.for_each(mask, [&](ParamGroup, std::span<const double> g) {
    for (double x : g)
      if (!std::isfinite(x)) finite = false;
  });
  if (!finite) return false;

  std::vector<std::span<double>> p, m, v;
  std::vector<std::span<const double>> g;
  params.for_each(mask, [&](ParamGroup, std::span<double> t) { p.push_back(t); });
  state.first_moment.for_each(mask, [&](ParamGroup, std::span<double> t) { m.push_back(t); });
  state.second_moment.for_each(mask, [&](ParamGroup, std::span<double> t) { v.push_back(t); });
  grad.for_each(mask, [&](ParamGroup, std::span<const double> t) { g.push_back(t); });
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size())
    throw DataError("Adam: parameter and gradient shapes differ");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k].size() != g[k].size() || m[k].size() != g[k].size() || v[k].size() != g[k].size())
      throw DataError("Adam: parameter and gradient shapes differ");
    for (std::size_t i = 0; i < p[k].size(); ++i) {
      m[k][i] = config.beta1 * m[k][i] + (1.0 - config.beta1) * g[k][i];
      v[k][i] = config.beta2 * v[k][i] + (1.0 - config.beta2) * g[k][i] * g[k][i];
      const double m_hat = m[k][i] / bc1;
      const double v_hat = v[k][i] / bc2;
      p[k][i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
  return true;
}

double nce_entity_loss(const ModelParams& params, const Event& event, std::size_t position,
                       std::span<const EntityId> negatives, const NoiseDistribution& noise) {
  if (negatives.empty()) throw DataError("at least one negative sample is required");
  const auto& tp = params.event_types.at(event.type);
  const auto h = event_context(params, event, position);
  const auto& table = params.embeddings.at(tp.signature[position]);
  const double log_k = std::log(static_cast<double>(negatives.size()));
  auto shifted = [&](EntityId v, double q) {
    return affinity_logit(table.row(v), h, tp.beta) - (log_k + std::log(q));
  };
  double loss = detail::softplus(-shifted(event.entities[position], noise.positive_probability(event.entities[position])));
  for (auto v : negatives) {
    const double q = noise.probability(v);
    if (q <= 0.0) throw NumericError("negative sample outside the noise support");
    loss += detail::softplus(shifted(v, q));
  }
  return loss;
}

double mtl_event_loss(const ModelParams& params, const Event& event, const Negatives& negatives,
                      const NoiseTables& noise) {
  std::vector<double> h, gh;
  return detail::event_loss<detail::NoSink>(params, event, negatives, noise, nullptr, 1.0, h, gh);
}

double mtl_event_loss_gradient(const ModelParams& params, const Event& event, const Negatives& negatives,
                               const NoiseTables& noise, ModelParams& grad, double scale) {
  detail::DenseSink sink{grad};
  std::vector<double> h, gh;
  return detail::event_loss(params, event, negatives, noise, &sink, scale, h, gh);
}

Negatives draw_negatives(const Event& event, const NoiseTables& noise, std::size_t k, Rng& rng) {
  Negatives out(event.entities.size());
  for (std::size_t i = 1; i < event.entities.size(); ++i) out[i] = sample_negatives(noise.at(event.type, i), k, rng);
  return out;
}

EpochStats run_epoch(ModelParams& params, AdamState& adam, std::span<const Event> events,
                     const NoiseTables& noise, const EpochOptions& options, Rng& rng,
                     const BatchGradientHook& hook) {
  EpochStats stats;
  const std::size_t n_types = params.event_types.size();
  stats.mean_loss_by_type.assign(n_types, 0.0);
  if (events.empty()) return stats;
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");

  std::vector<std::size_t> order(events.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));

  ModelParams grad = ModelParams::zeros_like(params);
  std::vector<const Event*> batch;
  std::vector<Negatives> negs;
  double loss_total = 0.0;
  std::vector<double> loss_by_type(n_types, 0.0);
  std::vector<std::size_t> count_by_type(n_types, 0);

  for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size) {
    const auto end = std::min(order.size(), begin + options.batch_size);
    batch.clear();
    negs.clear();
    for (std::size_t k = begin; k < end; ++k) {
      batch.push_back(&events[order[k]]);
      negs.push_back(draw_negatives(events[order[k]], noise, options.negatives, rng));
    }
    grad.for_each(ParamMask::all(), [](ParamGroup, std::span<double> t) { std::fill(t.begin(), t.end(), 0.0); });
    const auto totals = accumulate_gradients(params, batch, negs, noise, grad, options.execution);
    const double inv = 1.0 / static_cast<double>(batch.size());
    grad.for_each(options.mask, [inv](ParamGroup, std::span<double> t) {
      for (auto& x : t) x *= inv;
    });
    if (hook) hook(params, grad);
    ++stats.batches;
    if (!adam_step(params, grad, adam, options.adam, options.mask)) ++stats.rejected_batches;

    loss_total += totals.total;
    for (std::size_t e = 0; e < n_types; ++e) {
      loss_by_type[e] += totals.by_type[e];
      count_by_type[e] += totals.count_by_type[e];
    }
  }
  stats.mean_loss = loss_total / static_cast<double>(events.size());
  for (std::size_t e = 0; e < n_types; ++e)
    stats.mean_loss_by_type[e] = count_by_type[e] ? loss_by_type[e] / static_cast<double>(count_by_type[e]) : 0.0;
  return stats;
}

namespace {

void write_epoch_line(std::ostream& out, std::size_t epoch, const EpochStats& s, const ModelParams& params,
                      const Schema& schema) {
  out << "epoch=" << epoch << " loss=" << textio::format_double(s.mean_loss);
  for (const auto& spec : schema.event_types())
    out << " loss." << spec.name << '=' << textio::format_double(s.mean_loss_by_type[spec.id]);
  for (const auto& spec : schema.event_types())
    for (std::size_t i = 1; i < spec.arity(); ++i)
      out << " sigma." << spec.name << '.' << i << '='
          << textio::format_double(std::exp(params.event_types[spec.id].log_sigma[i]));
  out << " rejected=" << s.rejected_batches << '\n';
}

}  // namespace

TrainResult train(std::span<const Event> events, const Catalog& catalog, const TrainConfig& config,
                  std::ostream* metrics) {
  config.validate();
  if (events.empty()) throw DataError("no training events");
  for (const auto& e : events) catalog.validate(e);

  Rng rng(config.seed);
  TrainResult result;
  result.params = ModelParams::initialize(catalog, config.dim, rng);
  result.noise = NoiseTables::from_catalog(catalog);
  for (const auto& e : events)
    if (!result.noise.has(e.type)) throw DataError("training event type without occurrence counts");

  AdamState adam = AdamState::for_params(result.params);
  EpochOptions opts;
  opts.batch_size = config.batch_size;
  opts.negatives = config.negatives;
  opts.adam = config.adam;
  opts.execution = config.execution;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    auto stats = run_epoch(result.params, adam, events, result.noise, opts, rng);
    if (stats.rejected_batches == stats.batches && stats.batches > 0)
      throw NumericError("every batch of epoch " + std::to_string(epoch) + " produced non-finite gradients");
    if (metrics) write_epoch_line(*metrics, epoch, stats, result.params, catalog.schema());
    result.epochs.push_back(std::move(stats));
  }
  return result;
}

}  // namespace evad
