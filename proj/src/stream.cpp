#include "evad/stream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "evad/error.hpp"
#include "evad/textio.hpp"

namespace evad {

void RetrainConfig::validate() const {
  if (!(lambda_new >= 0.0) || !(lambda_old >= 0.0)) throw ConfigError("retrain lambdas must be non-negative");
  if (!(validation_fraction > 0.0 && validation_fraction <= 0.5))
    throw ConfigError("retrain.validation_fraction must lie in (0, 0.5]");
  if (batch_size == 0) throw ConfigError("retrain.batch_size must be positive");
  if (negatives == 0) throw ConfigError("retrain.negatives must be at least 1");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("retrain.learning_rate must be positive");
  if (max_epochs == 0) throw ConfigError("retrain.max_epochs must be positive");
  if (!(min_improvement >= 0.0)) throw ConfigError("retrain.min_improvement must be non-negative");
}

std::vector<double> init_new_entity(const ModelParams& params, const Catalog& catalog, EntityTypeId type,
                                    int window) {
  const auto& table = params.embeddings.at(type);
  std::vector<double> mean(params.dim, 0.0);
  std::size_t n = 0;
  for (std::size_t v = 0; v < catalog.size(type) && v < table.rows; ++v) {
    if (catalog.first_seen(type, static_cast<EntityId>(v)) >= window) continue;
    const auto x = table.row(v);
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += x[k];
    ++n;
  }
  if (n == 0)
    throw DataError("no previously seen '" + catalog.schema().entity_type(type).name +
                    "' entities to initialise a new one from");
  for (auto& m : mean) m /= static_cast<double>(n);
  return mean;
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

// Sum of anchor penalties split into (new, old) entity sets.
std::pair<double, double> anchor_penalties(const ModelParams& next, const ModelParams& prev, const Catalog& catalog,
                                           int window) {
  double r_new = 0.0, r_old = 0.0;
  for (std::size_t t = 0; t < next.embeddings.size(); ++t) {
    const auto type = static_cast<EntityTypeId>(t);
    const auto& a = next.embeddings[t];
    const auto& b = prev.embeddings.at(t);
    if (a.rows != b.rows) throw DataError("retrain parameters differ in shape");
    for (std::size_t v = 0; v < a.rows; ++v) {
      const double d = squared_distance(a.row(v), b.row(v));
      if (catalog.first_seen(type, static_cast<EntityId>(v)) == window)
        r_new += d;
      else
        r_old += d;
    }
  }
  return {r_new, r_old};
}

std::vector<Event> trainable(std::span<const Event> events, const NoiseTables& noise, std::size_t* skipped) {
  std::vector<Event> out;
  out.reserve(events.size());
  for (const auto& e : events) {
    if (noise.has(e.type))
      out.push_back(e);
    else if (skipped)
      ++*skipped;
  }
  return out;
}

}  // namespace

double retrain_loss(std::span<const Event> events, const ModelParams& next, const ModelParams& prev,
                    const Catalog& catalog, int window, std::span<const Negatives> negatives,
                    const NoiseTables& noise, const RetrainConfig& config) {
  if (negatives.size() != events.size()) throw DataError("one negative set per event is required");
  double data = 0.0;
  for (std::size_t k = 0; k < events.size(); ++k) data += mtl_event_loss(next, events[k], negatives[k], noise);
  const auto [r_new, r_old] = anchor_penalties(next, prev, catalog, window);
  return data + config.lambda_new * r_new + config.lambda_old * r_old;
}

EpochStats retrain_epoch(ModelParams& params, const ModelParams& anchor, AdamState& adam,
                         std::span<const Event> events, const Catalog& catalog, int window,
                         const NoiseTables& noise, const RetrainConfig& config, Rng& rng,
                         std::size_t retrain_size) {
  EpochOptions opts;
  opts.batch_size = config.batch_size;
  opts.negatives = config.negatives;
  opts.adam = config.adam;
  opts.mask = ParamMask::embeddings_only();
  opts.execution = config.execution;

  // The data term is averaged per batch, so the anchor term is scaled by
  // 1/retrain_size to keep the ratio of the two terms of the window loss.
  BatchGradientHook hook;
  if (config.lambda_new > 0.0 || config.lambda_old > 0.0) {
    const double inv_n = 1.0 / static_cast<double>(std::max<std::size_t>(retrain_size, 1));
    hook = [&, inv_n](const ModelParams& p, ModelParams& grad) {
      for (std::size_t t = 0; t < p.embeddings.size(); ++t) {
        const auto type = static_cast<EntityTypeId>(t);
        for (std::size_t v = 0; v < p.embeddings[t].rows; ++v) {
          const bool is_new = catalog.first_seen(type, static_cast<EntityId>(v)) == window;
          const double lambda = is_new ? config.lambda_new : config.lambda_old;
          if (lambda == 0.0) continue;
          const double c = 2.0 * lambda * inv_n;
          auto g = grad.embeddings[t].row(v);
          const auto x = p.embeddings[t].row(v);
          const auto x0 = anchor.embeddings[t].row(v);
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += c * (x[k] - x0[k]);
        }
      }
    };
  }
  return run_epoch(params, adam, events, noise, opts, rng, hook);
}

RetrainResult retrain(std::span<const Event> events_in, const ModelParams& params, const Catalog& catalog,
                      int window, const NoiseTables& noise, const RetrainConfig& config, Rng& rng) {
  config.validate();
  RetrainResult result;
  result.params = params;
  const auto events = trainable(events_in, noise, nullptr);
  if (events.empty()) return result;

  // Seeded split into retrain / validation parts, keeping input order.
  const std::size_t n = events.size();
  std::size_t n_val = static_cast<std::size_t>(std::floor(config.validation_fraction * static_cast<double>(n)));
  if (n_val == 0 && n >= 2) n_val = 1;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(idx));
  std::vector<bool> is_val(n, false);
  for (std::size_t k = 0; k < n_val; ++k) is_val[idx[k]] = true;
  std::vector<Event> fit, val;
  for (std::size_t k = 0; k < n; ++k) (is_val[k] ? val : fit).push_back(events[k]);
  result.train_events = fit.size();
  result.validation_events = val.size();

  std::vector<Negatives> val_negs;
  std::vector<const Event*> val_ptrs;
  for (const auto& e : val) {
    val_negs.push_back(draw_negatives(e, noise, config.negatives, rng));
    val_ptrs.push_back(&e);
  }
  auto val_loss = [&](const ModelParams& p) {
    if (val.empty()) return 0.0;
    return evaluate_losses(p, val_ptrs, val_negs, noise, config.execution).total / static_cast<double>(val.size());
  };

  const ModelParams anchor = params;
  ModelParams current = params;
  AdamState adam = AdamState::for_params(current);
  result.initial_validation_loss = val_loss(current);
  double reference = result.initial_validation_loss;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  const std::size_t max_epochs = val.empty() ? 1 : config.max_epochs;

  for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
    retrain_epoch(current, anchor, adam, fit, catalog, window, noise, config, rng, fit.size());
    result.epochs = epoch;
    const double loss = val_loss(current);
    if (loss < best || epoch == 1) {
      best = loss;
      result.params = current;
      result.best_epoch = epoch;
      result.validation_loss = loss;
    }
    const double scale = std::max(std::abs(reference), std::numeric_limits<double>::min());
    if ((reference - loss) / scale >= config.min_improvement)
      stale = 0;
    else
      ++stale;
    reference = std::min(reference, loss);
    if (stale >= config.patience) break;
  }
  return result;
}

// ---------------------------------------------------------------------------

void ModelBundle::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  catalog.save((dir / "catalog.txt").string());
  save_params(params, (dir / "params.bin").string());
  standardizer.save((dir / "standardizer.txt").string(), catalog.schema());
  textio::write_file(dir / "meta.txt", "window: " + std::to_string(window) + "\nparams_hash: " +
                                           textio::hash_file_hex(dir / "params.bin") + "\n");
}

ModelBundle ModelBundle::load(const std::filesystem::path& dir) {
  for (const char* f : {"catalog.txt", "params.bin", "standardizer.txt"})
    if (!std::filesystem::exists(dir / f)) throw DataError("missing " + (dir / f).string());
  ModelBundle b;
  b.catalog = Catalog::load((dir / "catalog.txt").string());
  b.params = load_params((dir / "params.bin").string());
  b.standardizer = Standardizer::load((dir / "standardizer.txt").string(), b.catalog.schema());
  if (std::filesystem::exists(dir / "meta.txt")) {
    const auto meta = textio::read_file(dir / "meta.txt");
    const auto pos = meta.find("window: ");
    if (pos != std::string::npos) b.window = std::stoi(meta.substr(pos + 8));
    const auto hpos = meta.find("params_hash: ");
    if (hpos != std::string::npos) {
      const auto recorded = meta.substr(hpos + 13, meta.find('\n', hpos) - hpos - 13);
      if (recorded != textio::hash_file_hex(dir / "params.bin"))
        throw DataError("params.bin in " + dir.string() + " does not match its recorded hash");
    }
  }
  if (b.params.embeddings.size() != b.catalog.schema().entity_types().size() ||
      b.params.event_types.size() != b.catalog.schema().event_types().size())
    throw DataError("parameter snapshot does not match the catalog schema");
  for (const auto& t : b.catalog.schema().entity_types())
    if (b.params.embeddings[t.id].rows != b.catalog.size(t.id))
      throw DataError("parameter snapshot does not cover the catalog entities");
  return b;
}

StreamEngine::StreamEngine(ModelBundle bundle, RetrainConfig config)
    : catalog_(std::move(bundle.catalog)),
      params_(std::move(bundle.params)),
      standardizer_(std::move(bundle.standardizer)),
      config_(config),
      completed_(bundle.window) {
  config_.validate();
  noise_ = NoiseTables::from_catalog(catalog_);
}

ModelBundle StreamEngine::bundle() const { return {catalog_, params_, standardizer_, completed_}; }

const StreamEngine::OpenWindow& StreamEngine::begin_window(std::span<const RawEvent> raw) {
  if (open_) throw ConflictError("window " + std::to_string(open_->window) + " is still open");
  OpenWindow w;
  w.window = completed_ + 1;
  const auto& schema = catalog_.schema();
  std::vector<std::size_t> before(schema.entity_types().size());
  for (const auto& t : schema.entity_types()) before[t.id] = catalog_.size(t.id);

  Catalog staged = catalog_;
  for (const auto& r : raw) {
    w.events.push_back(staged.intern_event(r, w.window, false));
    w.event_ids.push_back(r.source_index);
  }

  // New entities start at the mean of their previously seen peers.
  ModelParams next = params_;
  next.sync_rows(staged);
  w.new_entities.assign(schema.entity_types().size(), 0);
  for (const auto& t : schema.entity_types()) {
    const auto n_new = staged.size(t.id) - before[t.id];
    w.new_entities[t.id] = n_new;
    if (n_new == 0) continue;
    const auto mean = init_new_entity(params_, catalog_, t.id, w.window);
    for (std::size_t v = before[t.id]; v < staged.size(t.id); ++v) {
      auto row = next.embeddings[t.id].row(v);
      std::copy(mean.begin(), mean.end(), row.begin());
    }
  }
  catalog_ = std::move(staged);
  params_ = std::move(next);
  w.scored = score_events(params_, w.events, &standardizer_, config_.execution);
  open_ = std::move(w);
  return *open_;
}

const StreamEngine::OpenWindow& StreamEngine::open_window() const {
  if (!open_) throw ConflictError("no window is open");
  return *open_;
}

WindowReport StreamEngine::finish_window(const std::unordered_set<std::uint64_t>& malicious_ids) {
  if (!open_) throw ConflictError("no window is open");
  auto& w = *open_;
  WindowReport report;
  report.window = w.window;
  report.new_entities = w.new_entities;
  report.event_ids = w.event_ids;

  std::vector<Event> kept;
  for (std::size_t k = 0; k < w.events.size(); ++k) {
    if (malicious_ids.count(w.event_ids[k]))
      ++report.excluded_events;
    else
      kept.push_back(w.events[k]);
  }
  const auto retrain_set = trainable(kept, noise_, &report.skipped_events);
  report.retrain_events = retrain_set.size();

  Rng rng(derive_seed(config_.seed, static_cast<std::uint64_t>(w.window)));
  auto result = retrain(retrain_set, params_, catalog_, w.window, noise_, config_, rng);
  report.epochs = result.epochs;
  report.initial_validation_loss = result.initial_validation_loss;
  report.validation_loss = result.validation_loss;

  std::vector<double> drifts;
  for (std::size_t t = 0; t < params_.embeddings.size(); ++t) {
    for (std::size_t v = 0; v < params_.embeddings[t].rows; ++v) {
      const double d = std::sqrt(squared_distance(result.params.embeddings[t].row(v), params_.embeddings[t].row(v)));
      drifts.push_back(d);
      if (catalog_.first_seen(static_cast<EntityTypeId>(t), static_cast<EntityId>(v)) < w.window)
        report.max_old_drift = std::max(report.max_old_drift, d);
    }
  }
  if (!drifts.empty()) {
    auto mid = drifts.begin() + static_cast<std::ptrdiff_t>(drifts.size() / 2);
    std::nth_element(drifts.begin(), mid, drifts.end());
    report.median_drift = *mid;
  }
  params_ = std::move(result.params);

  if (config_.refresh_noise) {
    for (const auto& e : retrain_set) catalog_.add_count(e);
    noise_ = NoiseTables::from_catalog(catalog_);
  }
  if (config_.refresh_standardizer && !retrain_set.empty()) {
    auto rescored = score_events(params_, retrain_set, nullptr, config_.execution);
    standardizer_.update_from(Standardizer::fit(rescored));
  }

  report.scored = std::move(w.scored);
  open_.reset();
  completed_ = report.window;
  return report;
}

WindowReport StreamEngine::process_window(std::span<const RawEvent> raw, bool exclude_labelled_malicious) {
  begin_window(raw);
  std::unordered_set<std::uint64_t> flagged;
  if (exclude_labelled_malicious)
    for (const auto& r : raw)
      if (r.label == Label::Malicious) flagged.insert(r.source_index);
  return finish_window(flagged);
}

void write_window_report(const std::filesystem::path& path, const WindowReport& r, const Catalog& catalog,
                         const std::string& params_hash) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "window: " << r.window << '\n';
  out << "events: " << r.scored.size() << '\n';
  for (const auto& t : catalog.schema().entity_types())
    out << "new_entities." << t.name << ": " << (t.id < r.new_entities.size() ? r.new_entities[t.id] : 0) << '\n';
  out << "excluded_events: " << r.excluded_events << '\n';
  out << "skipped_events: " << r.skipped_events << '\n';
  out << "retrain_events: " << r.retrain_events << '\n';
  out << "retrain_epochs: " << r.epochs << '\n';
  out << "initial_validation_loss: " << textio::format_double(r.initial_validation_loss) << '\n';
  out << "validation_loss: " << textio::format_double(r.validation_loss) << '\n';
  out << "median_drift: " << textio::format_double(r.median_drift) << '\n';
  out << "max_old_drift: " << textio::format_double(r.max_old_drift) << '\n';
  out << "params_hash: " << params_hash << '\n';
}

}  // namespace evad
