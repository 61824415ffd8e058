#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "evad/model.hpp"
#include "evad/noise.hpp"
#include "evad/score.hpp"
#include "evad/train.hpp"

namespace evad {

struct RetrainConfig {
  double lambda_new = 1e-4;  // weight of the new-entity anchor term
  double lambda_old = 1.0;   // weight of the old-entity anchor term
  AdamConfig adam{1e-4, 0.9, 0.999, 1e-8};
  std::size_t batch_size = 256;
  std::size_t negatives = 20;
  double validation_fraction = 0.05;
  std::size_t patience = 2;
  double min_improvement = 1e-3;  // relative
  std::size_t max_epochs = 50;
  bool refresh_standardizer = false;
  bool refresh_noise = false;
  std::uint64_t seed = 0;
  Execution execution = Execution::Parallel;

  void validate() const;  // throws ConfigError
};

/// Mean embedding of the entities of `type` seen before `window`
/// (first_seen < window). Throws DataError when there are none.
std::vector<double> init_new_entity(const ModelParams& params, const Catalog& catalog, EntityTypeId type,
                                    int window);

/// sum l_MT(events; next) + lambda_new * sum_{new} |x' - x|^2
///                        + lambda_old * sum_{old} |x' - x|^2
/// where "new" means first_seen == window.
double retrain_loss(std::span<const Event> events, const ModelParams& next, const ModelParams& prev,
                    const Catalog& catalog, int window, std::span<const Negatives> negatives,
                    const NoiseTables& noise, const RetrainConfig& config);

/// One embedding-only epoch of the regularised objective. `anchor` holds
/// the parameters at the start of the window; `retrain_size` is the number
/// of events the regulariser is amortised over.
EpochStats retrain_epoch(ModelParams& params, const ModelParams& anchor, AdamState& adam,
                         std::span<const Event> events, const Catalog& catalog, int window,
                         const NoiseTables& noise, const RetrainConfig& config, Rng& rng,
                         std::size_t retrain_size);

struct RetrainResult {
  ModelParams params;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  std::size_t train_events = 0;
  std::size_t validation_events = 0;
  double initial_validation_loss = 0.0;
  double validation_loss = 0.0;
};

/// Early-stopped retraining on a window (malicious events already removed).
/// An empty window returns the parameters unchanged.
RetrainResult retrain(std::span<const Event> events, const ModelParams& params, const Catalog& catalog,
                      int window, const NoiseTables& noise, const RetrainConfig& config, Rng& rng);

struct WindowReport {
  int window = 0;
  std::vector<ScoredEvent> scored;
  std::vector<std::uint64_t> event_ids;
  std::vector<std::size_t> new_entities;  // per entity type
  std::size_t retrain_events = 0;
  std::size_t excluded_events = 0;
  std::size_t skipped_events = 0;  // event types without noise tables
  std::size_t epochs = 0;
  double initial_validation_loss = 0.0;
  double validation_loss = 0.0;
  double median_drift = 0.0;
  double max_old_drift = 0.0;
};

/// Parameters, catalog and standardizer as saved after training or after a
/// streaming window.
struct ModelBundle {
  Catalog catalog;
  ModelParams params;
  Standardizer standardizer;
  int window = 0;

  void save(const std::filesystem::path& dir) const;
  static ModelBundle load(const std::filesystem::path& dir);
};

/// Drives the window loop: intern and initialise new entities, score with
/// the current parameters, drop analyst-flagged events, retrain embeddings.
class StreamEngine {
 public:
  StreamEngine(ModelBundle bundle, RetrainConfig config);

  int completed_windows() const { return completed_; }
  bool window_open() const { return open_.has_value(); }
  const ModelParams& params() const { return params_; }
  const Catalog& catalog() const { return catalog_; }
  const Standardizer& standardizer() const { return standardizer_; }
  const NoiseTables& noise() const { return noise_; }
  ModelBundle bundle() const;

  struct OpenWindow {
    int window = 0;
    std::vector<Event> events;
    std::vector<std::uint64_t> event_ids;
    std::vector<ScoredEvent> scored;
    std::vector<std::size_t> new_entities;
  };

  /// Opens window completed_windows()+1 and scores it. Scores never change
  /// after this call.
  const OpenWindow& begin_window(std::span<const RawEvent> raw);
  const OpenWindow& open_window() const;
  /// Retrains on the open window minus the given event ids and closes it.
  WindowReport finish_window(const std::unordered_set<std::uint64_t>& malicious_ids);
  /// begin + finish, excluding events labelled malicious in the input when
  /// `exclude_labelled_malicious` is set.
  WindowReport process_window(std::span<const RawEvent> raw, bool exclude_labelled_malicious = true);

 private:
  Catalog catalog_;
  ModelParams params_;
  NoiseTables noise_;
  Standardizer standardizer_;
  RetrainConfig config_;
  int completed_ = 0;
  std::optional<OpenWindow> open_;
};

void write_window_report(const std::filesystem::path& path, const WindowReport& report, const Catalog& catalog,
                         const std::string& params_hash);

}  // namespace evad
