#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <unordered_set>
#include <vector>

#include "evad/ingest.hpp"
#include "evad/score.hpp"
#include "evad/stream.hpp"
#include "evad/train.hpp"

namespace evad {

/// Fits parameters and the standardizer on the training-period events.
/// `catalog` may contain streaming entities; only first_seen == 0 is kept.
ModelBundle train_bundle(const std::vector<RawEvent>& events, const Catalog& catalog, const IngestOptions& ingest,
                         const TrainConfig& config, std::ostream* metrics = nullptr);

struct ReplayOptions {
  /// Exclude events labelled malicious in the input from retraining.
  bool exclude_labelled = true;
  /// When set, these event ids are the analyst flags instead of the labels.
  std::optional<std::unordered_set<std::uint64_t>> flagged;
  /// Per-window output directories (bundle, report, scored.tsv). Empty: none.
  std::filesystem::path out_dir;
  /// Last window to process (defaults to the ingest test window count).
  int last_window = -1;
};

struct ReplayResult {
  std::vector<WindowReport> reports;
  std::vector<ScoredRecord> scored;  // all processed windows, in input order
  ModelBundle final_bundle;
};

/// Runs the window loop from bundle.window + 1 on.
ReplayResult replay(const std::vector<RawEvent>& events, ModelBundle bundle, const IngestOptions& ingest,
                    const RetrainConfig& config, const ReplayOptions& options);

void write_scored(const std::filesystem::path& path, const std::vector<ScoredRecord>& records);

}  // namespace evad
