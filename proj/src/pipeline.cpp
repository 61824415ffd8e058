#include "evad/pipeline.hpp"

#include <fstream>
#include <ostream>

#include "evad/error.hpp"
#include "evad/textio.hpp"

namespace evad {

namespace fs = std::filesystem;

ModelBundle train_bundle(const std::vector<RawEvent>& events, const Catalog& catalog, const IngestOptions& ingest,
                         const TrainConfig& config, std::ostream* metrics) {
  ModelBundle bundle;
  bundle.catalog = catalog.truncated(0);
  bundle.catalog.clear_counts();
  std::vector<Event> train_events;
  for (const auto& r : events) {
    if (window_of(r.timestamp, ingest) != 0) continue;
    train_events.push_back(bundle.catalog.intern_event(r, 0, true));
  }
  if (train_events.empty()) throw DataError("no training events");
  auto result = train(train_events, bundle.catalog, config, metrics);
  bundle.params = std::move(result.params);
  const auto scored = score_events(bundle.params, train_events, nullptr, config.execution);
  bundle.standardizer = fit_standardizer(scored);
  bundle.window = 0;
  return bundle;
}

void write_scored(const fs::path& path, const std::vector<ScoredRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) out << format_scored_record(r) << '\n';
}

ReplayResult replay(const std::vector<RawEvent>& events, ModelBundle bundle, const IngestOptions& ingest,
                    const RetrainConfig& config, const ReplayOptions& options) {
  const int last = options.last_window < 0 ? ingest.test_windows : options.last_window;
  StreamEngine engine(std::move(bundle), config);
  ReplayResult result;
  for (int t = engine.completed_windows() + 1; t <= last; ++t) {
    const auto raw = events_in_window(events, t, ingest);
    const auto& open = engine.begin_window(raw);
    std::vector<ScoredRecord> rows;
    for (std::size_t k = 0; k < open.scored.size(); ++k)
      rows.push_back(to_record(open.scored[k], engine.catalog(), open.event_ids[k]));

    std::unordered_set<std::uint64_t> flagged;
    if (options.flagged) {
      for (auto id : open.event_ids)
        if (options.flagged->count(id)) flagged.insert(id);
    } else if (options.exclude_labelled) {
      for (const auto& r : raw)
        if (r.label == Label::Malicious) flagged.insert(r.source_index);
    }
    auto report = engine.finish_window(flagged);

    if (!options.out_dir.empty()) {
      const auto dir = options.out_dir / ("window-" + std::to_string(t));
      fs::create_directories(dir);
      engine.bundle().save(dir);
      write_scored(dir / "scored.tsv", rows);
      write_window_report(dir / "report.txt", report, engine.catalog(), textio::hash_file_hex(dir / "params.bin"));
    }
    result.scored.insert(result.scored.end(), rows.begin(), rows.end());
    report.scored.clear();
    result.reports.push_back(std::move(report));
  }
  result.final_bundle = engine.bundle();
  return result;
}

}  // namespace evad
