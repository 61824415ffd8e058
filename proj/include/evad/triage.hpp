#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "evad/stream.hpp"

namespace evad {

enum class Verdict { Unreviewed, Benign, Malicious };
enum class WindowPhase { Scoring, AwaitingReview, Retraining, Closed };

std::string verdict_name(Verdict v);
Verdict parse_verdict(std::string_view s);  // throws DataError
std::string phase_name(WindowPhase p);

struct TriageItem {
  std::uint64_t event_id = 0;
  int window = 0;
  double z_score = 0.0;
  double raw_score = 0.0;
  bool standardized = true;
  std::size_t rank = 0;  // 1-based within the window
  std::int64_t timestamp = 0;
  std::string event_type;
  std::vector<std::string> entities;
  std::vector<double> p_values;  // one per predicted position
  Verdict verdict = Verdict::Unreviewed;
  std::string note;
};

struct WindowState {
  int window = 0;
  WindowPhase phase = WindowPhase::Scoring;
  std::size_t events = 0;
  std::size_t reviewed = 0;
  std::size_t malicious = 0;
  /// Snapshot directory of the parameters that scored this window, and its
  /// content hash.
  std::string snapshot;
  std::string params_hash;
};

nlohmann::json to_json(const TriageItem& item);
nlohmann::json to_json(const WindowState& state);

/// Human-in-the-loop window driver. Scores one window at a time, collects
/// verdicts, retrains on the window minus malicious verdicts and moves on.
///
/// State directory layout:
///   journal.jsonl               append-only audit log
///   snapshots/window-<T>/       model bundle after closing window T (0 = initial)
///   windows/<T>.tsv             ranked scored events of window T
class TriageService {
 public:
  /// `windows[k]` holds the raw events of streaming window k+1. When the
  /// state directory already holds a snapshot the service resumes from it
  /// and `initial` is ignored.
  TriageService(std::filesystem::path state_dir, ModelBundle initial, std::vector<std::vector<RawEvent>> windows,
                RetrainConfig config);
  ~TriageService();

  TriageService(const TriageService&) = delete;
  TriageService& operator=(const TriageService&) = delete;

  std::vector<WindowState> list_windows() const;
  WindowState window_state(int window) const;  // NotFoundError
  std::vector<TriageItem> top_anomalies(int window, std::size_t limit) const;
  TriageItem submit_verdict(int window, std::uint64_t event_id, Verdict verdict, const std::string& note);
  WindowState trigger_retrain(int window);
  std::vector<nlohmann::json> journal() const;

  /// Parameters that will score the next window (theta after the last
  /// closed window).
  ModelParams current_params() const;
  const std::filesystem::path& state_dir() const { return dir_; }

 private:
  struct WindowRecord {
    WindowState state;
    std::vector<TriageItem> items;  // rank order
    std::map<std::uint64_t, std::size_t> by_id;
  };

  void append_journal(nlohmann::json entry);
  void open_next_window();
  void write_items(const WindowRecord& rec) const;
  WindowRecord read_items(int window) const;
  WindowRecord& record(int window);
  const WindowRecord& record(int window) const;

  std::filesystem::path dir_;
  std::vector<std::vector<RawEvent>> windows_;
  RetrainConfig config_;

  mutable std::shared_mutex mutex_;  // guards records_ and journal_
  std::mutex engine_mutex_;          // held for scoring and retraining
  std::unique_ptr<StreamEngine> engine_;
  std::map<int, WindowRecord> records_;
  std::vector<nlohmann::json> journal_;
  std::uint64_t seq_ = 0;
};

/// REST front end for TriageService (JSON bodies):
///   GET  /v1/windows
///   GET  /v1/windows/{T}/anomalies?limit=N
///   POST /v1/windows/{T}/verdicts   {"event_id":..,"verdict":"malicious"|"benign","note":".."}
///   POST /v1/windows/{T}/retrain
///   GET  /v1/journal
/// Errors are {"error": message} with 400, 404 or 409.
class TriageServer {
 public:
  TriageServer(TriageService& service, std::size_t default_limit = 100);
  ~TriageServer();

  /// Binds and serves until stop(). Returns false if binding failed.
  bool listen(const std::string& host, int port);
  /// Binds to an ephemeral port and returns it (-1 on failure); serve with run().
  int bind_any(const std::string& host);
  bool run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace evad
