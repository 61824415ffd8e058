#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evad/schema.hpp"

namespace evad {

enum class RareCountScope { All, TrainOnly };

struct IngestOptions {
  /// Destination accounts dropped in addition to machine accounts ('$').
  /// Compared case-insensitively against the part before '@'.
  std::vector<std::string> builtin_accounts{"LOCAL SYSTEM", "NETWORK SERVICE", "ANONYMOUS LOGON"};
  bool keep_failures = true;
  std::size_t rare_process_threshold = 40;
  RareCountScope rare_scope = RareCountScope::All;
  std::string rare_process_token = "RARE_PROCESS";
  std::int64_t window_seconds = 86400;
  int train_windows = 8;
  int test_windows = 5;
  /// Throw on the first malformed line instead of counting it.
  bool strict = true;
};

/// 0 for the training period, k >= 1 for the k-th streaming window,
/// -1 past the last streaming window.
int window_of(std::int64_t timestamp, const IngestOptions& options);

/// Parses one line of a comma-separated authentication log:
///   time,src_user,dst_user,src_computer,dst_computer,auth_package,logon_type,orientation,outcome
/// Returns nothing for filtered records; throws ParseError on malformed ones.
std::optional<RawEvent> parse_auth(std::string_view line, std::size_t line_no, const IngestOptions& options);

/// time,user,computer,process,action  ->  proc_start (computer, user, process)
std::optional<RawEvent> parse_proc(std::string_view line, std::size_t line_no, const IngestOptions& options);

/// Replaces processes occurring fewer than `threshold` times (over all
/// events, or training events only) with the rare-process token.
/// Returns the number of distinct processes replaced.
std::size_t apply_rare_process_token(std::vector<RawEvent>& events, const IngestOptions& options);

struct RedTeamResult {
  std::size_t rows = 0;
  std::size_t matched_events = 0;
  std::size_t unmatched_rows = 0;
};

/// Red-team rows "time,user,src,dst" label remote authentications with the
/// same (time, user, source, destination) as malicious; all other
/// authentications become benign.
RedTeamResult apply_redteam_labels(std::vector<RawEvent>& events, std::istream& redteam);

struct IngestStats {
  std::size_t lines = 0;
  std::size_t kept = 0;
  std::size_t filtered = 0;
  std::size_t errored = 0;
};

IngestStats read_auth_log(std::istream& in, const IngestOptions& options, std::vector<RawEvent>& out);
IngestStats read_proc_log(std::istream& in, const IngestOptions& options, std::vector<RawEvent>& out);

/// Stable sort by timestamp, then renumbers source_index in file order.
void sort_and_number(std::vector<RawEvent>& events);

// Canonical event file: one event per line, tab separated (escaped):
//   timestamp event_type entity_1 ... entity_N label
// label is 0, 1 or ?.
std::string format_event_line(const RawEvent& event);
RawEvent parse_event_line(std::string_view line, std::size_t line_no);
void write_events(std::ostream& out, const std::vector<RawEvent>& events);
void write_events(const std::string& path, const std::vector<RawEvent>& events);
/// source_index is the 0-based line index. Arity is checked against `schema`.
std::vector<RawEvent> read_events(std::istream& in, const Schema& schema);
std::vector<RawEvent> read_events(const std::string& path, const Schema& schema);

/// Interns events in order with first_seen = window_of(timestamp);
/// occurrence counts come from training events only. Events beyond the
/// last window are ignored.
Catalog build_catalog(const std::vector<RawEvent>& events, const Schema& schema, const IngestOptions& options);

/// Events whose window_of() equals `window`.
std::vector<RawEvent> events_in_window(const std::vector<RawEvent>& events, int window,
                                       const IngestOptions& options);

struct SynthConfig {
  std::size_t users = 120;
  std::size_t computers = 160;
  std::size_t processes = 40;
  std::size_t auth_types = 6;
  std::size_t communities = 2;
  double server_fraction = 0.25;
  std::size_t favorite_hosts = 3;
  std::size_t favorite_servers = 3;
  double habit_rate = 0.85;         // chance of using a favourite host
  double auth_type_loyalty = 0.9;   // chance a host is reached with its usual auth type
  double benign_cross_rate = 0.01;  // benign remote auths to another community
  double local_fraction = 0.3;
  double remote_fraction = 0.45;    // proc_start takes the rest
  double late_user_fraction = 0.05; // users whose first activity is in a streaming window
  std::size_t windows = 13;
  std::size_t train_windows = 8;
  std::size_t events_per_window = 16000;
  std::int64_t window_seconds = 86400;
  double anomaly_rate = 0.001;
  std::size_t inject_from_window = 8;  // 0-based window index where injection starts
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigError
};

/// Community-structured stream over local_auth / remote_auth / proc_start.
/// Injected anomalies are cross-community remote authentications labelled
/// malicious; all other events are labelled benign.
std::vector<RawEvent> generate_synthetic(const SynthConfig& config);

/// Community index encoded in a synthetic entity name, or -1.
int synthetic_community(std::string_view name, const SynthConfig& config);

}  // namespace evad
