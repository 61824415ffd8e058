#include "evad/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <tuple>
#include <unordered_map>

#include "evad/error.hpp"
#include "evad/textio.hpp"

namespace evad {

int window_of(std::int64_t timestamp, const IngestOptions& options) {
  if (options.window_seconds <= 0) throw ConfigError("window length must be positive");
  if (timestamp < 0) return -1;
  const auto day = timestamp / options.window_seconds;
  if (day < options.train_windows) return 0;
  const auto k = day - options.train_windows + 1;
  return k <= options.test_windows ? static_cast<int>(k) : -1;
}

namespace {

std::int64_t parse_time(std::string_view field, std::size_t line_no) {
  try {
    return textio::parse_int(field);
  } catch (const DataError&) {
    throw ParseError(line_no, "invalid timestamp '" + std::string(field) + "'");
  }
}

std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

bool is_user_account(std::string_view account, const IngestOptions& options) {
  const auto at = account.find('@');
  const auto name = account.substr(0, at);
  if (name.empty() || name.back() == '$') return false;
  const auto u = upper(name);
  for (const auto& b : options.builtin_accounts)
    if (upper(b) == u) return false;
  return true;
}

}  // namespace

std::optional<RawEvent> parse_auth(std::string_view line, std::size_t line_no, const IngestOptions& options) {
  const auto f = textio::split(strip_cr(line), ',');
  if (f.size() != 9) throw ParseError(line_no, "authentication record needs 9 fields, got " + std::to_string(f.size()));
  RawEvent ev;
  ev.timestamp = parse_time(f[0], line_no);
  const auto dst_user = f[2], src_comp = f[3], dst_comp = f[4];
  if (f[7] != "LogOn") return std::nullopt;
  if (!options.keep_failures && f[8] != "Success") return std::nullopt;
  if (!is_user_account(dst_user, options)) return std::nullopt;
  const std::string auth_type = std::string(f[5]) + "|" + std::string(f[6]);
  if (src_comp == dst_comp) {
    ev.type = "local_auth";
    ev.entities = {std::string(dst_user), auth_type, std::string(dst_comp)};
  } else {
    ev.type = "remote_auth";
    ev.entities = {std::string(dst_user), auth_type, std::string(src_comp), std::string(dst_comp)};
  }
  return ev;
}

std::optional<RawEvent> parse_proc(std::string_view line, std::size_t line_no, const IngestOptions&) {
  const auto f = textio::split(strip_cr(line), ',');
  if (f.size() != 5) throw ParseError(line_no, "process record needs 5 fields, got " + std::to_string(f.size()));
  RawEvent ev;
  ev.timestamp = parse_time(f[0], line_no);
  if (f[4] != "Start") return std::nullopt;
  ev.type = "proc_start";
  ev.entities = {std::string(f[2]), std::string(f[1]), std::string(f[3])};
  return ev;
}

std::size_t apply_rare_process_token(std::vector<RawEvent>& events, const IngestOptions& options) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& e : events) {
    if (e.type != "proc_start") continue;
    if (options.rare_scope == RareCountScope::TrainOnly && window_of(e.timestamp, options) != 0) continue;
    ++counts[e.entities[2]];
  }
  std::set<std::string> replaced;
  for (auto& e : events) {
    if (e.type != "proc_start") continue;
    auto it = counts.find(e.entities[2]);
    const std::size_t c = it == counts.end() ? 0 : it->second;
    if (c < options.rare_process_threshold) {
      replaced.insert(e.entities[2]);
      e.entities[2] = options.rare_process_token;
    }
  }
  return replaced.size();
}

RedTeamResult apply_redteam_labels(std::vector<RawEvent>& events, std::istream& redteam) {
  using Key = std::tuple<std::int64_t, std::string, std::string, std::string>;
  std::map<Key, std::size_t> rows;
  RedTeamResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(redteam, line)) {
    ++line_no;
    auto f = textio::split(strip_cr(line), ',');
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != 4) throw ParseError(line_no, "red team record needs 4 fields");
    ++result.rows;
    ++rows[{parse_time(f[0], line_no), std::string(f[1]), std::string(f[2]), std::string(f[3])}];
  }
  std::set<Key> matched;
  for (auto& e : events) {
    if (e.type == "local_auth") {
      e.label = Label::Benign;
    } else if (e.type == "remote_auth") {
      Key k{e.timestamp, e.entities[0], e.entities[2], e.entities[3]};
      if (rows.count(k)) {
        e.label = Label::Malicious;
        ++result.matched_events;
        matched.insert(k);
      } else {
        e.label = Label::Benign;
      }
    }
  }
  for (const auto& [k, n] : rows)
    if (!matched.count(k)) result.unmatched_rows += n;
  return result;
}

namespace {

template <class Parser>
IngestStats read_log(std::istream& in, const IngestOptions& options, std::vector<RawEvent>& out, Parser parse) {
  IngestStats stats;
  std::string line;
  while (std::getline(in, line)) {
    ++stats.lines;
    if (strip_cr(line).empty()) {
      ++stats.filtered;
      continue;
    }
    try {
      if (auto ev = parse(line, stats.lines, options)) {
        out.push_back(std::move(*ev));
        ++stats.kept;
      } else {
        ++stats.filtered;
      }
    } catch (const ParseError&) {
      if (options.strict) throw;
      ++stats.errored;
    }
  }
  return stats;
}

}  // namespace

IngestStats read_auth_log(std::istream& in, const IngestOptions& options, std::vector<RawEvent>& out) {
  return read_log(in, options, out, parse_auth);
}

IngestStats read_proc_log(std::istream& in, const IngestOptions& options, std::vector<RawEvent>& out) {
  return read_log(in, options, out, parse_proc);
}

void sort_and_number(std::vector<RawEvent>& events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const RawEvent& a, const RawEvent& b) { return a.timestamp < b.timestamp; });
  for (std::size_t i = 0; i < events.size(); ++i) events[i].source_index = i;
}

// ---------------------------------------------------------------------------

std::string format_event_line(const RawEvent& e) {
  std::vector<std::string> f;
  f.reserve(e.entities.size() + 3);
  f.push_back(std::to_string(e.timestamp));
  f.push_back(e.type);
  f.insert(f.end(), e.entities.begin(), e.entities.end());
  f.push_back(std::string(1, label_code(e.label)));
  return textio::join_tsv(f);
}

RawEvent parse_event_line(std::string_view line, std::size_t line_no) {
  auto f = textio::split_tsv(strip_cr(line));
  if (f.size() < 5) throw ParseError(line_no, "event record needs at least 5 fields");
  RawEvent e;
  try {
    e.timestamp = textio::parse_int(f[0]);
    e.label = parse_label(f.back());
  } catch (const DataError& err) {
    throw ParseError(line_no, err.what());
  }
  e.type = f[1];
  e.entities.assign(f.begin() + 2, f.end() - 1);
  return e;
}

void write_events(std::ostream& out, const std::vector<RawEvent>& events) {
  for (const auto& e : events) out << format_event_line(e) << '\n';
}

void write_events(const std::string& path, const std::vector<RawEvent>& events) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  write_events(out, events);
}

std::vector<RawEvent> read_events(std::istream& in, const Schema& schema) {
  std::vector<RawEvent> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (strip_cr(line).empty()) continue;
    auto e = parse_event_line(line, line_no);
    auto type = schema.find_event_type(e.type);
    if (!type) throw ParseError(line_no, "unknown event type '" + e.type + "'");
    if (schema.event_type(*type).arity() != e.entities.size())
      throw ParseError(line_no, "wrong number of entities for '" + e.type + "'");
    e.source_index = out.size();
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<RawEvent> read_events(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_events(in, schema);
}

Catalog build_catalog(const std::vector<RawEvent>& events, const Schema& schema, const IngestOptions& options) {
  Catalog cat(schema);
  for (const auto& e : events) {
    const int w = window_of(e.timestamp, options);
    if (w < 0) continue;
    cat.intern_event(e, w, w == 0);
  }
  return cat;
}

std::vector<RawEvent> events_in_window(const std::vector<RawEvent>& events, int window,
                                       const IngestOptions& options) {
  std::vector<RawEvent> out;
  for (const auto& e : events)
    if (window_of(e.timestamp, options) == window) out.push_back(e);
  return out;
}

}  // namespace evad
