#include "evad/triage.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "evad/error.hpp"
#include "evad/textio.hpp"

namespace evad {

namespace fs = std::filesystem;
using nlohmann::json;

std::string verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Unreviewed: return "unreviewed";
    case Verdict::Benign: return "benign";
    case Verdict::Malicious: return "malicious";
  }
  return "unreviewed";
}

Verdict parse_verdict(std::string_view s) {
  if (s == "benign") return Verdict::Benign;
  if (s == "malicious") return Verdict::Malicious;
  if (s == "unreviewed") return Verdict::Unreviewed;
  throw DataError("unknown verdict '" + std::string(s) + "'");
}

std::string phase_name(WindowPhase p) {
  switch (p) {
    case WindowPhase::Scoring: return "scoring";
    case WindowPhase::AwaitingReview: return "awaiting_review";
    case WindowPhase::Retraining: return "retraining";
    case WindowPhase::Closed: return "closed";
  }
  return "scoring";
}

json to_json(const TriageItem& item) {
  return {{"event_id", item.event_id},
          {"window", item.window},
          {"z", item.z_score},
          {"raw_score", item.raw_score},
          {"standardized", item.standardized},
          {"rank", item.rank},
          {"timestamp", item.timestamp},
          {"event_type", item.event_type},
          {"entities", item.entities},
          {"p_values", item.p_values},
          {"verdict", verdict_name(item.verdict)},
          {"note", item.note}};
}

json to_json(const WindowState& s) {
  return {{"window", s.window},
          {"phase", phase_name(s.phase)},
          {"events", s.events},
          {"reviewed", s.reviewed},
          {"malicious", s.malicious},
          {"snapshot", s.snapshot},
          {"params_hash", s.params_hash}};
}

namespace {

fs::path snapshot_dir(const fs::path& dir, int window) {
  return dir / "snapshots" / ("window-" + std::to_string(window));
}

std::optional<int> latest_snapshot(const fs::path& dir) {
  std::optional<int> best;
  const auto root = dir / "snapshots";
  if (!fs::exists(root)) return best;
  for (const auto& entry : fs::directory_iterator(root)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("window-", 0) != 0 || !fs::exists(entry.path() / "meta.txt")) continue;
    try {
      const auto t = static_cast<int>(textio::parse_int(std::string_view(name).substr(7)));
      if (!best || t > *best) best = t;
    } catch (const DataError&) {
    }
  }
  return best;
}

void save_snapshot(const ModelBundle& bundle, const fs::path& dir, int window) {
  const auto target = snapshot_dir(dir, window);
  const auto tmp = target.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  bundle.save(tmp);
  fs::remove_all(target);
  fs::rename(tmp, target);
}

std::string snapshot_hash(const fs::path& snap) { return textio::hash_file_hex(snap / "params.bin"); }

void refresh_counts(WindowState& s, const std::vector<TriageItem>& items) {
  s.events = items.size();
  s.reviewed = 0;
  s.malicious = 0;
  for (const auto& it : items) {
    s.reviewed += it.verdict != Verdict::Unreviewed ? 1 : 0;
    s.malicious += it.verdict == Verdict::Malicious ? 1 : 0;
  }
}

TriageItem item_from(const ScoredRecord& r, int window, std::size_t rank) {
  TriageItem it;
  it.event_id = r.event_id;
  it.window = window;
  it.z_score = r.z_score;
  it.raw_score = r.raw_score;
  it.standardized = r.standardized;
  it.rank = rank;
  it.timestamp = r.timestamp;
  it.event_type = r.event_type;
  it.entities = r.entities;
  it.p_values = r.p_values;
  return it;
}

}  // namespace

TriageService::TriageService(fs::path state_dir, ModelBundle initial, std::vector<std::vector<RawEvent>> windows,
                             RetrainConfig config)
    : dir_(std::move(state_dir)), windows_(std::move(windows)), config_(config) {
  fs::create_directories(dir_ / "snapshots");
  fs::create_directories(dir_ / "windows");

  const auto journal_path = dir_ / "journal.jsonl";
  if (fs::exists(journal_path)) {
    std::ifstream in(journal_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        journal_.push_back(json::parse(line));
      } catch (const json::parse_error&) {
        break;  // torn final write
      }
    }
    if (!journal_.empty()) seq_ = journal_.back().value("seq", std::uint64_t{0});
  }

  ModelBundle bundle;
  if (auto t = latest_snapshot(dir_)) {
    bundle = ModelBundle::load(snapshot_dir(dir_, *t));
  } else {
    bundle = std::move(initial);
    save_snapshot(bundle, dir_, bundle.window);
  }
  const int base = bundle.window;
  engine_ = std::make_unique<StreamEngine>(std::move(bundle), config_);

  // Closed windows are served from their ranked files.
  for (int t = 1; t <= base; ++t) {
    if (!fs::exists(dir_ / "windows" / (std::to_string(t) + ".tsv"))) continue;
    auto rec = read_items(t);
    rec.state.phase = WindowPhase::Closed;
    records_[t] = std::move(rec);
  }
  for (const auto& e : journal_) {
    if (e.value("kind", "") != "verdict") continue;
    auto it = records_.find(e.at("window").get<int>());
    if (it == records_.end()) continue;
    auto pos = it->second.by_id.find(e.at("event_id").get<std::uint64_t>());
    if (pos == it->second.by_id.end()) continue;
    auto& item = it->second.items[pos->second];
    item.verdict = parse_verdict(e.at("verdict").get<std::string>());
    item.note = e.value("note", "");
  }
  for (auto& [t, rec] : records_) refresh_counts(rec.state, rec.items);

  std::lock_guard engine_lock(engine_mutex_);
  open_next_window();
}

TriageService::~TriageService() = default;

void TriageService::append_journal(json entry) {
  entry["seq"] = ++seq_;
  std::ofstream out(dir_ / "journal.jsonl", std::ios::app);
  out << entry.dump() << '\n';
  out.flush();
  if (!out) throw DataError("cannot append to journal in " + dir_.string());
  journal_.push_back(std::move(entry));
}

void TriageService::write_items(const WindowRecord& rec) const {
  std::string text;
  for (const auto& it : rec.items) {
    ScoredRecord r;
    r.event_id = it.event_id;
    r.timestamp = it.timestamp;
    r.event_type = it.event_type;
    r.raw_score = it.raw_score;
    r.z_score = it.z_score;
    r.standardized = it.standardized;
    r.entities = it.entities;
    r.p_values = it.p_values;
    text += format_scored_record(r) + '\n';
  }
  const auto path = dir_ / "windows" / (std::to_string(rec.state.window) + ".tsv");
  textio::write_file(path.string() + ".tmp", text);
  fs::rename(path.string() + ".tmp", path);
}

TriageService::WindowRecord TriageService::read_items(int window) const {
  WindowRecord rec;
  rec.state.window = window;
  const auto records = read_scored_file((dir_ / "windows" / (std::to_string(window) + ".tsv")).string());
  for (const auto& r : records) {
    rec.by_id[r.event_id] = rec.items.size();
    rec.items.push_back(item_from(r, window, rec.items.size() + 1));
  }
  const auto snap = snapshot_dir(dir_, window - 1);
  rec.state.snapshot = snap.string();
  if (fs::exists(snap / "params.bin")) rec.state.params_hash = snapshot_hash(snap);
  return rec;
}

// Requires engine_mutex_.
void TriageService::open_next_window() {
  const int next = engine_->completed_windows() + 1;
  if (next > static_cast<int>(windows_.size())) return;
  {
    std::unique_lock lock(mutex_);
    auto& rec = records_[next];
    rec = {};
    rec.state.window = next;
    rec.state.phase = WindowPhase::Scoring;
  }

  const auto& open = engine_->begin_window(windows_[static_cast<std::size_t>(next - 1)]);
  std::vector<ScoredRecord> rows;
  rows.reserve(open.scored.size());
  for (std::size_t k = 0; k < open.scored.size(); ++k)
    rows.push_back(to_record(open.scored[k], engine_->catalog(), open.event_ids[k]));
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (rows[a].z_score != rows[b].z_score) return rows[a].z_score > rows[b].z_score;
    return rows[a].timestamp < rows[b].timestamp;
  });

  WindowRecord rec;
  rec.state.window = next;
  for (auto k : order) {
    if (rec.by_id.count(rows[k].event_id)) throw DataError("duplicate event id " + std::to_string(rows[k].event_id));
    rec.by_id[rows[k].event_id] = rec.items.size();
    rec.items.push_back(item_from(rows[k], next, rec.items.size() + 1));
  }
  const auto snap = snapshot_dir(dir_, next - 1);
  rec.state.snapshot = snap.string();
  rec.state.params_hash = snapshot_hash(snap);
  write_items(rec);

  std::unique_lock lock(mutex_);
  bool journaled = false;
  for (const auto& e : journal_) {
    if (e.value("window", -1) != next) continue;
    const auto kind = e.value("kind", "");
    if (kind == "window_scored") journaled = true;
    if (kind == "verdict") {
      auto pos = rec.by_id.find(e.at("event_id").get<std::uint64_t>());
      if (pos == rec.by_id.end()) continue;
      rec.items[pos->second].verdict = parse_verdict(e.at("verdict").get<std::string>());
      rec.items[pos->second].note = e.value("note", "");
    }
  }
  rec.state.phase = WindowPhase::AwaitingReview;
  refresh_counts(rec.state, rec.items);
  if (!journaled)
    append_journal({{"kind", "window_scored"},
                    {"window", next},
                    {"events", rec.items.size()},
                    {"params_hash", rec.state.params_hash}});
  records_[next] = std::move(rec);
}

TriageService::WindowRecord& TriageService::record(int window) {
  auto it = records_.find(window);
  if (it == records_.end()) throw NotFoundError("unknown window " + std::to_string(window));
  return it->second;
}

const TriageService::WindowRecord& TriageService::record(int window) const {
  auto it = records_.find(window);
  if (it == records_.end()) throw NotFoundError("unknown window " + std::to_string(window));
  return it->second;
}

std::vector<WindowState> TriageService::list_windows() const {
  std::shared_lock lock(mutex_);
  std::vector<WindowState> out;
  for (const auto& [t, rec] : records_) out.push_back(rec.state);
  return out;
}

WindowState TriageService::window_state(int window) const {
  std::shared_lock lock(mutex_);
  return record(window).state;
}

std::vector<TriageItem> TriageService::top_anomalies(int window, std::size_t limit) const {
  std::shared_lock lock(mutex_);
  const auto& rec = record(window);
  if (rec.state.phase == WindowPhase::Scoring) throw ConflictError("window " + std::to_string(window) + " is still scoring");
  const auto n = std::min(limit, rec.items.size());
  return {rec.items.begin(), rec.items.begin() + static_cast<std::ptrdiff_t>(n)};
}

TriageItem TriageService::submit_verdict(int window, std::uint64_t event_id, Verdict verdict, const std::string& note) {
  if (verdict == Verdict::Unreviewed) throw DataError("verdict must be 'benign' or 'malicious'");
  std::unique_lock lock(mutex_);
  auto& rec = record(window);
  auto pos = rec.by_id.find(event_id);
  if (pos == rec.by_id.end())
    throw NotFoundError("event " + std::to_string(event_id) + " is not in window " + std::to_string(window));
  auto& item = rec.items[pos->second];
  if (item.verdict == verdict) return item;
  if (rec.state.phase != WindowPhase::AwaitingReview)
    throw ConflictError("window " + std::to_string(window) + " is " + phase_name(rec.state.phase));
  if (item.verdict != Verdict::Unreviewed)
    throw ConflictError("event " + std::to_string(event_id) + " already has verdict " + verdict_name(item.verdict));
  append_journal({{"kind", "verdict"},
                  {"window", window},
                  {"event_id", event_id},
                  {"verdict", verdict_name(verdict)},
                  {"note", note}});
  item.verdict = verdict;
  item.note = note;
  refresh_counts(rec.state, rec.items);
  return item;
}

WindowState TriageService::trigger_retrain(int window) {
  std::unordered_set<std::uint64_t> flagged;
  std::vector<std::uint64_t> retrain_ids;
  {
    std::unique_lock lock(mutex_);
    auto& rec = record(window);
    if (rec.state.phase != WindowPhase::AwaitingReview)
      throw ConflictError("window " + std::to_string(window) + " is " + phase_name(rec.state.phase));
    rec.state.phase = WindowPhase::Retraining;
    std::vector<std::uint64_t> excluded;
    for (const auto& it : rec.items) {
      if (it.verdict == Verdict::Malicious) {
        flagged.insert(it.event_id);
        excluded.push_back(it.event_id);
      }
    }
    std::sort(excluded.begin(), excluded.end());
    append_journal({{"kind", "retrain_started"}, {"window", window}, {"excluded", excluded}});
  }

  std::lock_guard engine_lock(engine_mutex_);
  WindowReport report;
  std::string hash;
  try {
    report = engine_->finish_window(flagged);
    save_snapshot(engine_->bundle(), dir_, window);
    hash = snapshot_hash(snapshot_dir(dir_, window));
  } catch (const std::exception& e) {
    std::unique_lock lock(mutex_);
    record(window).state.phase = WindowPhase::AwaitingReview;
    append_journal({{"kind", "retrain_failed"}, {"window", window}, {"error", e.what()}});
    throw;
  }
  for (auto id : report.event_ids)
    if (!flagged.count(id)) retrain_ids.push_back(id);

  WindowState state;
  {
    std::unique_lock lock(mutex_);
    auto& rec = record(window);
    rec.state.phase = WindowPhase::Closed;
    append_journal({{"kind", "window_closed"},
                    {"window", window},
                    {"retrain_set", retrain_ids},
                    {"excluded", report.excluded_events},
                    {"skipped", report.skipped_events},
                    {"epochs", report.epochs},
                    {"params_hash", hash}});
    state = rec.state;
  }
  open_next_window();
  return state;
}

std::vector<json> TriageService::journal() const {
  std::shared_lock lock(mutex_);
  return journal_;
}

ModelParams TriageService::current_params() const {
  std::shared_lock lock(mutex_);
  const auto t = latest_snapshot(dir_);
  if (!t) throw NotFoundError("no snapshot in " + dir_.string());
  return ModelBundle::load(snapshot_dir(dir_, *t)).params;
}

}  // namespace evad
