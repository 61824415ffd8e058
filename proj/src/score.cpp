#include "evad/score.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "evad/error.hpp"
#include "evad/textio.hpp"

namespace evad {

double discrete_p_value(const ModelParams& params, const Event& event, std::size_t position) {
  const auto dist = conditional_distribution(params, event.type, position, event.entities);
  const double observed = dist.at(event.entities.at(position));
  double p = 0.0;
  for (double pv : dist)
    if (pv <= observed) p += pv;
  return std::min(p, 1.0);
}

std::vector<double> event_p_values(const ModelParams& params, const Event& event) {
  const auto n = params.event_types.at(event.type).arity();
  if (event.entities.size() != n) throw DataError("event arity does not match its type");
  std::vector<double> out;
  out.reserve(n - 1);
  for (std::size_t i = 1; i < n; ++i) out.push_back(discrete_p_value(params, event, i));
  return out;
}

double raw_event_score(std::span<const double> p_values) {
  if (p_values.empty()) throw DataError("an event needs at least one p-value");
  double sum = 0.0;
  for (double p : p_values) {
    if (!(p > 0.0 && p <= 1.0)) throw DataError("p-value outside (0, 1]");
    sum += std::log(p);
  }
  return -sum / static_cast<double>(p_values.size()) + 0.0;
}

// ---------------------------------------------------------------------------

Standardizer Standardizer::fit(const std::vector<std::vector<double>>& raw_by_type) {
  Standardizer s;
  s.moments_.resize(raw_by_type.size());
  for (std::size_t t = 0; t < raw_by_type.size(); ++t) {
    const auto& xs = raw_by_type[t];
    if (xs.size() < 2) continue;
    double sum = 0.0;
    for (double x : xs) sum += x;
    const double mean = sum / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    TypeMoments m;
    m.mean = mean;
    m.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    m.count = xs.size();
    if (!(m.stddev >= kStdFloor)) {
      m.stddev = kStdFloor;
      m.floored = true;
    }
    s.moments_[t] = m;
  }
  return s;
}

Standardizer Standardizer::fit(std::span<const ScoredEvent> training) {
  std::vector<std::vector<double>> by_type;
  for (const auto& e : training) {
    if (by_type.size() <= e.event.type) by_type.resize(e.event.type + 1);
    by_type[e.event.type].push_back(e.raw_score);
  }
  return fit(by_type);
}

bool Standardizer::fitted(EventTypeId type) const { return type < moments_.size() && moments_[type]; }

const TypeMoments& Standardizer::moments(EventTypeId type) const {
  if (!fitted(type)) throw DataError("no standardization statistics for event type " + std::to_string(type));
  return *moments_[type];
}

double Standardizer::standardize(EventTypeId type, double raw) const {
  const auto& m = moments(type);
  return (raw - m.mean) / m.stddev;
}

double Standardizer::standardize_or_identity(EventTypeId type, double raw, bool* standardized) const {
  if (fitted(type)) {
    if (standardized) *standardized = true;
    return standardize(type, raw);
  }
  if (standardized) *standardized = false;
  return raw;
}

void Standardizer::update_from(const Standardizer& newer) {
  if (moments_.size() < newer.moments_.size()) moments_.resize(newer.moments_.size());
  for (std::size_t t = 0; t < newer.moments_.size(); ++t)
    if (newer.moments_[t]) moments_[t] = newer.moments_[t];
}

// Text format: "evad-standardizer 1" then one line per fitted type:
//   <event type> <mean> <std> <count> <floored>
void Standardizer::save(std::ostream& out, const Schema& schema) const {
  out << "evad-standardizer\t1\n";
  for (std::size_t t = 0; t < moments_.size(); ++t) {
    if (!moments_[t]) continue;
    const auto& m = *moments_[t];
    out << textio::escape(schema.event_type(static_cast<EventTypeId>(t)).name) << '\t'
        << textio::format_double(m.mean) << '\t' << textio::format_double(m.stddev) << '\t' << m.count << '\t'
        << (m.floored ? 1 : 0) << '\n';
  }
}

Standardizer Standardizer::load(std::istream& in, const Schema& schema) {
  std::string line;
  if (!std::getline(in, line) || line != "evad-standardizer\t1") throw ParseError(1, "not a standardizer file (v1)");
  Standardizer s;
  s.moments_.resize(schema.event_types().size());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = textio::split_tsv(line);
    if (f.size() != 5) throw ParseError(line_no, "expected 5 fields");
    try {
      TypeMoments m;
      m.mean = textio::parse_double(f[1]);
      m.stddev = textio::parse_double(f[2]);
      m.count = static_cast<std::size_t>(textio::parse_int(f[3]));
      m.floored = f[4] == "1";
      s.moments_[schema.event_type_id(f[0])] = m;
    } catch (const std::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return s;
}

void Standardizer::save(const std::string& path, const Schema& schema) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  save(out, schema);
}

Standardizer Standardizer::load(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return load(in, schema);
}

Standardizer fit_standardizer(std::span<const ScoredEvent> training) { return Standardizer::fit(training); }

double standardized_score(const Standardizer& standardizer, EventTypeId type, double raw) {
  return standardizer.standardize(type, raw);
}

std::vector<ScoredEvent> score_events(const ModelParams& params, std::span<const Event> events,
                                      const Standardizer* standardizer, Execution exec) {
  auto pv = p_values(params, events, exec);
  std::vector<ScoredEvent> out(events.size());
  for (std::size_t k = 0; k < events.size(); ++k) {
    auto& s = out[k];
    s.event = events[k];
    s.p_values = std::move(pv[k]);
    s.raw_score = raw_event_score(s.p_values);
    if (standardizer) {
      s.z_score = standardizer->standardize_or_identity(s.event.type, s.raw_score, &s.standardized);
    } else {
      s.z_score = s.raw_score;
      s.standardized = false;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

ScoredRecord to_record(const ScoredEvent& scored, const Catalog& catalog, std::uint64_t event_id) {
  ScoredRecord r;
  r.event_id = event_id;
  r.timestamp = scored.event.timestamp;
  r.event_type = catalog.schema().event_type(scored.event.type).name;
  r.label = scored.event.label;
  r.raw_score = scored.raw_score;
  r.z_score = scored.z_score;
  r.standardized = scored.standardized;
  r.entities = catalog.entity_names(scored.event);
  r.p_values = scored.p_values;
  return r;
}

std::string format_scored_record(const ScoredRecord& r) {
  std::vector<std::string> f;
  f.push_back(std::to_string(r.event_id));
  f.push_back(std::to_string(r.timestamp));
  f.push_back(r.event_type);
  f.push_back(std::string(1, label_code(r.label)));
  f.push_back(textio::format_double(r.raw_score));
  f.push_back(textio::format_double(r.z_score));
  f.push_back(r.standardized ? "1" : "0");
  f.push_back(std::to_string(r.entities.size()));
  for (const auto& e : r.entities) f.push_back(e);
  for (double p : r.p_values) f.push_back(textio::format_double(p));
  return textio::join_tsv(f);
}

ScoredRecord parse_scored_record(const std::string& line, std::size_t line_no) {
  auto f = textio::split_tsv(line);
  try {
    if (f.size() < 8) throw DataError("too few fields");
    ScoredRecord r;
    r.event_id = static_cast<std::uint64_t>(textio::parse_int(f[0]));
    r.timestamp = textio::parse_int(f[1]);
    r.event_type = f[2];
    r.label = parse_label(f[3]);
    r.raw_score = textio::parse_double(f[4]);
    r.z_score = textio::parse_double(f[5]);
    r.standardized = f[6] == "1";
    const auto n = static_cast<std::size_t>(textio::parse_int(f[7]));
    if (n < 2 || f.size() != 8 + n + (n - 1)) throw DataError("field count does not match the arity");
    r.entities.assign(f.begin() + 8, f.begin() + 8 + static_cast<std::ptrdiff_t>(n));
    for (std::size_t i = 8 + n; i < f.size(); ++i) r.p_values.push_back(textio::parse_double(f[i]));
    return r;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(line_no, e.what());
  }
}

std::vector<ScoredRecord> read_scored_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<ScoredRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    out.push_back(parse_scored_record(line, line_no));
  }
  return out;
}

}  // namespace evad
