#include "evad/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <set>

#include "evad/error.hpp"
#include "evad/textio.hpp"

namespace evad {

TruncatedRoc truncate_curve(const std::vector<RocPoint>& curve, double max_fpr) {
  if (!(max_fpr > 0.0 && max_fpr <= 1.0)) throw ConfigError("max_fpr must be in (0,1]");
  if (curve.empty() || curve.front().fpr != 0.0) throw DataError("curve must start at fpr 0");
  TruncatedRoc out;
  out.points.push_back(curve.front());
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const auto a = out.points.back();
    auto b = curve[i];
    const bool cut = b.fpr > max_fpr;
    if (cut) {
      if (a.fpr >= max_fpr) break;
      b = {max_fpr, a.tpr + (b.tpr - a.tpr) * (max_fpr - a.fpr) / (b.fpr - a.fpr)};
    }
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
    out.points.push_back(b);
    if (cut) break;
  }
  out.auc = std::clamp(area / max_fpr, 0.0, 1.0);
  return out;
}

namespace {

template <class IsPositive>
TruncatedRoc roc_impl(std::span<const double> scores, IsPositive positive, double max_fpr) {
  std::size_t pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) pos += positive(i) ? 1 : 0;
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw DataError("ROC needs both malicious and benign events");
  for (double s : scores)
    if (std::isnan(s)) throw DataError("NaN score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> curve{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (positive(order[i]) ? tp : fp) += 1;
    curve.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                     static_cast<double>(tp) / static_cast<double>(pos)});
  }
  return truncate_curve(curve, max_fpr);
}

}  // namespace

TruncatedRoc truncated_roc(std::span<const double> scores, std::span<const bool> labels, double max_fpr) {
  if (scores.size() != labels.size()) throw DataError("scores and labels differ in length");
  return roc_impl(scores, [&](std::size_t i) { return labels[i]; }, max_fpr);
}

namespace {

double detection_rate(const std::vector<std::vector<RankedEntry>>& days, const std::vector<std::size_t>& budgets) {
  std::size_t total = 0, caught = 0;
  auto before = [](const RankedEntry& a, const RankedEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.order < b.order;
  };
  for (std::size_t d = 0; d < days.size(); ++d) {
    auto day = days[d];
    for (const auto& e : day) total += e.malicious ? 1 : 0;
    const auto take = std::min(budgets[d], day.size());
    std::partial_sort(day.begin(), day.begin() + static_cast<std::ptrdiff_t>(take), day.end(), before);
    for (std::size_t i = 0; i < take; ++i) caught += day[i].malicious ? 1 : 0;
  }
  if (total == 0) throw DataError("detection rate needs at least one malicious event");
  return static_cast<double>(caught) / static_cast<double>(total);
}

}  // namespace

double detection_rate_at_budget(const std::vector<std::vector<RankedEntry>>& days, std::size_t budget) {
  if (budget < 1) throw ConfigError("budget must be at least 1");
  return detection_rate(days, std::vector<std::size_t>(days.size(), budget));
}

Interval confidence_interval(std::span<const double> values, IntervalMethod method) {
  const std::size_t n = values.size();
  if (n < 2) throw DataError("confidence interval needs at least 2 runs");
  Interval out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  if (method == IntervalMethod::Normal) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    const double s = std::sqrt(ss / static_cast<double>(n - 1));
    out.half_width = 1.96 * s / std::sqrt(static_cast<double>(n));
    out.lower = out.mean - out.half_width;
    out.upper = out.mean + out.half_width;
    return out;
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, n - 1);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - static_cast<double>(lo));
  };
  out.lower = quantile(0.025);
  out.upper = quantile(0.975);
  out.half_width = (out.upper - out.lower) / 2.0;
  return out;
}

EvalReport evaluate(std::span<const ScoredRecord> records, const EvalOptions& options) {
  if (options.day_seconds <= 0) throw ConfigError("day_seconds must be positive");
  const std::set<std::string> types(options.event_types.begin(), options.event_types.end());
  std::vector<double> scores;
  std::vector<bool> labels;
  std::map<std::int64_t, std::vector<RankedEntry>> by_day;
  std::uint64_t order = 0;
  for (const auto& r : records) {
    if (!types.count(r.event_type) || r.label == Label::Unlabelled) continue;
    const double s = options.use_z ? r.z_score : r.raw_score;
    const bool bad = r.label == Label::Malicious;
    scores.push_back(s);
    labels.push_back(bad);
    auto day = r.timestamp / options.day_seconds - (r.timestamp < 0 && r.timestamp % options.day_seconds ? 1 : 0);
    by_day[day].push_back({s, bad, r.timestamp, order++});
  }
  EvalReport report;
  report.events = scores.size();
  report.malicious = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  report.days = by_day.size();
  report.roc = roc_impl(scores, [&](std::size_t i) { return labels[i]; }, options.max_fpr);

  std::vector<std::vector<RankedEntry>> days;
  for (auto& [d, entries] : by_day) days.push_back(std::move(entries));
  for (auto b : options.budgets) report.detection_rate["B=" + std::to_string(b)] = detection_rate_at_budget(days, b);
  for (double f : options.budget_fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("budget fraction must be in (0,1]");
    std::vector<std::size_t> budgets;
    for (const auto& day : days)
      budgets.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f * static_cast<double>(day.size())))));
    report.detection_rate["B=" + textio::format_double(f)] = detection_rate(days, budgets);
  }
  return report;
}

void write_report(std::ostream& out, const EvalReport& report, const EvalOptions& options) {
  out << "events: " << report.events << '\n'
      << "malicious: " << report.malicious << '\n'
      << "days: " << report.days << '\n'
      << "max_fpr: " << textio::format_double(options.max_fpr) << '\n'
      << "auc: " << textio::format_double(report.roc.auc) << '\n';
  for (const auto& [k, v] : report.detection_rate) out << "detection_rate." << k << ": " << textio::format_double(v) << '\n';
  out << "roc_points:\n";
  write_plot_data(out, report.roc);
}

void write_plot_data(std::ostream& out, const TruncatedRoc& roc) {
  for (const auto& p : roc.points) out << textio::format_double(p.fpr) << '\t' << textio::format_double(p.tpr) << '\n';
}

RunSummary summarize_runs(std::span<const EvalReport> reports, IntervalMethod method) {
  RunSummary s;
  s.runs = reports.size();
  std::vector<double> aucs;
  std::map<std::string, std::vector<double>> rates;
  for (const auto& r : reports) {
    aucs.push_back(r.roc.auc);
    for (const auto& [k, v] : r.detection_rate) rates[k].push_back(v);
  }
  s.auc = confidence_interval(aucs, method);
  for (const auto& [k, v] : rates) {
    if (v.size() != reports.size()) throw DataError("runs report different budgets");
    s.detection_rate[k] = confidence_interval(v, method);
  }
  return s;
}

void write_summary(std::ostream& out, const RunSummary& summary) {
  auto line = [&](const std::string& key, const Interval& i) {
    out << key << ": " << textio::format_double(i.mean) << " +- " << textio::format_double(i.half_width) << " ["
        << textio::format_double(i.lower) << ", " << textio::format_double(i.upper) << "]\n";
  };
  out << "runs: " << summary.runs << '\n';
  line("auc", summary.auc);
  for (const auto& [k, v] : summary.detection_rate) line("detection_rate." + k, v);
}

}  // namespace evad
