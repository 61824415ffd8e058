#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "evad/score.hpp"

namespace evad {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  bool operator==(const RocPoint&) const = default;
};

struct TruncatedRoc {
  /// Starts at (0,0). One vertex per distinct score while fpr <= max_fpr,
  /// plus an interpolated end point at fpr = max_fpr.
  std::vector<RocPoint> points;
  /// Area under the truncated curve divided by max_fpr.
  double auc = 0.0;
};

/// Higher score = more anomalous. labels[i] is true for malicious.
/// Throws DataError when only one class is present.
TruncatedRoc truncated_roc(std::span<const double> scores, std::span<const bool> labels, double max_fpr = 0.01);

/// Normalised area of a polyline that starts at fpr 0 and is cut at max_fpr.
/// Shared by truncated_roc and anything that builds vertices itself.
TruncatedRoc truncate_curve(const std::vector<RocPoint>& full_curve, double max_fpr);

struct RankedEntry {
  double score = 0.0;
  bool malicious = false;
  std::int64_t timestamp = 0;
  std::uint64_t order = 0;  // input order, final tie-break
};

/// Per day, take the top `budget` entries by score (ties: earlier timestamp,
/// then lower order) and return the fraction of all malicious entries that
/// were taken. Throws when budget < 1 or no entry is malicious.
double detection_rate_at_budget(const std::vector<std::vector<RankedEntry>>& days, std::size_t budget);

enum class IntervalMethod { Normal, Percentile };

struct Interval {
  double mean = 0.0;
  double half_width = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Normal: mean +- 1.96 s / sqrt(n). Percentile: 2.5th and 97.5th
/// percentiles (linear interpolation), half_width = (upper - lower) / 2.
/// Throws when fewer than 2 values are given.
Interval confidence_interval(std::span<const double> values, IntervalMethod method = IntervalMethod::Normal);

struct EvalOptions {
  double max_fpr = 0.01;
  /// Absolute daily budgets.
  std::vector<std::size_t> budgets{};
  /// Budgets as a fraction of each day's evaluated volume (rounded, at least 1).
  std::vector<double> budget_fractions{};
  std::vector<std::string> event_types{"local_auth", "remote_auth"};
  std::int64_t day_seconds = 86400;
  /// Rank by standardised score (true) or raw score.
  bool use_z = true;
};

struct EvalReport {
  std::size_t events = 0;
  std::size_t malicious = 0;
  std::size_t days = 0;
  TruncatedRoc roc;
  /// Key is the budget label: "B=<n>" or "B=<fraction>".
  std::map<std::string, double> detection_rate;
};

/// Labelled records of the selected event types only; unlabelled records
/// are skipped.
EvalReport evaluate(std::span<const ScoredRecord> records, const EvalOptions& options);

void write_report(std::ostream& out, const EvalReport& report, const EvalOptions& options);
void write_plot_data(std::ostream& out, const TruncatedRoc& roc);

struct RunSummary {
  std::size_t runs = 0;
  Interval auc;
  std::map<std::string, Interval> detection_rate;
};

RunSummary summarize_runs(std::span<const EvalReport> reports, IntervalMethod method = IntervalMethod::Normal);
void write_summary(std::ostream& out, const RunSummary& summary);

}  // namespace evad
