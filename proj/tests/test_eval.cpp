#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "evad/error.hpp"
#include "evad/eval.hpp"
#include "evad/rng.hpp"
#include "roc_oracle.hpp"

using namespace evad;
using doctest::Approx;

namespace {

double mann_whitney(const std::vector<double>& s, const std::vector<bool>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] && !y[j]) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

using testutil::oracle_roc;
using testutil::roc;

}  // namespace

TEST_CASE("perfect separation") {
  CHECK(roc({5, 4, 1, 0}, {true, true, false, false}).auc == 1.0);
}

TEST_CASE("positive on top of two negatives") {
  const auto r = roc({3, 2, 1}, {true, false, false}, 0.5);
  CHECK(r.auc == 1.0);
  CHECK(r.points.front() == RocPoint{0.0, 0.0});
  CHECK(r.points[1] == RocPoint{0.0, 1.0});
  CHECK(r.points.back() == RocPoint{0.5, 1.0});
}

TEST_CASE("uninformative scores give the diagonal") {
  Rng rng(11);
  const std::size_t n = 400000;
  std::vector<double> s(n);
  std::vector<bool> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = rng.uniform();
    y[i] = rng.uniform() < 0.5;
  }
  CHECK(roc(s, y).auc == Approx(0.005).epsilon(0.6));
}

TEST_CASE("single class is rejected") {
  CHECK_THROWS_AS(roc({1, 2}, {true, true}), DataError);
  CHECK_THROWS_AS(roc({1, 2}, {false, false}), DataError);
}

TEST_CASE("agrees with the threshold-enumeration oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(199);
    std::vector<double> s(n);
    std::vector<bool> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse scores so ties are common.
      s[i] = trial % 2 ? static_cast<double>(rng.below(12)) : rng.normal(0, 1);
      y[i] = rng.uniform() < 0.3;
    }
    y[0] = true;
    y[1] = false;
    for (double max_fpr : {0.01, 0.1, 0.37, 1.0}) {
      const auto got = roc(s, y, max_fpr);
      const auto want = oracle_roc(s, y, max_fpr);
      CHECK(got.points == want.points);
      CHECK(got.auc == want.auc);
    }
    CHECK(roc(s, y, 1.0).auc == Approx(mann_whitney(s, y)).epsilon(1e-12));
  }
}

TEST_CASE("strictly increasing transforms leave the curve unchanged") {
  Rng rng(8);
  std::vector<double> s(500), t(500);
  std::vector<bool> y(500);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = static_cast<double>(rng.below(50)) / 7.0;
    t[i] = std::exp(3.0 * s[i]) - 4.0;
    y[i] = rng.uniform() < 0.2 + 0.01 * s[i];
  }
  y[0] = true;
  y[1] = false;
  for (double max_fpr : {0.01, 0.2}) {
    const auto a = roc(s, y, max_fpr), b = roc(t, y, max_fpr);
    CHECK(a.points == b.points);
    CHECK(a.auc == b.auc);
  }
}

TEST_CASE("curve invariants") {
  Rng rng(9);
  std::vector<double> s(1000);
  std::vector<bool> y(1000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.normal(0, 1);
    y[i] = rng.uniform() < 0.1;
  }
  y[0] = true;
  y[1] = false;
  const auto r = roc(s, y, 0.05);
  for (std::size_t k = 1; k < r.points.size(); ++k) {
    CHECK(r.points[k].fpr >= r.points[k - 1].fpr);
    CHECK(r.points[k].tpr >= r.points[k - 1].tpr);
    CHECK(r.points[k].fpr <= 0.05);
  }
  CHECK(r.auc >= 0.0);
  CHECK(r.auc <= 1.0);
}

TEST_CASE("detection rate hand cases") {
  using D = std::vector<std::vector<RankedEntry>>;
  const D two_days{{{9, true, 0, 0}, {1, true, 1, 1}}, {{9, false, 0, 2}, {1, false, 1, 3}}};
  CHECK(detection_rate_at_budget(two_days, 1) == 0.5);
  CHECK(detection_rate_at_budget(two_days, 2) == 1.0);
  CHECK(detection_rate_at_budget(two_days, 100) == 1.0);
  const D buried{{{9, false, 0, 0}, {8, false, 1, 1}, {1, true, 2, 2}}};
  CHECK(detection_rate_at_budget(buried, 2) == 0.0);
  CHECK_THROWS_AS(detection_rate_at_budget(buried, 0), ConfigError);
  CHECK_THROWS_AS(detection_rate_at_budget(D{{{1, false, 0, 0}}}, 1), DataError);
}

TEST_CASE("detection rate ties prefer earlier events, then input order") {
  using D = std::vector<std::vector<RankedEntry>>;
  CHECK(detection_rate_at_budget(D{{{5, false, 20, 0}, {5, true, 10, 1}}}, 1) == 1.0);
  CHECK(detection_rate_at_budget(D{{{5, false, 10, 0}, {5, true, 10, 1}}}, 1) == 0.0);
  CHECK(detection_rate_at_budget(D{{{5, true, 10, 0}, {5, false, 10, 1}}}, 1) == 1.0);
}

TEST_CASE("detection rate is monotone in the budget") {
  Rng rng(4);
  std::vector<std::vector<RankedEntry>> days(6);
  std::uint64_t order = 0;
  for (auto& d : days)
    for (int k = 0; k < 300; ++k)
      d.push_back({static_cast<double>(rng.below(30)), rng.uniform() < 0.05, static_cast<std::int64_t>(rng.below(100)),
                   order++});
  double last = 0.0;
  for (std::size_t b = 1; b <= 310; b += 3) {
    const double r = detection_rate_at_budget(days, b);
    CHECK(r >= last);
    last = r;
  }
  CHECK(last == 1.0);
}

TEST_CASE("confidence intervals") {
  const std::vector<double> constant{0.3, 0.3, 0.3};
  CHECK(confidence_interval(constant).half_width == 0.0);
  const std::vector<double> two{0.0, 1.0};
  const auto ci = confidence_interval(two);
  CHECK(ci.mean == 0.5);
  CHECK(ci.half_width == Approx(1.96 * std::sqrt(0.5) / std::sqrt(2.0)).epsilon(1e-14));
  CHECK(ci.half_width == Approx(0.98).epsilon(1e-12));
  CHECK(ci.lower == Approx(-0.48));
  const std::vector<double> one{1.0};
  CHECK_THROWS_AS(confidence_interval(one), DataError);
  std::vector<double> many;
  for (int k = 0; k <= 100; ++k) many.push_back(k);
  const auto p = confidence_interval(many, IntervalMethod::Percentile);
  CHECK(p.lower == Approx(2.5));
  CHECK(p.upper == Approx(97.5));
}

TEST_CASE("evaluate restricts to labelled authentication events") {
  std::vector<ScoredRecord> recs;
  auto add = [&](std::int64_t t, const char* type, Label l, double z) {
    ScoredRecord r;
    r.event_id = recs.size();
    r.timestamp = t;
    r.event_type = type;
    r.label = l;
    r.z_score = z;
    r.raw_score = -z;
    recs.push_back(r);
  };
  add(0, "remote_auth", Label::Malicious, 5);
  add(1, "local_auth", Label::Benign, 1);
  add(2, "proc_start", Label::Malicious, 9);
  add(3, "remote_auth", Label::Unlabelled, 9);
  add(86400, "remote_auth", Label::Benign, 7);
  add(86401, "remote_auth", Label::Malicious, 2);
  EvalOptions o;
  o.budgets = {1};
  o.budget_fractions = {0.5};
  o.max_fpr = 0.5;
  const auto rep = evaluate(recs, o);
  CHECK(rep.events == 4);
  CHECK(rep.malicious == 2);
  CHECK(rep.days == 2);
  CHECK(rep.detection_rate.at("B=1") == 0.5);
  CHECK(rep.detection_rate.count("B=0.5") == 1);
  o.use_z = false;
  CHECK(evaluate(recs, o).detection_rate.at("B=1") == 0.5);

  std::ostringstream a, b;
  write_report(a, rep, o);
  write_report(b, evaluate(recs, EvalOptions{o}), o);
  CHECK(a.str().find("roc_points:") != std::string::npos);

  std::vector<EvalReport> runs{rep, rep};
  const auto sum = summarize_runs(runs);
  CHECK(sum.runs == 2);
  CHECK(sum.auc.half_width == 0.0);
  CHECK(sum.detection_rate.at("B=1").mean == 0.5);
}

TEST_CASE("evaluation is deterministic") {
  Rng rng(3);
  std::vector<ScoredRecord> recs(2000);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].event_id = i;
    recs[i].timestamp = static_cast<std::int64_t>(i) * 300;
    recs[i].event_type = "remote_auth";
    recs[i].label = rng.uniform() < 0.05 ? Label::Malicious : Label::Benign;
    recs[i].z_score = rng.normal(recs[i].label == Label::Malicious ? 1.0 : 0.0, 1.0);
  }
  recs[0].label = Label::Malicious;
  EvalOptions o;
  o.budgets = {10, 50};
  std::string first;
  for (int run = 0; run < 20; ++run) {
    std::ostringstream out;
    write_report(out, evaluate(recs, o), o);
    if (run == 0) first = out.str();
    CHECK(out.str() == first);
  }
}
