#include <doctest.h>

#include <cmath>
#include <sstream>

#include "evad/error.hpp"
#include "evad/score.hpp"
#include "test_util.hpp"

using namespace evad;
using doctest::Approx;

namespace {

double brute_p_value(const ModelParams& p, const Event& e, std::size_t pos) {
  const auto dist = testutil::brute_conditional(p, e, pos);
  const double obs = dist[e.entities[pos]];
  double s = 0.0;
  for (double q : dist)
    if (q <= obs) s += q;
  return std::min(1.0, s);
}

// Two candidates with probabilities (0.7, 0.3).
testutil::Tiny seventy_thirty() {
  auto t = testutil::tiny_model({1, 2}, 1);
  t.params.embeddings[0].data = {1.0};
  t.params.event_types[0].weight(0, 1) = 1.0;
  t.params.event_types[0].beta = {1.0};
  t.params.embeddings[1].data = {std::log(0.7), std::log(0.3)};
  return t;
}

}  // namespace

TEST_CASE("discrete p-value examples") {
  auto t = seventy_thirty();
  Event e;
  e.type = 0;
  e.entities = {0, 0};
  CHECK(discrete_p_value(t.params, e, 1) == 1.0);
  e.entities = {0, 1};
  CHECK(discrete_p_value(t.params, e, 1) == Approx(0.3).epsilon(1e-14));

  auto u = testutil::tiny_model({2, 9}, 3, 4);
  u.params.event_types[0].beta.assign(3, 0.0);
  for (EntityId v = 0; v < 9; ++v) {
    e.entities = {1, v};
    CHECK(discrete_p_value(u.params, e, 1) == 1.0);
  }
}

TEST_CASE("p-values match brute-force enumeration") {
  Rng rng(8);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n1 = 1 + rng.below(50), n2 = 1 + rng.below(50), n0 = 1 + rng.below(5);
    auto t = testutil::tiny_model({n0, n1, n2}, 1 + rng.below(8), 500 + trial);
    for (int k = 0; k < 10; ++k) {
      Event e;
      e.type = 0;
      e.entities = {static_cast<EntityId>(rng.below(n0)), static_cast<EntityId>(rng.below(n1)),
                    static_cast<EntityId>(rng.below(n2))};
      for (std::size_t pos : {1u, 2u}) {
        CHECK(std::abs(discrete_p_value(t.params, e, pos) - brute_p_value(t.params, e, pos)) <= 1e-12);
        const auto dist = testutil::brute_conditional(t.params, e, pos);
        CHECK(std::abs(conditional_probability(t.params, 0, pos, e.entities, e.entities[pos]) -
                       dist[e.entities[pos]]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("raw score examples") {
  CHECK(raw_event_score(std::vector<double>{1.0, 1.0}) == 0.0);
  CHECK_FALSE(std::signbit(raw_event_score(std::vector<double>{1.0, 1.0})));
  CHECK(raw_event_score(std::vector<double>{0.5, 0.25}) == Approx(1.5 * std::log(2.0)).epsilon(1e-15));
  CHECK(raw_event_score(std::vector<double>{0.5, 0.25}) == Approx(1.0397).epsilon(1e-4));
  CHECK(raw_event_score(std::vector<double>{std::exp(-4.0)}) == Approx(4.0).epsilon(1e-15));
  CHECK_THROWS_AS(raw_event_score(std::vector<double>{0.0, 1.0}), DataError);
  CHECK_THROWS_AS(raw_event_score(std::vector<double>{-0.1}), DataError);
  CHECK_THROWS_AS(raw_event_score(std::vector<double>{1.5}), DataError);
}

TEST_CASE("lowering the observed probability never lowers the score") {
  auto t = seventy_thirty();
  Event e;
  e.type = 0;
  e.entities = {0, 1};
  double prev = -1.0;
  for (double q : {0.45, 0.3, 0.2, 0.1, 0.01}) {
    t.params.embeddings[1].data = {std::log(0.7), std::log(q)};
    const double y = raw_event_score(event_p_values(t.params, e));
    CHECK(y >= prev);
    prev = y;
  }
}

TEST_CASE("standardizer examples") {
  auto s = Standardizer::fit({{1, 1, 1}, {0, 2}});
  CHECK(s.moments(0).mean == 1.0);
  CHECK(s.moments(0).stddev == kStdFloor);
  CHECK(s.moments(0).floored);
  CHECK(s.moments(1).mean == 1.0);
  CHECK(s.moments(1).stddev == Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(s.standardize(1, 1.0) == 0.0);
  CHECK(s.standardize(1, 3.0) == Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(standardized_score(s, 1, 3.0) == s.standardize(1, 3.0));
  CHECK(s.standardize(1, 0.5) < s.standardize(1, 0.7));
}

TEST_CASE("unfitted types are flagged") {
  auto s = Standardizer::fit({{0.5, 1.5}, {}, {3.0}});
  CHECK(s.fitted(0));
  CHECK_FALSE(s.fitted(1));
  CHECK_FALSE(s.fitted(2));
  CHECK_THROWS_AS(s.standardize(1, 1.0), DataError);
  bool flag = true;
  CHECK(s.standardize_or_identity(2, 4.5, &flag) == 4.5);
  CHECK_FALSE(flag);
  CHECK(s.standardize_or_identity(0, 1.0, &flag) == 0.0);
  CHECK(flag);
}

TEST_CASE("standardized training scores have zero mean and unit deviation") {
  auto t = testutil::auth_model(15, 4, 20, 6, 6, 31, 900);
  const auto scored = score_events(t.params, t.events, nullptr, Execution::Serial);
  const auto s = fit_standardizer(scored);
  for (EventTypeId type = 0; type < 3; ++type) {
    std::vector<double> z;
    for (const auto& ev : scored)
      if (ev.event.type == type) z.push_back(s.standardize(type, ev.raw_score));
    double m = 0.0;
    for (double v : z) m += v;
    m /= static_cast<double>(z.size());
    double ss = 0.0;
    for (double v : z) ss += (v - m) * (v - m);
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(std::sqrt(ss / static_cast<double>(z.size() - 1)) - 1.0) < 1e-9);
  }
}

TEST_CASE("p-values of events drawn from the model are superuniform") {
  auto t = testutil::tiny_model({4, 12, 9}, 4, 61);
  for (auto& v : t.params.event_types[0].beta) v *= 3.0;
  Rng rng(2024);
  const std::size_t n = 100000;
  std::vector<std::size_t> below[2];
  for (auto& b : below) b.assign(3, 0);
  const double alphas[3] = {0.01, 0.05, 0.1};
  Event e;
  e.type = 0;
  e.entities = {0, 0, 0};
  for (std::size_t k = 0; k < n; ++k) {
    e.entities[0] = static_cast<EntityId>(rng.below(4));
    for (std::size_t pos : {1u, 2u}) {
      const auto dist = conditional_distribution(t.params, 0, pos, e.entities);
      double u = rng.uniform(), acc = 0.0;
      EntityId pick = static_cast<EntityId>(dist.size() - 1);
      for (std::size_t v = 0; v < dist.size(); ++v) {
        acc += dist[v];
        if (u < acc) {
          pick = static_cast<EntityId>(v);
          break;
        }
      }
      e.entities[pos] = pick;
    }
    const auto p = event_p_values(t.params, e);
    for (std::size_t pos = 0; pos < 2; ++pos)
      for (int a = 0; a < 3; ++a) below[pos][static_cast<std::size_t>(a)] += p[pos] <= alphas[a] ? 1 : 0;
  }
  for (std::size_t pos = 0; pos < 2; ++pos)
    for (int a = 0; a < 3; ++a)
      CHECK(static_cast<double>(below[pos][static_cast<std::size_t>(a)]) / static_cast<double>(n) <= alphas[a] + 0.02);
}

TEST_CASE("standardizer text round-trip") {
  const auto schema = Schema::authentication_default();
  auto s = Standardizer::fit({{0.1, 0.7, 0.3}, {}, {1e-300, 2.5}});
  std::stringstream ss;
  s.save(ss, schema);
  const auto back = Standardizer::load(ss, schema);
  CHECK(back.fitted(0));
  CHECK_FALSE(back.fitted(1));
  CHECK(back.moments(0).mean == s.moments(0).mean);
  CHECK(back.moments(0).stddev == s.moments(0).stddev);
  CHECK(back.moments(2).mean == s.moments(2).mean);
}

TEST_CASE("scored records round-trip") {
  auto t = testutil::auth_model(5, 2, 6, 3, 3, 4, 12);
  const auto scored = score_events(t.params, t.events, nullptr, Execution::Serial);
  for (std::size_t k = 0; k < scored.size(); ++k) {
    auto r = to_record(scored[k], t.catalog, 1000 + k);
    r.label = k % 3 == 0 ? Label::Malicious : Label::Unlabelled;
    const auto line = format_scored_record(r);
    CHECK(parse_scored_record(line, 1) == r);
  }
  CHECK_THROWS_AS(parse_scored_record("1\t2\tx", 7), ParseError);
}

TEST_CASE("parallel and serial scoring agree exactly") {
  auto t = testutil::auth_model(20, 4, 30, 8, 8, 41, 700);
  const auto a = score_events(t.params, t.events, nullptr, Execution::Serial);
  const auto b = score_events(t.params, t.events, nullptr, Execution::Parallel);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].p_values == b[k].p_values);
    CHECK(a[k].raw_score == b[k].raw_score);
  }
}
