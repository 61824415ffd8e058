#include <doctest.h>

#include <cmath>
#include <sstream>

#include "evad/error.hpp"
#include "evad/model.hpp"
#include "evad/rng.hpp"
#include "test_util.hpp"

using namespace evad;
using doctest::Approx;

TEST_CASE("context vector") {
  EventTypeParams p;
  p.signature = {0, 0, 0};
  p.weights.assign(9, 0.0);
  const std::vector<double> a{1, 0}, b{0, 1};
  std::vector<std::span<const double>> prefix{a, b};
  CHECK(context_vector(p, 2, prefix) == std::vector<double>{0, 0});
  p.weight(0, 1) = 1.0;
  CHECK(context_vector(p, 1, prefix) == std::vector<double>{1, 0});
  p.weight(0, 2) = 0.5;
  p.weight(1, 2) = 2.0;
  CHECK(context_vector(p, 2, prefix) == std::vector<double>{0.5, 2.0});
  const std::vector<double> c3{1, 2, 3};
  std::vector<std::span<const double>> bad{a, c3};
  CHECK_THROWS(context_vector(p, 2, bad));
  CHECK_THROWS(context_vector(p, 0, prefix));
}

TEST_CASE("affinity") {
  const std::vector<double> x{1, 1}, h{1, 1};
  CHECK(affinity(x, h, std::vector<double>{0, 0}) == 1.0);
  CHECK(affinity(x, h, std::vector<double>{std::log(2.0), 0}) == Approx(2.0).epsilon(1e-15));
  CHECK(affinity(std::vector<double>{2, 0}, std::vector<double>{0, 3}, std::vector<double>{5, -7}) == 1.0);
  const std::vector<double> nan{std::nan(""), 0};
  CHECK_THROWS_AS(affinity(nan, h, x), NumericError);
}

TEST_CASE("affinity logit is clamped") {
  const std::vector<double> big{100, 0}, one{1, 0};
  CHECK(affinity_logit(big, one, one) == kLogitClamp);
  CHECK(affinity_logit(big, one, std::vector<double>{-1, 0}) == -kLogitClamp);
  CHECK(std::isfinite(affinity(big, big, big)));
}

TEST_CASE("conditional probability examples") {
  // Two candidates with kappa = (2, 1).
  auto m = testutil::tiny_model({1, 2}, 1);
  m.params.embeddings[0].data = {1.0};
  m.params.embeddings[1].data = {std::log(2.0), 0.0};
  m.params.event_types[0].beta = {1.0};
  m.params.event_types[0].weight(0, 1) = 1.0;
  const std::vector<EntityId> prefix{0};
  CHECK(conditional_probability(m.params, 0, 1, prefix, 0) == Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(conditional_probability(m.params, 0, 1, prefix, 1) == Approx(1.0 / 3.0).epsilon(1e-14));

  Event e;
  e.type = 0;
  e.entities = {0, 1};
  CHECK(event_log_probability(m.params, e) == Approx(std::log(1.0 / 3.0)).epsilon(1e-14));
}

TEST_CASE("shared embeddings give uniform conditionals") {
  auto m = testutil::tiny_model({1, 4, 4}, 3);
  for (auto& t : m.params.embeddings)
    for (std::size_t v = 0; v < t.rows; ++v) {
      auto r = t.row(v);
      r[0] = 0.3;
      r[1] = -1.2;
      r[2] = 0.7;
    }
  const std::vector<EntityId> prefix{0, 2};
  for (EntityId v = 0; v < 4; ++v) CHECK(conditional_probability(m.params, 0, 1, prefix, v) == Approx(0.25));
  Event e;
  e.type = 0;
  e.entities = {0, 3, 1};
  CHECK(event_log_probability(m.params, e) == Approx(2.0 * std::log(0.25)));
}

TEST_CASE("single candidate has probability one") {
  auto m = testutil::tiny_model({3, 1}, 4, 9);
  const std::vector<EntityId> prefix{2};
  CHECK(conditional_probability(m.params, 0, 1, prefix, 0) == 1.0);
  Event e;
  e.type = 0;
  e.entities = {2, 0};
  CHECK(event_log_probability(m.params, e) == 0.0);
}

TEST_CASE("conditionals are normalised and rank like affinities") {
  Rng rng(42);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t v1 = 1 + rng.below(6), v2 = 1 + rng.below(30), v3 = 1 + rng.below(30);
    auto m = testutil::tiny_model({v1, v2, v3}, 1 + rng.below(8), 100 + trial);
    const std::vector<EntityId> prefix{static_cast<EntityId>(rng.below(v1)), static_cast<EntityId>(rng.below(v2))};
    for (std::size_t pos : {1u, 2u}) {
      const auto dist = conditional_distribution(m.params, 0, pos, prefix);
      double s = 0.0;
      for (double p : dist) s += p;
      CHECK(s == Approx(1.0).epsilon(1e-9));
      Event e;
      e.type = 0;
      e.entities = {prefix[0], prefix[1], 0};
      const auto h = event_context(m.params, e, pos);
      const auto& tp = m.params.event_types[0];
      const auto& table = m.params.embeddings[tp.signature[pos]];
      for (std::size_t a = 0; a < table.rows; ++a)
        for (std::size_t b = 0; b < table.rows; ++b) {
          const double ka = affinity(table.row(a), h, tp.beta), kb = affinity(table.row(b), h, tp.beta);
          if (ka > kb) CHECK(dist[a] >= dist[b]);
        }
    }
  }
}

TEST_CASE("zero beta makes every conditional uniform") {
  auto m = testutil::tiny_model({3, 7}, 4, 8);
  m.params.event_types[0].beta.assign(4, 0.0);
  const std::vector<EntityId> prefix{1};
  for (double p : conditional_distribution(m.params, 0, 1, prefix)) CHECK(p == Approx(1.0 / 7.0));
}

TEST_CASE("log probability is never positive") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = testutil::tiny_model({5, 6, 7}, 5, 200 + trial);
    Event e;
    e.type = 0;
    e.entities = {static_cast<EntityId>(rng.below(5)), static_cast<EntityId>(rng.below(6)),
                  static_cast<EntityId>(rng.below(7))};
    CHECK(event_log_probability(m.params, e) <= 0.0);
  }
}

TEST_CASE("initialisation follows the documented scheme") {
  auto m = testutil::tiny_model({10, 10, 10, 10}, 16, 1);
  const auto& tp = m.params.event_types[0];
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t j = 0; j < i; ++j) CHECK(tp.weight(j, i) == Approx(1.0 / static_cast<double>(i)));
  for (std::size_t i = 0; i < 4; ++i) CHECK(tp.log_sigma[i] == 0.0);
}

TEST_CASE("parameter snapshot round-trips bit-exactly") {
  auto m = testutil::tiny_model({3, 5, 2}, 6, 17);
  m.params.event_types[0].log_sigma[1] = -0.0;
  m.params.embeddings[1].data[3] = 1e-310;
  std::stringstream ss;
  save_params(m.params, ss);
  CHECK(ss.str().substr(0, 8) == "EVADPRM1");
  const auto back = load_params(ss);
  CHECK(back == m.params);
  CHECK(std::signbit(back.event_types[0].log_sigma[1]));

  std::string bytes = ss.str();
  bytes[0] = 'X';
  std::stringstream bad(bytes);
  CHECK_THROWS_AS(load_params(bad), DataError);
  std::stringstream truncated(ss.str().substr(0, 40));
  CHECK_THROWS_AS(load_params(truncated), DataError);
}
