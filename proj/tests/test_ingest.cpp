#include <doctest.h>

#include <map>
#include <sstream>

#include "evad/error.hpp"
#include "evad/ingest.hpp"

using namespace evad;

namespace {

IngestOptions opts() {
  IngestOptions o;
  o.train_windows = 2;
  o.test_windows = 2;
  return o;
}

RawEvent proc(std::int64_t t, std::string p) {
  return RawEvent{t, "proc_start", {"C1", "U1", std::move(p)}, Label::Unlabelled, 0};
}

}  // namespace

TEST_CASE("remote logon line") {
  const auto e = parse_auth("100,U1@DOM1,U1@DOM1,C1,C2,Kerberos,Network,LogOn,Success", 1, opts());
  REQUIRE(e);
  CHECK(e->timestamp == 100);
  CHECK(e->type == "remote_auth");
  CHECK(e->entities == std::vector<std::string>{"U1@DOM1", "Kerberos|Network", "C1", "C2"});
  CHECK(e->label == Label::Unlabelled);
}

TEST_CASE("local logon line") {
  const auto e = parse_auth("7,U9@DOM1,U9@DOM1,C4,C4,Negotiate,Interactive,LogOn,Success", 1, opts());
  REQUIRE(e);
  CHECK(e->type == "local_auth");
  CHECK(e->entities == std::vector<std::string>{"U9@DOM1", "Negotiate|Interactive", "C4"});
}

TEST_CASE("authentication filters") {
  auto o = opts();
  CHECK_FALSE(parse_auth("1,U1,U1,C1,C2,NTLM,Network,LogOff,Success", 1, o));
  CHECK_FALSE(parse_auth("1,C1$@DOM1,C1$@DOM1,C1,C2,NTLM,Network,LogOn,Success", 1, o));
  CHECK_FALSE(parse_auth("1,U1,ANONYMOUS LOGON@C2,C1,C2,NTLM,Network,LogOn,Success", 1, o));
  CHECK_FALSE(parse_auth("1,U1,local system@NT AUTHORITY,C1,C2,NTLM,Network,LogOn,Success", 1, o));
  CHECK_FALSE(parse_auth("1,U1,,C1,C2,NTLM,Network,LogOn,Success", 1, o));
  CHECK(parse_auth("1,U1,U1,C1,C2,NTLM,Network,LogOn,Fail", 1, o));
  o.keep_failures = false;
  CHECK_FALSE(parse_auth("1,U1,U1,C1,C2,NTLM,Network,LogOn,Fail", 1, o));
}

TEST_CASE("malformed lines report their line number") {
  try {
    parse_auth("1,U1,U1,C1", 17, opts());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 17);
  }
  CHECK_THROWS_AS(parse_auth("x,U1,U1,C1,C2,NTLM,Network,LogOn,Success", 2, opts()), ParseError);
  CHECK_THROWS_AS(parse_proc("1,U1,C1,P1", 3, opts()), ParseError);
}

TEST_CASE("process lines") {
  const auto e = parse_proc("5,U1@DOM1,C7,P3,Start", 1, opts());
  REQUIRE(e);
  CHECK(e->type == "proc_start");
  CHECK(e->entities == std::vector<std::string>{"C7", "U1@DOM1", "P3"});
  CHECK_FALSE(parse_proc("5,U1@DOM1,C7,P3,End", 1, opts()));
}

TEST_CASE("reader accounting") {
  std::istringstream in(
      "1,U1,U1,C1,C2,NTLM,Network,LogOn,Success\n"
      "\n"
      "2,U1,U1,C1,C2,NTLM,Network,LogOff,Success\n"
      "bad line\n"
      "3,U2,U2,C3,C3,NTLM,Interactive,LogOn,Success\r\n");
  auto o = opts();
  o.strict = false;
  std::vector<RawEvent> out;
  const auto stats = read_auth_log(in, o, out);
  CHECK(stats.lines == 5);
  CHECK(stats.kept == 2);
  CHECK(stats.filtered == 2);
  CHECK(stats.errored == 1);
  CHECK(out[1].entities.back() == "C3");

  std::istringstream strict_in("1,U1,U1,C1,C2,NTLM,Network,LogOn,Success\nbad\n");
  o.strict = true;
  out.clear();
  try {
    read_auth_log(strict_in, o, out);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("rare process replacement at the threshold") {
  std::vector<RawEvent> ev;
  for (int k = 0; k < 39; ++k) ev.push_back(proc(k, "rare.exe"));
  for (int k = 0; k < 40; ++k) ev.push_back(proc(k, "common.exe"));
  const auto replaced = apply_rare_process_token(ev, opts());
  CHECK(replaced == 1);
  std::map<std::string, int> counts;
  for (const auto& e : ev) ++counts[e.entities[2]];
  CHECK(counts["RARE_PROCESS"] == 39);
  CHECK(counts["common.exe"] == 40);
  CHECK(counts.count("rare.exe") == 0);
}

TEST_CASE("all processes rare collapse to a single token") {
  std::vector<RawEvent> ev;
  for (int k = 0; k < 30; ++k) ev.push_back(proc(k, "p" + std::to_string(k % 5)));
  CHECK(apply_rare_process_token(ev, opts()) == 5);
  for (const auto& e : ev) CHECK(e.entities[2] == "RARE_PROCESS");
}

TEST_CASE("rare process counting scope") {
  auto o = opts();
  o.rare_process_threshold = 3;
  std::vector<RawEvent> ev;
  ev.push_back(proc(0, "a"));
  for (int k = 0; k < 5; ++k) ev.push_back(proc(3 * 86400, "a"));  // streaming window 2
  auto all = ev;
  CHECK(apply_rare_process_token(all, o) == 0);
  o.rare_scope = RareCountScope::TrainOnly;
  auto train = ev;
  CHECK(apply_rare_process_token(train, o) == 1);
  CHECK(train.back().entities[2] == "RARE_PROCESS");
}

TEST_CASE("red team labels") {
  std::vector<RawEvent> ev{
      {10, "remote_auth", {"U1", "T", "C1", "C2"}, Label::Unlabelled, 0},
      {10, "remote_auth", {"U1", "T", "C1", "C3"}, Label::Unlabelled, 1},
      {11, "local_auth", {"U1", "T", "C1"}, Label::Unlabelled, 2},
      {12, "proc_start", {"C1", "U1", "P"}, Label::Unlabelled, 3},
  };
  std::istringstream rt("10,U1,C1,C2\n99,U5,C1,C2\n");
  const auto r = apply_redteam_labels(ev, rt);
  CHECK(r.rows == 2);
  CHECK(r.matched_events == 1);
  CHECK(r.unmatched_rows == 1);
  CHECK(ev[0].label == Label::Malicious);
  CHECK(ev[1].label == Label::Benign);
  CHECK(ev[2].label == Label::Benign);
  CHECK(ev[3].label == Label::Unlabelled);
}

TEST_CASE("windows") {
  const auto o = opts();
  CHECK(window_of(0, o) == 0);
  CHECK(window_of(2 * 86400 - 1, o) == 0);
  CHECK(window_of(2 * 86400, o) == 1);
  CHECK(window_of(3 * 86400 + 5, o) == 2);
  CHECK(window_of(4 * 86400, o) == -1);
  CHECK(window_of(-1, o) == -1);
}

TEST_CASE("event file round trip") {
  std::vector<RawEvent> ev{
      {5, "remote_auth", {"U\t1", "K|N", "C1", "C2"}, Label::Malicious, 0},
      {6, "local_auth", {"U2", "K|N", "C1"}, Label::Unlabelled, 1},
      {7, "proc_start", {"C1", "U2", "x y.exe"}, Label::Benign, 2},
  };
  std::ostringstream out;
  write_events(out, ev);
  std::istringstream in(out.str());
  CHECK(read_events(in, Schema::authentication_default()) == ev);
  std::istringstream bad_arity("1\tlocal_auth\tU1\tK\t?\n");
  CHECK_THROWS_AS(read_events(bad_arity, Schema::authentication_default()), ParseError);
  std::istringstream bad_type("1\tnope\tU1\t?\n");
  CHECK_THROWS_AS(read_events(bad_type, Schema::authentication_default()), DataError);
}

TEST_CASE("sort keeps file order for equal timestamps") {
  std::vector<RawEvent> ev{proc(3, "a"), proc(1, "b"), proc(3, "c"), proc(1, "d")};
  sort_and_number(ev);
  std::vector<std::string> order;
  for (const auto& e : ev) order.push_back(e.entities[2]);
  CHECK(order == std::vector<std::string>{"b", "d", "a", "c"});
  for (std::size_t k = 0; k < ev.size(); ++k) CHECK(ev[k].source_index == k);
}

TEST_CASE("catalog counts come from training events only") {
  const auto o = opts();
  std::vector<RawEvent> ev{proc(0, "a"), proc(1, "a"), proc(2 * 86400, "b"), proc(9 * 86400, "c")};
  const auto cat = build_catalog(ev, Schema::authentication_default(), o);
  const auto p = cat.schema().entity_type_id("process");
  const auto ps = cat.schema().event_type_id("proc_start");
  CHECK(cat.count(ps, 2, *cat.find(p, "a")) == 2);
  CHECK(cat.count(ps, 2, *cat.find(p, "b")) == 0);
  CHECK(cat.first_seen(p, *cat.find(p, "b")) == 1);
  CHECK_FALSE(cat.find(p, "c"));
}

TEST_CASE("synthetic stream is deterministic per seed") {
  SynthConfig c;
  c.users = 20;
  c.computers = 20;
  c.events_per_window = 300;
  c.windows = 4;
  c.train_windows = 2;
  c.inject_from_window = 2;
  const auto a = generate_synthetic(c), b = generate_synthetic(c);
  CHECK(a == b);
  c.seed = 2;
  CHECK_FALSE(generate_synthetic(c) == a);
  CHECK(a.size() == 1200);
  for (std::size_t k = 1; k < a.size(); ++k) CHECK(a[k - 1].timestamp <= a[k].timestamp);
}

TEST_CASE("synthetic stream without anomalies has no malicious labels") {
  SynthConfig c;
  c.users = 20;
  c.computers = 20;
  c.events_per_window = 500;
  c.windows = 3;
  c.train_windows = 1;
  c.inject_from_window = 0;
  c.anomaly_rate = 0.0;
  for (const auto& e : generate_synthetic(c)) CHECK(e.label == Label::Benign);
}

TEST_CASE("synthetic communities separate benign and malicious traffic") {
  SynthConfig c;
  c.users = 40;
  c.computers = 40;
  c.events_per_window = 4000;
  c.windows = 4;
  c.train_windows = 2;
  c.inject_from_window = 2;
  c.anomaly_rate = 0.01;
  const auto ev = generate_synthetic(c);
  std::size_t benign = 0, benign_cross = 0, bad = 0, bad_cross = 0;
  for (const auto& e : ev) {
    if (e.type != "remote_auth") continue;
    const bool cross = synthetic_community(e.entities[0], c) != synthetic_community(e.entities[3], c);
    if (e.label == Label::Malicious) {
      ++bad;
      bad_cross += cross;
      CHECK(e.timestamp >= 2 * c.window_seconds);
    } else {
      ++benign;
      benign_cross += cross;
    }
  }
  CHECK(bad == 2 * 40);
  CHECK(bad_cross == bad);
  CHECK(static_cast<double>(benign_cross) / static_cast<double>(benign) < 0.05);
}

TEST_CASE("synthetic config validation") {
  SynthConfig c;
  CHECK_NOTHROW(c.validate());
  c.habit_rate = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SynthConfig{};
  c.communities = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(synthetic_community("U7", SynthConfig{}) == 1);
  CHECK(synthetic_community("X7", SynthConfig{}) == -1);
}
