#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "evad/error.hpp"
#include "evad/ingest.hpp"
#include "evad/pipeline.hpp"
#include "evad/stream.hpp"
#include "evad/textio.hpp"
#include "test_util.hpp"

using namespace evad;
using doctest::Approx;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  SynthConfig synth;
  IngestOptions ingest;
  std::vector<RawEvent> events;
  ModelBundle bundle;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    x.synth.users = 30;
    x.synth.computers = 40;
    x.synth.processes = 10;
    x.synth.auth_types = 4;
    x.synth.events_per_window = 1500;
    x.synth.windows = 5;
    x.synth.train_windows = 2;
    x.synth.inject_from_window = 2;
    x.synth.anomaly_rate = 0.004;
    x.synth.late_user_fraction = 0.2;
    x.synth.seed = 4;
    x.ingest.train_windows = 2;
    x.ingest.test_windows = 3;
    x.events = generate_synthetic(x.synth);
    const auto catalog = build_catalog(x.events, Schema::authentication_default(), x.ingest);
    TrainConfig cfg;
    cfg.dim = 8;
    cfg.epochs = 20;
    cfg.batch_size = 256;
    cfg.adam.learning_rate = 0.01;
    cfg.seed = 2;
    x.bundle = train_bundle(x.events, catalog, x.ingest, cfg);
    return x;
  }();
  return f;
}

RetrainConfig quick_retrain() {
  RetrainConfig r;
  r.max_epochs = 4;
  r.batch_size = 128;
  r.adam.learning_rate = 1e-3;
  r.seed = 9;
  r.execution = Execution::Serial;
  return r;
}

double max_abs_diff(const EmbeddingTable& a, const EmbeddingTable& b, std::size_t rows) {
  double m = 0.0;
  for (std::size_t k = 0; k < rows * a.dim; ++k) m = std::max(m, std::abs(a.data[k] - b.data[k]));
  return m;
}

}  // namespace

TEST_CASE("new entity initialisation is the mean of earlier peers") {
  auto t = testutil::tiny_model({2, 3}, 2, 1);
  const EntityTypeId type = 1;
  t.params.embeddings[type].data = {0, 2, 2, 0, 9, 9};
  // Entity 2 becomes "new in window 1"; peers are 0 and 1.
  t.catalog.intern(type, "late", 1);
  t.params.sync_rows(t.catalog);
  CHECK(init_new_entity(t.params, t.catalog, type, 1) == std::vector<double>{11.0 / 3.0, 11.0 / 3.0});
  {
    Schema s = t.catalog.schema();
    Catalog c(s);
    c.intern(0, "x", 0);
    c.intern(type, "a", 0);
    c.intern(type, "b", 0);
    c.intern(type, "n1", 1);
    c.intern(type, "n2", 1);
    ModelParams p = t.params;
    p.embeddings[0] = EmbeddingTable(1, 2);
    p.embeddings[type] = EmbeddingTable(4, 2);
    p.embeddings[type].data = {0, 2, 2, 0, 50, 50, -7, 3};
    CHECK(init_new_entity(p, c, type, 1) == std::vector<double>{1.0, 1.0});
  }
  {
    Schema s = t.catalog.schema();
    Catalog c(s);
    c.intern(type, "only-new", 1);
    ModelParams p = t.params;
    p.embeddings[type] = EmbeddingTable(1, 2);
    CHECK_THROWS_AS(init_new_entity(p, c, type, 1), DataError);
  }
}

TEST_CASE("new entity initialisation ignores peer order") {
  Rng rng(3);
  Schema s;
  s.register_entity_type("u");
  s.register_entity_type("v");
  s.register_event_type("uv", {"u", "v"});
  std::vector<std::vector<double>> rows(7, std::vector<double>(3));
  for (auto& r : rows)
    for (auto& x : r) x = rng.normal(0, 1);
  auto mean_for = [&](const std::vector<std::size_t>& order) {
    Catalog c(s);
    ModelParams p;
    p.dim = 3;
    p.embeddings = {EmbeddingTable(0, 3), EmbeddingTable(order.size(), 3)};
    for (std::size_t k = 0; k < order.size(); ++k) {
      c.intern(1, "v" + std::to_string(order[k]), 0);
      std::copy(rows[order[k]].begin(), rows[order[k]].end(), p.embeddings[1].row(k).begin());
    }
    return init_new_entity(p, c, 1, 1);
  };
  const auto a = mean_for({0, 1, 2, 3, 4, 5, 6});
  const auto b = mean_for({6, 2, 4, 0, 5, 1, 3});
  for (std::size_t k = 0; k < 3; ++k) CHECK(a[k] == Approx(b[k]).epsilon(1e-14));
}

TEST_CASE("retrain loss regularisers") {
  auto t = testutil::tiny_model({3, 4}, 2, 7, 20);
  Rng rng(1);
  std::vector<Negatives> negs;
  for (const auto& e : t.events) negs.push_back(draw_negatives(e, t.noise, 3, rng));
  RetrainConfig cfg;
  cfg.lambda_old = 1.0;
  cfg.lambda_new = 1e-4;
  double data = 0.0;
  for (std::size_t k = 0; k < t.events.size(); ++k) data += mtl_event_loss(t.params, t.events[k], negs[k], t.noise);
  CHECK(retrain_loss(t.events, t.params, t.params, t.catalog, 1, negs, t.noise, cfg) == data);

  ModelParams moved = t.params;
  // Entity 1 of type 0 is not part of the events' first position only, so
  // measure the anchor term against a zero-data baseline instead.
  moved.embeddings[0].row(1)[0] += 1.0;
  moved.embeddings[0].row(1)[1] += 1.0;
  double moved_data = 0.0;
  for (std::size_t k = 0; k < t.events.size(); ++k) moved_data += mtl_event_loss(moved, t.events[k], negs[k], t.noise);
  CHECK(retrain_loss(t.events, moved, t.params, t.catalog, 1, negs, t.noise, cfg) ==
        Approx(moved_data + 2.0).epsilon(1e-13));
  cfg.lambda_old = 0.0;
  CHECK(retrain_loss(t.events, moved, t.params, t.catalog, 1, negs, t.noise, cfg) == Approx(moved_data).epsilon(1e-13));
}

TEST_CASE("huge old-entity penalty pins old embeddings") {
  const auto& f = fixture();
  auto cfg = quick_retrain();
  cfg.lambda_old = 1e6;
  Catalog cat = f.bundle.catalog;
  std::vector<Event> window;
  for (const auto& r : events_in_window(f.events, 1, f.ingest)) window.push_back(cat.intern_event(r, 1, false));
  ModelParams params = f.bundle.params;
  params.sync_rows(cat);
  const auto noise = NoiseTables::from_catalog(f.bundle.catalog);
  Rng rng(1);
  const auto result = retrain(window, params, cat, 1, noise, cfg, rng);
  for (std::size_t t = 0; t < params.embeddings.size(); ++t) {
    const auto old_rows = f.bundle.catalog.size(static_cast<EntityTypeId>(t));
    CHECK(max_abs_diff(result.params.embeddings[t], params.embeddings[t], old_rows) < 1e-3);
  }
  CHECK(result.epochs >= 1);
}

TEST_CASE("retraining without regularisers is a plain embedding-only epoch") {
  const auto& f = fixture();
  auto cfg = quick_retrain();
  cfg.lambda_new = 0.0;
  cfg.lambda_old = 0.0;
  Catalog cat = f.bundle.catalog;
  std::vector<Event> window;
  for (const auto& r : events_in_window(f.events, 1, f.ingest)) window.push_back(cat.intern_event(r, 1, false));
  ModelParams start = f.bundle.params;
  start.sync_rows(cat);
  const auto noise = NoiseTables::from_catalog(f.bundle.catalog);

  ModelParams a = start, b = start;
  auto adam_a = AdamState::for_params(a), adam_b = AdamState::for_params(b);
  Rng ra(55), rb(55);
  retrain_epoch(a, start, adam_a, window, cat, 1, noise, cfg, ra, window.size());
  EpochOptions opts;
  opts.batch_size = cfg.batch_size;
  opts.negatives = cfg.negatives;
  opts.adam = cfg.adam;
  opts.mask = ParamMask::embeddings_only();
  opts.execution = Execution::Serial;
  run_epoch(b, adam_b, window, noise, opts, rb);
  CHECK(a == b);
  CHECK(a.event_types == start.event_types);
  CHECK(a.embeddings != start.embeddings);
}

TEST_CASE("empty retrain window leaves parameters unchanged") {
  const auto& f = fixture();
  Rng rng(1);
  const auto noise = NoiseTables::from_catalog(f.bundle.catalog);
  const auto r = retrain({}, f.bundle.params, f.bundle.catalog, 1, noise, quick_retrain(), rng);
  CHECK(r.params == f.bundle.params);
  CHECK(r.epochs == 0);
}

TEST_CASE("single-event window runs exactly one epoch") {
  const auto& f = fixture();
  Catalog cat = f.bundle.catalog;
  const auto raw = events_in_window(f.events, 1, f.ingest);
  std::vector<Event> one{cat.intern_event(raw.front(), 1, false)};
  ModelParams p = f.bundle.params;
  p.sync_rows(cat);
  Rng rng(2);
  const auto r = retrain(one, p, cat, 1, NoiseTables::from_catalog(f.bundle.catalog), quick_retrain(), rng);
  CHECK(r.epochs == 1);
  CHECK(r.validation_events == 0);
}

TEST_CASE("window processing follows the scoring-then-retraining order") {
  const auto& f = fixture();
  StreamEngine engine(f.bundle, quick_retrain());
  const auto raw = events_in_window(f.events, 1, f.ingest);
  const auto& open = engine.begin_window(raw);
  CHECK(open.window == 1);
  CHECK(open.scored.size() == raw.size());
  // Scores use theta^T with new rows initialised at the peer mean.
  const auto expected = score_events(engine.params(), open.events, &f.bundle.standardizer, Execution::Serial);
  for (std::size_t k = 0; k < expected.size(); ++k) CHECK(open.scored[k].z_score == expected[k].z_score);
  CHECK_THROWS_AS(engine.begin_window(raw), ConflictError);
  const auto report = engine.finish_window({});
  CHECK(report.window == 1);
  CHECK(report.scored.size() == raw.size());
  CHECK(engine.completed_windows() == 1);
  CHECK_THROWS_AS(engine.finish_window({}), ConflictError);
}

TEST_CASE("window without new entities or labels") {
  const auto& f = fixture();
  StreamEngine engine(f.bundle, quick_retrain());
  std::vector<RawEvent> raw;
  for (const auto& r : events_in_window(f.events, 0, f.ingest)) {
    if (raw.size() == 200) break;
    auto copy = r;
    copy.label = Label::Benign;
    copy.timestamp += 2 * 86400;
    raw.push_back(copy);
  }
  const auto report = engine.process_window(raw);
  for (auto n : report.new_entities) CHECK(n == 0);
  CHECK(report.scored.size() == 200);
  CHECK(report.excluded_events == 0);
  CHECK(report.retrain_events == 200);
}

TEST_CASE("flagging an event changes the next parameters but not this window's scores") {
  const auto& f = fixture();
  const auto raw = events_in_window(f.events, 1, f.ingest);
  StreamEngine a(f.bundle, quick_retrain()), b(f.bundle, quick_retrain());
  const auto ra = a.process_window(raw, false);
  std::unordered_set<std::uint64_t> flagged{raw[5].source_index};
  b.begin_window(raw);
  const auto rb = b.finish_window(flagged);
  CHECK(rb.excluded_events == 1);
  CHECK(ra.retrain_events == rb.retrain_events + 1);
  REQUIRE(ra.scored.size() == rb.scored.size());
  for (std::size_t k = 0; k < ra.scored.size(); ++k) CHECK(ra.scored[k].z_score == rb.scored[k].z_score);
  CHECK_FALSE(a.params() == b.params());
}

TEST_CASE("labelled malicious events are excluded by default") {
  const auto& f = fixture();
  const auto raw = events_in_window(f.events, 1, f.ingest);
  const auto bad = static_cast<std::size_t>(std::count_if(raw.begin(), raw.end(), [](const RawEvent& r) {
    return r.label == Label::Malicious;
  }));
  REQUIRE(bad > 0);
  StreamEngine engine(f.bundle, quick_retrain());
  const auto report = engine.process_window(raw);
  CHECK(report.excluded_events == bad);
}

TEST_CASE("drift is smaller on an in-distribution window than on a shifted one") {
  const auto& f = fixture();
  // Same world, one more day.
  auto same_cfg = f.synth;
  same_cfg.windows = 6;
  same_cfg.anomaly_rate = 0.0;
  const auto same_all = generate_synthetic(same_cfg);
  std::vector<RawEvent> same;
  for (const auto& r : same_all)
    if (r.timestamp / 86400 == 5) same.push_back(r);
  // Same day with every user moved into the other community.
  std::vector<RawEvent> shifted = same;
  for (auto& r : shifted) {
    const auto u = std::stoul(r.entities[0].substr(1));
    r.entities[0] = "U" + std::to_string((u + 1) % same_cfg.users);
  }
  auto cfg = quick_retrain();
  cfg.adam.learning_rate = 1e-2;
  StreamEngine a(f.bundle, cfg), b(f.bundle, cfg);
  // Restrict both to entities known at training time.
  auto known = [&](std::vector<RawEvent> v) {
    const auto& cat = f.bundle.catalog;
    std::erase_if(v, [&](const RawEvent& r) {
      const auto& spec = cat.schema().event_type(cat.schema().event_type_id(r.type));
      for (std::size_t i = 0; i < r.entities.size(); ++i)
        if (!cat.find(spec.signature[i], r.entities[i])) return true;
      return false;
    });
    return v;
  };
  const auto ra = a.process_window(known(same));
  const auto rb = b.process_window(known(shifted));
  CHECK(ra.median_drift < rb.median_drift);
}

TEST_CASE("a first-time user-host pairing scores above the window median") {
  const auto& f = fixture();
  StreamEngine engine(f.bundle, quick_retrain());
  auto raw = events_in_window(f.events, 1, f.ingest);
  // Take an ordinary remote logon and point it at a host the user has never
  // touched during training.
  const auto base = std::find_if(raw.begin(), raw.end(), [](const RawEvent& r) {
    return r.type == "remote_auth" && r.label == Label::Benign;
  });
  REQUIRE(base != raw.end());
  std::set<std::string> touched;
  for (const auto& r : events_in_window(f.events, 0, f.ingest))
    if (r.entities[0] == base->entities[0])
      for (std::size_t i = 1; i < r.entities.size(); ++i) touched.insert(r.entities[i]);
  std::string fresh;
  for (std::size_t c = 0; c < f.synth.computers && fresh.empty(); ++c) {
    const auto name = "C" + std::to_string(c);
    if (!touched.count(name) && f.bundle.catalog.find(f.bundle.catalog.schema().entity_type_id("computer"), name))
      fresh = name;
  }
  REQUIRE_FALSE(fresh.empty());
  RawEvent planted = *base;
  planted.entities[3] = fresh;
  planted.source_index = 999999;
  raw.push_back(planted);
  const auto& open = engine.begin_window(raw);
  std::vector<double> z;
  for (const auto& s : open.scored) z.push_back(s.z_score);
  const double planted_z = z.back();
  std::nth_element(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(z.size() / 2), z.end());
  CHECK(planted_z > z[z.size() / 2]);
}

TEST_CASE("model bundle round-trips and detects a tampered parameter file") {
  const auto& f = fixture();
  const auto dir = fs::temp_directory_path() / "evad_bundle_test";
  fs::remove_all(dir);
  f.bundle.save(dir);
  const auto back = ModelBundle::load(dir);
  CHECK(back.params == f.bundle.params);
  CHECK(back.window == 0);
  auto bytes = textio::read_file(dir / "params.bin");
  bytes[bytes.size() - 1] ^= 1;
  textio::write_file(dir / "params.bin", bytes);
  CHECK_THROWS_AS(ModelBundle::load(dir), DataError);
  fs::remove_all(dir);
}

TEST_CASE("retrain config validation") {
  RetrainConfig r;
  CHECK_NOTHROW(r.validate());
  CHECK(r.lambda_new == 1e-4);
  CHECK(r.lambda_old == 1.0);
  CHECK(r.adam.learning_rate == 1e-4);
  CHECK(r.batch_size == 256);
  r.validation_fraction = 0.6;
  CHECK_THROWS_AS(r.validate(), ConfigError);
  r = RetrainConfig{};
  r.lambda_old = -1;
  CHECK_THROWS_AS(r.validate(), ConfigError);
}
