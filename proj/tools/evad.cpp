#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "evad/config.hpp"
#include "evad/error.hpp"
#include "evad/eval.hpp"
#include "evad/ingest.hpp"
#include "evad/pipeline.hpp"
#include "evad/textio.hpp"
#include "evad/triage.hpp"

namespace fs = std::filesystem;
using namespace evad;

namespace {

struct Common {
  std::string config_path;
  bool sequential = false;
  std::optional<std::uint64_t> seed;
};

RunConfig load_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.synthetic.seed = *c.seed;
  }
  if (c.sequential) cfg.execution = Execution::Serial;
  cfg.finalize();
  return cfg;
}

std::string catalog_path_for(const std::string& events) {
  return (fs::path(events).parent_path() / (fs::path(events).stem().string() + ".catalog.txt")).string();
}

std::vector<RawEvent> load_events(const std::string& path, const RunConfig& cfg) {
  if (!fs::exists(path)) throw DataError("events file not found: " + path);
  return read_events(path, cfg.schema.build());
}

// --------------------------------------------------------------------------

struct IngestArgs {
  std::string auth, proc, redteam, out, catalog;
  bool synthetic = false;
};

int cmd_ingest(const Common& common, const IngestArgs& a) {
  auto cfg = load_config(common);
  const auto out = a.out.empty() ? cfg.paths.events : a.out;
  const auto auth = a.auth.empty() ? cfg.paths.auth_log : a.auth;
  const auto proc = a.proc.empty() ? cfg.paths.proc_log : a.proc;
  const auto redteam = a.redteam.empty() ? cfg.paths.redteam : a.redteam;
  const auto schema = cfg.schema.build();

  std::vector<RawEvent> events;
  if (a.synthetic) {
    events = generate_synthetic(cfg.synthetic);
    std::cerr << "synthetic events: " << events.size() << '\n';
  } else {
    if (auth.empty() && proc.empty()) throw ConfigError("ingest needs --auth and/or --proc, or --synthetic");
    auto read = [&](const std::string& path, auto reader, const char* what) {
      if (path.empty()) return;
      std::ifstream in(path);
      if (!in) throw DataError("cannot open " + path);
      const auto s = reader(in, cfg.ingest, events);
      std::cerr << what << ": lines=" << s.lines << " kept=" << s.kept << " filtered=" << s.filtered
                << " errored=" << s.errored << '\n';
    };
    read(auth, read_auth_log, "auth");
    read(proc, read_proc_log, "proc");
    sort_and_number(events);
    const auto replaced = apply_rare_process_token(events, cfg.ingest);
    std::cerr << "rare processes replaced: " << replaced << '\n';
    if (!redteam.empty()) {
      std::ifstream in(redteam);
      if (!in) throw DataError("cannot open " + redteam);
      const auto r = apply_redteam_labels(events, in);
      std::cerr << "red team rows=" << r.rows << " matched_events=" << r.matched_events
                << " unmatched_rows=" << r.unmatched_rows << '\n';
    }
  }
  if (events.empty()) std::cerr << "warning: no events kept\n";
  if (!fs::path(out).parent_path().empty()) fs::create_directories(fs::path(out).parent_path());
  write_events(out, events);
  const auto catalog = build_catalog(events, schema, cfg.ingest);
  const auto cat_path = a.catalog.empty() ? catalog_path_for(out) : a.catalog;
  catalog.save(cat_path);

  std::map<std::string, std::size_t> by_type;
  for (const auto& e : events) ++by_type[e.type];
  for (const auto& [t, n] : by_type) std::cout << t << ": " << n << '\n';
  for (const auto& t : schema.entity_types()) std::cout << t.name << "s: " << catalog.size(t.id) << '\n';
  std::cout << "events: " << out << "\ncatalog: " << cat_path << '\n';
  return 0;
}

struct TrainArgs {
  std::string events, catalog, model_dir;
};

int cmd_train(const Common& common, const TrainArgs& a) {
  auto cfg = load_config(common);
  const auto events_path = a.events.empty() ? cfg.paths.events : a.events;
  const auto cat_path = a.catalog.empty() ? catalog_path_for(events_path) : a.catalog;
  const auto model_dir = a.model_dir.empty() ? cfg.paths.model_dir : a.model_dir;
  if (!fs::exists(cat_path)) throw DataError("catalog not found: " + cat_path + " (run ingest first)");
  const auto catalog = Catalog::load(cat_path);
  const auto events = load_events(events_path, cfg);

  fs::create_directories(model_dir);
  std::ofstream metrics(fs::path(model_dir) / "metrics.log", std::ios::trunc);
  struct Tee : std::streambuf {
    std::streambuf *a, *b;
    Tee(std::streambuf* x, std::streambuf* y) : a(x), b(y) {}
    int overflow(int c) override {
      if (c == EOF) return 0;
      a->sputc(static_cast<char>(c));
      b->sputc(static_cast<char>(c));
      return c;
    }
  } tee(metrics.rdbuf(), std::cerr.rdbuf());
  std::ostream log(&tee);

  const auto bundle = train_bundle(events, catalog, cfg.ingest, cfg.train, &log);
  bundle.save(model_dir);
  textio::write_file(fs::path(model_dir) / "config.json", dump_run_config(cfg));
  std::cout << "model: " << model_dir << "\nparams_hash: " << textio::hash_file_hex(fs::path(model_dir) / "params.bin")
            << '\n';
  return 0;
}

struct ReplayArgs {
  std::string events, model_dir, out, labels;
  int from_window = 0;
  bool keep_labelled = false;
};

int cmd_replay(const Common& common, const ReplayArgs& a) {
  auto cfg = load_config(common);
  const auto events_path = a.events.empty() ? cfg.paths.events : a.events;
  const fs::path out = a.out.empty() ? cfg.paths.replay_dir : a.out;
  const auto model_dir = a.model_dir.empty() ? cfg.paths.model_dir : a.model_dir;
  const auto events = load_events(events_path, cfg);

  const fs::path start = a.from_window > 0 ? out / ("window-" + std::to_string(a.from_window)) : fs::path(model_dir);
  if (!fs::exists(start / "meta.txt")) throw DataError("no snapshot in " + start.string());
  auto bundle = ModelBundle::load(start);

  ReplayOptions opts;
  opts.out_dir = out;
  opts.exclude_labelled = !a.keep_labelled;
  if (!a.labels.empty()) {
    std::ifstream in(a.labels);
    if (!in) throw DataError("cannot open " + a.labels);
    std::unordered_set<std::uint64_t> ids;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty() || line[0] == '#') continue;
      try {
        ids.insert(static_cast<std::uint64_t>(textio::parse_int(line)));
      } catch (const DataError& e) {
        throw ParseError(n, e.what());
      }
    }
    opts.flagged = std::move(ids);
  }
  fs::create_directories(out);
  const auto result = replay(events, std::move(bundle), cfg.ingest, cfg.retrain, opts);
  for (const auto& r : result.reports)
    std::cout << "window " << r.window << ": scored=" << r.event_ids.size() << " retrain=" << r.retrain_events
              << " excluded=" << r.excluded_events << " epochs=" << r.epochs << '\n';

  // Whole-run scored file, rebuilt from every window directory so that a
  // resumed replay yields the same file as an uninterrupted one.
  std::vector<ScoredRecord> all;
  for (int t = 1; t <= cfg.ingest.test_windows; ++t) {
    const auto p = out / ("window-" + std::to_string(t)) / "scored.tsv";
    if (!fs::exists(p)) continue;
    auto part = read_scored_file(p.string());
    all.insert(all.end(), part.begin(), part.end());
  }
  write_scored(out / "scored.tsv", all);
  std::cout << "scored: " << (out / "scored.tsv").string() << '\n';
  return 0;
}

struct EvalArgs {
  std::vector<std::string> scored;
  std::vector<std::size_t> budgets;
  std::vector<double> fractions;
  double max_fpr = -1;
  std::string out, plot;
  bool raw = false;
};

int cmd_eval(const Common& common, const EvalArgs& a) {
  auto cfg = load_config(common);
  auto opts = cfg.eval;
  if (!a.budgets.empty()) opts.budgets = a.budgets;
  if (!a.fractions.empty()) opts.budget_fractions = a.fractions;
  if (a.max_fpr > 0) opts.max_fpr = a.max_fpr;
  if (a.raw) opts.use_z = false;
  auto files = a.scored;
  if (files.empty()) files.push_back((fs::path(cfg.paths.replay_dir) / "scored.tsv").string());

  std::vector<EvalReport> reports;
  std::ostringstream text;
  for (const auto& f : files) {
    if (!fs::exists(f)) throw DataError("scored file not found: " + f);
    const auto records = read_scored_file(f);
    reports.push_back(evaluate(records, opts));
    if (files.size() > 1) text << "# " << f << '\n';
    write_report(text, reports.back(), opts);
  }
  if (reports.size() > 1) {
    text << "# summary\n";
    write_summary(text, summarize_runs(reports, cfg.interval));
  }
  std::cout << text.str();
  if (!a.out.empty()) textio::write_file(a.out, text.str());
  if (!a.plot.empty()) {
    std::ofstream plot(a.plot, std::ios::trunc);
    write_plot_data(plot, reports.front().roc);
  }
  return 0;
}

struct ServeArgs {
  std::string events, model_dir, state_dir, host;
  int port = -1;
};

TriageServer* g_server = nullptr;

int cmd_serve(const Common& common, const ServeArgs& a) {
  auto cfg = load_config(common);
  const auto events = load_events(a.events.empty() ? cfg.paths.events : a.events, cfg);
  const auto model_dir = a.model_dir.empty() ? cfg.paths.model_dir : a.model_dir;
  std::vector<std::vector<RawEvent>> windows;
  for (int t = 1; t <= cfg.ingest.test_windows; ++t) windows.push_back(events_in_window(events, t, cfg.ingest));
  const auto state_dir = a.state_dir.empty() ? cfg.paths.state_dir : a.state_dir;
  ModelBundle initial;
  if (!fs::exists(fs::path(state_dir) / "snapshots")) {
    if (!fs::exists(fs::path(model_dir) / "meta.txt")) throw DataError("no model in " + model_dir);
    initial = ModelBundle::load(model_dir);
  }
  TriageService service(state_dir, std::move(initial), std::move(windows), cfg.retrain);
  TriageServer server(service, cfg.serve.default_limit);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  const auto host = a.host.empty() ? cfg.serve.host : a.host;
  const int port = a.port >= 0 ? a.port : cfg.serve.port;
  std::cerr << "serving on http://" << host << ':' << port << "/v1/windows\n";
  if (!server.listen(host, port)) throw ConfigError("cannot listen on " + host + ":" + std::to_string(port));
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Categorical event anomaly detection: ingest, train, replay, eval, serve"};
  app.require_subcommand(1);
  Common common;
  app.add_option("-c,--config", common.config_path, "JSON run configuration");
  app.add_flag("--sequential", common.sequential, "Disable parallel kernels (bit-reproducible)");
  app.add_option("--seed", common.seed, "Override the configured seed");

  IngestArgs ia;
  auto* ingest = app.add_subcommand("ingest", "Raw logs (or a synthetic stream) to the canonical event file");
  ingest->add_option("--auth", ia.auth, "Authentication log");
  ingest->add_option("--proc", ia.proc, "Process log");
  ingest->add_option("--redteam", ia.redteam, "Red team label file");
  ingest->add_flag("--synthetic", ia.synthetic, "Generate the synthetic stream instead");
  ingest->add_option("-o,--out", ia.out, "Canonical event file");
  ingest->add_option("--catalog", ia.catalog, "Catalog output (default: <out>.catalog.txt)");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Fit the model on the training period");
  trn->add_option("--events", ta.events, "Canonical event file");
  trn->add_option("--catalog", ta.catalog, "Catalog written by ingest");
  trn->add_option("-o,--model-dir", ta.model_dir, "Output directory");

  ReplayArgs ra;
  auto* rep = app.add_subcommand("replay", "Stream the test windows with scoring and retraining");
  rep->add_option("--events", ra.events, "Canonical event file");
  rep->add_option("--model-dir", ra.model_dir, "Trained model directory");
  rep->add_option("-o,--out", ra.out, "Replay output directory");
  rep->add_option("--from-window", ra.from_window, "Resume after this completed window");
  rep->add_option("--labels", ra.labels, "Event ids flagged malicious, one per line");
  rep->add_flag("--keep-labelled", ra.keep_labelled, "Retrain on events labelled malicious too");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Truncated ROC and detection rate at daily budgets");
  ev->add_option("--scored", ea.scored, "Scored event files (several = several runs)");
  ev->add_option("--budget", ea.budgets, "Daily budgets");
  ev->add_option("--budget-fraction", ea.fractions, "Daily budgets as a fraction of daily volume");
  ev->add_option("--max-fpr", ea.max_fpr, "ROC truncation");
  ev->add_option("-o,--out", ea.out, "Report file");
  ev->add_option("--plot", ea.plot, "ROC points file");
  ev->add_flag("--raw", ea.raw, "Rank by raw instead of standardised score");

  ServeArgs sa;
  auto* srv = app.add_subcommand("serve", "Analyst triage service");
  srv->add_option("--events", sa.events, "Canonical event file");
  srv->add_option("--model-dir", sa.model_dir, "Trained model directory");
  srv->add_option("--state-dir", sa.state_dir, "Service state directory");
  srv->add_option("--host", sa.host, "Bind address");
  srv->add_option("--port", sa.port, "Port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::Config);
  }

  try {
    if (*ingest) return cmd_ingest(common, ia);
    if (*trn) return cmd_train(common, ta);
    if (*rep) return cmd_replay(common, ra);
    if (*ev) return cmd_eval(common, ea);
    if (*srv) return cmd_serve(common, sa);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::Data);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
