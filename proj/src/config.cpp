#include "evad/config.hpp"

#include <initializer_list>
#include <set>

#include <json.hpp>

#include "evad/error.hpp"
#include "evad/textio.hpp"

namespace evad {

using nlohmann::json;

Schema SchemaConfig::build() const {
  Schema s;
  for (const auto& t : entity_types) s.register_entity_type(t);
  for (const auto& e : event_types) {
    for (const auto& t : e.signature)
      if (!s.find_entity_type(t)) throw ConfigError("event type '" + e.name + "' uses unknown entity type '" + t + "'");
    try {
      s.register_event_type(e.name, e.signature);
    } catch (const SchemaError& err) {
      throw ConfigError(err.what());
    }
  }
  return s;
}

void RunConfig::finalize() {
  train.seed = seed;
  retrain.seed = seed;
  train.execution = execution;
  retrain.execution = execution;
  validate();
}

void RunConfig::validate() const {
  train.validate();
  retrain.validate();
  synthetic.validate();
  schema.build();
  if (ingest.window_seconds <= 0) throw ConfigError("ingest.window_seconds must be positive");
  if (ingest.train_windows < 1 || ingest.test_windows < 0) throw ConfigError("ingest window counts out of range");
  if (!(eval.max_fpr > 0.0 && eval.max_fpr <= 1.0)) throw ConfigError("eval.max_fpr must be in (0,1]");
  for (auto b : eval.budgets)
    if (b < 1) throw ConfigError("eval.budgets entries must be >= 1");
  for (auto f : eval.budget_fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("eval.budget_fractions entries must be in (0,1]");
  if (serve.port < 0 || serve.port > 65535) throw ConfigError("serve.port out of range");
}

namespace {

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : obj.items())
    if (!ok.count(k)) throw ConfigError("unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!it->is_number_unsigned() && !(it->is_number_integer() && it->template get<long long>() >= 0))
        throw ConfigError("");
    }
    out = it->template get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + where + "." + key + "' has the wrong type");
  }
}

Execution parse_execution(const std::string& s) {
  if (s == "parallel") return Execution::Parallel;
  if (s == "sequential") return Execution::Serial;
  throw ConfigError("execution must be 'parallel' or 'sequential'");
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  check_keys(j, "", {"seed", "execution", "paths", "schema", "train", "retrain", "ingest", "synthetic", "eval", "serve"});
  read(j, "seed", c.seed, "");
  if (j.contains("execution")) {
    std::string e;
    read(j, "execution", e, "");
    c.execution = parse_execution(e);
  }
  c.synthetic.seed = c.seed;

  if (j.contains("paths")) {
    const auto& p = j["paths"];
    check_keys(p, "paths", {"auth_log", "proc_log", "redteam", "events", "model_dir", "replay_dir", "report", "state_dir"});
    read(p, "auth_log", c.paths.auth_log, "paths");
    read(p, "proc_log", c.paths.proc_log, "paths");
    read(p, "redteam", c.paths.redteam, "paths");
    read(p, "events", c.paths.events, "paths");
    read(p, "model_dir", c.paths.model_dir, "paths");
    read(p, "replay_dir", c.paths.replay_dir, "paths");
    read(p, "report", c.paths.report, "paths");
    read(p, "state_dir", c.paths.state_dir, "paths");
  }
  if (j.contains("schema")) {
    const auto& s = j["schema"];
    check_keys(s, "schema", {"entity_types", "event_types"});
    read(s, "entity_types", c.schema.entity_types, "schema");
    if (s.contains("event_types")) {
      if (!s["event_types"].is_array()) throw ConfigError("schema.event_types must be an array");
      c.schema.event_types.clear();
      for (const auto& e : s["event_types"]) {
        check_keys(e, "schema.event_types[]", {"name", "signature"});
        EventTypeDef d;
        read(e, "name", d.name, "schema.event_types[]");
        read(e, "signature", d.signature, "schema.event_types[]");
        c.schema.event_types.push_back(std::move(d));
      }
    }
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, "train", {"dim", "negatives", "epochs", "batch_size", "learning_rate", "beta1", "beta2", "epsilon"});
    read(t, "dim", c.train.dim, "train");
    read(t, "negatives", c.train.negatives, "train");
    read(t, "epochs", c.train.epochs, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "learning_rate", c.train.adam.learning_rate, "train");
    read(t, "beta1", c.train.adam.beta1, "train");
    read(t, "beta2", c.train.adam.beta2, "train");
    read(t, "epsilon", c.train.adam.epsilon, "train");
  }
  if (j.contains("retrain")) {
    const auto& r = j["retrain"];
    check_keys(r, "retrain", {"lambda_new", "lambda_old", "learning_rate", "beta1", "beta2", "epsilon", "batch_size",
                              "negatives", "validation_fraction", "patience", "min_improvement", "max_epochs",
                              "refresh_standardizer", "refresh_noise"});
    read(r, "lambda_new", c.retrain.lambda_new, "retrain");
    read(r, "lambda_old", c.retrain.lambda_old, "retrain");
    read(r, "learning_rate", c.retrain.adam.learning_rate, "retrain");
    read(r, "beta1", c.retrain.adam.beta1, "retrain");
    read(r, "beta2", c.retrain.adam.beta2, "retrain");
    read(r, "epsilon", c.retrain.adam.epsilon, "retrain");
    read(r, "batch_size", c.retrain.batch_size, "retrain");
    read(r, "negatives", c.retrain.negatives, "retrain");
    read(r, "validation_fraction", c.retrain.validation_fraction, "retrain");
    read(r, "patience", c.retrain.patience, "retrain");
    read(r, "min_improvement", c.retrain.min_improvement, "retrain");
    read(r, "max_epochs", c.retrain.max_epochs, "retrain");
    read(r, "refresh_standardizer", c.retrain.refresh_standardizer, "retrain");
    read(r, "refresh_noise", c.retrain.refresh_noise, "retrain");
  }
  if (j.contains("ingest")) {
    const auto& i = j["ingest"];
    check_keys(i, "ingest", {"builtin_accounts", "keep_failures", "rare_process_threshold", "rare_scope",
                             "rare_process_token", "window_seconds", "train_windows", "test_windows", "strict"});
    read(i, "builtin_accounts", c.ingest.builtin_accounts, "ingest");
    read(i, "keep_failures", c.ingest.keep_failures, "ingest");
    read(i, "rare_process_threshold", c.ingest.rare_process_threshold, "ingest");
    if (i.contains("rare_scope")) {
      std::string s;
      read(i, "rare_scope", s, "ingest");
      if (s == "all") c.ingest.rare_scope = RareCountScope::All;
      else if (s == "train") c.ingest.rare_scope = RareCountScope::TrainOnly;
      else throw ConfigError("ingest.rare_scope must be 'all' or 'train'");
    }
    read(i, "rare_process_token", c.ingest.rare_process_token, "ingest");
    read(i, "window_seconds", c.ingest.window_seconds, "ingest");
    read(i, "train_windows", c.ingest.train_windows, "ingest");
    read(i, "test_windows", c.ingest.test_windows, "ingest");
    read(i, "strict", c.ingest.strict, "ingest");
  }
  if (j.contains("synthetic")) {
    const auto& s = j["synthetic"];
    check_keys(s, "synthetic",
               {"users", "computers", "processes", "auth_types", "communities", "server_fraction", "favorite_hosts",
                "favorite_servers", "habit_rate", "auth_type_loyalty", "benign_cross_rate", "local_fraction",
                "remote_fraction", "late_user_fraction", "windows", "train_windows", "events_per_window",
                "window_seconds", "anomaly_rate", "inject_from_window", "seed"});
    auto& y = c.synthetic;
    read(s, "users", y.users, "synthetic");
    read(s, "computers", y.computers, "synthetic");
    read(s, "processes", y.processes, "synthetic");
    read(s, "auth_types", y.auth_types, "synthetic");
    read(s, "communities", y.communities, "synthetic");
    read(s, "server_fraction", y.server_fraction, "synthetic");
    read(s, "favorite_hosts", y.favorite_hosts, "synthetic");
    read(s, "favorite_servers", y.favorite_servers, "synthetic");
    read(s, "habit_rate", y.habit_rate, "synthetic");
    read(s, "auth_type_loyalty", y.auth_type_loyalty, "synthetic");
    read(s, "benign_cross_rate", y.benign_cross_rate, "synthetic");
    read(s, "local_fraction", y.local_fraction, "synthetic");
    read(s, "remote_fraction", y.remote_fraction, "synthetic");
    read(s, "late_user_fraction", y.late_user_fraction, "synthetic");
    read(s, "windows", y.windows, "synthetic");
    read(s, "train_windows", y.train_windows, "synthetic");
    read(s, "events_per_window", y.events_per_window, "synthetic");
    read(s, "window_seconds", y.window_seconds, "synthetic");
    read(s, "anomaly_rate", y.anomaly_rate, "synthetic");
    read(s, "inject_from_window", y.inject_from_window, "synthetic");
    read(s, "seed", y.seed, "synthetic");
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    check_keys(e, "eval", {"max_fpr", "budgets", "budget_fractions", "event_types", "use_z", "interval"});
    read(e, "max_fpr", c.eval.max_fpr, "eval");
    read(e, "budgets", c.eval.budgets, "eval");
    read(e, "budget_fractions", c.eval.budget_fractions, "eval");
    read(e, "event_types", c.eval.event_types, "eval");
    read(e, "use_z", c.eval.use_z, "eval");
    if (e.contains("interval")) {
      std::string s;
      read(e, "interval", s, "eval");
      if (s == "normal") c.interval = IntervalMethod::Normal;
      else if (s == "percentile") c.interval = IntervalMethod::Percentile;
      else throw ConfigError("eval.interval must be 'normal' or 'percentile'");
    }
  }
  if (j.contains("serve")) {
    const auto& s = j["serve"];
    check_keys(s, "serve", {"host", "port", "default_limit"});
    read(s, "host", c.serve.host, "serve");
    read(s, "port", c.serve.port, "serve");
    read(s, "default_limit", c.serve.default_limit, "serve");
  }
  c.eval.day_seconds = c.ingest.window_seconds;
  c.finalize();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::string text;
  try {
    text = textio::read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(text);
}

std::string dump_run_config(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["execution"] = c.execution == Execution::Serial ? "sequential" : "parallel";
  j["paths"] = {{"auth_log", c.paths.auth_log},     {"proc_log", c.paths.proc_log},
                {"redteam", c.paths.redteam},       {"events", c.paths.events},
                {"model_dir", c.paths.model_dir},   {"replay_dir", c.paths.replay_dir},
                {"report", c.paths.report},         {"state_dir", c.paths.state_dir}};
  json events = json::array();
  for (const auto& e : c.schema.event_types) events.push_back({{"name", e.name}, {"signature", e.signature}});
  j["schema"] = {{"entity_types", c.schema.entity_types}, {"event_types", events}};
  j["train"] = {{"dim", c.train.dim},
                {"negatives", c.train.negatives},
                {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.adam.learning_rate},
                {"beta1", c.train.adam.beta1},
                {"beta2", c.train.adam.beta2},
                {"epsilon", c.train.adam.epsilon}};
  const auto& r = c.retrain;
  j["retrain"] = {{"lambda_new", r.lambda_new},
                  {"lambda_old", r.lambda_old},
                  {"learning_rate", r.adam.learning_rate},
                  {"beta1", r.adam.beta1},
                  {"beta2", r.adam.beta2},
                  {"epsilon", r.adam.epsilon},
                  {"batch_size", r.batch_size},
                  {"negatives", r.negatives},
                  {"validation_fraction", r.validation_fraction},
                  {"patience", r.patience},
                  {"min_improvement", r.min_improvement},
                  {"max_epochs", r.max_epochs},
                  {"refresh_standardizer", r.refresh_standardizer},
                  {"refresh_noise", r.refresh_noise}};
  const auto& i = c.ingest;
  j["ingest"] = {{"builtin_accounts", i.builtin_accounts},
                 {"keep_failures", i.keep_failures},
                 {"rare_process_threshold", i.rare_process_threshold},
                 {"rare_scope", i.rare_scope == RareCountScope::All ? "all" : "train"},
                 {"rare_process_token", i.rare_process_token},
                 {"window_seconds", i.window_seconds},
                 {"train_windows", i.train_windows},
                 {"test_windows", i.test_windows},
                 {"strict", i.strict}};
  const auto& y = c.synthetic;
  j["synthetic"] = {{"users", y.users},
                    {"computers", y.computers},
                    {"processes", y.processes},
                    {"auth_types", y.auth_types},
                    {"communities", y.communities},
                    {"server_fraction", y.server_fraction},
                    {"favorite_hosts", y.favorite_hosts},
                    {"favorite_servers", y.favorite_servers},
                    {"habit_rate", y.habit_rate},
                    {"auth_type_loyalty", y.auth_type_loyalty},
                    {"benign_cross_rate", y.benign_cross_rate},
                    {"local_fraction", y.local_fraction},
                    {"remote_fraction", y.remote_fraction},
                    {"late_user_fraction", y.late_user_fraction},
                    {"windows", y.windows},
                    {"train_windows", y.train_windows},
                    {"events_per_window", y.events_per_window},
                    {"window_seconds", y.window_seconds},
                    {"anomaly_rate", y.anomaly_rate},
                    {"inject_from_window", y.inject_from_window},
                    {"seed", y.seed}};
  j["eval"] = {{"max_fpr", c.eval.max_fpr},
               {"budgets", c.eval.budgets},
               {"budget_fractions", c.eval.budget_fractions},
               {"event_types", c.eval.event_types},
               {"use_z", c.eval.use_z},
               {"interval", c.interval == IntervalMethod::Normal ? "normal" : "percentile"}};
  j["serve"] = {{"host", c.serve.host}, {"port", c.serve.port}, {"default_limit", c.serve.default_limit}};
  return j.dump(2) + "\n";
}

}  // namespace evad
