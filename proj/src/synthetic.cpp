#include <algorithm>
#include <charconv>
#include <cmath>

#include "evad/error.hpp"
#include "evad/ingest.hpp"
#include "evad/rng.hpp"

namespace evad {

void SynthConfig::validate() const {
  auto rate = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string("synthetic ") + name + " must be in [0,1]");
  };
  rate(server_fraction, "server_fraction");
  rate(habit_rate, "habit_rate");
  rate(auth_type_loyalty, "auth_type_loyalty");
  rate(benign_cross_rate, "benign_cross_rate");
  rate(local_fraction, "local_fraction");
  rate(remote_fraction, "remote_fraction");
  rate(late_user_fraction, "late_user_fraction");
  rate(anomaly_rate, "anomaly_rate");
  if (local_fraction + remote_fraction > 1.0) throw ConfigError("local_fraction + remote_fraction exceeds 1");
  if (communities < 1) throw ConfigError("need at least one community");
  if (users < communities || processes < 1 || auth_types < 1)
    throw ConfigError("need at least one user per community, one process and one auth type");
  if (computers < 2 * communities) throw ConfigError("need at least two computers per community");
  if (windows < 1 || train_windows < 1 || train_windows > windows)
    throw ConfigError("train_windows must be in [1, windows]");
  if (window_seconds <= 0) throw ConfigError("window_seconds must be positive");
  if (favorite_hosts < 1 || favorite_servers < 1) throw ConfigError("favourite counts must be positive");
  if (anomaly_rate > 0 && communities < 2) throw ConfigError("anomaly injection needs two communities");
}

int synthetic_community(std::string_view name, const SynthConfig& config) {
  if (name.size() < 2 || (name[0] != 'U' && name[0] != 'C')) return -1;
  std::size_t idx = 0;
  auto [p, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), idx);
  if (ec != std::errc() || p != name.data() + name.size()) return -1;
  return static_cast<int>(idx % config.communities);
}

namespace {

struct World {
  // per community: workstation and server indices
  std::vector<std::vector<std::size_t>> workstations, servers;
  std::vector<std::vector<std::size_t>> user_hosts, user_servers;
  std::vector<std::size_t> host_auth;
  std::vector<std::vector<std::size_t>> host_procs;
  std::vector<std::size_t> user_start;  // first window in which the user is active
};

std::string name(char prefix, std::size_t i) { return prefix + std::to_string(i); }

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.below(v.size())];
}

World build_world(const SynthConfig& c, Rng& rng) {
  World w;
  w.workstations.resize(c.communities);
  w.servers.resize(c.communities);
  std::vector<std::vector<std::size_t>> members(c.communities);
  for (std::size_t i = 0; i < c.computers; ++i) members[i % c.communities].push_back(i);
  for (std::size_t k = 0; k < c.communities; ++k) {
    const auto& m = members[k];
    auto n_srv = static_cast<std::size_t>(std::round(c.server_fraction * static_cast<double>(m.size())));
    n_srv = std::clamp<std::size_t>(n_srv, 1, m.size() - 1);
    w.servers[k].assign(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(n_srv));
    w.workstations[k].assign(m.begin() + static_cast<std::ptrdiff_t>(n_srv), m.end());
  }
  w.host_auth.resize(c.computers);
  for (auto& a : w.host_auth) a = rng.below(c.auth_types);
  w.host_procs.resize(c.computers);
  for (auto& procs : w.host_procs)
    for (int j = 0; j < 5; ++j) procs.push_back(rng.below(c.processes));

  w.user_hosts.resize(c.users);
  w.user_servers.resize(c.users);
  w.user_start.assign(c.users, 0);
  const std::size_t test_windows = c.windows - c.train_windows;
  for (std::size_t u = 0; u < c.users; ++u) {
    const auto k = u % c.communities;
    for (std::size_t j = 0; j < c.favorite_hosts; ++j) w.user_hosts[u].push_back(pick(w.workstations[k], rng));
    for (std::size_t j = 0; j < c.favorite_servers; ++j) w.user_servers[u].push_back(pick(w.servers[k], rng));
    // Users below the community size never start late so every community
    // keeps members in training.
    if (u >= c.communities && test_windows > 0 && rng.uniform() < c.late_user_fraction)
      w.user_start[u] = c.train_windows + rng.below(test_windows);
  }
  return w;
}

std::size_t auth_type_for(const World& w, const SynthConfig& c, std::size_t host, Rng& rng) {
  return rng.uniform() < c.auth_type_loyalty ? w.host_auth[host] : rng.below(c.auth_types);
}

RawEvent benign_event(const World& w, const SynthConfig& c, std::size_t user, Rng& rng) {
  RawEvent ev;
  ev.label = Label::Benign;
  const auto k = user % c.communities;
  const double r = rng.uniform();
  const auto src = rng.uniform() < c.habit_rate ? pick(w.user_hosts[user], rng) : pick(w.workstations[k], rng);
  if (r < c.local_fraction) {
    ev.type = "local_auth";
    ev.entities = {name('U', user), name('A', auth_type_for(w, c, src, rng)), name('C', src)};
  } else if (r < c.local_fraction + c.remote_fraction) {
    auto dk = k;
    if (c.communities > 1 && rng.uniform() < c.benign_cross_rate)
      dk = (k + 1 + rng.below(c.communities - 1)) % c.communities;
    const auto dst = dk == k && rng.uniform() < c.habit_rate ? pick(w.user_servers[user], rng)
                                                              : pick(w.servers[dk], rng);
    ev.type = "remote_auth";
    ev.entities = {name('U', user), name('A', auth_type_for(w, c, dst, rng)), name('C', src), name('C', dst)};
  } else {
    const auto proc = rng.uniform() < c.habit_rate ? pick(w.host_procs[src], rng) : rng.below(c.processes);
    ev.type = "proc_start";
    ev.entities = {name('C', src), name('U', user), name('P', proc)};
  }
  return ev;
}

RawEvent malicious_event(const World& w, const SynthConfig& c, std::size_t user, Rng& rng) {
  const auto k = user % c.communities;
  const auto dk = (k + 1 + rng.below(c.communities - 1)) % c.communities;
  const auto src = pick(w.user_hosts[user], rng);
  const auto dst = rng.uniform() < 0.5 ? pick(w.servers[dk], rng) : pick(w.workstations[dk], rng);
  RawEvent ev;
  ev.label = Label::Malicious;
  ev.type = "remote_auth";
  ev.entities = {name('U', user), name('A', rng.below(c.auth_types)), name('C', src), name('C', dst)};
  return ev;
}

}  // namespace

std::vector<RawEvent> generate_synthetic(const SynthConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const World world = build_world(config, rng);
  const auto n_inject =
      static_cast<std::size_t>(std::llround(config.anomaly_rate * static_cast<double>(config.events_per_window)));

  std::vector<RawEvent> out;
  out.reserve(config.windows * config.events_per_window);
  std::vector<std::size_t> active;
  for (std::size_t win = 0; win < config.windows; ++win) {
    active.clear();
    for (std::size_t u = 0; u < config.users; ++u)
      if (world.user_start[u] <= win) active.push_back(u);
    const bool inject = win >= config.inject_from_window && n_inject > 0;
    const std::size_t n_bad = inject ? std::min(n_inject, config.events_per_window) : 0;

    std::vector<RawEvent> batch;
    batch.reserve(config.events_per_window);
    for (std::size_t i = 0; i < config.events_per_window; ++i) {
      const auto user = active[rng.below(active.size())];
      batch.push_back(i < n_bad ? malicious_event(world, config, user, rng) : benign_event(world, config, user, rng));
    }
    const auto base = static_cast<std::int64_t>(win) * config.window_seconds;
    for (auto& ev : batch)
      ev.timestamp = base + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(config.window_seconds)));
    std::stable_sort(batch.begin(), batch.end(),
                     [](const RawEvent& a, const RawEvent& b) { return a.timestamp < b.timestamp; });
    for (auto& ev : batch) out.push_back(std::move(ev));
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].source_index = i;
  return out;
}

}  // namespace evad
