// Experiment driver: dataset generation, training, evaluation and route
// traces written as delimited text, plus a manifest for exact re-runs.
//
// Config file: one `key = value` per line, `#` starts a comment. Keys carry
// their units. Unknown keys are rejected.
//
//   profile                        desk | paper | tiny (base values, see profile())
//   dataset_seed                   uint64
//   n_snapshots                    count
//   train_fraction                 (0, 1)
//   window_h                       hours covered by snapshot timestamps
//   lon_min_deg, lon_max_deg       airspace longitude bounds, degrees E
//   lat_min_deg, lat_max_deg       airspace latitude bounds, degrees N
//   alt_min_km, alt_max_km         airspace altitude bounds
//   cruise_alt_min_km, cruise_alt_max_km
//   n_paths, n_airplanes           counts
//   cruise_speed_kmh               km/h
//   deviation_sigma_km             km, per north/east axis
//   ground_station                 lon_deg lat_deg alt_km
//   no_fly_zones                   none | lon_deg:lat_deg:radius_km:height_km[,...]
//   packet_size_kb                 kilobytes
//   speed_of_light_km_per_ms       km/ms
//   rate_table                     max_km:rate_mbps[,...] (increasing distance)
//   train_queue_ms                 uniform queue delay during training, ms
//   horizon_k                      effective earth radius factor
//   k                              candidate set size
//   t_max                          hop limit
//   gamma, learning_rate, tau      unitless
//   batch_size, replay_capacity    counts
//   epsilon_full_explore_episodes, epsilon_decay_episodes, epsilon_floor
//   fail_penalty_ms                ms
//   episodes                       training episodes per (algorithm, seed)
//   dqn_hidden, dvn_hidden         comma separated layer widths
//   bellman_every, heldout_size    episodes, samples (0 disables)
//   loop_free_targets              true | false
//   policies                       comma separated subset of optimal,gpsr,dqn,dvn
//   seeds                          comma separated training seeds
//   congested_fraction             [0, 1] share of airplanes marked congested
//   congested_queue_ms             ms
//   eval_episodes                  (snapshot, source) pairs per condition
//   smoothing_window               episodes
//   threads                        worker threads, 0 = hardware concurrency
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "aanet/gpsr.hpp"
#include "aanet/netmodel.hpp"
#include "aanet/nnet.hpp"
#include "aanet/rlcore.hpp"
#include "aanet/scenario.hpp"
#include "aanet/util.hpp"

namespace aanet::exp {

namespace fs = std::filesystem;
using rl::Algo;
using rl::Policy;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string profile = "desk";
  std::uint64_t dataset_seed = 1;
  int n_snapshots = 200;
  double train_fraction = 0.5;
  double window_h = 12.0;
  scenario::AirspaceSpec spec;
  net::LinkParams link;
  rl::TrainingConfig train;
  std::vector<Policy> policies{Policy::kOptimal, Policy::kGpsr, Policy::kDqn, Policy::kDvn};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double congested_fraction = 0.2;
  double congested_queue_ms = 50.0;
  int eval_episodes = 1000;
  int smoothing_window = 40;
  int threads = 0;

  bool has(Policy p) const { return std::find(policies.begin(), policies.end(), p) != policies.end(); }
  std::vector<Algo> algos() const {
    std::vector<Algo> out;
    if (has(Policy::kDqn)) out.push_back(Algo::kDqn);
    if (has(Policy::kDvn)) out.push_back(Algo::kDvn);
    return out;
  }
};

inline ExperimentConfig profile(const std::string& name) {
  ExperimentConfig c;
  c.profile = name;
  if (name == "desk") {
    c.spec.n_airplanes = 50;
    c.n_snapshots = 200;
  } else if (name == "paper") {
    c.spec.n_airplanes = 100;
    c.n_snapshots = 2000;
    c.seeds.clear();
    for (std::uint64_t s = 1; s <= 100; ++s) c.seeds.push_back(s);
  } else if (name == "tiny") {
    c.spec.n_airplanes = 20;
    c.n_snapshots = 50;
    c.train.episodes = 200;
    c.seeds = {1};
    c.eval_episodes = 100;
  } else {
    throw ConfigError("unknown profile '" + name + "' (expected desk, paper or tiny)");
  }
  return c;
}

inline void validate(const ExperimentConfig& c) {
  try {
    scenario::validate(c.spec);
    net::validate(c.link);
    rl::validate(c.train);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.n_snapshots <= 0) fail("n_snapshots must be positive");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) fail("train_fraction must be in (0, 1)");
  const double n_train = c.n_snapshots * c.train_fraction;
  if (std::abs(n_train - std::round(n_train)) > 1e-9) fail("n_snapshots * train_fraction must be an integer");
  if (!(c.window_h > 0.0)) fail("window_h must be positive");
  if (c.policies.empty()) fail("at least one policy is required");
  if (c.seeds.empty()) fail("at least one seed is required");
  if (!(c.congested_fraction >= 0.0 && c.congested_fraction <= 1.0)) fail("congested_fraction must be in [0, 1]");
  if (!(c.congested_queue_ms >= 0.0)) fail("congested_queue_ms must be >= 0");
  if (c.eval_episodes <= 0) fail("eval_episodes must be positive");
  if (c.smoothing_window <= 0) fail("smoothing_window must be positive");
  if (c.threads < 0) fail("threads must be >= 0");
}

// ---------------------------------------------------------------------------
// Config text
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += f(v[i]);
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  double d = 0.0;
  if (!parse_double(v, d) || !std::isfinite(d)) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return d;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int i{};
  if (!parse_int(v, i)) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return i;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::string> list(const std::string& v) {
  std::vector<std::string> out;
  for (const auto& part : split(v, ',')) {
    auto t = trim(part);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

inline std::vector<double> fields(const std::string& key, const std::string& v, char sep, std::size_t n) {
  const auto parts = sep == ' ' ? split_ws(v) : split(v, sep);
  if (parts.size() != n) throw ConfigError(key + ": expected " + std::to_string(n) + " values in '" + v + "'");
  std::vector<double> out;
  for (const auto& p : parts) out.push_back(to_double(key, trim(p)));
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

inline const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> m;
    auto dbl = [&m](const std::string& key, double ExperimentConfig::*field) {
      m[key] = [field](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*field = to_double(k, v); };
    };
    auto with = [&m](const std::string& key, std::function<void(ExperimentConfig&, const std::string&)> f) {
      m[key] = [f](ExperimentConfig& c, const std::string&, const std::string& v) { f(c, v); };
    };
    m["dataset_seed"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.dataset_seed = to_int<std::uint64_t>(k, v);
    };
    m["n_snapshots"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.n_snapshots = to_int<int>(k, v);
    };
    dbl("train_fraction", &ExperimentConfig::train_fraction);
    dbl("window_h", &ExperimentConfig::window_h);
    auto spec_dbl = [&m](const std::string& key, double* (*field)(ExperimentConfig&)) {
      m[key] = [field](ExperimentConfig& c, const std::string& k, const std::string& v) { *field(c) = to_double(k, v); };
    };
    spec_dbl("lon_min_deg", [](ExperimentConfig& c) { return &c.spec.lon.min; });
    spec_dbl("lon_max_deg", [](ExperimentConfig& c) { return &c.spec.lon.max; });
    spec_dbl("lat_min_deg", [](ExperimentConfig& c) { return &c.spec.lat.min; });
    spec_dbl("lat_max_deg", [](ExperimentConfig& c) { return &c.spec.lat.max; });
    spec_dbl("alt_min_km", [](ExperimentConfig& c) { return &c.spec.alt.min; });
    spec_dbl("alt_max_km", [](ExperimentConfig& c) { return &c.spec.alt.max; });
    spec_dbl("cruise_alt_min_km", [](ExperimentConfig& c) { return &c.spec.cruise_alt.min; });
    spec_dbl("cruise_alt_max_km", [](ExperimentConfig& c) { return &c.spec.cruise_alt.max; });
    spec_dbl("cruise_speed_kmh", [](ExperimentConfig& c) { return &c.spec.cruise_speed_kmh; });
    spec_dbl("deviation_sigma_km", [](ExperimentConfig& c) { return &c.spec.deviation_sigma_km; });
    spec_dbl("packet_size_kb", [](ExperimentConfig& c) { return &c.link.packet_size_kb; });
    spec_dbl("speed_of_light_km_per_ms", [](ExperimentConfig& c) { return &c.link.speed_of_light_km_per_ms; });
    spec_dbl("train_queue_ms", [](ExperimentConfig& c) { return &c.link.train_queue_ms; });
    spec_dbl("horizon_k", [](ExperimentConfig& c) { return &c.link.horizon_k; });
    spec_dbl("gamma", [](ExperimentConfig& c) { return &c.train.gamma; });
    spec_dbl("learning_rate", [](ExperimentConfig& c) { return &c.train.learning_rate; });
    spec_dbl("tau", [](ExperimentConfig& c) { return &c.train.tau; });
    spec_dbl("epsilon_floor", [](ExperimentConfig& c) { return &c.train.epsilon.floor; });
    spec_dbl("fail_penalty_ms", [](ExperimentConfig& c) { return &c.train.fail_penalty_ms; });
    dbl("congested_fraction", &ExperimentConfig::congested_fraction);
    dbl("congested_queue_ms", &ExperimentConfig::congested_queue_ms);
    auto int_field = [&m](const std::string& key, int* (*field)(ExperimentConfig&)) {
      m[key] = [field](ExperimentConfig& c, const std::string& k, const std::string& v) { *field(c) = to_int<int>(k, v); };
    };
    int_field("n_paths", [](ExperimentConfig& c) { return &c.spec.n_paths; });
    int_field("n_airplanes", [](ExperimentConfig& c) { return &c.spec.n_airplanes; });
    int_field("k", [](ExperimentConfig& c) { return &c.train.k; });
    int_field("t_max", [](ExperimentConfig& c) { return &c.train.t_max; });
    int_field("batch_size", [](ExperimentConfig& c) { return &c.train.batch_size; });
    int_field("epsilon_full_explore_episodes", [](ExperimentConfig& c) { return &c.train.epsilon.full_explore_episodes; });
    int_field("epsilon_decay_episodes", [](ExperimentConfig& c) { return &c.train.epsilon.decay_episodes; });
    int_field("episodes", [](ExperimentConfig& c) { return &c.train.episodes; });
    int_field("bellman_every", [](ExperimentConfig& c) { return &c.train.bellman_every; });
    int_field("heldout_size", [](ExperimentConfig& c) { return &c.train.heldout_size; });
    int_field("eval_episodes", [](ExperimentConfig& c) { return &c.eval_episodes; });
    int_field("smoothing_window", [](ExperimentConfig& c) { return &c.smoothing_window; });
    int_field("threads", [](ExperimentConfig& c) { return &c.threads; });
    m["replay_capacity"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.train.replay_capacity = to_int<std::size_t>(k, v);
    };
    m["loop_free_targets"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.train.loop_free_targets = to_bool(k, v);
    };
    m["ground_station"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      const auto f = fields(k, v, ' ', 3);
      c.spec.ground_station = {f[0], f[1], f[2]};
    };
    m["no_fly_zones"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.spec.no_fly_zones.clear();
      if (v == "none") return;
      for (const auto& z : list(v)) {
        const auto f = fields(k, z, ':', 4);
        c.spec.no_fly_zones.push_back({{f[0], f[1], 0.0}, f[2], f[3]});
      }
    };
    m["rate_table"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.link.rate_table.buckets.clear();
      for (const auto& b : list(v)) {
        const auto f = fields(k, b, ':', 2);
        c.link.rate_table.buckets.push_back({f[0], f[1]});
      }
    };
    auto hidden = [](const std::string& k, const std::string& v) {
      std::vector<int> out;
      for (const auto& w : list(v)) out.push_back(to_int<int>(k, w));
      return out;
    };
    m["dqn_hidden"] = [hidden](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.train.dqn_hidden = hidden(k, v);
    };
    m["dvn_hidden"] = [hidden](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.train.dvn_hidden = hidden(k, v);
    };
    with("policies", [](ExperimentConfig& c, const std::string& v) {
      c.policies.clear();
      for (const auto& name : list(v)) {
        const auto p = rl::parse_policy(name);
        if (!p) throw ConfigError("policies: unknown policy '" + name + "'");
        if (!c.has(*p)) c.policies.push_back(*p);
      }
    });
    m["seeds"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.seeds.clear();
      for (const auto& s : list(v)) c.seeds.push_back(to_int<std::uint64_t>(k, s));
    };
    return m;
  }();
  return table;
}

inline std::vector<std::pair<std::string, std::string>> parse_lines(std::istream& in, const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    out.emplace_back(trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)));
  }
  return out;
}

}  // namespace detail

/// Parses config text on top of a profile. `profile_override` (from the
/// command line) wins over a `profile` key in the text.
inline ExperimentConfig parse_config(std::istream& in, const std::string& origin = "config",
                                     const std::optional<std::string>& profile_override = std::nullopt) {
  const auto lines = detail::parse_lines(in, origin);
  std::string base = "desk";
  for (const auto& [k, v] : lines) {
    if (k == "profile") base = v;
  }
  if (profile_override) base = *profile_override;
  auto c = profile(base);
  for (const auto& [k, v] : lines) {
    if (k == "profile") continue;
    const auto& table = detail::setters();
    const auto it = table.find(k);
    if (it == table.end()) throw ConfigError(origin + ": unknown key '" + k + "'");
    it->second(c, k, v);
  }
  validate(c);
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "config") {
  std::istringstream in(text);
  return parse_config(in, origin);
}

inline ExperimentConfig load_config(const std::string& path, const std::optional<std::string>& profile_override = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_config(in, path, profile_override);
}

/// Every key in a fixed order; parse_config_text(to_text(c)) reproduces c
/// except `threads`, which never affects results and is left out.
inline std::string to_text(const ExperimentConfig& c) {
  const auto d = [](double v) { return format_double(v); };
  std::ostringstream o;
  o << "profile = " << c.profile << "\n"
    << "dataset_seed = " << c.dataset_seed << "\n"
    << "n_snapshots = " << c.n_snapshots << "\n"
    << "train_fraction = " << d(c.train_fraction) << "\n"
    << "window_h = " << d(c.window_h) << "\n"
    << "lon_min_deg = " << d(c.spec.lon.min) << "\n"
    << "lon_max_deg = " << d(c.spec.lon.max) << "\n"
    << "lat_min_deg = " << d(c.spec.lat.min) << "\n"
    << "lat_max_deg = " << d(c.spec.lat.max) << "\n"
    << "alt_min_km = " << d(c.spec.alt.min) << "\n"
    << "alt_max_km = " << d(c.spec.alt.max) << "\n"
    << "cruise_alt_min_km = " << d(c.spec.cruise_alt.min) << "\n"
    << "cruise_alt_max_km = " << d(c.spec.cruise_alt.max) << "\n"
    << "n_paths = " << c.spec.n_paths << "\n"
    << "n_airplanes = " << c.spec.n_airplanes << "\n"
    << "cruise_speed_kmh = " << d(c.spec.cruise_speed_kmh) << "\n"
    << "deviation_sigma_km = " << d(c.spec.deviation_sigma_km) << "\n"
    << "ground_station = " << d(c.spec.ground_station.lon) << " " << d(c.spec.ground_station.lat) << " "
    << d(c.spec.ground_station.alt) << "\n";
  o << "no_fly_zones = ";
  if (c.spec.no_fly_zones.empty()) o << "none";
  o << detail::join<scenario::NoFlyZone>(c.spec.no_fly_zones, [&](const scenario::NoFlyZone& z) {
    return d(z.center.lon) + ":" + d(z.center.lat) + ":" + d(z.radius_km) + ":" + d(z.height_km);
  }) << "\n";
  o << "packet_size_kb = " << d(c.link.packet_size_kb) << "\n"
    << "speed_of_light_km_per_ms = " << d(c.link.speed_of_light_km_per_ms) << "\n"
    << "rate_table = "
    << detail::join<net::RateBucket>(c.link.rate_table.buckets,
                                     [&](const net::RateBucket& b) { return d(b.max_distance_km) + ":" + d(b.rate_mbps); })
    << "\n"
    << "train_queue_ms = " << d(c.link.train_queue_ms) << "\n"
    << "horizon_k = " << d(c.link.horizon_k) << "\n"
    << "k = " << c.train.k << "\n"
    << "t_max = " << c.train.t_max << "\n"
    << "gamma = " << d(c.train.gamma) << "\n"
    << "learning_rate = " << d(c.train.learning_rate) << "\n"
    << "tau = " << d(c.train.tau) << "\n"
    << "batch_size = " << c.train.batch_size << "\n"
    << "replay_capacity = " << c.train.replay_capacity << "\n"
    << "epsilon_full_explore_episodes = " << c.train.epsilon.full_explore_episodes << "\n"
    << "epsilon_decay_episodes = " << c.train.epsilon.decay_episodes << "\n"
    << "epsilon_floor = " << d(c.train.epsilon.floor) << "\n"
    << "fail_penalty_ms = " << d(c.train.fail_penalty_ms) << "\n"
    << "episodes = " << c.train.episodes << "\n"
    << "dqn_hidden = " << detail::join<int>(c.train.dqn_hidden, [](const int& w) { return std::to_string(w); }) << "\n"
    << "dvn_hidden = " << detail::join<int>(c.train.dvn_hidden, [](const int& w) { return std::to_string(w); }) << "\n"
    << "bellman_every = " << c.train.bellman_every << "\n"
    << "heldout_size = " << c.train.heldout_size << "\n"
    << "loop_free_targets = " << (c.train.loop_free_targets ? "true" : "false") << "\n"
    << "policies = " << detail::join<Policy>(c.policies, [](const Policy& p) { return std::string(rl::to_string(p)); })
    << "\n"
    << "seeds = " << detail::join<std::uint64_t>(c.seeds, [](const std::uint64_t& s) { return std::to_string(s); })
    << "\n"
    << "congested_fraction = " << d(c.congested_fraction) << "\n"
    << "congested_queue_ms = " << d(c.congested_queue_ms) << "\n"
    << "eval_episodes = " << c.eval_episodes << "\n"
    << "smoothing_window = " << c.smoothing_window << "\n";
  return o.str();
}

inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a64(to_text(c)); }

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

/// Runs fn(0..n-1) on `threads` workers (0 = hardware concurrency). Callers
/// write results into per-index slots, so output order never depends on
/// scheduling.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads) : std::thread::hardware_concurrency();
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Trailing mean over the last `window` delivered episodes' delays, where the
/// window covers episodes (t - window, t]. Rows before `window` use the
/// episodes seen so far. NaN when the window holds no delivery.
inline std::vector<double> smooth_delivered(const std::vector<rl::EpisodeRecord>& curve, int window) {
  std::vector<double> out(curve.size(), std::nan(""));
  const auto w = static_cast<std::size_t>(window);
  for (std::size_t t = 0; t < curve.size(); ++t) {
    double sum = 0.0;
    int count = 0;
    for (std::size_t u = t + 1 >= w ? t + 1 - w : 0; u <= t; ++u) {
      if (!curve[u].delivered) continue;
      sum += curve[u].e2e_delay_ms;
      ++count;
    }
    if (count > 0) out[t] = sum / count;
  }
  return out;
}

/// Sample quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline std::string fmt(double v) { return std::isfinite(v) ? format_double(v) : std::string(); }

inline std::string params_file(Algo a, std::uint64_t seed) {
  return std::string("params_") + rl::to_string(a) + "_seed" + std::to_string(seed) + ".txt";
}
inline std::string curve_file(Algo a, std::uint64_t seed) {
  return std::string("curve_") + rl::to_string(a) + "_seed" + std::to_string(seed) + ".csv";
}
inline std::string bellman_file(Algo a, std::uint64_t seed) {
  return std::string("bellman_") + rl::to_string(a) + "_seed" + std::to_string(seed) + ".csv";
}
inline constexpr const char* kDatasetFile = "dataset.txt";
inline constexpr const char* kSchemaFile = "schema.txt";

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

inline void close_out(std::ofstream& out, const fs::path& p) {
  out.close();
  if (!out) throw IoError("failed writing " + p.string());
}

/// Sidecar description of every delimited output.
inline const char* schema_text() {
  return R"(# Output files. All delimited files are comma separated with one header row.
# Empty fields mean "not available" (for example the delay of an undelivered packet).
# Delays are milliseconds. Positions are degrees East, degrees North, km altitude.

dataset.txt
  line-oriented snapshot dataset; see the header comment of the scenario module

params_<algo>_seed<S>.txt
  network parameters; "aanet-params 1" header, spec line, then per layer the
  weight rows and a bias row; ends with "end"

curve_<algo>_seed<S>.csv
  episode            1-based training episode
  raw_delay_ms       E2E delay of the episode's packet, empty when not delivered
  smoothed_delay_ms  mean delay of the delivered packets among the last
                     smoothing_window episodes (fewer at the start)
  delivery_flag      1 delivered, 0 failed

aggregate_<algo>.csv
  episode, mean_smoothed_ms, std_smoothed_ms (population std over seeds),
  n_seeds, delivery_rate (mean delivery flag over seeds)

bellman_<algo>_seed<S>.csv
  episode, residual_ms2  mean squared Bellman residual on the held-out batch

train_summary.csv
  algo, seed, final_smoothed_ms, final_window_delivery, gradient_steps, max_replay_size

reference.csv
  policy, mean_delay_ms, delivery_ratio, n_pairs
  optimal and GPSR on the evaluation pairs of the test set with uniform queues

eval_samples.csv
  condition (uniform | congested), seed (training seed; 0 for optimal and gpsr),
  pair, snapshot_id, src, policy, delivered, hops, delay_queue_ms,
  delay_link_ms, feedback_messages
  delay_link_ms scores the same route without queuing delay; for optimal the
  route is re-solved with all queues set to zero

cdf_<condition>_<policy>_<mode>.csv   mode = queue | link
  delay_ms, cum_prob   sorted delivered delays, pooled over seeds

summary.csv
  condition, mode, policy, n_episodes, delivered, delivery_ratio,
  mean_ms, median_ms, p95_ms, mean_hops, mean_feedback

trace_<snapshot>_<src>.csv
  policy, step, node, lon_deg, lat_deg, alt_km, queue_ms, congested, delivered

trace_zones.csv
  zone, lon_deg, lat_deg, radius_km, height_km

manifest_<command>.json
  command, config text, config hash, seeds and command arguments
)";
}

inline void write_schema(const fs::path& dir) {
  const auto p = dir / kSchemaFile;
  auto out = open_out(p);
  out << schema_text();
  close_out(out, p);
}

inline scenario::Dataset build_dataset(const ExperimentConfig& c) {
  return scenario::build_dataset(c.spec, c.n_snapshots, c.train_fraction, c.dataset_seed, c.window_h,
                                 c.link.train_queue_ms);
}

inline scenario::Dataset load_dataset_checked(const ExperimentConfig& c, const fs::path& dir) {
  const auto p = dir / kDatasetFile;
  if (!fs::exists(p)) throw IoError("dataset not found: " + p.string() + " (run generate first)");
  auto d = scenario::load_dataset(p.string());
  if (!(d.spec == c.spec) || d.seed != c.dataset_seed) {
    throw ConfigError("dataset " + p.string() + " was generated with a different scenario configuration");
  }
  return d;
}

/// Queue delays with a seeded share of the airplanes congested. The draw
/// depends only on (dataset seed, snapshot id), so every policy and every
/// training seed sees the same marking.
inline std::vector<double> congested_queues(const scenario::Snapshot& s, const scenario::AirspaceSpec& spec,
                                            std::uint64_t dataset_seed, double fraction, double base_ms,
                                            double congested_ms) {
  std::vector<double> q(static_cast<std::size_t>(s.n_nodes()), base_ms);
  const int n_air = spec.n_airplanes;
  const int n_cong = static_cast<int>(std::llround(fraction * n_air));
  std::vector<int> ids(static_cast<std::size_t>(n_air));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(derive_seed(dataset_seed, stream::kCongestion, static_cast<std::uint64_t>(s.id)));
  for (int i = 0; i < n_cong; ++i) {  // partial Fisher-Yates
    const auto j = static_cast<std::size_t>(i) + uniform_index(rng, static_cast<std::size_t>(n_air - i));
    std::swap(ids[static_cast<std::size_t>(i)], ids[j]);
    q[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])] = congested_ms;
  }
  return q;
}

struct EvalPair {
  std::size_t test_index = 0;
  int snapshot_id = 0;
  int src = 0;
};

/// Evaluation pairs: uniformly drawn test snapshots with at least one airplane
/// that can reach the ground station, then a uniformly drawn such airplane.
inline std::vector<EvalPair> eval_pairs(const scenario::Dataset& d, const net::LinkParams& link, int n_pairs) {
  const int dest = d.spec.ground_id();
  std::vector<std::vector<int>> sources(d.test.size());
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    const auto g = net::build_graph(d.test[i], link);
    const auto r = net::reaches(g, dest);
    for (int v = 0; v < g.n_nodes(); ++v) {
      if (v != dest && r[static_cast<std::size_t>(v)]) sources[i].push_back(v);
    }
    if (!sources[i].empty()) usable.push_back(i);
  }
  if (usable.empty()) throw std::runtime_error("no test snapshot has an airplane connected to the ground station");
  Rng rng(derive_seed(d.seed, stream::kEvalPairs));
  std::vector<EvalPair> out;
  for (int k = 0; k < n_pairs; ++k) {
    const auto i = usable[uniform_index(rng, usable.size())];
    const auto& srcs = sources[i];
    out.push_back({i, d.test[i].id, srcs[uniform_index(rng, srcs.size())]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct Manifest {
  std::string command;
  std::string config_text;
  std::uint64_t config_hash = 0;
  std::vector<std::uint64_t> seeds;
  std::optional<int> snapshot_id;
  std::optional<int> src;
  std::vector<std::string> outputs;
};

inline std::string hash_text(std::uint64_t h) {
  std::ostringstream o;
  o << "fnv1a64:" << std::hex << h;
  return o.str();
}

inline nlohmann::ordered_json to_json(const Manifest& m) {
  nlohmann::ordered_json j;
  j["format"] = "aanet-manifest";
  j["version"] = 1;
  j["command"] = m.command;
  j["config_hash"] = hash_text(m.config_hash);
  j["seeds"] = m.seeds;
  if (m.snapshot_id) j["snapshot_id"] = *m.snapshot_id;
  if (m.src) j["src"] = *m.src;
  j["outputs"] = m.outputs;
  j["config"] = m.config_text;
  return j;
}

inline std::string manifest_file(const std::string& command) { return "manifest_" + command + ".json"; }

inline void write_manifest(const fs::path& dir, const Manifest& m) {
  const auto p = dir / manifest_file(m.command);
  auto out = open_out(p);
  out << to_json(m).dump(2) << "\n";
  close_out(out, p);
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  Manifest m;
  std::string recorded_hash;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format") != "aanet-manifest") throw ConfigError(path + ": not a manifest");
    if (j.at("version") != 1) throw ConfigError(path + ": unsupported manifest version");
    m.command = j.at("command").get<std::string>();
    m.config_text = j.at("config").get<std::string>();
    recorded_hash = j.at("config_hash").get<std::string>();
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("snapshot_id")) m.snapshot_id = j.at("snapshot_id").get<int>();
    if (j.contains("src")) m.src = j.at("src").get<int>();
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": malformed manifest (" + e.what() + ")");
  }
  m.config_hash = config_hash(parse_config_text(m.config_text, path));
  if (recorded_hash != hash_text(m.config_hash)) {
    throw ConfigError(path + ": config hash does not match the recorded config");
  }
  return m;
}

inline Manifest manifest_for(const std::string& command, const ExperimentConfig& c) {
  Manifest m;
  m.command = command;
  m.config_text = to_text(c);
  m.config_hash = config_hash(c);
  m.seeds = c.seeds;
  return m;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct GenerateSummary {
  int n_snapshots = 0;
  int n_nodes = 0;
  double mean_degree = 0.0;
  double reachable_fraction = 0.0;  // airplanes with a path to the ground station
};

inline GenerateSummary cmd_generate(const ExperimentConfig& c, const fs::path& out_dir, std::ostream& log) {
  validate(c);
  fs::create_directories(out_dir);
  const auto d = build_dataset(c);
  scenario::save_dataset(d, (out_dir / kDatasetFile).string());
  write_schema(out_dir);

  GenerateSummary s;
  s.n_snapshots = static_cast<int>(d.train.size() + d.test.size());
  s.n_nodes = c.spec.n_nodes();
  double degree = 0.0;
  double reach = 0.0;
  for (const auto* set : {&d.train, &d.test}) {
    for (const auto& snap : *set) {
      const auto g = net::build_graph(snap, c.link);
      degree += 2.0 * static_cast<double>(g.edge_count()) / g.n_nodes();
      const auto r = net::reaches(g, c.spec.ground_id());
      reach += static_cast<double>(std::count(r.begin(), r.end(), true) - 1) / c.spec.n_airplanes;
    }
  }
  s.mean_degree = degree / s.n_snapshots;
  s.reachable_fraction = reach / s.n_snapshots;

  auto m = manifest_for("generate", c);
  m.outputs = {kDatasetFile, kSchemaFile};
  write_manifest(out_dir, m);
  log << "snapshots " << s.n_snapshots << " (train " << d.train.size() << ", test " << d.test.size() << "), nodes "
      << s.n_nodes << ", mean degree " << s.mean_degree << ", airplanes reaching ground " << 100.0 * s.reachable_fraction
      << "%\n";
  return s;
}

struct TrainRun {
  Algo algo = Algo::kDqn;
  std::uint64_t seed = 0;
  rl::TrainingResult result;
  std::vector<double> smoothed;
};

struct ReferenceRow {
  Policy policy = Policy::kOptimal;
  double mean_delay_ms = 0.0;
  double delivery_ratio = 0.0;
  int n_pairs = 0;
};

/// Optimal and GPSR on the evaluation pairs with uniform training queues.
inline std::vector<ReferenceRow> reference_delays(const scenario::Dataset& d, const ExperimentConfig& c) {
  const auto pairs = eval_pairs(d, c.link, c.eval_episodes);
  const auto norm = rl::Normalizer::from(d.spec);
  std::vector<ReferenceRow> rows;
  for (auto p : {Policy::kOptimal, Policy::kGpsr}) {
    std::vector<std::optional<double>> delay(pairs.size());
    std::map<std::size_t, std::vector<std::size_t>> by_snap;
    for (std::size_t k = 0; k < pairs.size(); ++k) by_snap[pairs[k].test_index].push_back(k);
    std::vector<std::pair<std::size_t, std::vector<std::size_t>>> groups(by_snap.begin(), by_snap.end());
    parallel_for(groups.size(), c.threads, [&](std::size_t gi) {
      const rl::Scene scene(d.test[groups[gi].first], c.link, c.train.k, norm, d.spec.ground_id());
      for (auto k : groups[gi].second) {
        const auto r = rl::run_episode(scene, p, pairs[k].src, c.train.t_max);
        if (r.delivered()) delay[k] = r.e2e_delay_ms;
      }
    });
    std::vector<double> ok;
    for (const auto& v : delay) {
      if (v) ok.push_back(*v);
    }
    rows.push_back({p, mean(ok), static_cast<double>(ok.size()) / static_cast<double>(pairs.size()),
                    static_cast<int>(pairs.size())});
  }
  return rows;
}

inline std::vector<TrainRun> cmd_train(const ExperimentConfig& c, const fs::path& out_dir, std::ostream& log) {
  validate(c);
  const auto d = load_dataset_checked(c, out_dir);
  const auto algos = c.algos();
  if (algos.empty()) throw ConfigError("train: no learned policy (dqn, dvn) in policies");

  std::vector<TrainRun> runs;
  for (auto a : algos) {
    for (auto s : c.seeds) runs.push_back({a, s, {}, {}});
  }
  // Each run is sequential and owns its nets; runs fan out across workers.
  parallel_for(runs.size(), c.threads, [&](std::size_t i) {
    runs[i].result = rl::run_training(d, runs[i].algo, c.train, c.link, runs[i].seed);
    runs[i].smoothed = smooth_delivered(runs[i].result.curve, c.smoothing_window);
  });

  std::vector<std::string> outputs;
  for (const auto& r : runs) {
    const auto pp = out_dir / params_file(r.algo, r.seed);
    nn::save_params(r.result.params, pp.string());
    outputs.push_back(pp.filename().string());

    const auto cp = out_dir / curve_file(r.algo, r.seed);
    auto out = open_out(cp);
    out << "episode,raw_delay_ms,smoothed_delay_ms,delivery_flag\n";
    for (std::size_t t = 0; t < r.result.curve.size(); ++t) {
      const auto& e = r.result.curve[t];
      out << t + 1 << ',' << (e.delivered ? fmt(e.e2e_delay_ms) : "") << ',' << fmt(r.smoothed[t]) << ','
          << (e.delivered ? 1 : 0) << '\n';
    }
    close_out(out, cp);
    outputs.push_back(cp.filename().string());

    const auto bp = out_dir / bellman_file(r.algo, r.seed);
    auto bout = open_out(bp);
    bout << "episode,residual_ms2\n";
    for (const auto& b : r.result.bellman) bout << b.episode << ',' << fmt(b.residual) << '\n';
    close_out(bout, bp);
    outputs.push_back(bp.filename().string());
  }

  for (auto a : algos) {
    const auto ap = out_dir / (std::string("aggregate_") + rl::to_string(a) + ".csv");
    auto out = open_out(ap);
    out << "episode,mean_smoothed_ms,std_smoothed_ms,n_seeds,delivery_rate\n";
    for (int t = 0; t < c.train.episodes; ++t) {
      std::vector<double> vals;
      double delivered = 0.0;
      int n = 0;
      for (const auto& r : runs) {
        if (r.algo != a) continue;
        ++n;
        const auto ti = static_cast<std::size_t>(t);
        if (std::isfinite(r.smoothed[ti])) vals.push_back(r.smoothed[ti]);
        delivered += r.result.curve[ti].delivered ? 1.0 : 0.0;
      }
      const double mu = mean(vals);
      double var = 0.0;
      for (double v : vals) var += (v - mu) * (v - mu);
      const double sd = vals.empty() ? std::nan("") : std::sqrt(var / static_cast<double>(vals.size()));
      out << t + 1 << ',' << fmt(mu) << ',' << fmt(sd) << ',' << vals.size() << ',' << fmt(delivered / n) << '\n';
    }
    close_out(out, ap);
    outputs.push_back(ap.filename().string());
  }

  {
    const auto sp = out_dir / "train_summary.csv";
    auto out = open_out(sp);
    out << "algo,seed,final_smoothed_ms,final_window_delivery,gradient_steps,max_replay_size\n";
    for (const auto& r : runs) {
      const auto& curve = r.result.curve;
      const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(c.smoothing_window), curve.size());
      const auto ok = std::count_if(curve.end() - static_cast<std::ptrdiff_t>(w), curve.end(),
                                    [](const rl::EpisodeRecord& e) { return e.delivered; });
      out << rl::to_string(r.algo) << ',' << r.seed << ',' << fmt(r.smoothed.back()) << ','
          << fmt(static_cast<double>(ok) / static_cast<double>(w)) << ',' << r.result.gradient_steps << ','
          << r.result.max_replay_size << '\n';
      log << rl::to_string(r.algo) << " seed " << r.seed << ": final smoothed delay " << r.smoothed.back() << " ms, "
          << r.result.gradient_steps << " gradient steps\n";
    }
    close_out(out, sp);
    outputs.push_back(sp.filename().string());
  }

  {
    const auto rp = out_dir / "reference.csv";
    auto out = open_out(rp);
    out << "policy,mean_delay_ms,delivery_ratio,n_pairs\n";
    for (const auto& row : reference_delays(d, c)) {
      out << rl::to_string(row.policy) << ',' << fmt(row.mean_delay_ms) << ',' << fmt(row.delivery_ratio) << ','
          << row.n_pairs << '\n';
      log << rl::to_string(row.policy) << " reference: " << row.mean_delay_ms << " ms\n";
    }
    close_out(out, rp);
    outputs.push_back(rp.filename().string());
  }

  write_schema(out_dir);
  outputs.push_back(kSchemaFile);
  auto m = manifest_for("train", c);
  m.outputs = outputs;
  write_manifest(out_dir, m);
  return runs;
}

struct EvalSample {
  std::string condition;
  std::uint64_t seed = 0;
  std::size_t pair = 0;
  int snapshot_id = 0;
  int src = 0;
  Policy policy = Policy::kOptimal;
  bool delivered = false;
  int hops = 0;
  double delay_queue_ms = 0.0;
  double delay_link_ms = 0.0;
  int feedback_messages = 0;
  std::vector<int> route;
};

struct SummaryRow {
  std::string condition;
  std::string mode;
  Policy policy = Policy::kOptimal;
  int n = 0;
  int delivered = 0;
  double delivery_ratio = 0.0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double mean_hops = 0.0;
  double mean_feedback = 0.0;
};

struct EvalResult {
  std::vector<EvalSample> samples;
  std::vector<SummaryRow> summary;
};

/// Frozen parameters for every learned policy and seed; reports every missing
/// file at once.
inline std::map<std::pair<Algo, std::uint64_t>, nn::NetParams> load_agents(const ExperimentConfig& c,
                                                                          const fs::path& dir) {
  std::map<std::pair<Algo, std::uint64_t>, nn::NetParams> out;
  std::vector<std::string> missing;
  for (auto a : c.algos()) {
    for (auto s : c.seeds) {
      const auto p = dir / params_file(a, s);
      if (!fs::exists(p)) {
        missing.push_back(std::string(rl::to_string(a)) + ": " + p.string());
        continue;
      }
      out[{a, s}] = nn::load_params(p.string(), c.train.net_spec(a));
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing parameter files (run train first):";
    for (const auto& m : missing) msg += "\n  " + m;
    throw IoError(msg);
  }
  return out;
}

/// Scene for a test snapshot with the condition's queue delays, fully built so
/// that concurrent read-only use is safe.
inline rl::Scene warm_scene(scenario::Snapshot snap, const ExperimentConfig& c, const rl::Normalizer& norm,
                            const std::vector<double>& queues) {
  snap.queue_delay_ms = queues;
  rl::Scene scene(std::move(snap), c.link, c.train.k, norm, c.spec.ground_id());
  scene.all_pairs();
  scene.planar();
  scene.sources();
  for (int i = 0; i < scene.snapshot().n_nodes(); ++i) {
    if (i != scene.dest()) scene.state(i);
  }
  return scene;
}

inline double link_only_delay(const net::TopologyGraph& g, const std::vector<int>& nodes) {
  const std::vector<double> zero(static_cast<std::size_t>(g.n_nodes()), 0.0);
  return net::route_delay(g, nodes, &zero);
}

/// Runs every configured policy on the evaluation pairs under uniform queues
/// and under the congested marking. Deterministic for any thread count.
inline EvalResult evaluate(const scenario::Dataset& d, const ExperimentConfig& c,
                           const std::map<std::pair<Algo, std::uint64_t>, nn::NetParams>& agents) {
  const auto pairs = eval_pairs(d, c.link, c.eval_episodes);
  const auto norm = rl::Normalizer::from(d.spec);
  struct Condition {
    std::string name;
    double fraction;
  };
  const std::vector<Condition> conditions{{"uniform", 0.0}, {"congested", c.congested_fraction}};

  // Slots in a fixed order: condition, policy, seed (learned only), pair.
  struct Slot {
    std::size_t condition;
    Policy policy;
    std::uint64_t seed;
  };
  std::vector<Slot> slots;
  for (std::size_t ci = 0; ci < conditions.size(); ++ci) {
    for (auto p : c.policies) {
      if (p == Policy::kOptimal || p == Policy::kGpsr) {
        slots.push_back({ci, p, 0});
      } else {
        for (auto s : c.seeds) slots.push_back({ci, p, s});
      }
    }
  }
  std::vector<EvalSample> samples(slots.size() * pairs.size());

  std::map<std::size_t, std::vector<std::size_t>> by_snap;
  for (std::size_t k = 0; k < pairs.size(); ++k) by_snap[pairs[k].test_index].push_back(k);
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> groups(by_snap.begin(), by_snap.end());

  parallel_for(groups.size() * conditions.size(), c.threads, [&](std::size_t item) {
    const auto& [test_index, members] = groups[item / conditions.size()];
    const std::size_t ci = item % conditions.size();
    const auto& snap = d.test[test_index];
    const auto queues = congested_queues(snap, d.spec, d.seed, conditions[ci].fraction, c.link.train_queue_ms,
                                         c.congested_queue_ms);
    const auto scene = warm_scene(snap, c, norm, queues);
    std::optional<net::AllPairs> link_only_pairs;
    net::TopologyGraph zero_q = scene.graph();
    for (int i = 0; i < zero_q.n_nodes(); ++i) zero_q.set_queue(i, 0.0);

    for (std::size_t si = 0; si < slots.size(); ++si) {
      if (slots[si].condition != ci) continue;
      const auto policy = slots[si].policy;
      rl::Agents ag;
      if (policy == Policy::kDqn) ag.dqn = &agents.at({Algo::kDqn, slots[si].seed});
      if (policy == Policy::kDvn) ag.dvn = &agents.at({Algo::kDvn, slots[si].seed});
      for (auto k : members) {
        const auto r = rl::run_episode(scene, policy, pairs[k].src, c.train.t_max, ag);
        EvalSample& e = samples[si * pairs.size() + k];
        e.condition = conditions[ci].name;
        e.seed = slots[si].seed;
        e.pair = k;
        e.snapshot_id = pairs[k].snapshot_id;
        e.src = pairs[k].src;
        e.policy = policy;
        e.delivered = r.delivered();
        e.hops = r.hops;
        e.feedback_messages = r.feedback_messages;
        e.route = r.route;
        if (e.delivered) {
          e.delay_queue_ms = r.e2e_delay_ms;
          if (policy == Policy::kOptimal) {
            if (!link_only_pairs) link_only_pairs.emplace(zero_q);
            e.delay_link_ms = net::optimal_route(*link_only_pairs, zero_q, pairs[k].src, scene.dest())->total_delay_ms;
          } else {
            e.delay_link_ms = link_only_delay(scene.graph(), r.route);
          }
        }
      }
    }
  });

  EvalResult out;
  for (const auto& cond : conditions) {
    for (const char* mode : {"queue", "link"}) {
      for (auto p : c.policies) {
        SummaryRow row{cond.name, mode, p};
        std::vector<double> delays;
        double hops = 0.0, feedback = 0.0;
        for (const auto& e : samples) {
          if (e.condition != cond.name || e.policy != p) continue;
          ++row.n;
          feedback += e.feedback_messages;
          if (!e.delivered) continue;
          ++row.delivered;
          hops += e.hops;
          delays.push_back(std::string(mode) == "queue" ? e.delay_queue_ms : e.delay_link_ms);
        }
        row.delivery_ratio = row.n ? static_cast<double>(row.delivered) / row.n : std::nan("");
        row.mean_ms = mean(delays);
        row.median_ms = quantile(delays, 0.5);
        row.p95_ms = quantile(delays, 0.95);
        row.mean_hops = row.delivered ? hops / row.delivered : std::nan("");
        row.mean_feedback = row.n ? feedback / row.n : std::nan("");
        out.summary.push_back(row);
      }
    }
  }
  out.samples = std::move(samples);
  return out;
}

inline EvalResult cmd_evaluate(const ExperimentConfig& c, const fs::path& out_dir, std::ostream& log) {
  validate(c);
  const auto d = load_dataset_checked(c, out_dir);
  const auto agents = load_agents(c, out_dir);
  auto res = evaluate(d, c, agents);
  std::vector<std::string> outputs;

  {
    const auto p = out_dir / "eval_samples.csv";
    auto out = open_out(p);
    out << "condition,seed,pair,snapshot_id,src,policy,delivered,hops,delay_queue_ms,delay_link_ms,feedback_messages\n";
    for (const auto& e : res.samples) {
      out << e.condition << ',' << e.seed << ',' << e.pair << ',' << e.snapshot_id << ',' << e.src << ','
          << rl::to_string(e.policy) << ',' << (e.delivered ? 1 : 0) << ',' << e.hops << ','
          << (e.delivered ? fmt(e.delay_queue_ms) : "") << ',' << (e.delivered ? fmt(e.delay_link_ms) : "") << ','
          << e.feedback_messages << '\n';
    }
    close_out(out, p);
    outputs.push_back(p.filename().string());
  }

  for (const char* cond : {"uniform", "congested"}) {
    for (auto pol : c.policies) {
      for (const char* mode : {"queue", "link"}) {
        std::vector<double> v;
        for (const auto& e : res.samples) {
          if (e.condition == cond && e.policy == pol && e.delivered) {
            v.push_back(std::string(mode) == "queue" ? e.delay_queue_ms : e.delay_link_ms);
          }
        }
        std::sort(v.begin(), v.end());
        const auto p = out_dir / (std::string("cdf_") + cond + "_" + rl::to_string(pol) + "_" + mode + ".csv");
        auto out = open_out(p);
        out << "delay_ms,cum_prob\n";
        for (std::size_t i = 0; i < v.size(); ++i) {
          out << fmt(v[i]) << ',' << fmt(static_cast<double>(i + 1) / static_cast<double>(v.size())) << '\n';
        }
        close_out(out, p);
        outputs.push_back(p.filename().string());
      }
    }
  }

  {
    const auto p = out_dir / "summary.csv";
    auto out = open_out(p);
    out << "condition,mode,policy,n_episodes,delivered,delivery_ratio,mean_ms,median_ms,p95_ms,mean_hops,mean_feedback\n";
    for (const auto& r : res.summary) {
      out << r.condition << ',' << r.mode << ',' << rl::to_string(r.policy) << ',' << r.n << ',' << r.delivered << ','
          << fmt(r.delivery_ratio) << ',' << fmt(r.mean_ms) << ',' << fmt(r.median_ms) << ',' << fmt(r.p95_ms) << ','
          << fmt(r.mean_hops) << ',' << fmt(r.mean_feedback) << '\n';
      if (std::string(r.mode) == "queue") {
        log << r.condition << ' ' << rl::to_string(r.policy) << ": median " << r.median_ms << " ms, delivery "
            << 100.0 * r.delivery_ratio << "%\n";
      }
    }
    close_out(out, p);
    outputs.push_back(p.filename().string());
  }

  write_schema(out_dir);
  outputs.push_back(kSchemaFile);
  auto m = manifest_for("evaluate", c);
  m.outputs = outputs;
  write_manifest(out_dir, m);
  return res;
}

struct TraceHop {
  int node = 0;
  geo::GeoPosition pos;
  double queue_ms = 0.0;
  bool congested = false;
};

struct PolicyTrace {
  Policy policy = Policy::kOptimal;
  bool delivered = false;
  std::vector<TraceHop> hops;
};

/// Routes of every policy for one snapshot and source under the congested
/// marking. Learned policies use the parameters of `seed`.
inline std::vector<PolicyTrace> trace_routes(const scenario::Snapshot& snap, const ExperimentConfig& c,
                                             std::uint64_t dataset_seed, int src, const rl::Agents& agents) {
  const auto queues = congested_queues(snap, c.spec, dataset_seed, c.congested_fraction, c.link.train_queue_ms,
                                       c.congested_queue_ms);
  const auto scene = warm_scene(snap, c, rl::Normalizer::from(c.spec), queues);
  std::vector<PolicyTrace> out;
  for (auto p : c.policies) {
    const auto r = rl::run_episode(scene, p, src, c.train.t_max, agents);
    PolicyTrace t{p, r.delivered(), {}};
    for (int v : r.route) {
      const double q = queues[static_cast<std::size_t>(v)];
      t.hops.push_back({v, snap.positions[static_cast<std::size_t>(v)], q, q != c.link.train_queue_ms});
    }
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<PolicyTrace> cmd_trace(const ExperimentConfig& c, const fs::path& out_dir, int snapshot_id, int src,
                                          std::ostream& log) {
  validate(c);
  const auto d = load_dataset_checked(c, out_dir);
  const auto* snap = d.find(snapshot_id);
  if (!snap) throw ConfigError("unknown snapshot id " + std::to_string(snapshot_id));
  if (src < 0 || src >= snap->n_nodes() || src == c.spec.ground_id()) {
    throw ConfigError("source " + std::to_string(src) + " is not an airplane of snapshot " + std::to_string(snapshot_id));
  }
  std::map<std::pair<Algo, std::uint64_t>, nn::NetParams> params;
  rl::Agents agents;
  if (!c.algos().empty()) {
    auto first = c;
    first.seeds = {c.seeds.front()};
    params = load_agents(first, out_dir);
    if (c.has(Policy::kDqn)) agents.dqn = &params.at({Algo::kDqn, c.seeds.front()});
    if (c.has(Policy::kDvn)) agents.dvn = &params.at({Algo::kDvn, c.seeds.front()});
  }
  const auto traces = trace_routes(*snap, c, d.seed, src, agents);

  const auto name = "trace_" + std::to_string(snapshot_id) + "_" + std::to_string(src) + ".csv";
  const auto tp = out_dir / name;
  auto out = open_out(tp);
  out << "policy,step,node,lon_deg,lat_deg,alt_km,queue_ms,congested,delivered\n";
  for (const auto& t : traces) {
    for (std::size_t i = 0; i < t.hops.size(); ++i) {
      const auto& h = t.hops[i];
      out << rl::to_string(t.policy) << ',' << i << ',' << h.node << ',' << fmt(h.pos.lon) << ',' << fmt(h.pos.lat)
          << ',' << fmt(h.pos.alt) << ',' << fmt(h.queue_ms) << ',' << (h.congested ? 1 : 0) << ','
          << (t.delivered ? 1 : 0) << '\n';
    }
    log << rl::to_string(t.policy) << ": " << t.hops.size() - 1 << " hops" << (t.delivered ? "" : " (not delivered)")
        << "\n";
  }
  close_out(out, tp);

  const auto zp = out_dir / "trace_zones.csv";
  auto zout = open_out(zp);
  zout << "zone,lon_deg,lat_deg,radius_km,height_km\n";
  for (std::size_t i = 0; i < c.spec.no_fly_zones.size(); ++i) {
    const auto& z = c.spec.no_fly_zones[i];
    zout << i << ',' << fmt(z.center.lon) << ',' << fmt(z.center.lat) << ',' << fmt(z.radius_km) << ','
         << fmt(z.height_km) << '\n';
  }
  close_out(zout, zp);

  write_schema(out_dir);
  auto m = manifest_for("trace", c);
  m.snapshot_id = snapshot_id;
  m.src = src;
  m.outputs = {name, "trace_zones.csv", kSchemaFile};
  write_manifest(out_dir, m);
  return traces;
}

}  // namespace aanet::exp
