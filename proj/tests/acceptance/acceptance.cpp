// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.
//
//   acceptance --out DIR [--threads N]

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "aanet/expcli.hpp"
#include "support.hpp"

using namespace aanet;
namespace fs = std::filesystem;
using exp::Algo;
using rl::Policy;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& why) {
    if (!ok && pass) detail << "first failure: " << why << "; ";
    pass = pass && ok;
  }
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

int failures = 0;

void report(const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail.str() << std::endl;
  if (!o.pass) ++failures;
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = exp::mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------------------

Outcome geometry() {
  Outcome o;
  Stopwatch sw;
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> lon(-180.0, 180.0), lat(-89.0, 89.0), alt(0.0, 13.0), f(0.0, 1.0);
  double worst_gc = 0.0, worst_slant = 0.0, worst_along = 0.0;
  for (int i = 0; i < 10'000; ++i) {
    const geo::GeoPosition a{lon(rng), lat(rng), alt(rng)}, b{lon(rng), lat(rng), alt(rng)};
    const double gc = oracle::haversine_km(a.lon, a.lat, b.lon, b.lat);
    worst_gc = std::max(worst_gc, std::abs(geo::great_circle_distance(a, b) - gc) / std::max(gc, 1.0));
    const double sl = oracle::slant_km(a, b);
    const double sl2 = oracle::slant_cartesian_km(a, b);
    const double got = geo::slant_distance(a, b);
    worst_slant = std::max({worst_slant, std::abs(got - sl) / std::max(sl, 1.0), std::abs(got - sl2) / std::max(sl2, 1.0)});

    if (gc < 1.0 || gc > 19'000.0) continue;
    const auto path = geo::make_path(a, b);
    const double t = f(rng);
    const auto p = geo::point_along_path(path, t);
    const double from_start = oracle::haversine_km(a.lon, a.lat, p.lon, p.lat);
    const double to_end = oracle::haversine_km(p.lon, p.lat, b.lon, b.lat);
    worst_along = std::max({worst_along, std::abs(from_start - t * path.length_km),
                            std::abs(to_end - (1.0 - t) * path.length_km)});
  }
  const double secs = sw.seconds();
  o.require(worst_gc <= 1e-6, "great-circle relative error");
  o.require(worst_slant <= 1e-6, "slant relative error");
  o.require(worst_along <= 1e-6, "path proportionality");
  o.require(secs < 5.0, "runtime");
  o.detail << "10000 pairs, max rel err great-circle " << worst_gc << ", slant " << worst_slant
           << ", path proportionality max " << worst_along << " km, " << secs << " s";
  return o;
}

Outcome shortest_paths(const scenario::Dataset& desk, const exp::ExperimentConfig& c) {
  Outcome o;
  Stopwatch sw;
  std::mt19937_64 rng(77);
  int queries = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 7;
    const auto g = oracle::random_graph(rng, n, 0.45);
    const net::AllPairs ap(g);
    for (int s = 0; s < n; ++s) {
      for (int d = 0; d < n; ++d) {
        if (s == d) continue;
        ++queries;
        const double want = oracle::brute_force_delay(g, s, d);
        const auto r = net::optimal_route(ap, g, s, d);
        if (!std::isfinite(want)) {
          o.require(!r, "route found for an unreachable pair");
        } else {
          o.require(r && r->total_delay_ms == want, "optimal_route differs from enumeration");
        }
      }
    }
  }
  int snaps = 0, snap_queries = 0;
  std::vector<const scenario::Snapshot*> all;
  for (const auto* set : {&desk.train, &desk.test}) {
    for (const auto& s : *set) all.push_back(&s);
  }
  for (const auto* snap : all) {
    if (snaps == 100) break;
    ++snaps;
    const auto q = exp::congested_queues(*snap, desk.spec, desk.seed, c.congested_fraction, c.link.train_queue_ms,
                                         c.congested_queue_ms);
    auto s = *snap;
    s.queue_delay_ms = q;
    const auto g = net::build_graph(s, c.link);
    const net::AllPairs ap(g);
    for (int src = 0; src < g.n_nodes(); ++src) {
      const auto ss = net::dijkstra(g, src);
      for (int d = 0; d < g.n_nodes(); ++d) {
        if (d == src) continue;
        ++snap_queries;
        const auto a = net::optimal_route(ap, g, src, d);
        const auto b = ss.path_to(src, d);
        o.require(a.has_value() == b.has_value(), "reachability differs");
        if (a && b) o.require(a->total_delay_ms == net::route_delay(g, *b), "all-pairs vs single-source delay");
      }
    }
  }
  const double secs = sw.seconds();
  o.require(snaps == 100, "fewer than 100 snapshots");
  o.require(secs < 60.0, "runtime");
  o.detail << "200 random graphs (" << queries << " pairs) exact vs enumeration; " << snaps << " desk snapshots ("
           << snap_queries << " pairs) all-pairs == single-source; " << secs << " s";
  return o;
}

double min_hidden_preactivation(const nn::NetParams& p, const nn::Matrix& x) {
  double lo = std::numeric_limits<double>::infinity();
  nn::Matrix a = x;
  for (std::size_t l = 0; l + 1 < p.weights.size(); ++l) {
    nn::Matrix z = p.weights[l] * a;
    z.colwise() += p.biases[l];
    lo = std::min(lo, z.cwiseAbs().minCoeff());
    a = z.cwiseMax(0.0);
  }
  return lo;
}

Outcome gradients() {
  Outcome o;
  Stopwatch sw;
  const double h = 1e-6;
  double worst = 0.0;
  int redraws = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const int out : {10, 1}) {
      auto p = nn::init_params(nn::NetSpec{36, {8, 8}, out}, seed);
      std::mt19937_64 rng(seed * 7919);
      std::normal_distribution<double> n(0.0, 1.0), y(0.0, 2.0);
      std::uniform_int_distribution<int> act(0, out - 1);
      nn::Batch b{nn::Matrix(36, 5), {}, {}};
      // Central differences are meaningless across a ReLU kink, so inputs
      // with a hidden pre-activation within 1e-4 of zero are redrawn.
      for (;;) {
        for (int j = 0; j < 5; ++j) {
          for (int r = 0; r < 36; ++r) b.x(r, j) = n(rng);
        }
        if (min_hidden_preactivation(p, b.x) > 1e-4) break;
        ++redraws;
      }
      for (int j = 0; j < 5; ++j) {
        if (out > 1) b.action.push_back(act(rng));
        b.y.push_back(y(rng));
      }
      // Loss recomputed here from the forward pass alone.
      auto loss = [&](const nn::NetParams& q) {
        const nn::Matrix f = nn::forward(q, b.x);
        double s = 0.0;
        for (int j = 0; j < 5; ++j) {
          const double e = f(b.action.empty() ? 0 : b.action[static_cast<std::size_t>(j)], j) - b.y[static_cast<std::size_t>(j)];
          s += e * e;
        }
        return s / 5.0;
      };
      const auto analytic = nn::flatten(nn::gradient(p, b));
      auto flat = nn::flatten(p);
      for (std::size_t k = 0; k < flat.size(); ++k) {
        const double keep = flat[k];
        flat[k] = keep + h;
        nn::unflatten(p, flat);
        const double up = loss(p);
        flat[k] = keep - h;
        nn::unflatten(p, flat);
        const double down = loss(p);
        flat[k] = keep;
        const double fd = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - analytic[k]) / std::max({1.0, std::abs(fd), std::abs(analytic[k])}));
      }
      nn::unflatten(p, flat);
    }
  }
  const double secs = sw.seconds();
  o.require(worst < 1e-5, "finite-difference mismatch");
  o.require(secs < 30.0, "runtime");
  o.detail << "20 seeds x {36-[8,8]-10, 36-[8,8]-1}, 5 samples each, max rel err " << worst << " (" << redraws
           << " batches redrawn off a ReLU kink), " << secs << " s";
  return o;
}

Outcome rl_contracts(const scenario::Dataset& desk, const exp::ExperimentConfig& c,
                     const std::vector<exp::TrainRun>& runs, const exp::EvalResult& eval) {
  Outcome o;
  const int k = c.train.k;
  o.require(rl::state_dim(k) == 3 * (k + 2), "state_dim");

  // Next-state identity on transitions recorded during a fresh training run.
  auto cfg = c.train;
  cfg.episodes = 400;
  cfg.bellman_every = 0;
  const auto norm = rl::Normalizer::from(desk.spec);
  const int dest = desk.spec.ground_id();
  int checked = 0, bad_len = 0;
  std::map<int, net::TopologyGraph> graphs;
  rl::TransitionObserver obs = [&](const rl::Transition& t) {
    if (checked >= 1000) return;
    ++checked;
    auto snap = *desk.find(t.snapshot_id);
    std::fill(snap.queue_delay_ms.begin(), snap.queue_delay_ms.end(), c.link.train_queue_ms);
    auto it = graphs.find(t.snapshot_id);
    if (it == graphs.end()) it = graphs.emplace(t.snapshot_id, net::build_graph(snap, c.link)).first;
    const auto& g = it->second;
    if (static_cast<int>(t.s->features.size()) != rl::state_dim(k)) ++bad_len;
    o.require(*t.s == rl::observe(g, snap, t.from, dest, k, norm), "recorded state differs from observation");
    if (t.to == dest) {
      o.require(t.s_next == nullptr, "terminal transition carries a next state");
    } else {
      o.require(t.s_next && *t.s_next == rl::observe(g, snap, t.to, dest, k, norm), "next-state identity");
    }
  };
  rl::run_training(desk, Algo::kDvn, cfg, c.link, 99, &obs);
  o.require(checked == 1000, "fewer than 1000 transitions");
  o.require(bad_len == 0, "state length");

  // Loop freedom of every evaluated route. GPSR perimeter walks may revisit
  // nodes by design and are counted separately.
  std::size_t routes = 0, loops = 0, gpsr_revisits = 0;
  for (const auto& e : eval.samples) {
    std::set<int> seen(e.route.begin(), e.route.end());
    const bool revisits = seen.size() != e.route.size();
    if (e.policy == Policy::kGpsr) {
      gpsr_revisits += revisits;
      continue;
    }
    ++routes;
    loops += revisits;
  }
  o.require(loops == 0, "evaluated route with a loop");

  // gamma = 1 return equals the E2E delay on delivered training episodes.
  std::size_t delivered = 0, mismatched = 0;
  for (const auto& r : runs) {
    for (const auto& rec : r.result.curve) {
      if (!rec.delivered) continue;
      ++delivered;
      mismatched += rec.reward_sum != rec.e2e_delay_ms;
    }
  }
  o.require(delivered > 0 && mismatched == 0, "return != E2E delay");
  o.detail << "state length " << rl::state_dim(k) << "; " << checked << " transitions bit-exact; " << routes
           << " learned/optimal routes loop-free (" << gpsr_revisits << " GPSR walks revisit, allowed); " << delivered
           << " delivered episodes with return == delay";
  return o;
}

double final_smoothed(const exp::TrainRun& r) {
  for (auto it = r.smoothed.rbegin(); it != r.smoothed.rend(); ++it) {
    if (std::isfinite(*it)) return *it;
  }
  return std::nan("");
}

Outcome fig3(const std::vector<exp::TrainRun>& runs, const std::vector<exp::ReferenceRow>& ref) {
  Outcome o;
  std::vector<double> dqn, dvn;
  for (const auto& r : runs) (r.algo == Algo::kDqn ? dqn : dvn).push_back(final_smoothed(r));
  double gpsr = std::nan(""), optimal = std::nan("");
  for (const auto& row : ref) (row.policy == Policy::kGpsr ? gpsr : optimal) = row.mean_delay_ms;
  const double m_dqn = exp::mean(dqn), m_dvn = exp::mean(dvn);
  const double sd_dqn = sample_sd(dqn), sd_dvn = sample_sd(dvn);
  o.require(dqn.size() == 5 && dvn.size() == 5, "expected 5 seeds per algorithm");
  o.require(m_dqn <= gpsr + sd_dqn, "DQN above GPSR by more than one sd");
  o.require(m_dvn <= gpsr + sd_dvn, "DVN above GPSR by more than one sd");
  o.require(m_dvn <= m_dqn + sd_dvn, "DVN above DQN by more than one sd");
  o.detail << "final smoothed delay over " << dqn.size() << " seeds: DQN " << m_dqn << " +- " << sd_dqn << " ms, DVN "
           << m_dvn << " +- " << sd_dvn << " ms; GPSR " << gpsr << " ms, optimal " << optimal << " ms (test set)";
  return o;
}

Outcome fig4(const exp::EvalResult& eval) {
  Outcome o;
  std::map<Policy, exp::SummaryRow> row;
  for (const auto& r : eval.summary) {
    if (r.condition == "congested" && r.mode == "queue") row[r.policy] = r;
  }
  const auto& opt = row[Policy::kOptimal];
  const auto& gpsr = row[Policy::kGpsr];
  const auto& dqn = row[Policy::kDqn];
  const auto& dvn = row[Policy::kDvn];
  o.require(opt.n >= 1000, "fewer than 1000 paired episodes");
  o.require(opt.median_ms <= dvn.median_ms, "optimal median above DVN");
  o.require(dvn.median_ms < dqn.median_ms, "DVN median not below DQN");
  o.require(dvn.median_ms <= 1.15 * opt.median_ms, "DVN median more than 15% above optimal");
  o.require(dqn.delivery_ratio >= gpsr.delivery_ratio, "DQN delivery below GPSR");
  o.require(dvn.delivery_ratio >= gpsr.delivery_ratio, "DVN delivery below GPSR");
  o.detail << opt.n << " paired episodes (x" << dvn.n / std::max(opt.n, 1) << " seeds for learned); median ms: optimal "
           << opt.median_ms << ", DVN " << dvn.median_ms << " (" << 100.0 * (dvn.median_ms / opt.median_ms - 1.0)
           << "% over optimal), DQN " << dqn.median_ms << ", GPSR " << gpsr.median_ms
           << "; delivery: GPSR " << 100.0 * gpsr.delivery_ratio << "%, DQN " << 100.0 * dqn.delivery_ratio
           << "%, DVN " << 100.0 * dvn.delivery_ratio << "%";
  return o;
}

// Two relays between a source and the ground station: C on the direct
// corridor with a 50 ms queue, D slightly off it with the nominal 5 ms.
//
//   node  lon    lat    alt
//   0 S   -10    45.8   10
//   1 C   -10    48.9   10   congested
//   2 D   -7.5   48.9   10
//   3 G   -10    52     0.05
rl::Scene congested_fixture(const exp::ExperimentConfig& c) {
  scenario::Snapshot s;
  s.id = 0;
  s.positions = {{-10.0, 45.8, 10.0}, {-10.0, 48.9, 10.0}, {-7.5, 48.9, 10.0}, c.spec.ground_station};
  s.queue_delay_ms = {5.0, 50.0, 5.0, 5.0};
  return rl::Scene(s, c.link, c.train.k, rl::Normalizer::from(c.spec), 3);
}

struct BehindZone {
  int snapshot_id = -1;
  int src = -1;
};

// First test snapshot/source whose straight line to the ground station
// crosses a no-fly zone and where GPSR needs more hops than optimal.
std::optional<BehindZone> find_behind_zone(const scenario::Dataset& d, const exp::ExperimentConfig& c) {
  const auto norm = rl::Normalizer::from(d.spec);
  const auto& gs = d.spec.ground_station;
  for (const auto& snap : d.test) {
    const auto q = exp::congested_queues(snap, d.spec, d.seed, c.congested_fraction, c.link.train_queue_ms,
                                         c.congested_queue_ms);
    const auto scene = exp::warm_scene(snap, c, norm, q);
    for (int src : scene.sources()) {
      const auto& p = snap.positions[static_cast<std::size_t>(src)];
      const auto line = geo::make_path(p, gs);
      bool crosses = false;
      for (const auto& z : d.spec.no_fly_zones) crosses = crosses || geo::distance_to_arc(line, z.center) < z.radius_km;
      if (!crosses) continue;
      const auto gp = rl::run_episode(scene, Policy::kGpsr, src, c.train.t_max);
      const auto op = rl::run_episode(scene, Policy::kOptimal, src, c.train.t_max);
      if (gp.delivered() && op.delivered() && gp.hops > op.hops) return BehindZone{snap.id, src};
    }
  }
  return std::nullopt;
}

Outcome fig5(const scenario::Dataset& d, const exp::ExperimentConfig& c, const fs::path& desk_dir,
             const std::map<std::pair<Algo, std::uint64_t>, nn::NetParams>& agents) {
  Outcome o;
  const auto f = fixture::void_fixture();
  const auto gw = gpsr::gpsr_route(f.graph, f.snap, f.src, f.dest, 64);
  const auto ow = net::optimal_route(f.graph, f.src, f.dest);
  o.require(gw && ow && gw->hops() > ow->hops(), "void fixture: GPSR hops not above optimal");
  o.detail << "void fixture GPSR " << (gw ? gw->hops() : -1) << " hops vs optimal " << (ow ? ow->hops() : -1) << "; ";

  const auto bz = find_behind_zone(d, c);
  o.require(bz.has_value(), "no test source behind a no-fly zone with GPSR hops > optimal hops");
  if (bz) {
    std::ostringstream log;
    const auto traces = exp::cmd_trace(c, desk_dir, bz->snapshot_id, bz->src, log);
    int g = -1, opt = -1;
    for (const auto& t : traces) {
      if (t.policy == Policy::kGpsr) g = static_cast<int>(t.hops.size()) - 1;
      if (t.policy == Policy::kOptimal) opt = static_cast<int>(t.hops.size()) - 1;
    }
    o.require(g > opt, "traced GPSR hops not above optimal");
    o.detail << "snapshot " << bz->snapshot_id << " src " << bz->src << " behind a no-fly zone: GPSR " << g
             << " hops vs optimal " << opt << "; ";
  }

  const auto scene = congested_fixture(c);
  std::set<int> congested;
  for (int i = 0; i < scene.snapshot().n_nodes(); ++i) {
    if (scene.snapshot().queue_delay_ms[static_cast<std::size_t>(i)] != c.link.train_queue_ms) congested.insert(i);
  }
  int dqn_hits = 0, seeds = 0;
  for (auto seed : c.seeds) {
    ++seeds;
    const rl::Agents ag{&agents.at({Algo::kDqn, seed}), &agents.at({Algo::kDvn, seed})};
    const auto rq = rl::run_episode(scene, Policy::kDqn, 0, c.train.t_max, ag);
    const auto rv = rl::run_episode(scene, Policy::kDvn, 0, c.train.t_max, ag);
    o.require(rv.delivered(), "DVN not delivered on the congested fixture");
    bool hit = false;
    for (int v : rq.route) {
      if (!congested.count(v)) continue;
      hit = true;
      o.require(std::find(rv.route.begin(), rv.route.end(), v) == rv.route.end(),
                "DVN traverses a congested node used by DQN (seed " + std::to_string(seed) + ")");
    }
    dqn_hits += hit;
  }
  o.require(dqn_hits > 0, "no seed's DQN route crosses the congested relay, fixture shows nothing");
  o.detail << "congested fixture: DQN crosses the congested relay for " << dqn_hits << "/" << seeds
           << " seeds, DVN avoids it in every such case";
  return o;
}

int run_cli(const std::vector<std::string>& args, const fs::path& log) {
  std::string cmd = std::string("'") + AANET_EXP_BIN + "'";
  for (const auto& a : args) cmd += " '" + a + "'";
  cmd += " > '" + log.string() + "' 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

Outcome determinism(const fs::path& desk_dir, const fs::path& rerun_dir, int threads) {
  Outcome o;
  fs::remove_all(rerun_dir);
  fs::create_directories(rerun_dir);
  std::size_t compared = 0;
  for (const std::string cmd : {"generate", "train", "evaluate", "trace"}) {
    const auto manifest = desk_dir / exp::manifest_file(cmd);
    if (!fs::exists(manifest)) {
      o.require(false, "missing " + manifest.filename().string());
      continue;
    }
    const int code = run_cli({cmd, "--manifest", manifest.string(), "--out", rerun_dir.string(), "--threads",
                              std::to_string(threads)},
                             rerun_dir / ("log_" + cmd + ".txt"));
    o.require(code == 0, cmd + " rerun exited with " + std::to_string(code));
    const auto m = exp::read_manifest(manifest.string());
    auto files = m.outputs;
    files.push_back(exp::manifest_file(cmd));
    for (const auto& f : files) {
      ++compared;
      o.require(fs::exists(rerun_dir / f) && read_file(desk_dir / f) == read_file(rerun_dir / f),
                cmd + ": " + f + " differs");
    }
  }
  o.detail << compared << " files from generate/train/evaluate/trace manifests re-run byte-identical";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path out = "acceptance_run";
  int threads = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out" && i + 1 < argc) {
      out = argv[++i];
    } else if (a == "--threads" && i + 1 < argc) {
      threads = std::stoi(argv[++i]);
    } else {
      std::cerr << "usage: acceptance --out DIR [--threads N]\n";
      return 1;
    }
  }
  try {
    const fs::path desk_dir = out / "desk";
    fs::remove_all(desk_dir);
    fs::create_directories(desk_dir);
    std::ofstream log(out / "pipeline_log.txt");

    auto c = exp::profile("desk");
    c.threads = threads;

    report("[1] geometry oracles", geometry());

    Stopwatch sw;
    exp::cmd_generate(c, desk_dir, log);
    const auto desk = scenario::load_dataset((desk_dir / exp::kDatasetFile).string());
    report("[2] shortest-path equivalence", shortest_paths(desk, c));
    report("[3] gradient correctness", gradients());

    const auto runs = exp::cmd_train(c, desk_dir, log);
    const double train_s = sw.seconds();
    const auto eval = exp::cmd_evaluate(c, desk_dir, log);
    const auto agents = exp::load_agents(c, desk_dir);
    std::cout << "desk pipeline: generate+train " << train_s << " s, total " << sw.seconds() << " s" << std::endl;

    report("[4] RL contracts", rl_contracts(desk, c, runs, eval));
    report("[5] scaled Fig. 3 ordering", fig3(runs, exp::reference_delays(desk, c)));
    report("[6] scaled Fig. 4 congested medians and delivery", fig4(eval));
    report("[7] scaled Fig. 5 routes", fig5(desk, c, desk_dir, agents));
    report("[8] manifest determinism", determinism(desk_dir, out / "rerun", threads));
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 2;
  }
  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criterion(s) failed" : "acceptance: all passed")
            << std::endl;
  return failures ? 1 : 0;
}
