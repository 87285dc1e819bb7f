// Routing as an episodic RL problem: the agent travels with the packet and
// every node shares its parameters.
//
// Two learners are provided. DQN-routing learns Q(s, a) for the K ranked
// candidates and decides from the forwarding node's own observation.
// DVN-routing learns the intermediate-state value V(s) and, because the next
// state is simply the chosen candidate's own observation, decides by asking
// each candidate for r(i, i^a) + V(s(i^a)) (the feedback exchange).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "aanet/gpsr.hpp"
#include "aanet/netmodel.hpp"
#include "aanet/nnet.hpp"
#include "aanet/scenario.hpp"
#include "aanet/util.hpp"

namespace aanet::rl {

using net::LinkParams;
using net::TopologyGraph;
using nn::NetParams;
using scenario::Snapshot;

/// Affine map of airspace coordinates onto [-1, 1].
struct Normalizer {
  scenario::Range lon{-40.0, -5.0};
  scenario::Range lat{25.0, 55.0};
  scenario::Range alt{0.0, 13.0};

  static Normalizer from(const scenario::AirspaceSpec& s) { return {s.lon, s.lat, s.alt}; }

  static double map(double v, const scenario::Range& r) { return 2.0 * (v - r.min) / r.span() - 1.0; }
  void write(const geo::GeoPosition& p, double* out) const {
    out[0] = map(p.lon, lon);
    out[1] = map(p.lat, lat);
    out[2] = map(p.alt, alt);
  }
};

/// s(i): [x(i), x(i^1), ..., x(i^K), x(dest)], normalized. Empty candidate
/// slots repeat x(i) and are masked out.
struct ObservationState {
  int node = -1;
  int dest = -1;
  std::vector<double> features;
  std::vector<std::uint8_t> mask;
  std::vector<int> candidate;  // -1 in padded slots

  int k() const { return static_cast<int>(mask.size()); }
  int n_valid() const { return static_cast<int>(std::count(mask.begin(), mask.end(), 1)); }
  friend bool operator==(const ObservationState&, const ObservationState&) = default;
};

using StateRef = std::shared_ptr<const ObservationState>;

inline constexpr int state_dim(int k) { return 3 * (k + 2); }

inline ObservationState observe(const TopologyGraph& g, const Snapshot& s, int i, int dest, int k,
                                const Normalizer& norm) {
  ObservationState st;
  st.node = i;
  st.dest = dest;
  st.features.assign(static_cast<std::size_t>(state_dim(k)), 0.0);
  st.mask.assign(static_cast<std::size_t>(k), 0);
  st.candidate.assign(static_cast<std::size_t>(k), -1);
  const auto cands = net::candidates(g, s, i, dest, k);
  const auto& self = s.positions[static_cast<std::size_t>(i)];
  norm.write(self, st.features.data());
  for (int a = 0; a < k; ++a) {
    const auto slot = static_cast<std::size_t>(a);
    double* out = st.features.data() + 3 * (slot + 1);
    if (slot < cands.size()) {
      st.mask[slot] = 1;
      st.candidate[slot] = cands[slot];
      norm.write(s.positions[static_cast<std::size_t>(cands[slot])], out);
    } else {
      norm.write(self, out);
    }
  }
  norm.write(s.positions[static_cast<std::size_t>(dest)], st.features.data() + 3 * (k + 1));
  return st;
}

enum class RewardConvention {
  kForwarderQueue,  // D_que(i) + D_link(i, j): the per-hop E2E delay
  kNexthopQueue,    // D_link(i, j) + D_que(j): what candidate j reports back
};

inline double reward_hop(const TopologyGraph& g, int i, int j, RewardConvention c) {
  if (!g.has_edge(i, j)) {
    throw std::logic_error("reward_hop: no link " + std::to_string(i) + " -> " + std::to_string(j));
  }
  const double link = g.link(i, j);
  return c == RewardConvention::kForwarderQueue ? g.queue(i) + link : link + g.queue(j);
}

struct EpsilonSchedule {
  int full_explore_episodes = 100;
  int decay_episodes = 400;
  double floor = 0.1;
};

/// 1 through `full_explore_episodes`, then linear down to `floor` over
/// `decay_episodes`. Episodes are counted from 1.
inline double epsilon(const EpsilonSchedule& s, int episode) {
  if (episode <= s.full_explore_episodes) return 1.0;
  if (s.decay_episodes <= 0) return s.floor;
  const double frac = static_cast<double>(episode - s.full_explore_episodes) / s.decay_episodes;
  if (frac >= 1.0) return s.floor;
  return 1.0 - (1.0 - s.floor) * frac;
}

/// Bounded ring buffer with uniform sampling (no repeats inside a batch).
template <typename T>
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayMemory: capacity must be positive");
  }

  void push(T item) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      items_[next_] = std::move(item);
    }
    next_ = (next_ + 1) % capacity_;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const T& operator[](std::size_t i) const { return items_[i]; }

  std::vector<const T*> sample(std::size_t n, Rng& rng) const {
    if (n > items_.size()) throw std::invalid_argument("ReplayMemory: sample larger than population");
    std::vector<std::size_t> picked;
    picked.reserve(n);
    while (picked.size() < n) {
      const std::size_t idx = uniform_index(rng, items_.size());
      if (std::find(picked.begin(), picked.end(), idx) == picked.end()) picked.push_back(idx);
    }
    std::vector<const T*> out;
    out.reserve(n);
    for (auto idx : picked) out.push_back(&items_[idx]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<T> items_;
};

/// e_t = [s_t, a_t, r_{t+1}, s_{t+1}]. `dead_end` marks a transition into a
/// node with no loop-free candidate (the episode failed there).
struct DqnExperience {
  StateRef s;
  int action = 0;
  double reward = 0.0;
  StateRef s_next;  // null when terminal
  bool terminal = false;
  bool dead_end = false;
};

/// [s_t, s(i^1), ..., s(i^K), r(i, i^1), ..., r(i, i^K)]; candidates equal to
/// the destination are terminal and carry no state.
struct DvnExperience {
  StateRef s;
  std::vector<StateRef> cand_states;
  std::vector<double> cand_rewards;
  std::vector<std::uint8_t> mask;
  std::vector<std::uint8_t> terminal;
};

namespace detail {

inline nn::Matrix stack(const std::vector<const ObservationState*>& states, int dim) {
  nn::Matrix x(dim, static_cast<Eigen::Index>(states.size()));
  for (std::size_t j = 0; j < states.size(); ++j) {
    x.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const nn::Vector>(states[j]->features.data(), dim);
  }
  return x;
}

inline nn::Vector features(const ObservationState& s) {
  return Eigen::Map<const nn::Vector>(s.features.data(), static_cast<Eigen::Index>(s.features.size()));
}

// Lowest-value index among allowed entries (ties to the lower index).
template <typename Values, typename Allowed>
std::optional<int> masked_argmin(const Values& values, int n, Allowed allowed) {
  std::optional<int> best;
  for (int a = 0; a < n; ++a) {
    if (!allowed(a)) continue;
    if (!best || values(a) < values(*best)) best = a;
  }
  return best;
}

}  // namespace detail

/// Double-DQN targets with gamma: main net picks a* over s_next's valid
/// actions, the target net values it. Terminal samples use r alone; dead ends
/// use r + fail_penalty.
inline std::vector<double> dqn_target(const std::vector<const DqnExperience*>& batch, const NetParams& main,
                                      const NetParams& target, double fail_penalty_ms, double gamma = 1.0) {
  std::vector<double> y(batch.size());
  std::vector<const ObservationState*> next;
  std::vector<std::size_t> where;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto& e = *batch[j];
    if (e.dead_end) {
      y[j] = e.reward + fail_penalty_ms;
    } else if (e.terminal) {
      y[j] = e.reward;
    } else {
      if (!e.s_next || e.s_next->n_valid() == 0) {
        throw std::logic_error("dqn_target: non-terminal sample without a valid next action");
      }
      next.push_back(e.s_next.get());
      where.push_back(j);
    }
  }
  if (next.empty()) return y;
  const auto x = detail::stack(next, main.spec.input_dim);
  const nn::Matrix q_main = nn::forward(main, x);
  const nn::Matrix q_target = nn::forward(target, x);
  for (std::size_t m = 0; m < next.size(); ++m) {
    const auto col = static_cast<Eigen::Index>(m);
    const auto* s = next[m];
    const auto a = detail::masked_argmin([&](int a) { return q_main(a, col); }, s->k(),
                                         [&](int a) { return s->mask[static_cast<std::size_t>(a)] != 0; });
    const auto& e = *batch[where[m]];
    y[where[m]] = e.reward + gamma * q_target(*a, col);
  }
  return y;
}

/// DVN targets: a* = argmin_a r_a + V(s_a; main) over valid candidates
/// (destination candidates count V = 0); y = r_{a*} + V'(s_{a*}) unless a* is
/// the destination.
inline std::vector<double> dvn_target(const std::vector<const DvnExperience*>& batch, const NetParams& main,
                                      const NetParams& target, double fail_penalty_ms = 0.0) {
  std::vector<const ObservationState*> cand;
  std::vector<std::pair<std::size_t, int>> slot;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto& e = *batch[j];
    for (std::size_t a = 0; a < e.mask.size(); ++a) {
      if (e.mask[a] && !e.terminal[a]) {
        cand.push_back(e.cand_states[a].get());
        slot.emplace_back(j, static_cast<int>(a));
      }
    }
  }
  nn::Matrix v_main;
  if (!cand.empty()) v_main = nn::forward(main, detail::stack(cand, main.spec.input_dim));

  std::vector<double> y(batch.size());
  std::vector<const ObservationState*> chosen;
  std::vector<std::size_t> chosen_of;
  std::size_t cursor = 0;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto& e = *batch[j];
    const int k = static_cast<int>(e.mask.size());
    std::vector<double> score(static_cast<std::size_t>(k), 0.0);
    for (int a = 0; a < k; ++a) {
      const auto sa = static_cast<std::size_t>(a);
      if (!e.mask[sa]) continue;
      double v = 0.0;
      if (!e.terminal[sa]) v = v_main(0, static_cast<Eigen::Index>(cursor++));
      score[sa] = e.cand_rewards[sa] + v;
    }
    const auto a = detail::masked_argmin([&](int a) { return score[static_cast<std::size_t>(a)]; }, k,
                                         [&](int a) { return e.mask[static_cast<std::size_t>(a)] != 0; });
    if (!a) {
      y[j] = fail_penalty_ms;
      continue;
    }
    const auto sa = static_cast<std::size_t>(*a);
    y[j] = e.cand_rewards[sa];
    if (!e.terminal[sa]) {
      chosen.push_back(e.cand_states[sa].get());
      chosen_of.push_back(j);
    }
  }
  if (!chosen.empty()) {
    const nn::Matrix v_t = nn::forward(target, detail::stack(chosen, target.spec.input_dim));
    for (std::size_t m = 0; m < chosen.size(); ++m) y[chosen_of[m]] += v_t(0, static_cast<Eigen::Index>(m));
  }
  return y;
}

/// Per-node visited flags for the loop-avoiding action set A_t.
using Visited = std::vector<std::uint8_t>;

inline bool allowed(const ObservationState& s, const Visited& visited, int a) {
  const auto sa = static_cast<std::size_t>(a);
  return s.mask[sa] && !visited[static_cast<std::size_t>(s.candidate[sa])];
}

inline std::vector<int> allowed_actions(const ObservationState& s, const Visited& visited) {
  std::vector<int> out;
  for (int a = 0; a < s.k(); ++a) {
    if (allowed(s, visited, a)) out.push_back(a);
  }
  return out;
}

/// argmin over A_t of Q(s, a); nullopt means stuck.
inline std::optional<int> dqn_decide(const NetParams& params, const ObservationState& s, const Visited& visited) {
  const nn::Vector q = nn::forward(params, detail::features(s));
  return detail::masked_argmin([&](int a) { return q(a); }, s.k(), [&](int a) { return allowed(s, visited, a); });
}

/// Everything derived from one snapshot for a fixed destination: the graph and
/// lazily built observation states, all-pairs oracle, planar graph and the
/// set of airplanes that can reach the destination. Not thread safe.
class Scene {
 public:
  Scene(Snapshot snapshot, const LinkParams& link, int k, const Normalizer& norm, int dest)
      : snap_(std::move(snapshot)), graph_(net::build_graph(snap_, link)), k_(k), norm_(norm), dest_(dest) {
    states_.resize(static_cast<std::size_t>(snap_.n_nodes()));
  }

  const Snapshot& snapshot() const { return snap_; }
  const TopologyGraph& graph() const { return graph_; }
  int dest() const { return dest_; }
  int k() const { return k_; }
  const Normalizer& normalizer() const { return norm_; }

  StateRef state(int i) const {
    auto& slot = states_[static_cast<std::size_t>(i)];
    if (!slot) slot = std::make_shared<const ObservationState>(observe(graph_, snap_, i, dest_, k_, norm_));
    return slot;
  }

  const net::AllPairs& all_pairs() const {
    if (!all_pairs_) all_pairs_ = std::make_unique<net::AllPairs>(graph_);
    return *all_pairs_;
  }

  const TopologyGraph& planar() const {
    if (!planar_) planar_ = std::make_unique<TopologyGraph>(gpsr::planarize(graph_, snap_));
    return *planar_;
  }

  /// Airplanes (every node but the destination) with a path to it.
  const std::vector<int>& sources() const {
    if (!sources_) {
      const auto r = net::reaches(graph_, dest_);
      sources_.emplace();
      for (int i = 0; i < snap_.n_nodes(); ++i) {
        if (i != dest_ && r[static_cast<std::size_t>(i)]) sources_->push_back(i);
      }
    }
    return *sources_;
  }

 private:
  Snapshot snap_;
  TopologyGraph graph_;
  int k_;
  Normalizer norm_;
  int dest_;
  mutable std::vector<StateRef> states_;
  mutable std::unique_ptr<net::AllPairs> all_pairs_;
  mutable std::unique_ptr<TopologyGraph> planar_;
  mutable std::optional<std::vector<int>> sources_;
};

struct DvnChoice {
  std::optional<int> action;
  int feedback_messages = 0;
};

/// Feedback decision at node `i`: every allowed candidate reports
/// r(i, i^a) + V(s(i^a)) using its real-time queue; the minimum wins. The
/// destination reports its reward alone.
inline DvnChoice dvn_decide(const NetParams& params, const Scene& scene, int i, const Visited& visited) {
  const auto s = scene.state(i);
  DvnChoice out;
  std::vector<double> score(static_cast<std::size_t>(s->k()), 0.0);
  std::vector<const ObservationState*> cand;
  std::vector<int> cand_slot;
  for (int a = 0; a < s->k(); ++a) {
    if (!allowed(*s, visited, a)) continue;
    ++out.feedback_messages;
    const int j = s->candidate[static_cast<std::size_t>(a)];
    score[static_cast<std::size_t>(a)] = reward_hop(scene.graph(), i, j, RewardConvention::kNexthopQueue);
    if (j != scene.dest()) {
      cand.push_back(scene.state(j).get());
      cand_slot.push_back(a);
    }
  }
  if (!cand.empty()) {
    const nn::Matrix v = nn::forward(params, detail::stack(cand, params.spec.input_dim));
    for (std::size_t m = 0; m < cand.size(); ++m) {
      score[static_cast<std::size_t>(cand_slot[m])] += v(0, static_cast<Eigen::Index>(m));
    }
  }
  out.action = detail::masked_argmin([&](int a) { return score[static_cast<std::size_t>(a)]; }, s->k(),
                                     [&](int a) { return allowed(*s, visited, a); });
  return out;
}

enum class Policy { kOptimal, kGpsr, kDqn, kDvn };

inline const char* to_string(Policy p) {
  switch (p) {
    case Policy::kOptimal: return "optimal";
    case Policy::kGpsr: return "gpsr";
    case Policy::kDqn: return "dqn";
    case Policy::kDvn: return "dvn";
  }
  return "?";
}

inline std::optional<Policy> parse_policy(const std::string& s) {
  for (auto p : {Policy::kOptimal, Policy::kGpsr, Policy::kDqn, Policy::kDvn}) {
    if (s == to_string(p)) return p;
  }
  return std::nullopt;
}

enum class Outcome { kDelivered, kHopLimit, kStuck, kUnreachable };

struct EpisodeResult {
  std::vector<int> route;
  Outcome outcome = Outcome::kStuck;
  double e2e_delay_ms = 0.0;  // sum of queue(forwarder) + link; meaningful when delivered
  int hops = 0;
  std::vector<double> hop_rewards;  // in the policy's own reward convention
  int feedback_messages = 0;

  bool delivered() const { return outcome == Outcome::kDelivered; }
};

/// Frozen parameters for the learned policies.
struct Agents {
  const NetParams* dqn = nullptr;
  const NetParams* dvn = nullptr;
};

/// Rolls one packet from `src` to the scene's destination under `policy` and
/// scores every hop as queue(forwarder) + link.
inline EpisodeResult run_episode(const Scene& scene, Policy policy, int src, int t_max, const Agents& agents = {}) {
  const int dest = scene.dest();
  if (src == dest) throw std::invalid_argument("run_episode: src == dest");
  const auto& g = scene.graph();
  EpisodeResult res;

  auto score = [&](const std::vector<int>& nodes) {
    res.route = nodes;
    res.hops = static_cast<int>(nodes.size()) - 1;
    res.e2e_delay_ms = 0.0;
    res.hop_rewards.clear();
    for (std::size_t t = 0; t + 1 < nodes.size(); ++t) {
      const double r = reward_hop(g, nodes[t], nodes[t + 1], RewardConvention::kForwarderQueue);
      res.hop_rewards.push_back(r);
      res.e2e_delay_ms += r;
    }
  };

  if (policy == Policy::kOptimal) {
    const auto r = net::optimal_route(scene.all_pairs(), g, src, dest);
    if (!r) {
      res.route = {src};
      res.outcome = Outcome::kUnreachable;
      return res;
    }
    score(r->nodes);
    res.outcome = res.hops <= t_max ? Outcome::kDelivered : Outcome::kHopLimit;
    return res;
  }
  if (policy == Policy::kGpsr) {
    const auto w = gpsr::gpsr_walk(g, scene.planar(), scene.snapshot(), src, dest, t_max);
    score(w.nodes);
    if (w.delivered) {
      res.outcome = Outcome::kDelivered;
    } else {
      res.outcome = res.hops >= t_max ? Outcome::kHopLimit : Outcome::kStuck;
    }
    return res;
  }

  const NetParams* net_params = policy == Policy::kDqn ? agents.dqn : agents.dvn;
  if (!net_params) throw std::invalid_argument(std::string("run_episode: no parameters for ") + to_string(policy));
  Visited visited(static_cast<std::size_t>(g.n_nodes()), 0);
  std::vector<int> nodes{src};
  visited[static_cast<std::size_t>(src)] = 1;
  int cur = src;
  std::vector<double> own_rewards;
  for (int hop = 0; hop < t_max; ++hop) {
    std::optional<int> a;
    const auto s = scene.state(cur);
    if (policy == Policy::kDqn) {
      a = dqn_decide(*net_params, *s, visited);
    } else {
      const auto c = dvn_decide(*net_params, scene, cur, visited);
      a = c.action;
      res.feedback_messages += c.feedback_messages;
    }
    if (!a) {
      score(nodes);
      res.hop_rewards = own_rewards;
      res.outcome = Outcome::kStuck;
      return res;
    }
    const int next = s->candidate[static_cast<std::size_t>(*a)];
    own_rewards.push_back(reward_hop(g, cur, next,
                                     policy == Policy::kDqn ? RewardConvention::kForwarderQueue
                                                            : RewardConvention::kNexthopQueue));
    nodes.push_back(next);
    visited[static_cast<std::size_t>(next)] = 1;
    cur = next;
    if (cur == dest) {
      score(nodes);
      res.hop_rewards = own_rewards;
      res.outcome = Outcome::kDelivered;
      return res;
    }
  }
  score(nodes);
  res.hop_rewards = own_rewards;
  res.outcome = Outcome::kHopLimit;
  return res;
}

// ---------------------------------------------------------------------------
// Offline training
// ---------------------------------------------------------------------------

enum class Algo { kDqn, kDvn };

inline const char* to_string(Algo a) { return a == Algo::kDqn ? "dqn" : "dvn"; }

struct TrainingConfig {
  int k = 10;
  int t_max = 50;
  double gamma = 1.0;
  double learning_rate = 1e-4;
  double tau = 1e-3;
  int batch_size = 32;
  std::size_t replay_capacity = 100'000;
  EpsilonSchedule epsilon;
  double fail_penalty_ms = 1000.0;
  int episodes = 3000;
  std::vector<int> dqn_hidden{100, 100};
  std::vector<int> dvn_hidden{50, 50};
  // Bellman residual on a held-out batch every `bellman_every` episodes (0 = off).
  int bellman_every = 100;
  int heldout_size = 256;
  // DVN experiences mask candidates already on the route; an empty set
  // targets fail_penalty_ms.
  bool loop_free_targets = true;

  nn::NetSpec net_spec(Algo a) const {
    return a == Algo::kDqn ? nn::NetSpec{state_dim(k), dqn_hidden, k} : nn::NetSpec{state_dim(k), dvn_hidden, 1};
  }
};

inline void validate(const TrainingConfig& c) {
  auto fail = [](const std::string& m) { throw std::invalid_argument("TrainingConfig: " + m); };
  if (c.k <= 0) fail("K must be positive");
  if (c.t_max <= 0) fail("t_max must be positive");
  if (!(c.gamma >= 0.0 && c.gamma <= 1.0)) fail("gamma outside [0, 1]");
  if (!(c.learning_rate >= 0.0)) fail("learning_rate must be >= 0");
  if (!(c.tau >= 0.0 && c.tau <= 1.0)) fail("tau outside [0, 1]");
  if (c.batch_size <= 0) fail("batch_size must be positive");
  if (c.replay_capacity < static_cast<std::size_t>(c.batch_size)) fail("replay capacity below batch size");
  if (c.episodes <= 0) fail("episodes must be positive");
  if (!(c.epsilon.floor >= 0.0 && c.epsilon.floor <= 1.0)) fail("epsilon floor outside [0, 1]");
}

struct EpisodeRecord {
  bool delivered = false;
  double e2e_delay_ms = 0.0;
  double reward_sum = 0.0;  // training rewards in the learner's convention
  int hops = 0;
};

struct BellmanPoint {
  int episode = 0;
  double residual = 0.0;
};

struct TrainingResult {
  NetParams params;
  NetParams target;
  std::vector<EpisodeRecord> curve;
  std::vector<BellmanPoint> bellman;
  std::size_t max_replay_size = 0;
  std::size_t gradient_steps = 0;
};

/// One forwarding step seen during training, for external consistency checks.
struct Transition {
  int snapshot_id = 0;
  int from = 0;
  int to = 0;
  StateRef s;
  StateRef s_next;  // null when `to` is the destination
};
using TransitionObserver = std::function<void(const Transition&)>;

namespace detail {

inline std::vector<Scene> make_scenes(const std::vector<Snapshot>& snaps, const LinkParams& link, int k,
                                      const Normalizer& norm, int dest, double queue_ms) {
  std::vector<Scene> scenes;
  scenes.reserve(snaps.size());
  for (auto s : snaps) {
    std::fill(s.queue_delay_ms.begin(), s.queue_delay_ms.end(), queue_ms);
    scenes.emplace_back(std::move(s), link, k, norm, dest);
  }
  return scenes;
}

// One learner: nets, memory and the per-algorithm experience handling.
class Learner {
 public:
  Learner(Algo algo, const TrainingConfig& cfg, std::uint64_t seed)
      : algo_(algo),
        cfg_(cfg),
        main_(nn::init_params(cfg.net_spec(algo), seed)),
        target_(main_),
        dqn_mem_(cfg.replay_capacity),
        dvn_mem_(cfg.replay_capacity),
        replay_rng_(derive_seed(seed, stream::kReplay)) {}

  Algo algo() const { return algo_; }
  const NetParams& main() const { return main_; }
  const NetParams& target() const { return target_; }
  std::size_t memory_size() const { return algo_ == Algo::kDqn ? dqn_mem_.size() : dvn_mem_.size(); }
  std::size_t steps() const { return steps_; }

  void store(DqnExperience e) { dqn_mem_.push(std::move(e)); }
  void store(DvnExperience e) { dvn_mem_.push(std::move(e)); }
  void after_hop() { learn(); }

  void learn() {
    const auto b = static_cast<std::size_t>(cfg_.batch_size);
    if (memory_size() < b) return;
    nn::Batch batch;
    if (algo_ == Algo::kDqn) {
      const auto sample = dqn_mem_.sample(b, replay_rng_);
      batch.y = dqn_target(sample, main_, target_, cfg_.fail_penalty_ms, cfg_.gamma);
      std::vector<const ObservationState*> xs;
      for (const auto* e : sample) {
        xs.push_back(e->s.get());
        batch.action.push_back(e->action);
      }
      batch.x = stack(xs, main_.spec.input_dim);
    } else {
      const auto sample = dvn_mem_.sample(b, replay_rng_);
      batch.y = dvn_target(sample, main_, target_, cfg_.fail_penalty_ms);
      std::vector<const ObservationState*> xs;
      for (const auto* e : sample) xs.push_back(e->s.get());
      batch.x = stack(xs, main_.spec.input_dim);
    }
    nn::train_step(main_, batch, cfg_.learning_rate);
    nn::soft_update(target_, main_, cfg_.tau);
    ++steps_;
  }

  double bellman_residual(const std::vector<DqnExperience>& dqn, const std::vector<DvnExperience>& dvn) const {
    std::vector<const ObservationState*> xs;
    std::vector<double> y;
    nn::Matrix pred;
    if (algo_ == Algo::kDqn) {
      std::vector<const DqnExperience*> ptr;
      for (const auto& e : dqn) ptr.push_back(&e);
      if (ptr.empty()) return 0.0;
      y = dqn_target(ptr, main_, target_, cfg_.fail_penalty_ms, cfg_.gamma);
      for (const auto* e : ptr) xs.push_back(e->s.get());
      pred = nn::forward(main_, stack(xs, main_.spec.input_dim));
      double sum = 0.0;
      for (std::size_t j = 0; j < ptr.size(); ++j) {
        const double d = y[j] - pred(ptr[j]->action, static_cast<Eigen::Index>(j));
        sum += d * d;
      }
      return sum / static_cast<double>(ptr.size());
    }
    std::vector<const DvnExperience*> ptr;
    for (const auto& e : dvn) ptr.push_back(&e);
    if (ptr.empty()) return 0.0;
    y = dvn_target(ptr, main_, target_, cfg_.fail_penalty_ms);
    for (const auto* e : ptr) xs.push_back(e->s.get());
    pred = nn::forward(main_, stack(xs, main_.spec.input_dim));
    double sum = 0.0;
    for (std::size_t j = 0; j < ptr.size(); ++j) {
      const double d = y[j] - pred(0, static_cast<Eigen::Index>(j));
      sum += d * d;
    }
    return sum / static_cast<double>(ptr.size());
  }

 private:
  Algo algo_;
  const TrainingConfig& cfg_;
  NetParams main_;
  NetParams target_;
  ReplayMemory<DqnExperience> dqn_mem_;
  ReplayMemory<DvnExperience> dvn_mem_;
  Rng replay_rng_;
  std::size_t steps_ = 0;
};

// With `visited`, candidates already on the route are masked out, so the
// stored Bellman target respects the loop-free action set.
inline DvnExperience dvn_experience(const Scene& scene, int i, const Visited* visited = nullptr) {
  const auto s = scene.state(i);
  DvnExperience e;
  e.s = s;
  const auto k = static_cast<std::size_t>(s->k());
  e.cand_states.resize(k);
  e.cand_rewards.assign(k, 0.0);
  e.mask = s->mask;
  if (visited) {
    for (std::size_t a = 0; a < k; ++a) e.mask[a] = allowed(*s, *visited, static_cast<int>(a)) ? 1 : 0;
  }
  e.terminal.assign(k, 0);
  for (std::size_t a = 0; a < k; ++a) {
    if (!s->mask[a]) continue;
    const int j = s->candidate[a];
    e.cand_rewards[a] = reward_hop(scene.graph(), i, j, RewardConvention::kNexthopQueue);
    if (j == scene.dest()) {
      e.terminal[a] = 1;
    } else {
      e.cand_states[a] = scene.state(j);
    }
  }
  return e;
}

// Decision used while training: epsilon-greedy over the loop-free action set.
inline std::optional<int> training_choice(const Learner& learner, const Scene& scene, int cur, const Visited& visited,
                                          double eps, Rng& rng) {
  const auto s = scene.state(cur);
  const auto acts = allowed_actions(*s, visited);
  if (acts.empty()) return std::nullopt;
  if (uniform01(rng) < eps) return acts[uniform_index(rng, acts.size())];
  if (learner.algo() == Algo::kDqn) return dqn_decide(learner.main(), *s, visited);
  return dvn_decide(learner.main(), scene, cur, visited).action;
}

// Collects experiences without learning (held-out batches).
struct Collector {
  std::vector<DqnExperience> dqn;
  std::vector<DvnExperience> dvn;
  void store(DqnExperience e) { dqn.push_back(std::move(e)); }
  void store(DvnExperience e) { dvn.push_back(std::move(e)); }
  void after_hop() {}
  std::size_t size() const { return dqn.size() + dvn.size(); }
};

// Rolls one training episode: decisions come from `learner`, experiences go to
// `sink` (which may be the learner itself).
template <typename Sink>
EpisodeRecord training_episode(const Learner& learner, Sink& sink, const Scene& scene, int src, double eps, Rng& rng,
                               const TrainingConfig& cfg, const TransitionObserver* observer) {
  const auto& g = scene.graph();
  const int dest = scene.dest();
  Visited visited(static_cast<std::size_t>(g.n_nodes()), 0);
  visited[static_cast<std::size_t>(src)] = 1;
  EpisodeRecord rec;
  int cur = src;
  for (int hop = 0; hop < cfg.t_max; ++hop) {
    std::optional<DvnExperience> dvn_exp;
    if (learner.algo() == Algo::kDvn) dvn_exp = dvn_experience(scene, cur, cfg.loop_free_targets ? &visited : nullptr);
    const auto a = training_choice(learner, scene, cur, visited, eps, rng);
    if (!a) return rec;  // stuck at the source
    const auto s = scene.state(cur);
    const int next = s->candidate[static_cast<std::size_t>(*a)];
    visited[static_cast<std::size_t>(next)] = 1;
    const double hop_delay = reward_hop(g, cur, next, RewardConvention::kForwarderQueue);
    rec.e2e_delay_ms += hop_delay;
    ++rec.hops;
    const bool terminal = next == dest;
    const StateRef s_next = terminal ? nullptr : scene.state(next);
    const bool dead_end = !terminal && allowed_actions(*s_next, visited).empty();
    if (observer && *observer) (*observer)({scene.snapshot().id, cur, next, s, s_next});

    if (learner.algo() == Algo::kDqn) {
      rec.reward_sum += hop_delay;
      sink.store(DqnExperience{s, *a, hop_delay, s_next, terminal, dead_end});
    } else {
      rec.reward_sum += reward_hop(g, cur, next, RewardConvention::kNexthopQueue);
      sink.store(std::move(*dvn_exp));
      if (dead_end && cfg.loop_free_targets) sink.store(dvn_experience(scene, next, &visited));
    }
    sink.after_hop();
    cur = next;
    if (terminal) {
      rec.delivered = true;
      return rec;
    }
    if (dead_end) return rec;
  }
  return rec;
}

}  // namespace detail

/// Offline training on the dataset's training snapshots with uniform training
/// queues. Each episode samples a snapshot and a source that can reach the
/// ground station; one gradient step and one soft target update follow every
/// forwarded hop once the memory holds a batch.
inline TrainingResult run_training(const scenario::Dataset& data, Algo algo, const TrainingConfig& cfg,
                                   const LinkParams& link, std::uint64_t seed,
                                   const TransitionObserver* observer = nullptr) {
  validate(cfg);
  net::validate(link);
  if (data.train.empty()) throw std::invalid_argument("run_training: empty training set");
  const int dest = data.spec.ground_id();
  const auto norm = Normalizer::from(data.spec);
  auto scenes = detail::make_scenes(data.train, link, cfg.k, norm, dest, link.train_queue_ms);
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (!scenes[i].sources().empty()) usable.push_back(i);
  }
  if (usable.empty()) throw std::runtime_error("run_training: no training snapshot has a route to the destination");

  detail::Learner learner(algo, cfg, seed);
  // Episode draws and exploration use separate streams, so DQN and DVN runs
  // with the same seed see the same (snapshot, source) sequence.
  Rng rng(derive_seed(seed, stream::kEpisode));
  Rng explore(derive_seed(seed, stream::kExplore));

  // Held-out batch for Bellman residuals: uniform-random rollouts from a
  // separate stream, never inserted into the replay memory.
  detail::Collector held;
  if (cfg.bellman_every > 0 && cfg.heldout_size > 0) {
    Rng hrng(derive_seed(seed, stream::kHeldOut));
    const auto want = static_cast<std::size_t>(cfg.heldout_size);
    while (held.size() < want) {
      const auto& scene = scenes[usable[uniform_index(hrng, usable.size())]];
      const auto& srcs = scene.sources();
      const int src = srcs[uniform_index(hrng, srcs.size())];
      detail::training_episode(learner, held, scene, src, 1.0, hrng, cfg, nullptr);
    }
    held.dqn.resize(std::min(held.dqn.size(), want));
    held.dvn.resize(std::min(held.dvn.size(), want));
  }

  TrainingResult out;
  out.curve.reserve(static_cast<std::size_t>(cfg.episodes));
  for (int ep = 1; ep <= cfg.episodes; ++ep) {
    const auto& scene = scenes[usable[uniform_index(rng, usable.size())]];
    const auto& srcs = scene.sources();
    const int src = srcs[uniform_index(rng, srcs.size())];
    const double eps = epsilon(cfg.epsilon, ep);
    auto rec = detail::training_episode(learner, learner, scene, src, eps, explore, cfg, observer);
    out.max_replay_size = std::max(out.max_replay_size, learner.memory_size());
    out.curve.push_back(rec);
    if (cfg.bellman_every > 0 && ep % cfg.bellman_every == 0 && held.size() > 0) {
      out.bellman.push_back({ep, learner.bellman_residual(held.dqn, held.dvn)});
    }
  }
  out.params = learner.main();
  out.target = learner.target();
  out.gradient_steps = learner.steps();
  return out;
}

}  // namespace aanet::rl
