// Link-delay model, topology graphs, candidate ranking and the
// global-information shortest-delay oracle.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "aanet/geo.hpp"
#include "aanet/scenario.hpp"

namespace aanet::net {

using geo::GeoPosition;
using scenario::Snapshot;

struct RateBucket {
  double max_distance_km = 0.0;
  double rate_mbps = 0.0;
  friend bool operator==(const RateBucket&, const RateBucket&) = default;
};

/// Distance-bucketed data rates. Bucket k covers (max_{k-1}, max_k]; the last
/// bucket's bound is the maximum communication distance.
struct RateTable {
  std::vector<RateBucket> buckets;

  /// Illustrative adaptive-coding table (not an authoritative link budget).
  static RateTable illustrative() {
    return {{{100.0, 100.0}, {200.0, 80.0}, {300.0, 60.0}, {450.0, 40.0}, {600.0, 20.0}, {740.0, 10.0}}};
  }

  double max_range_km() const { return buckets.empty() ? 0.0 : buckets.back().max_distance_km; }

  std::optional<double> rate_for(double distance_km) const {
    for (const auto& b : buckets) {
      if (distance_km <= b.max_distance_km) return b.rate_mbps;
    }
    return std::nullopt;
  }
  friend bool operator==(const RateTable&, const RateTable&) = default;
};

inline void validate(const RateTable& t) {
  if (t.buckets.empty()) throw std::invalid_argument("RateTable: empty");
  for (std::size_t k = 0; k < t.buckets.size(); ++k) {
    const auto& b = t.buckets[k];
    if (!(b.max_distance_km > 0.0) || !(b.rate_mbps > 0.0) || !std::isfinite(b.rate_mbps)) {
      throw std::invalid_argument("RateTable: distances and rates must be positive");
    }
    if (k > 0) {
      if (!(b.max_distance_km > t.buckets[k - 1].max_distance_km)) {
        throw std::invalid_argument("RateTable: distances must be strictly increasing");
      }
      if (b.rate_mbps > t.buckets[k - 1].rate_mbps) {
        throw std::invalid_argument("RateTable: rates must be non-increasing with distance");
      }
    }
  }
}

struct LinkParams {
  double packet_size_kb = 15.0;  // kilobytes (1 KB = 8 kilobit)
  double speed_of_light_km_per_ms = 299.792458;
  RateTable rate_table = RateTable::illustrative();
  double train_queue_ms = 5.0;
  double horizon_k = geo::kDefaultHorizonK;

  double packet_kilobit() const { return packet_size_kb * 8.0; }
  friend bool operator==(const LinkParams&, const LinkParams&) = default;
};

inline void validate(const LinkParams& p) {
  if (!(p.packet_size_kb > 0.0)) throw std::invalid_argument("LinkParams: packet size must be positive");
  if (!(p.speed_of_light_km_per_ms > 0.0)) throw std::invalid_argument("LinkParams: bad speed of light");
  if (!(p.train_queue_ms >= 0.0)) throw std::invalid_argument("LinkParams: queue delay must be >= 0");
  if (!(p.horizon_k > 0.0)) throw std::invalid_argument("LinkParams: horizon k must be positive");
  validate(p.rate_table);
}

/// Propagation plus transmission delay in ms, or nullopt when the pair is below
/// the radio horizon or beyond the rate table's reach.
inline std::optional<double> link_delay(const GeoPosition& a, const GeoPosition& b, const LinkParams& p) {
  if (!geo::is_visible(a, b, p.horizon_k)) return std::nullopt;
  const double d = geo::slant_distance(a, b);
  const auto rate = p.rate_table.rate_for(d);
  if (!rate) return std::nullopt;
  // kilobit / (Mbit/s) = ms
  return d / p.speed_of_light_km_per_ms + p.packet_kilobit() / *rate;
}

struct Edge {
  int to = 0;
  double delay_ms = 0.0;
};

/// Snapshot connectivity. Neighbor lists are sorted by node id.
class TopologyGraph {
 public:
  TopologyGraph() = default;
  explicit TopologyGraph(int n)
      : n_(n),
        adj_(static_cast<std::size_t>(n)),
        delay_(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), kNoLink),
        queue_(static_cast<std::size_t>(n), 0.0) {}

  static constexpr double kNoLink = std::numeric_limits<double>::infinity();

  int n_nodes() const { return n_; }

  void add_edge(int i, int j, double delay_ms) {
    if (i == j) throw std::invalid_argument("TopologyGraph: self edge");
    if (!(delay_ms > 0.0)) throw std::invalid_argument("TopologyGraph: link delay must be positive");
    at(i, j) = delay_ms;
    at(j, i) = delay_ms;
    insert_sorted(i, j, delay_ms);
    insert_sorted(j, i, delay_ms);
  }

  bool has_edge(int i, int j) const { return link(i, j) != kNoLink; }
  double link(int i, int j) const {
    return delay_[static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j)];
  }
  const std::vector<Edge>& neighbors(int i) const { return adj_[static_cast<std::size_t>(i)]; }

  double queue(int i) const { return queue_[static_cast<std::size_t>(i)]; }
  void set_queue(int i, double ms) { queue_[static_cast<std::size_t>(i)] = ms; }
  const std::vector<double>& queues() const { return queue_; }

  std::size_t edge_count() const {
    std::size_t twice = 0;
    for (const auto& a : adj_) twice += a.size();
    return twice / 2;
  }

 private:
  double& at(int i, int j) {
    return delay_[static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j)];
  }
  void insert_sorted(int i, int j, double d) {
    auto& list = adj_[static_cast<std::size_t>(i)];
    auto it = std::lower_bound(list.begin(), list.end(), j, [](const Edge& e, int v) { return e.to < v; });
    if (it != list.end() && it->to == j) {
      it->delay_ms = d;
    } else {
      list.insert(it, {j, d});
    }
  }

  int n_ = 0;
  std::vector<std::vector<Edge>> adj_;
  std::vector<double> delay_;
  std::vector<double> queue_;
};

inline TopologyGraph build_graph(const Snapshot& s, const LinkParams& p) {
  TopologyGraph g(s.n_nodes());
  for (int i = 0; i < s.n_nodes(); ++i) {
    g.set_queue(i, s.queue_delay_ms[static_cast<std::size_t>(i)]);
    for (int j = i + 1; j < s.n_nodes(); ++j) {
      if (auto d = link_delay(s.positions[static_cast<std::size_t>(i)], s.positions[static_cast<std::size_t>(j)], p)) {
        g.add_edge(i, j, *d);
      }
    }
  }
  return g;
}

/// The K neighbors of `i` closest (slant distance) to `dest`, ascending, ties
/// by node id.
inline std::vector<int> candidates(const TopologyGraph& g, const Snapshot& s, int i, int dest, int k) {
  if (i == dest) throw std::invalid_argument("candidates: node is the destination");
  const auto& dpos = s.positions[static_cast<std::size_t>(dest)];
  std::vector<std::pair<double, int>> ranked;
  ranked.reserve(g.neighbors(i).size());
  for (const auto& e : g.neighbors(i)) {
    ranked.emplace_back(geo::slant_distance(s.positions[static_cast<std::size_t>(e.to)], dpos), e.to);
  }
  std::sort(ranked.begin(), ranked.end());
  std::vector<int> out;
  for (std::size_t r = 0; r < ranked.size() && static_cast<int>(r) < k; ++r) out.push_back(ranked[r].second);
  return out;
}

struct Route {
  std::vector<int> nodes;
  double total_delay_ms = 0.0;

  int hops() const { return nodes.empty() ? 0 : static_cast<int>(nodes.size()) - 1; }
  friend bool operator==(const Route&, const Route&) = default;
};

/// Sum over hops of queue(forwarder) + link(forwarder, next), in route order.
/// `queues` overrides the graph's queue delays when given.
inline double route_delay(const TopologyGraph& g, const std::vector<int>& nodes,
                          const std::vector<double>* queues = nullptr) {
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < nodes.size(); ++t) {
    const double link = g.link(nodes[t], nodes[t + 1]);
    if (link == TopologyGraph::kNoLink) throw std::invalid_argument("route_delay: hop without a link");
    const double q = queues ? (*queues)[static_cast<std::size_t>(nodes[t])] : g.queue(nodes[t]);
    total += q + link;
  }
  return total;
}

inline Route make_route(const TopologyGraph& g, std::vector<int> nodes) {
  Route r;
  r.total_delay_ms = route_delay(g, nodes);
  r.nodes = std::move(nodes);
  return r;
}

/// All-pairs minimum delays by Floyd-Warshall on the hop weight
/// queue(i) + link(i, j). Relaxation is strict, so among equal-delay paths the
/// one found first (lowest intermediate ids) is kept.
class AllPairs {
 public:
  explicit AllPairs(const TopologyGraph& g) : n_(g.n_nodes()) {
    const auto n = static_cast<std::size_t>(n_);
    dist_.assign(n * n, kInf);
    next_.assign(n * n, -1);
    for (int i = 0; i < n_; ++i) {
      idx_set(dist_, i, i, 0.0);
      idx_set(next_, i, i, i);
      for (const auto& e : g.neighbors(i)) {
        idx_set(dist_, i, e.to, g.queue(i) + e.delay_ms);
        idx_set(next_, i, e.to, e.to);
      }
    }
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        const double dik = dist_[i * n + k];
        if (dik == kInf) continue;
        for (std::size_t j = 0; j < n; ++j) {
          const double cand = dik + dist_[k * n + j];
          if (cand < dist_[i * n + j]) {
            dist_[i * n + j] = cand;
            next_[i * n + j] = next_[i * n + k];
          }
        }
      }
    }
  }

  double distance(int i, int j) const { return idx(dist_, i, j); }

  std::optional<std::vector<int>> path(int src, int dest) const {
    if (idx(next_, src, dest) < 0) return std::nullopt;
    std::vector<int> nodes{src};
    for (int u = src; u != dest;) {
      u = idx(next_, u, dest);
      nodes.push_back(u);
    }
    return nodes;
  }

 private:
  static constexpr double kInf = std::numeric_limits<double>::infinity();
  template <typename T>
  T idx(const std::vector<T>& v, int i, int j) const {
    return v[static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j)];
  }
  template <typename T>
  void idx_set(std::vector<T>& v, int i, int j, T val) {
    v[static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j)] = val;
  }

  int n_ = 0;
  std::vector<double> dist_;
  std::vector<int> next_;
};

/// Single-source minimum delays (Dijkstra, ties popped by node id).
struct SingleSource {
  std::vector<double> dist;
  std::vector<int> pred;

  std::optional<std::vector<int>> path_to(int src, int dest) const {
    if (dist[static_cast<std::size_t>(dest)] == std::numeric_limits<double>::infinity()) return std::nullopt;
    std::vector<int> nodes;
    for (int u = dest; u != src; u = pred[static_cast<std::size_t>(u)]) nodes.push_back(u);
    nodes.push_back(src);
    std::reverse(nodes.begin(), nodes.end());
    return nodes;
  }
};

inline SingleSource dijkstra(const TopologyGraph& g, int src) {
  const auto n = static_cast<std::size_t>(g.n_nodes());
  SingleSource out{std::vector<double>(n, std::numeric_limits<double>::infinity()), std::vector<int>(n, -1)};
  std::vector<bool> done(n, false);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  out.dist[static_cast<std::size_t>(src)] = 0.0;
  pq.emplace(0.0, src);
  while (!pq.empty()) {
    const auto [d, u] = pq.top();
    pq.pop();
    if (done[static_cast<std::size_t>(u)]) continue;
    done[static_cast<std::size_t>(u)] = true;
    for (const auto& e : g.neighbors(u)) {
      const double cand = d + g.queue(u) + e.delay_ms;
      auto& dv = out.dist[static_cast<std::size_t>(e.to)];
      if (cand < dv) {
        dv = cand;
        out.pred[static_cast<std::size_t>(e.to)] = u;
        pq.emplace(cand, e.to);
      }
    }
  }
  return out;
}

/// Shortest-delay route from `src` to `dest` by Floyd-Warshall, or nullopt when
/// unreachable.
inline std::optional<Route> optimal_route(const AllPairs& ap, const TopologyGraph& g, int src, int dest) {
  if (src == dest) throw std::invalid_argument("optimal_route: src == dest");
  auto nodes = ap.path(src, dest);
  if (!nodes) return std::nullopt;
  return make_route(g, std::move(*nodes));
}

inline std::optional<Route> optimal_route(const TopologyGraph& g, int src, int dest) {
  return optimal_route(AllPairs(g), g, src, dest);
}

/// Same query answered by the single-source route.
inline std::optional<Route> optimal_route_single_source(const TopologyGraph& g, int src, int dest) {
  if (src == dest) throw std::invalid_argument("optimal_route: src == dest");
  auto nodes = dijkstra(g, src).path_to(src, dest);
  if (!nodes) return std::nullopt;
  return make_route(g, std::move(*nodes));
}

/// Nodes from which `dest` can be reached (including `dest`).
inline std::vector<bool> reaches(const TopologyGraph& g, int dest) {
  std::vector<bool> seen(static_cast<std::size_t>(g.n_nodes()), false);
  std::vector<int> stack{dest};
  seen[static_cast<std::size_t>(dest)] = true;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (const auto& e : g.neighbors(u)) {
      if (!seen[static_cast<std::size_t>(e.to)]) {
        seen[static_cast<std::size_t>(e.to)] = true;
        stack.push_back(e.to);
      }
    }
  }
  return seen;
}

}  // namespace aanet::net
