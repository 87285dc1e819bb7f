// Greedy perimeter stateless routing: greedy geographic forwarding with
// right-hand-rule face traversal on a Gabriel-planarized graph.
//
// Greedy progress is measured by 3-D slant distance to the destination. Face
// routing works in the plain (lon, lat) plane with altitudes ignored.
#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "aanet/geo.hpp"
#include "aanet/netmodel.hpp"

namespace aanet::gpsr {

using geo::GeoPosition;
using net::Route;
using net::TopologyGraph;
using scenario::Snapshot;

namespace detail {

struct P2 {
  double x = 0.0;
  double y = 0.0;
};

inline P2 plane(const GeoPosition& p) { return {p.lon, p.lat}; }

inline const GeoPosition& pos(const Snapshot& s, int i) { return s.positions[static_cast<std::size_t>(i)]; }

inline double dist_to(const Snapshot& s, int i, int dest) { return geo::slant_distance(pos(s, i), pos(s, dest)); }

inline double angle_of(const P2& from, const P2& to) { return std::atan2(to.y - from.y, to.x - from.x); }

// Counter-clockwise sweep from `ref` to `a`, in (0, 2pi].
inline double ccw_delta(double ref, double a) {
  double d = a - ref;
  while (d <= 0.0) d += 2.0 * std::numbers::pi;
  while (d > 2.0 * std::numbers::pi) d -= 2.0 * std::numbers::pi;
  return d;
}

// Intersection point of segments p1-p2 and q1-q2 when they properly cross.
inline std::optional<P2> segment_intersection(P2 p1, P2 p2, P2 q1, P2 q2) {
  const double rx = p2.x - p1.x, ry = p2.y - p1.y;
  const double sx = q2.x - q1.x, sy = q2.y - q1.y;
  const double denom = rx * sy - ry * sx;
  if (denom == 0.0) return std::nullopt;
  const double t = ((q1.x - p1.x) * sy - (q1.y - p1.y) * sx) / denom;
  const double u = ((q1.x - p1.x) * ry - (q1.y - p1.y) * rx) / denom;
  if (t <= 0.0 || t >= 1.0 || u <= 0.0 || u >= 1.0) return std::nullopt;
  return P2{p1.x + t * rx, p1.y + t * ry};
}

inline double d2(P2 a, P2 b) { return (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y); }

}  // namespace detail

/// Neighbor strictly closer to `dest` than `current`, choosing the closest
/// (ties by id); nullopt signals a communication void.
inline std::optional<int> greedy_next(const TopologyGraph& g, const Snapshot& s, int current, int dest) {
  if (current == dest) throw std::invalid_argument("greedy_next: current is the destination");
  double best = detail::dist_to(s, current, dest);
  std::optional<int> out;
  for (const auto& e : g.neighbors(current)) {
    const double d = detail::dist_to(s, e.to, dest);
    if (d < best) {
      best = d;
      out = e.to;
    }
  }
  return out;
}

/// Gabriel subgraph in the (lon, lat) plane: edge (u, v) survives iff no other
/// node lies strictly inside the circle with diameter uv.
inline TopologyGraph planarize(const TopologyGraph& g, const Snapshot& s) {
  TopologyGraph out(g.n_nodes());
  for (int i = 0; i < g.n_nodes(); ++i) out.set_queue(i, g.queue(i));
  for (int u = 0; u < g.n_nodes(); ++u) {
    const auto pu = detail::plane(detail::pos(s, u));
    for (const auto& e : g.neighbors(u)) {
      const int v = e.to;
      if (v < u) continue;
      const auto pv = detail::plane(detail::pos(s, v));
      const detail::P2 mid{(pu.x + pv.x) / 2.0, (pu.y + pv.y) / 2.0};
      const double r2 = detail::d2(pu, pv) / 4.0;
      bool keep = true;
      for (int w = 0; w < g.n_nodes() && keep; ++w) {
        if (w == u || w == v) continue;
        if (detail::d2(detail::plane(detail::pos(s, w)), mid) < r2) keep = false;
      }
      if (keep) out.add_edge(u, v, e.delay_ms);
    }
  }
  return out;
}

enum class Mode { kGreedy, kPerimeter };

/// Packet header state carried between hops.
struct GpsrState {
  Mode mode = Mode::kGreedy;
  std::optional<GeoPosition> entry_point;  // L_p: where perimeter mode began
  GeoPosition face_point;                  // L_f: where the current face was entered
  int prev = -1;                           // node the packet arrived from
  int first_from = -1;                     // first edge traversed on the current face
  int first_to = -1;
  std::vector<int> visited;

  void enter_perimeter(const GeoPosition& at) {
    mode = Mode::kPerimeter;
    entry_point = at;
    face_point = at;
    prev = -1;
    first_from = first_to = -1;
  }
  void leave_perimeter() {
    mode = Mode::kGreedy;
    entry_point.reset();
    prev = first_from = first_to = -1;
  }
};

namespace detail {

// First planar neighbor counter-clockwise about `u` from direction `ref`.
inline std::optional<int> next_ccw(const TopologyGraph& planar, const Snapshot& s, int u, double ref,
                                   int exclude_unless_only = -1) {
  const auto pu = plane(pos(s, u));
  std::optional<int> best;
  double best_delta = 0.0;
  for (const auto& e : planar.neighbors(u)) {
    double delta = ccw_delta(ref, angle_of(pu, plane(pos(s, e.to))));
    if (e.to == exclude_unless_only) delta = 4.0 * std::numbers::pi;  // only if nothing else
    if (!best || delta < best_delta || (delta == best_delta && e.to < *best)) {
      best = e.to;
      best_delta = delta;
    }
  }
  return best;
}

}  // namespace detail

/// One right-hand-rule step on the planar graph. Returns nullopt ("fail") when
/// the node has no planar neighbor or the walk is about to repeat the first
/// edge of its current face.
inline std::optional<int> perimeter_next(const TopologyGraph& planar, const Snapshot& s, GpsrState& state,
                                         int current, int dest) {
  using namespace detail;
  if (state.mode != Mode::kPerimeter || !state.entry_point) {
    throw std::logic_error("perimeter_next: state is not in perimeter mode");
  }
  if (planar.neighbors(current).empty()) return std::nullopt;
  const auto pc = plane(pos(s, current));
  const auto pd = plane(pos(s, dest));
  const auto lp = plane(*state.entry_point);

  std::optional<int> next;
  if (state.prev < 0) {
    // Entering the face: first edge counter-clockwise from the line to dest.
    next = next_ccw(planar, s, current, angle_of(pc, pd));
  } else {
    next = next_ccw(planar, s, current, angle_of(pc, plane(pos(s, state.prev))), state.prev);
  }
  // Face change: the edge crosses segment L_p-D closer to D than L_f.
  for (std::size_t guard = 0; next && guard < planar.neighbors(current).size(); ++guard) {
    const auto pn = plane(pos(s, *next));
    const auto hit = segment_intersection(pc, pn, lp, pd);
    if (!hit || !(d2(*hit, pd) < d2(plane(state.face_point), pd))) break;
    state.face_point = {hit->x, hit->y, 0.0};
    state.first_from = state.first_to = -1;
    next = next_ccw(planar, s, current, angle_of(pc, pn), *next);
  }
  if (!next) return std::nullopt;
  if (state.first_from < 0) {
    state.first_from = current;
    state.first_to = *next;
  } else if (state.first_from == current && state.first_to == *next) {
    return std::nullopt;
  }
  state.prev = current;
  return next;
}

/// Node walk of a GPSR packet (may revisit nodes in perimeter mode).
struct Walk {
  std::vector<int> nodes;
  bool delivered = false;
  int perimeter_hops = 0;
};

inline Walk gpsr_walk(const TopologyGraph& g, const TopologyGraph& planar, const Snapshot& s, int src, int dest,
                      int t_max) {
  if (src == dest) throw std::invalid_argument("gpsr_route: src == dest");
  Walk w;
  w.nodes.push_back(src);
  GpsrState state;
  int cur = src;
  for (int hop = 0; hop < t_max; ++hop) {
    std::optional<int> next;
    if (g.has_edge(cur, dest)) {
      next = dest;
    } else {
      if (state.mode == Mode::kPerimeter &&
          detail::dist_to(s, cur, dest) < geo::slant_distance(*state.entry_point, detail::pos(s, dest))) {
        state.leave_perimeter();
      }
      if (state.mode == Mode::kGreedy) {
        next = greedy_next(g, s, cur, dest);
        if (!next) state.enter_perimeter(detail::pos(s, cur));
      }
      if (state.mode == Mode::kPerimeter) {
        next = perimeter_next(planar, s, state, cur, dest);
        if (!next) return w;
        ++w.perimeter_hops;
      }
    }
    state.visited.push_back(cur);
    cur = *next;
    w.nodes.push_back(cur);
    if (cur == dest) {
      w.delivered = true;
      return w;
    }
  }
  return w;
}

/// Delivered GPSR route (delay scored with the graph's queues), or nullopt.
inline std::optional<Route> gpsr_route(const TopologyGraph& g, const Snapshot& s, int src, int dest, int t_max) {
  const auto planar = planarize(g, s);
  auto w = gpsr_walk(g, planar, s, src, dest, t_max);
  if (!w.delivered) return std::nullopt;
  return net::make_route(g, std::move(w.nodes));
}

}  // namespace aanet::gpsr
