// Independent oracles and hand-built fixtures shared by the unit tests and the
// acceptance binary. Nothing here calls the code under test for the value it
// is meant to check.
#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "aanet/netmodel.hpp"
#include "aanet/scenario.hpp"

namespace oracle {

inline constexpr double kR = 6371.0;

inline double rad(double d) { return d * std::numbers::pi / 180.0; }

// Haversine form of the central angle.
inline double haversine_angle(double lon1, double lat1, double lon2, double lat2) {
  const double p1 = rad(lat1), p2 = rad(lat2);
  const double dp = p2 - p1, dl = rad(lon2 - lon1);
  const double h = std::sin(dp / 2) * std::sin(dp / 2) + std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  return 2.0 * std::asin(std::min(1.0, std::sqrt(h)));
}

inline double haversine_km(double lon1, double lat1, double lon2, double lat2) {
  return kR * haversine_angle(lon1, lat1, lon2, lat2);
}

// Law of cosines on the two radii and the haversine angle.
inline double slant_km(const aanet::geo::GeoPosition& a, const aanet::geo::GeoPosition& b) {
  const double ra = kR + a.alt, rb = kR + b.alt;
  const double th = haversine_angle(a.lon, a.lat, b.lon, b.lat);
  // 1 - cos(th) = 2 sin^2(th/2) keeps precision for small angles.
  const double s = std::sin(th / 2);
  const double d2 = (ra - rb) * (ra - rb) + 4.0 * ra * rb * s * s;
  return std::sqrt(std::max(0.0, d2));
}

// Cartesian conversion written out independently (y/z order swapped on purpose).
inline double slant_cartesian_km(const aanet::geo::GeoPosition& a, const aanet::geo::GeoPosition& b) {
  auto xyz = [](const aanet::geo::GeoPosition& p) {
    const double r = kR + p.alt;
    return std::array<double, 3>{r * std::cos(rad(p.lat)) * std::cos(rad(p.lon)), r * std::sin(rad(p.lat)),
                                 r * std::cos(rad(p.lat)) * std::sin(rad(p.lon))};
  };
  const auto pa = xyz(a), pb = xyz(b);
  return std::hypot(pa[0] - pb[0], pa[1] - pb[1], pa[2] - pb[2]);
}

// Exhaustive simple-path enumeration of the minimum queue(forwarder) + link
// delay. Returns +inf when unreachable.
inline double brute_force_delay(const aanet::net::TopologyGraph& g, int src, int dest) {
  const int n = g.n_nodes();
  std::vector<bool> on(static_cast<std::size_t>(n), false);
  double best = std::numeric_limits<double>::infinity();
  std::function<void(int, double)> dfs = [&](int u, double acc) {
    if (u == dest) {
      best = std::min(best, acc);
      return;
    }
    on[static_cast<std::size_t>(u)] = true;
    for (int v = 0; v < n; ++v) {
      if (v == u || on[static_cast<std::size_t>(v)] || !g.has_edge(u, v)) continue;
      dfs(v, acc + g.queue(u) + g.link(u, v));
    }
    on[static_cast<std::size_t>(u)] = false;
  };
  dfs(src, 0.0);
  return best;
}

// Random small graph with integer-valued delays so path sums are exact.
inline aanet::net::TopologyGraph random_graph(std::mt19937_64& rng, int n, double p_edge) {
  aanet::net::TopologyGraph g(n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> w(1, 20), q(0, 10);
  for (int i = 0; i < n; ++i) g.set_queue(i, q(rng));
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (u(rng) < p_edge) g.add_edge(i, j, w(rng));
    }
  }
  return g;
}

}  // namespace oracle

namespace fixture {

using aanet::geo::GeoPosition;
using aanet::scenario::Snapshot;

// Square-void fixture for GPSR, near the equator so lon/lat is close to a
// local metric frame. All nodes at 10 km altitude.
//
//   node  lon  lat    edges
//   0 S   0    0      1, 4
//   1 NW  0    1      0, 2
//   2 NE  2    1.2    1, 3
//   3 E   3    1.0    2, 5
//   4 SW  0.2 -1.5    0, 5
//   5 D   3.6  0      3, 4
//
// S has no neighbor closer to D (a void). The right-hand rule leaves S
// towards NW (first edge counter-clockwise from S->D), continues to NE, where
// the distance to D drops below the entry point's and greedy resumes:
// NE -> E -> D. The shortest route is S -> SW -> D. All six edges are
// Gabriel edges.
struct Void {
  Snapshot snap;
  aanet::net::TopologyGraph graph;
  int src = 0;
  int dest = 5;
  std::vector<int> expected_walk{0, 1, 2, 3, 5};
  int expected_perimeter_hops = 2;
  std::vector<int> expected_optimal{0, 4, 5};
};

inline Void void_fixture() {
  Void f;
  f.snap.id = 0;
  f.snap.positions = {{0.0, 0.0, 10.0}, {0.0, 1.0, 10.0}, {2.0, 1.2, 10.0},
                      {3.0, 1.0, 10.0}, {0.2, -1.5, 10.0}, {3.6, 0.0, 10.0}};
  f.snap.queue_delay_ms.assign(6, 5.0);
  f.graph = aanet::net::TopologyGraph(6);
  for (int i = 0; i < 6; ++i) f.graph.set_queue(i, 5.0);
  for (auto [a, b] : std::vector<std::pair<int, int>>{{0, 1}, {1, 2}, {2, 3}, {3, 5}, {0, 4}, {4, 5}}) {
    f.graph.add_edge(a, b, 1.0);
  }
  return f;
}

}  // namespace fixture
