// Synthetic flight data: corridors around no-fly zones, scheduled motion,
// Gaussian deviations from the schedule, and the snapshot dataset file.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aanet/geo.hpp"
#include "aanet/util.hpp"

namespace aanet::scenario {

using geo::GeoPosition;
using geo::GreatCirclePath;

struct Range {
  double min = 0.0;
  double max = 0.0;

  double span() const { return max - min; }
  bool contains(double v) const { return v >= min && v <= max; }
  friend bool operator==(const Range&, const Range&) = default;
};

struct NoFlyZone {
  GeoPosition center;
  double radius_km = 0.0;
  double height_km = 0.0;
  friend bool operator==(const NoFlyZone&, const NoFlyZone&) = default;
};

struct AirspaceSpec {
  Range lon{-40.0, -5.0};
  Range lat{25.0, 55.0};
  Range alt{0.0, 13.0};
  Range cruise_alt{9.0, 13.0};
  std::vector<NoFlyZone> no_fly_zones{{{-17.25, 40.0, 0.0}, 500.0, 13.0},
                                      {{-27.75, 44.5, 0.0}, 500.0, 13.0}};
  int n_paths = 40;
  int n_airplanes = 100;
  double cruise_speed_kmh = 900.0;
  double deviation_sigma_km = 100.0;
  GeoPosition ground_station{-10.0, 52.0, 0.05};

  int n_nodes() const { return n_airplanes + 1; }
  int ground_id() const { return n_airplanes; }

  friend bool operator==(const AirspaceSpec&, const AirspaceSpec&) = default;
};

inline void validate(const AirspaceSpec& s) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("AirspaceSpec: " + what); };
  for (const Range* r : {&s.lon, &s.lat, &s.alt, &s.cruise_alt}) {
    if (!(std::isfinite(r->min) && std::isfinite(r->max) && r->min < r->max)) fail("empty range");
  }
  if (s.lon.min < -180.0 || s.lon.max > 180.0 || s.lat.min < -90.0 || s.lat.max > 90.0) {
    fail("lon/lat range out of bounds");
  }
  if (s.cruise_alt.min < s.alt.min || s.cruise_alt.max > s.alt.max) fail("cruise altitude outside airspace");
  if (s.n_paths <= 0 || s.n_airplanes <= 0) fail("counts must be positive");
  if (!(s.cruise_speed_kmh > 0.0)) fail("cruise speed must be positive");
  if (!(s.deviation_sigma_km >= 0.0)) fail("deviation sigma must be >= 0");
  for (const auto& z : s.no_fly_zones) {
    if (!(z.radius_km >= 0.0) || !(z.height_km >= 0.0)) fail("no-fly zone radius/height must be >= 0");
  }
  geo::require_valid(s.ground_station);
}

inline constexpr int kMaxPathAttempts = 10'000;
// Boundary-to-boundary paths shorter than this are redrawn.
inline constexpr double kMinPathKm = 500.0;

namespace detail {

// A point on the rectangle boundary; `side` is 0=south, 1=east, 2=north, 3=west.
inline std::pair<GeoPosition, int> boundary_point(const AirspaceSpec& s, double u) {
  const double w = s.lon.span();
  const double h = s.lat.span();
  double d = u * 2.0 * (w + h);
  if (d < w) return {{s.lon.min + d, s.lat.min, 0.0}, 0};
  d -= w;
  if (d < h) return {{s.lon.max, s.lat.min + d, 0.0}, 1};
  d -= h;
  if (d < w) return {{s.lon.max - d, s.lat.max, 0.0}, 2};
  d -= w;
  return {{s.lon.min, std::min(s.lat.max - d, s.lat.max), 0.0}, 3};
}

}  // namespace detail

/// True when the arc keeps strictly outside every zone's radius.
inline bool avoids_no_fly_zones(const GreatCirclePath& path, const AirspaceSpec& s) {
  return std::all_of(s.no_fly_zones.begin(), s.no_fly_zones.end(), [&](const NoFlyZone& z) {
    return geo::distance_to_arc(path, z.center) > z.radius_km;
  });
}

/// True when the arc stays inside the latitude band. Longitude is monotone
/// along these arcs; latitude peaks at the great circle's vertex when that
/// vertex lies on the arc.
inline bool stays_in_latitude_band(const GreatCirclePath& path, const AirspaceSpec& s) {
  const auto a = geo::to_unit(path.start);
  const auto b = geo::to_unit(path.end);
  auto n = geo::cross(a, b);
  const double nn = geo::norm(n);
  if (nn == 0.0) return true;
  n = {n[0] / nn, n[1] / nn, n[2] / nn};
  geo::Vec3 v{-n[2] * n[0], -n[2] * n[1], 1.0 - n[2] * n[2]};  // z projected onto the plane
  const double vn = geo::norm(v);
  if (vn == 0.0) return true;
  v = {v[0] / vn, v[1] / vn, v[2] / vn};
  for (const auto& vertex : {geo::from_unit(v), geo::from_unit({-v[0], -v[1], -v[2]})}) {
    if (geo::distance_to_arc(path, vertex) < 1e-6 && !s.lat.contains(vertex.lat)) return false;
  }
  return true;
}

/// Draws `n_paths` corridors with endpoints on different sides of the airspace
/// boundary, rejecting any that leave the box or pass through a no-fly zone.
inline std::vector<GreatCirclePath> generate_paths(const AirspaceSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(derive_seed(seed, stream::kPaths));
  std::vector<GreatCirclePath> paths;
  paths.reserve(static_cast<std::size_t>(spec.n_paths));
  for (int p = 0; p < spec.n_paths; ++p) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPathAttempts && !placed; ++attempt) {
      const auto [a, side_a] = detail::boundary_point(spec, uniform01(rng));
      const auto [b, side_b] = detail::boundary_point(spec, uniform01(rng));
      if (side_a == side_b) continue;
      if (geo::great_circle_distance(a, b) < kMinPathKm) continue;
      const auto path = geo::make_path(a, b);
      if (!stays_in_latitude_band(path, spec)) continue;
      if (!avoids_no_fly_zones(path, spec)) continue;
      paths.push_back(path);
      placed = true;
    }
    if (!placed) {
      throw std::runtime_error("generate_paths: could not place path " + std::to_string(p) + " in " +
                               std::to_string(kMaxPathAttempts) + " attempts");
    }
  }
  return paths;
}

/// Per-airplane static assignment: path, initial arc offset and cruise altitude.
struct FlightSchedule {
  std::vector<int> path_index;
  std::vector<double> initial_offset;  // arc fraction in [0, 1)
  std::vector<double> cruise_alt_km;
};

/// Round-robin path assignment; airplanes sharing a path are evenly spaced
/// behind a per-path random phase.
inline FlightSchedule make_schedule(const std::vector<GreatCirclePath>& paths,
                                    const AirspaceSpec& spec, std::uint64_t seed) {
  if (paths.empty()) throw std::invalid_argument("make_schedule: no paths");
  Rng rng(derive_seed(seed, stream::kSchedule));
  const auto n_paths = static_cast<int>(paths.size());
  std::vector<double> phase(paths.size());
  for (auto& ph : phase) ph = uniform01(rng);
  std::vector<int> per_path(paths.size(), 0);
  for (int a = 0; a < spec.n_airplanes; ++a) ++per_path[static_cast<std::size_t>(a % n_paths)];

  FlightSchedule sched;
  sched.path_index.resize(static_cast<std::size_t>(spec.n_airplanes));
  sched.initial_offset.resize(sched.path_index.size());
  sched.cruise_alt_km.resize(sched.path_index.size());
  for (int a = 0; a < spec.n_airplanes; ++a) {
    const int p = a % n_paths;
    const int slot = a / n_paths;
    const auto ap = static_cast<std::size_t>(a);
    sched.path_index[ap] = p;
    const double off = phase[static_cast<std::size_t>(p)] +
                       static_cast<double>(slot) / per_path[static_cast<std::size_t>(p)];
    sched.initial_offset[ap] = off - std::floor(off);
    sched.cruise_alt_km[ap] = spec.cruise_alt.min + uniform01(rng) * spec.cruise_alt.span();
  }
  return sched;
}

/// Arc fraction of airplane `a` at time `t_hours` (wraps at the path end).
inline double arc_fraction_at(const FlightSchedule& sched, const std::vector<GreatCirclePath>& paths,
                              const AirspaceSpec& spec, std::size_t a, double t_hours) {
  const auto& path = paths[static_cast<std::size_t>(sched.path_index[a])];
  const double f = sched.initial_offset[a] + spec.cruise_speed_kmh * t_hours / path.length_km;
  return f - std::floor(f);
}

/// Positions on the schedule at time `t_hours`, one per airplane.
inline std::vector<GeoPosition> scheduled_positions(const std::vector<GreatCirclePath>& paths,
                                                    const FlightSchedule& sched,
                                                    const AirspaceSpec& spec, double t_hours) {
  if (!(t_hours >= 0.0)) throw std::invalid_argument("scheduled_positions: t must be >= 0");
  std::vector<GeoPosition> out;
  out.reserve(sched.path_index.size());
  for (std::size_t a = 0; a < sched.path_index.size(); ++a) {
    const auto& path = paths[static_cast<std::size_t>(sched.path_index[a])];
    GeoPosition p = geo::point_along_path(path, arc_fraction_at(sched, paths, spec, a, t_hours));
    p.alt = sched.cruise_alt_km[a];
    out.push_back(p);
  }
  return out;
}

/// One topology realization: airplanes 0..n-1, ground station at the last id.
struct Snapshot {
  int id = 0;
  double time_h = 0.0;
  std::vector<GeoPosition> positions;
  std::vector<double> queue_delay_ms;

  int n_nodes() const { return static_cast<int>(positions.size()); }
  friend bool operator==(const Snapshot&, const Snapshot&) = default;
};

inline GeoPosition clip_to_airspace(GeoPosition p, const AirspaceSpec& spec) {
  p.lon = std::clamp(p.lon, spec.lon.min, spec.lon.max);
  p.lat = std::clamp(p.lat, spec.lat.min, spec.lat.max);
  return p;
}

/// Scheduled positions plus independent north/east Gaussian offsets, clipped to
/// the airspace box. Every queue starts at `queue_ms`.
inline Snapshot sample_snapshot(const std::vector<GreatCirclePath>& paths, const FlightSchedule& sched,
                                const AirspaceSpec& spec, double t_hours, std::uint64_t seed,
                                int snapshot_id = 0, double queue_ms = 5.0) {
  Snapshot snap;
  snap.id = snapshot_id;
  snap.time_h = t_hours;
  Rng rng(derive_seed(seed, stream::kDeviation, static_cast<std::uint64_t>(snapshot_id)));
  for (GeoPosition p : scheduled_positions(paths, sched, spec, t_hours)) {
    if (spec.deviation_sigma_km > 0.0) {
      const double north_km = spec.deviation_sigma_km * normal01(rng);
      const double east_km = spec.deviation_sigma_km * normal01(rng);
      const double dlat = geo::rad2deg(north_km / geo::kEarthRadiusKm);
      const double dlon = geo::rad2deg(east_km / (geo::kEarthRadiusKm * std::cos(geo::deg2rad(p.lat))));
      p.lat += dlat;
      p.lon += dlon;
    }
    snap.positions.push_back(clip_to_airspace(p, spec));
  }
  snap.positions.push_back(spec.ground_station);
  snap.queue_delay_ms.assign(snap.positions.size(), queue_ms);
  return snap;
}

struct Dataset {
  AirspaceSpec spec;
  std::vector<Snapshot> train;
  std::vector<Snapshot> test;
  std::uint64_t seed = 0;
  double window_h = 12.0;

  const Snapshot* find(int snapshot_id) const {
    for (const auto* set : {&train, &test}) {
      for (const auto& s : *set) {
        if (s.id == snapshot_id) return &s;
      }
    }
    return nullptr;
  }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Samples `n_snapshots` timestamps evenly over `window_h` hours. Index k goes to
/// the training set when floor((k+1) f) > floor(k f), so both sets span the
/// whole window; at f = 0.5 this is timestamp parity.
inline Dataset build_dataset(const AirspaceSpec& spec, int n_snapshots, double train_fraction,
                             std::uint64_t seed, double window_h = 12.0, double queue_ms = 5.0) {
  validate(spec);
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("build_dataset: train_fraction must be in (0, 1)");
  }
  if (n_snapshots <= 0) throw std::invalid_argument("build_dataset: n_snapshots must be positive");
  const double n_train = n_snapshots * train_fraction;
  if (std::abs(n_train - std::round(n_train)) > 1e-9) {
    throw std::invalid_argument("build_dataset: n_snapshots * train_fraction must be an integer");
  }
  if (!(window_h > 0.0)) throw std::invalid_argument("build_dataset: window must be positive");

  Dataset d;
  d.spec = spec;
  d.seed = seed;
  d.window_h = window_h;
  const auto paths = generate_paths(spec, seed);
  const auto sched = make_schedule(paths, spec, seed);
  for (int k = 0; k < n_snapshots; ++k) {
    const double t = window_h * k / n_snapshots;
    auto snap = sample_snapshot(paths, sched, spec, t, seed, k, queue_ms);
    const bool to_train = std::floor((k + 1) * train_fraction + 1e-9) > std::floor(k * train_fraction + 1e-9);
    (to_train ? d.train : d.test).push_back(std::move(snap));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Dataset file (line-oriented text, version 1)
//
//   aanet-dataset 1
//   seed <uint64>
//   window_h <double>
//   lon_range <min> <max>
//   lat_range <min> <max>
//   alt_range <min> <max>
//   cruise_alt_range <min> <max>
//   n_paths <int>
//   n_airplanes <int>
//   cruise_speed_kmh <double>
//   deviation_sigma_km <double>
//   ground_station <lon> <lat> <alt>
//   no_fly_zones <count>
//   zone <lon> <lat> <alt> <radius_km> <height_km>        (count lines)
//   snapshots <count>
//   snapshot <id> <train|test> <time_h> <n_nodes>
//   node <id> <lon> <lat> <alt> <queue_delay_ms>          (n_nodes lines)
//   end
//
// Doubles are written in shortest round-trip form.
// ---------------------------------------------------------------------------

inline constexpr int kDatasetVersion = 1;
inline constexpr const char* kDatasetMagic = "aanet-dataset";

inline void write_dataset(std::ostream& out, const Dataset& d) {
  const auto& s = d.spec;
  auto f = format_double;
  out << kDatasetMagic << ' ' << kDatasetVersion << '\n';
  out << "seed " << d.seed << '\n';
  out << "window_h " << f(d.window_h) << '\n';
  out << "lon_range " << f(s.lon.min) << ' ' << f(s.lon.max) << '\n';
  out << "lat_range " << f(s.lat.min) << ' ' << f(s.lat.max) << '\n';
  out << "alt_range " << f(s.alt.min) << ' ' << f(s.alt.max) << '\n';
  out << "cruise_alt_range " << f(s.cruise_alt.min) << ' ' << f(s.cruise_alt.max) << '\n';
  out << "n_paths " << s.n_paths << '\n';
  out << "n_airplanes " << s.n_airplanes << '\n';
  out << "cruise_speed_kmh " << f(s.cruise_speed_kmh) << '\n';
  out << "deviation_sigma_km " << f(s.deviation_sigma_km) << '\n';
  out << "ground_station " << f(s.ground_station.lon) << ' ' << f(s.ground_station.lat) << ' '
      << f(s.ground_station.alt) << '\n';
  out << "no_fly_zones " << s.no_fly_zones.size() << '\n';
  for (const auto& z : s.no_fly_zones) {
    out << "zone " << f(z.center.lon) << ' ' << f(z.center.lat) << ' ' << f(z.center.alt) << ' '
        << f(z.radius_km) << ' ' << f(z.height_km) << '\n';
  }
  out << "snapshots " << d.train.size() + d.test.size() << '\n';
  std::vector<std::pair<const Snapshot*, const char*>> all;
  for (const auto& sn : d.train) all.emplace_back(&sn, "train");
  for (const auto& sn : d.test) all.emplace_back(&sn, "test");
  std::stable_sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.first->id < b.first->id; });
  for (const auto& [sn, split] : all) {
    out << "snapshot " << sn->id << ' ' << split << ' ' << f(sn->time_h) << ' ' << sn->n_nodes() << '\n';
    for (int i = 0; i < sn->n_nodes(); ++i) {
      const auto& p = sn->positions[static_cast<std::size_t>(i)];
      out << "node " << i << ' ' << f(p.lon) << ' ' << f(p.lat) << ' ' << f(p.alt) << ' '
          << f(sn->queue_delay_ms[static_cast<std::size_t>(i)]) << '\n';
    }
  }
  out << "end\n";
}

namespace detail {

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  // Next line split on whitespace; `key` must match the first token.
  std::vector<std::string> expect(const std::string& key, std::size_t n_values) {
    std::string line;
    if (!std::getline(in_, line)) throw SchemaError("dataset truncated: expected '" + key + "'");
    ++line_no_;
    auto toks = split_ws(line);
    if (toks.empty() || toks[0] != key || toks.size() != n_values + 1) {
      throw SchemaError("dataset line " + std::to_string(line_no_) + ": expected '" + key + "' with " +
                        std::to_string(n_values) + " values");
    }
    toks.erase(toks.begin());
    return toks;
  }

  double num(const std::string& tok) const {
    double v = 0.0;
    if (!parse_double(tok, v)) bad(tok);
    return v;
  }
  template <typename Int>
  Int integer(const std::string& tok) const {
    Int v{};
    if (!parse_int(tok, v)) bad(tok);
    return v;
  }

 private:
  [[noreturn]] void bad(const std::string& tok) const {
    throw SchemaError("dataset line " + std::to_string(line_no_) + ": bad number '" + tok + "'");
  }

  std::istream& in_;
  int line_no_ = 0;
};

}  // namespace detail

inline Dataset read_dataset(std::istream& in) {
  detail::LineReader r(in);
  {
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("dataset empty");
    const auto toks = split_ws(line);
    if (toks.size() != 2 || toks[0] != kDatasetMagic) throw SchemaError("not an aanet dataset file");
    int version = 0;
    if (!parse_int(toks[1], version)) throw SchemaError("bad dataset version field");
    if (version != kDatasetVersion) {
      throw VersionError("dataset version " + toks[1] + " unsupported (expected " +
                         std::to_string(kDatasetVersion) + ")");
    }
  }
  Dataset d;
  auto& s = d.spec;
  d.seed = r.integer<std::uint64_t>(r.expect("seed", 1)[0]);
  d.window_h = r.num(r.expect("window_h", 1)[0]);
  auto range = [&](const char* key, Range& out) {
    const auto v = r.expect(key, 2);
    out = {r.num(v[0]), r.num(v[1])};
  };
  range("lon_range", s.lon);
  range("lat_range", s.lat);
  range("alt_range", s.alt);
  range("cruise_alt_range", s.cruise_alt);
  s.n_paths = r.integer<int>(r.expect("n_paths", 1)[0]);
  s.n_airplanes = r.integer<int>(r.expect("n_airplanes", 1)[0]);
  s.cruise_speed_kmh = r.num(r.expect("cruise_speed_kmh", 1)[0]);
  s.deviation_sigma_km = r.num(r.expect("deviation_sigma_km", 1)[0]);
  {
    const auto v = r.expect("ground_station", 3);
    s.ground_station = {r.num(v[0]), r.num(v[1]), r.num(v[2])};
  }
  const auto n_zones = r.integer<std::size_t>(r.expect("no_fly_zones", 1)[0]);
  s.no_fly_zones.clear();
  for (std::size_t z = 0; z < n_zones; ++z) {
    const auto v = r.expect("zone", 5);
    s.no_fly_zones.push_back({{r.num(v[0]), r.num(v[1]), r.num(v[2])}, r.num(v[3]), r.num(v[4])});
  }
  const auto n_snap = r.integer<std::size_t>(r.expect("snapshots", 1)[0]);
  for (std::size_t k = 0; k < n_snap; ++k) {
    const auto h = r.expect("snapshot", 4);
    Snapshot sn;
    sn.id = r.integer<int>(h[0]);
    if (h[1] != "train" && h[1] != "test") throw SchemaError("snapshot split must be train|test");
    sn.time_h = r.num(h[2]);
    const auto n_nodes = r.integer<int>(h[3]);
    if (n_nodes != s.n_nodes()) throw SchemaError("snapshot node count does not match n_airplanes + 1");
    for (int i = 0; i < n_nodes; ++i) {
      const auto v = r.expect("node", 5);
      if (r.integer<int>(v[0]) != i) throw SchemaError("node ids must be consecutive from 0");
      sn.positions.push_back({r.num(v[1]), r.num(v[2]), r.num(v[3])});
      sn.queue_delay_ms.push_back(r.num(v[4]));
    }
    (h[1] == "train" ? d.train : d.test).push_back(std::move(sn));
  }
  r.expect("end", 0);
  return d;
}

inline void save_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_dataset(out, d);
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return read_dataset(in);
}

}  // namespace aanet::scenario
