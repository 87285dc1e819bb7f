// Spherical-earth geometry for airborne nodes.
//
// Positions are carried in degrees / kilometers at every interface; all
// trigonometry is done in radians internally. The earth is a perfect sphere
// of radius kEarthRadiusKm.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace aanet::geo {

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kDefaultHorizonK = 4.0 / 3.0;

inline constexpr double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline constexpr double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// A node position: longitude (deg E), latitude (deg N), altitude (km AMSL).
struct GeoPosition {
  double lon = 0.0;
  double lat = 0.0;
  double alt = 0.0;

  friend bool operator==(const GeoPosition&, const GeoPosition&) = default;
};

inline bool is_valid(const GeoPosition& p) {
  return std::isfinite(p.lon) && std::isfinite(p.lat) && std::isfinite(p.alt) &&
         p.lon >= -180.0 && p.lon <= 180.0 && p.lat >= -90.0 && p.lat <= 90.0 &&
         p.alt >= 0.0 && p.alt <= 20.0;
}

inline void require_valid(const GeoPosition& p) {
  if (!is_valid(p)) {
    throw std::invalid_argument("invalid GeoPosition (" + std::to_string(p.lon) + ", " +
                                std::to_string(p.lat) + ", " + std::to_string(p.alt) + ")");
  }
}

using Vec3 = std::array<double, 3>;

/// Earth-centered Cartesian coordinates of `p` at radius R_e + altitude.
inline Vec3 to_ecef(const GeoPosition& p) {
  const double r = kEarthRadiusKm + p.alt;
  const double lat = deg2rad(p.lat);
  const double lon = deg2rad(p.lon);
  return {r * std::cos(lat) * std::cos(lon), r * std::cos(lat) * std::sin(lon), r * std::sin(lat)};
}

/// Unit vector of the surface point below `p`.
inline Vec3 to_unit(const GeoPosition& p) {
  const double lat = deg2rad(p.lat);
  const double lon = deg2rad(p.lon);
  return {std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon), std::sin(lat)};
}

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

/// Central angle between the surface projections of `a` and `b`, radians.
/// Uses atan2(|a x b|, a . b), which is well conditioned at every separation.
inline double central_angle(const GeoPosition& a, const GeoPosition& b) {
  const Vec3 ua = to_unit(a);
  const Vec3 ub = to_unit(b);
  return std::atan2(norm(cross(ua, ub)), dot(ua, ub));
}

/// Surface distance in km, altitude ignored.
inline double great_circle_distance(const GeoPosition& a, const GeoPosition& b) {
  return kEarthRadiusKm * central_angle(a, b);
}

/// Straight-line (chord) distance in km between the two points in 3-D.
inline double slant_distance(const GeoPosition& a, const GeoPosition& b) {
  const Vec3 pa = to_ecef(a);
  const Vec3 pb = to_ecef(b);
  const Vec3 d{pa[0] - pb[0], pa[1] - pb[1], pa[2] - pb[2]};
  return norm(d);
}

/// Maximum ground range (km) for line of sight between two altitudes, using an
/// effective earth radius k * R_e.
inline double radio_horizon_range(double alt_a_km, double alt_b_km, double k = kDefaultHorizonK) {
  const double two_kr = 2.0 * k * kEarthRadiusKm;
  return std::sqrt(two_kr * std::max(alt_a_km, 0.0)) + std::sqrt(two_kr * std::max(alt_b_km, 0.0));
}

/// I(i, j): both nodes above each other's radio horizon.
inline bool is_visible(const GeoPosition& a, const GeoPosition& b, double k = kDefaultHorizonK) {
  return great_circle_distance(a, b) <= radio_horizon_range(a.alt, b.alt, k);
}

struct GreatCirclePath {
  GeoPosition start;
  GeoPosition end;
  double length_km = 0.0;

  friend bool operator==(const GreatCirclePath&, const GreatCirclePath&) = default;
};

inline GreatCirclePath make_path(GeoPosition start, GeoPosition end) {
  start.alt = 0.0;
  end.alt = 0.0;
  const double len = great_circle_distance(start, end);
  if (!(len > 0.0)) throw std::invalid_argument("degenerate great-circle path");
  return {start, end, len};
}

inline GeoPosition from_unit(const Vec3& u, double alt = 0.0) {
  const double lat = std::atan2(u[2], std::hypot(u[0], u[1]));
  const double lon = std::atan2(u[1], u[0]);
  return {rad2deg(lon), rad2deg(lat), alt};
}

/// Position at `arc_fraction` of the way along `path` (spherical linear
/// interpolation). Altitude is left at 0; callers assign it.
inline GeoPosition point_along_path(const GreatCirclePath& path, double arc_fraction) {
  if (!(arc_fraction >= 0.0 && arc_fraction <= 1.0)) {
    throw std::invalid_argument("arc_fraction outside [0, 1]: " + std::to_string(arc_fraction));
  }
  if (arc_fraction == 0.0) return path.start;
  if (arc_fraction == 1.0) return path.end;
  const Vec3 a = to_unit(path.start);
  const Vec3 b = to_unit(path.end);
  const double omega = path.length_km / kEarthRadiusKm;
  const double s = std::sin(omega);
  const double wa = std::sin((1.0 - arc_fraction) * omega) / s;
  const double wb = std::sin(arc_fraction * omega) / s;
  return from_unit({wa * a[0] + wb * b[0], wa * a[1] + wb * b[1], wa * a[2] + wb * b[2]});
}

/// Minimum surface distance (km) from `p` to any point of the arc `path`.
inline double distance_to_arc(const GreatCirclePath& path, const GeoPosition& p) {
  const Vec3 a = to_unit(path.start);
  const Vec3 b = to_unit(path.end);
  const Vec3 q = to_unit(p);
  Vec3 n = cross(a, b);
  const double nn = norm(n);
  const double endpoint_min =
      std::min(great_circle_distance(path.start, p), great_circle_distance(path.end, p));
  if (nn == 0.0) return endpoint_min;
  n = {n[0] / nn, n[1] / nn, n[2] / nn};
  // Foot of the perpendicular from q onto the great circle through a and b.
  const double qn = dot(q, n);
  Vec3 foot{q[0] - qn * n[0], q[1] - qn * n[1], q[2] - qn * n[2]};
  const double fn = norm(foot);
  if (fn == 0.0) return endpoint_min;
  foot = {foot[0] / fn, foot[1] / fn, foot[2] / fn};
  // The foot lies on the minor arc iff it sits between a and b.
  const double omega = path.length_km / kEarthRadiusKm;
  const double to_a = std::atan2(norm(cross(a, foot)), dot(a, foot));
  const double to_b = std::atan2(norm(cross(foot, b)), dot(foot, b));
  if (std::abs(to_a + to_b - omega) < 1e-9) {
    return kEarthRadiusKm * std::abs(std::asin(std::clamp(qn, -1.0, 1.0)));
  }
  return endpoint_min;
}

}  // namespace aanet::geo
