// Small shared helpers: seed streams, exact double text I/O, errors.
#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace aanet {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent sub-streams from one seed.
inline constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for the stream named by (`seed`, `tag`, `index`).
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag,
                                           std::uint64_t index = 0) {
  return mix64(mix64(mix64(seed) ^ tag) ^ index);
}

namespace stream {
inline constexpr std::uint64_t kPaths = 0x70617468;
inline constexpr std::uint64_t kSchedule = 0x73636865;
inline constexpr std::uint64_t kDeviation = 0x64657669;
inline constexpr std::uint64_t kInit = 0x696e6974;
inline constexpr std::uint64_t kEpisode = 0x65706973;
inline constexpr std::uint64_t kReplay = 0x7265706c;
inline constexpr std::uint64_t kHeldOut = 0x686f6c64;
inline constexpr std::uint64_t kCongestion = 0x636f6e67;
inline constexpr std::uint64_t kEvalPairs = 0x6576616c;
inline constexpr std::uint64_t kExplore = 0x6578706c;
}  // namespace stream

/// Uniform double in [0, 1) built from 53 random bits. Unlike
/// std::uniform_real_distribution its output is fixed across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

/// Standard normal draw (Box-Muller, one value per call).
inline double normal01(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// Shortest decimal text that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return {buf, end};
}

inline bool parse_double(std::string_view s, double& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t begin = 0;
  while (true) {
    const auto pos = s.find(sep, begin);
    out.emplace_back(s.substr(begin, pos - begin));
    if (pos == std::string_view::npos) break;
    begin = pos + 1;
  }
  return out;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

/// FNV-1a, 64-bit. Stable across platforms; used for config hashes.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// File-format errors shared by the dataset and parameter readers.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VersionError : SchemaError {
  using SchemaError::SchemaError;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace aanet
