#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

namespace stochattn {

// SplitMix64 finalizer. Used only to derive engine seeds from (seed, stream) keys.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// FNV-1a, 64 bit.
constexpr std::uint64_t hash_name(std::string_view name) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char ch : name) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Seedable random source. The engine is std::mt19937_64, whose output sequence
/// is fixed by the standard, and every derived quantity (uniforms, normals,
/// bounded integers) is computed here rather than through the implementation-
/// defined <random> distributions. The same (seed, stream_id) therefore gives
/// the same numbers on every platform.
///
/// A stream is single-owner. Work that needs its own randomness gets a child
/// stream from split(), which does not advance the parent.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id), engine_(mix64(mix64(seed) ^ mix64(stream_id + 0x5851F42D4C957F2DULL))) {}

  /// Child stream for a named subsystem of a top-level seed.
  static RngStream for_component(std::uint64_t seed, std::string_view component) {
    return RngStream(mix64(seed ^ hash_name(component)), 0);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  /// Independent child keyed by `key`; equal keys give equal children.
  RngStream split(std::uint64_t key) const {
    return RngStream(mix64(seed_ ^ mix64(stream_id_ + 1)), key);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on the open interval (0, 1) with 53 bits of resolution.
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller (one value per call).
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Unbiased integer in [0, n) by rejection. n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
    std::uint64_t r = engine_();
    while (r >= limit) r = engine_();
    return r % n;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

}  // namespace stochattn
