#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace anchormem {

// Stable, platform-independent integer mixing. Everything that must be
// bitwise reproducible (mock embeddings, projection axes, workloads) derives
// its randomness from these two functions instead of <random> distributions,
// whose output is implementation-defined.

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view text,
                                std::uint64_t seed = 0xCBF29CE484222325ULL) noexcept {
  std::uint64_t h = seed;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Small deterministic generator (splitmix64 stream).
class SplitMix {
 public:
  explicit SplitMix(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (one value per call; the pair's twin is dropped).
  double normal() noexcept;

  std::uint64_t below(std::uint64_t bound) noexcept { return bound == 0 ? 0 : next() % bound; }

 private:
  std::uint64_t state_;
};

/// Lowercased whitespace tokens with leading/trailing punctuation stripped.
std::vector<std::string> normalized_tokens(std::string_view text);

/// Hex rendering of a 64-bit value, 16 lowercase digits.
std::string hex64(std::uint64_t value);

}  // namespace anchormem
