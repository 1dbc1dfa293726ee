#pragma once

#include <cstdint>
#include <random>

namespace throttle_lift {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Named sub-streams so that unrelated consumers of one master seed never
// share a generator.
enum class Stream : std::uint64_t {
  arrivals = 1,
  assignment = 2,
  replicate = 3,
  bootstrap = 4,
};

// Counter-based seed splitting: (master, stream, index) -> child seed.
// Children of distinct (stream, index) pairs are decorrelated by two rounds
// of SplitMix64 mixing.
constexpr std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t index = 0) noexcept {
  std::uint64_t h = splitmix64(master ^ (static_cast<std::uint64_t>(stream) * 0xD1B54A32D192ED03ULL));
  return splitmix64(h + index * 0x9E3779B97F4A7C15ULL);
}

inline Rng make_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  return Rng(seq);
}

// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

}  // namespace throttle_lift
