#pragma once

// Seed derivation. Every stochastic stage derives its own stream from the
// master seed and a stage name, and every replicate derives its own engine
// from (stage seed, replicate index). Results therefore never depend on how
// replicates are scheduled across workers.
//
//   stage_seed   = mix(master ^ fnv1a64(stage_name))
//   replica_seed = mix(stage_seed + mix(index + 1))
//
// where mix is the SplitMix64 finaliser.

#include <cstdint>
#include <random>
#include <string_view>

namespace oscar {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr std::uint64_t stage_seed(std::uint64_t master, std::string_view stage) noexcept {
  return splitmix64(master ^ fnv1a64(stage));
}

inline constexpr std::uint64_t replica_seed(std::uint64_t stage, std::uint64_t index) noexcept {
  return splitmix64(stage + splitmix64(index + 1));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

inline Rng make_rng(std::uint64_t stage, std::uint64_t index) { return Rng(replica_seed(stage, index)); }

}  // namespace oscar
