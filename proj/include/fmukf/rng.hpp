#pragma once

#include <cstdint>
#include <random>

namespace fmukf {

using Rng = std::mt19937_64;

/// splitmix64 finaliser; used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic child seed for (stream, index) under a parent seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
  return mix_seed(mix_seed(mix_seed(seed) ^ stream) ^ index);
}

namespace streams {
inline constexpr std::uint64_t candidate = 1;
inline constexpr std::uint64_t probe = 2;
inline constexpr std::uint64_t dsim = 3;
inline constexpr std::uint64_t trajectory = 4;
inline constexpr std::uint64_t split = 5;
inline constexpr std::uint64_t init_state = 6;
inline constexpr std::uint64_t rudder = 7;
inline constexpr std::uint64_t shaft = 8;
inline constexpr std::uint64_t measurement = 9;
inline constexpr std::uint64_t training = 10;
}  // namespace streams

}  // namespace fmukf
