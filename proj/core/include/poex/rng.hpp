#pragma once

#include <cstdint>
#include <random>

namespace poex {

// All randomness flows through explicitly seeded generators. No globals.
using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// splitmix64, used to derive independent streams from a base seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t combine_seed(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ mix64(b));
}

inline double rand_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

inline double rand_uniform(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng);
}

}  // namespace poex
