#pragma once

#include <cstdint>
#include <random>

namespace pearl {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stream purposes; keeps e.g. exploration noise independent of system draws.
enum class Stream : std::uint64_t {
  system = 1,
  explore = 2,
  sample = 3,
  init = 4,
  dataset = 5,
  pretrain = 6,
};

/// Independent generator for (seed, purpose, index). Thread count and call
/// order never change what a given index sees.
inline Rng stream_rng(std::uint64_t seed, Stream purpose, std::uint64_t index) {
  const std::uint64_t a = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(purpose)));
  const std::uint64_t b = splitmix64(a ^ splitmix64(index + 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32)};
  return Rng(seq);
}

inline std::uint64_t derive_seed(std::uint64_t seed, Stream purpose, std::uint64_t index) {
  return splitmix64(splitmix64(seed ^ static_cast<std::uint64_t>(purpose) << 56) ^ index);
}

}  // namespace pearl
