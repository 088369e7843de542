#pragma once

#include <cstdint>
#include <random>

namespace sivsim {

/// The one generator used everywhere in the repo.
using Engine = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Sub-seed for (stream, index) under a master seed. Independent tasks draw
/// from their own sub-seeded engine, so results do not depend on the order
/// in which tasks run.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                    std::uint64_t index = 0) noexcept {
  return splitmix64(splitmix64(splitmix64(master) ^ stream) + index);
}

// Stream identifiers for derive_seed.
enum SeedStream : std::uint64_t {
  kSeedEmitter = 1,
  kSeedBackground = 2,
  kSeedInstrument = 3,
  kSeedDecay = 4,
  kSeedDonors = 5,
  kSeedNoise = 6,
  kSeedGridPoint = 7,
};

/// Uniform in (0, 1), never exactly 0 or 1.
inline double open_uniform(Engine& rng) {
  constexpr double kScale = 1.0 / 9007199254740992.0;  // 2^-53
  return (static_cast<double>(rng() >> 11) + 0.5) * kScale;
}

}  // namespace sivsim
