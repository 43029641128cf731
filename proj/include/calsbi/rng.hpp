#pragma once

#include <cstdint>
#include <random>

namespace calsbi {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Independent stream for (seed, index). Work split by index stays
// reproducible whatever the order or number of workers.
inline Rng substream(std::uint64_t seed, std::uint64_t index) {
  return Rng(splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632BE59BD9B4E019ULL)));
}

// Named stream tags used by the trainer and evaluators.
enum class Stream : std::uint64_t {
  init = 1,
  split = 2,
  shuffle = 3,
  proposal = 4,
  negatives = 5,
  evaluation = 6,
};

inline Rng substream(std::uint64_t seed, Stream s) {
  return substream(splitmix64(seed + 0x1234567ULL), static_cast<std::uint64_t>(s));
}

inline double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }
inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace calsbi
