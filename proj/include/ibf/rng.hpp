#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ibf {

/// Mixes a master seed with a path of identifiers (replicate, particle, ...)
/// into an independent 64-bit stream seed.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

/// A seeded Gaussian/uniform source. One per particle per replicate.
class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Stream tags kept distinct from particle indices.
inline constexpr std::uint64_t kInitialStreamTag = 0xA11CEull << 32;
inline constexpr std::uint64_t kAuxStreamTag = 0xB0Bull << 32;

}  // namespace ibf
