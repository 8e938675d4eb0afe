#pragma once

#include <cstdint>
#include <random>

namespace gdfed {

using Rng = std::mt19937_64;

// Independent, reproducible stream for (seed, purpose, index).
inline Rng make_rng(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

// Stream identifiers for make_rng.
namespace stream {
inline constexpr std::uint64_t kModelInit = 1;
inline constexpr std::uint64_t kLoraInit = 2;
inline constexpr std::uint64_t kPartition = 3;
inline constexpr std::uint64_t kBatches = 4;
inline constexpr std::uint64_t kDropout = 5;
}  // namespace stream

}  // namespace gdfed
