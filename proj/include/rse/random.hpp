#pragma once

#include <cstdint>
#include <random>

namespace rse {

using Rng = std::mt19937_64;

/// Independent stream `stream` derived from a 64-bit seed.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

/// Per-run seed for Monte-Carlo fan-out.
inline std::uint64_t run_seed(std::uint64_t base_seed, std::uint64_t run_index) {
  return base_seed ^ run_index;
}

}  // namespace rse
