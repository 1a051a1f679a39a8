#pragma once

#include <cstdint>
#include <random>

namespace ambireg {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
std::uint64_t splitmix64(std::uint64_t x);

/// Derives an independent stream seed from a base seed and an index, so that
/// draw i of a generator never depends on draws 0..i-1.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

inline Rng make_rng(std::uint64_t seed, std::uint64_t index) { return Rng(mix_seed(seed, index)); }

}  // namespace ambireg
