#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace evomoe {

using Rng = std::mt19937_64;

// Stateless 64-bit mix used to derive independent stream seeds, e.g.
// derive_seed(seed, expert_index).
std::uint64_t mix_seed(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// Uniform draw on the open interval (0, 1) from the top 53 bits.
double uniform_open01(Rng& rng);
// Uniform draw on [0, 1).
double uniform01(Rng& rng);
double normal(Rng& rng, double mean, double stddev);

// Text round-trip of the engine state (for checkpoints).
std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& state);

}  // namespace evomoe
