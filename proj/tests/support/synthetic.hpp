#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "circuitprobe/checkpoint.hpp"

namespace circuitprobe::testing {

inline constexpr std::uint64_t kSyntheticSeed = 20240917;

/// Deterministic weights with the reference geometry. Every value is a
/// splitmix64 draw mapped to a dyadic rational, so float32 storage is exact
/// and scripts/generate_fixtures.py reproduces the same tensors bit for bit.
ModelWeights make_synthetic_model(const ModelConfig& config = {},
                                  std::uint64_t seed = kSyntheticSeed);

/// One tensor in container layout ([out, in] for dense weights).
std::vector<float> synthetic_tensor(const std::string& name, std::size_t count,
                                    std::uint64_t seed = kSyntheticSeed);

/// Small geometry for fast property tests.
ModelConfig tiny_config();

}  // namespace circuitprobe::testing
