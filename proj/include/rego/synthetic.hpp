#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rego/set_loss.hpp"
#include "rego/tensor.hpp"

namespace rego {

// One rendered scene: 1-5 anti-aliased shapes (triangle, rectangle, disc)
// on a noisy background, with tight normalized ground-truth boxes.
struct SyntheticScene {
    Tensor image;  // [3 x H x W], values in [0, 1]
    GroundTruth gt;
    std::uint64_t id = 0;
};

inline constexpr std::size_t kNumShapeClasses = 3;  // 0 triangle, 1 rectangle, 2 disc

// Deterministic in (n, seed, H, W); scene i depends only on (seed, i).
std::vector<SyntheticScene> generate_dataset(std::size_t n, std::uint64_t seed, std::size_t h,
                                             std::size_t w);

// One tensor binary per image plus one JSON annotation file per split.
void save_dataset(const std::string& dir, const std::string& split,
                  const std::vector<SyntheticScene>& scenes);
std::vector<SyntheticScene> load_dataset(const std::string& dir, const std::string& split);

}  // namespace rego
