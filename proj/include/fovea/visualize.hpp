#pragma once

#include <filesystem>
#include <vector>

#include "fovea/dataset.hpp"
#include "fovea/network.hpp"

namespace fovea {

// For the first k records: run a deterministic episode and write one overlay
// image showing numbered fixations, the glimpse squares at every step, the
// predicted box with its score and the ground-truth box.
std::vector<std::filesystem::path> visualize_episodes(
    const Model& model, const Dataset& ds, int k, int T,
    const std::filesystem::path& out_dir, int scale = 4);

// Pixel-space corners (top, left, bottom, right) of a normalized box on an
// h x w image, matching the box storage convention.
std::array<double, 4> box_to_pixels(const BoundingBox& box, int h, int w);

}  // namespace fovea
