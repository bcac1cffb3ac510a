#pragma once

#include <filesystem>
#include <string>

#include "fovea/tensor.hpp"

namespace fovea {

// 8-bit PNG I/O. Tensors hold intensities in [0, 1]; channels: 1 (gray) or
// 3 (RGB). Writing quantizes to the nearest of 256 levels.
void write_png(const std::filesystem::path& path, const Tensor3& image);
Tensor3 read_png(const std::filesystem::path& path);

inline double quantize8(double v) {
  const int q = static_cast<int>(v * 255.0 + 0.5);
  return (q < 0 ? 0 : q > 255 ? 255 : q) / 255.0;
}

}  // namespace fovea
