#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fovea/geometry.hpp"
#include "fovea/tensor.hpp"

namespace fovea {

// Retina-like capture parameters. Crop sides grow as s0 * sf^(k-1); every
// crop is resampled to su x su.
struct GlimpseConfig {
  int s0 = 8;       // side of the smallest crop, pixels
  int n = 3;        // number of scales
  double sf = 2.0;  // scale factor between consecutive crops
  int su = 16;      // unified output side

  void validate() const;
  std::vector<int> crop_sides() const;  // round(s0 * sf^(k-1)), k = 1..n
};

struct GlimpsePyramid {
  std::vector<Tensor3> patches;   // n entries, each su x su x C
  std::vector<int> source_sizes;  // the crop sides, smallest first
};

struct ExtractStats {
  std::uint64_t cells_visited = 0;  // crop cells touched; independent of H, W
};

// Map a normalized point to fractional pixel coordinates (pixel centers).
inline std::pair<double, double> to_pixel(const FixationPoint& p, int h,
                                          int w) {
  return {(p.p(0) + 1.0) / 2.0 * (h - 1), (p.p(1) + 1.0) / 2.0 * (w - 1)};
}

// Crop n concentric squares centered on the fixation, zero-padded outside the
// image, each resized to su x su (area averaging down, bilinear up).
GlimpsePyramid extract_pyramid(const Tensor3& image, const FixationPoint& fix,
                               const GlimpseConfig& cfg,
                               ExtractStats* stats = nullptr);

// Resampling kernels, exposed for the dataset generators.
Tensor3 resize_area(const Tensor3& src, int out_h, int out_w);
Tensor3 resize_bilinear(const Tensor3& src, int out_h, int out_w);
Tensor3 resize_image(const Tensor3& src, int out_h, int out_w);

}  // namespace fovea
