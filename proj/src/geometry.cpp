#include "fovea/geometry.hpp"

#include <stdexcept>

namespace fovea {

double rasterize_iou_oracle(const BoundingBox& a, const BoundingBox& b,
                            int grid_n) {
  if (grid_n < 100) throw std::invalid_argument("grid_n must be >= 100");
  const double cell = 2.0 / grid_n;

  auto inside = [cell](const BoundingBox& box, int r, int c) {
    const double y = -1.0 + (r + 0.5) * cell;
    const double x = -1.0 + (c + 0.5) * cell;
    return y >= box.yx(0) && y < box.yx(0) + box.hw(0) &&
           x >= box.yx(1) && x < box.yx(1) + box.hw(1);
  };

  // Restrict the scan to the joint bounding rectangle of the two boxes.
  const double y0 = std::min(a.yx(0), b.yx(0));
  const double x0 = std::min(a.yx(1), b.yx(1));
  const double y1 = std::max(a.yx(0) + a.hw(0), b.yx(0) + b.hw(0));
  const double x1 = std::max(a.yx(1) + a.hw(1), b.yx(1) + b.hw(1));
  const int r0 = std::max(0, static_cast<int>(std::floor((y0 + 1.0) / cell)) - 1);
  const int c0 = std::max(0, static_cast<int>(std::floor((x0 + 1.0) / cell)) - 1);
  const int r1 = std::min(grid_n, static_cast<int>(std::ceil((y1 + 1.0) / cell)) + 1);
  const int c1 = std::min(grid_n, static_cast<int>(std::ceil((x1 + 1.0) / cell)) + 1);

  std::int64_t na = 0, nb = 0, ninter = 0;
  for (int r = r0; r < r1; ++r) {
    for (int c = c0; c < c1; ++c) {
      const bool ia = inside(a, r, c);
      const bool ib = inside(b, r, c);
      na += ia;
      nb += ib;
      ninter += ia && ib;
    }
  }
  const std::int64_t nunion = na + nb - ninter;
  if (nunion == 0) return 0.0;
  return static_cast<double>(ninter) / static_cast<double>(nunion);
}

}  // namespace fovea
