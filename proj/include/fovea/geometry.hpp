#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace fovea {

using Vec2 = Eigen::Vector2d;

// Everything lives in one normalized frame: both axes span [-1, 1] with the
// image center at (0, 0), y before x.

constexpr double kIouFloor = 1e-8;
constexpr double kMinBoxSide = 0.01;
constexpr double kMaxBoxSide = 2.0;

// Axis-aligned box: top-left corner plus size, normalized coordinates.
struct BoundingBox {
  Vec2 yx{0.0, 0.0};  // top-left, each component in [-1, 1]
  Vec2 hw{kMinBoxSide, kMinBoxSide};  // height/width, each in [0.01, 2]

  bool valid() const {
    return yx.minCoeff() >= -1.0 && yx.maxCoeff() <= 1.0 &&
           hw.minCoeff() >= kMinBoxSide && hw.maxCoeff() <= kMaxBoxSide;
  }
};

struct FixationPoint {
  Vec2 p{0.0, 0.0};  // components in [-1, 1]
};

// Value ranges enforced on the raw detection head outputs.
struct ClipLimits {
  double pos_lo = -1.0, pos_hi = 1.0;
  double size_lo = kMinBoxSide, size_hi = kMaxBoxSide;
  double score_lo = 0.0, score_hi = 1.0;
};

inline Vec2 box_center(const BoundingBox& b) { return b.yx + 0.5 * b.hw; }

// Intersection-over-union clamped into [1e-8, 1]. The floor keeps -log(iou)
// finite for disjoint boxes; reward and detection loss both consume this
// clamped value.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iy = std::min(a.yx(0) + a.hw(0), b.yx(0) + b.hw(0)) -
                    std::max(a.yx(0), b.yx(0));
  const double ix = std::min(a.yx(1) + a.hw(1), b.yx(1) + b.hw(1)) -
                    std::max(a.yx(1), b.yx(1));
  double inter = 0.0;
  if (iy > 0.0 && ix > 0.0) inter = iy * ix;
  const double uni = a.hw.prod() + b.hw.prod() - inter;
  return std::clamp(inter / uni, kIouFloor, 1.0);
}

inline double clampd(double v, double lo, double hi) {
  return std::min(std::max(v, lo), hi);
}

struct ScoredBox {
  BoundingBox box;
  double score = 0.0;
};

// Clamp raw detection-head outputs into their configured ranges.
inline ScoredBox clip_detection(const Vec2& raw_yx, const Vec2& raw_hw,
                                double raw_s, const ClipLimits& lim) {
  ScoredBox out;
  out.box.yx = {clampd(raw_yx(0), lim.pos_lo, lim.pos_hi),
                clampd(raw_yx(1), lim.pos_lo, lim.pos_hi)};
  out.box.hw = {clampd(raw_hw(0), lim.size_lo, lim.size_hi),
                clampd(raw_hw(1), lim.size_lo, lim.size_hi)};
  out.score = clampd(raw_s, lim.score_lo, lim.score_hi);
  return out;
}

// Test oracle: discretize [-1,1]^2 into grid_n^2 cells and count cell centers
// covered by each box. Returns the raw count ratio, no clamping.
double rasterize_iou_oracle(const BoundingBox& a, const BoundingBox& b,
                            int grid_n);

}  // namespace fovea
