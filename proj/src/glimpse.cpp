#include "fovea/glimpse.hpp"

#include <cmath>
#include <stdexcept>

#include "fovea/macs.hpp"

namespace fovea {

void GlimpseConfig::validate() const {
  if (s0 < 4) throw std::invalid_argument("glimpse: s0 must be >= 4");
  if (n < 1) throw std::invalid_argument("glimpse: n must be >= 1");
  if (sf <= 1.0) throw std::invalid_argument("glimpse: sf must be > 1");
  if (su < 4) throw std::invalid_argument("glimpse: su must be >= 4");
}

std::vector<int> GlimpseConfig::crop_sides() const {
  std::vector<int> sides(n);
  for (int k = 0; k < n; ++k)
    sides[k] = static_cast<int>(std::lround(s0 * std::pow(sf, k)));
  return sides;
}

namespace {

// Square crop of side `side` centered at fractional pixel (cy, cx). The
// top-left corner is rounded half away from zero; out-of-image cells are 0.
Tensor3 crop_centered(const Tensor3& img, double cy, double cx, int side,
                      std::uint64_t* cells) {
  const long r0 = std::lround(cy - (side - 1) / 2.0);
  const long c0 = std::lround(cx - (side - 1) / 2.0);
  Tensor3 out(side, side, img.c, 0.0);
  for (int r = 0; r < side; ++r) {
    const long sr = r0 + r;
    if (sr < 0 || sr >= img.h) continue;
    for (int c = 0; c < side; ++c) {
      const long sc = c0 + c;
      if (sc < 0 || sc >= img.w) continue;
      for (int ch = 0; ch < img.c; ++ch)
        out.at(r, c, ch) = img.at(static_cast<int>(sr), static_cast<int>(sc), ch);
    }
  }
  if (cells) *cells += static_cast<std::uint64_t>(side) * side;
  return out;
}

}  // namespace

Tensor3 resize_area(const Tensor3& src, int out_h, int out_w) {
  Tensor3 out(out_h, out_w, src.c, 0.0);
  const double ry = static_cast<double>(src.h) / out_h;
  const double rx = static_cast<double>(src.w) / out_w;
  for (int r = 0; r < out_h; ++r) {
    const double y0 = r * ry, y1 = (r + 1) * ry;
    const int ir0 = static_cast<int>(std::floor(y0));
    const int ir1 = std::min(src.h, static_cast<int>(std::ceil(y1)));
    for (int c = 0; c < out_w; ++c) {
      const double x0 = c * rx, x1 = (c + 1) * rx;
      const int ic0 = static_cast<int>(std::floor(x0));
      const int ic1 = std::min(src.w, static_cast<int>(std::ceil(x1)));
      for (int ch = 0; ch < src.c; ++ch) {
        double acc = 0.0;
        for (int sr = ir0; sr < ir1; ++sr) {
          const double wy =
              std::min<double>(sr + 1, y1) - std::max<double>(sr, y0);
          for (int sc = ic0; sc < ic1; ++sc) {
            const double wx =
                std::min<double>(sc + 1, x1) - std::max<double>(sc, x0);
            acc += wy * wx * src.at(sr, sc, ch);
          }
        }
        out.at(r, c, ch) = acc / (ry * rx);
      }
    }
  }
  macs::add(static_cast<std::uint64_t>(out.size()) *
            static_cast<std::uint64_t>(std::ceil(ry) + 1) *
            static_cast<std::uint64_t>(std::ceil(rx) + 1));
  return out;
}

Tensor3 resize_bilinear(const Tensor3& src, int out_h, int out_w) {
  Tensor3 out(out_h, out_w, src.c, 0.0);
  // corner-aligned mapping; degenerate axes replicate
  const double sy = out_h > 1 ? static_cast<double>(src.h - 1) / (out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(src.w - 1) / (out_w - 1) : 0.0;
  for (int r = 0; r < out_h; ++r) {
    const double fy = r * sy;
    const int y0 = std::min(static_cast<int>(fy), src.h - 1);
    const int y1 = std::min(y0 + 1, src.h - 1);
    const double ty = fy - y0;
    for (int c = 0; c < out_w; ++c) {
      const double fx = c * sx;
      const int x0 = std::min(static_cast<int>(fx), src.w - 1);
      const int x1 = std::min(x0 + 1, src.w - 1);
      const double tx = fx - x0;
      for (int ch = 0; ch < src.c; ++ch) {
        const double top = (1 - tx) * src.at(y0, x0, ch) + tx * src.at(y0, x1, ch);
        const double bot = (1 - tx) * src.at(y1, x0, ch) + tx * src.at(y1, x1, ch);
        out.at(r, c, ch) = (1 - ty) * top + ty * bot;
      }
    }
  }
  macs::add(static_cast<std::uint64_t>(out.size()) * 4);
  return out;
}

Tensor3 resize_image(const Tensor3& src, int out_h, int out_w) {
  if (out_h == src.h && out_w == src.w) return src;
  if (out_h <= src.h && out_w <= src.w) return resize_area(src, out_h, out_w);
  return resize_bilinear(src, out_h, out_w);
}

GlimpsePyramid extract_pyramid(const Tensor3& image, const FixationPoint& fix,
                               const GlimpseConfig& cfg, ExtractStats* stats) {
  cfg.validate();
  const auto [cy, cx] = to_pixel(fix, image.h, image.w);
  GlimpsePyramid pyr;
  pyr.source_sizes = cfg.crop_sides();
  pyr.patches.reserve(cfg.n);
  std::uint64_t cells = 0;
  for (int side : pyr.source_sizes) {
    Tensor3 crop = crop_centered(image, cy, cx, side, &cells);
    pyr.patches.push_back(resize_image(crop, cfg.su, cfg.su));
  }
  if (stats) stats->cells_visited += cells;
  return pyr;
}

}  // namespace fovea
