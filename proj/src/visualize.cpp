#include "fovea/visualize.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "fovea/glimpse.hpp"
#include "fovea/plot.hpp"

namespace fovea {

std::array<double, 4> box_to_pixels(const BoundingBox& box, int h, int w) {
  const double top = (box.yx(0) + 1.0) / 2.0 * h;
  const double left = (box.yx(1) + 1.0) / 2.0 * w;
  return {top, left, top + box.hw(0) / 2.0 * h, left + box.hw(1) / 2.0 * w};
}

std::vector<std::filesystem::path> visualize_episodes(
    const Model& model, const Dataset& ds, int k, int T,
    const std::filesystem::path& out_dir, int scale) {
  if (k > static_cast<int>(ds.size()))
    throw std::invalid_argument("visualize: k exceeds dataset size");
  std::filesystem::create_directories(out_dir);
  const ModelConfig& cfg = model.config();

  const Rgb kGt{44, 160, 44};        // ground truth: green
  const Rgb kPred{214, 69, 65};      // prediction: red
  const Rgb kFix{255, 215, 0};       // fixations: gold
  const Rgb kGlimpse{100, 149, 237}; // glimpse squares: tinted blue

  std::vector<std::filesystem::path> written;
  for (int i = 0; i < k; ++i) {
    const AnnotatedImage& rec = ds[i];
    EpisodeOptions opt;
    opt.T = T;
    opt.mode = EpisodeMode::kDeterministic;
    Trajectory traj = run_episode(model, rec.pixels, opt);

    Canvas cv(rec.pixels, scale);
    const int H = rec.pixels.h, W = rec.pixels.w;

    // glimpse footprints, faint, every step
    const auto sides = cfg.glimpse.crop_sides();
    for (int t = 0; t < T; ++t) {
      const auto [cy, cx] =
          to_pixel(FixationPoint{traj.fixations[t]}, H, W);
      for (int side : sides) {
        const long r0 = std::lround(cy - (side - 1) / 2.0);
        const long c0 = std::lround(cx - (side - 1) / 2.0);
        cv.rect(static_cast<int>(r0) * scale, static_cast<int>(c0) * scale,
                static_cast<int>(r0 + side) * scale - 1,
                static_cast<int>(c0 + side) * scale - 1, kGlimpse);
      }
    }

    // ground truth, then prediction on top
    const auto gt = box_to_pixels(rec.bbox, H, W);
    cv.rect(static_cast<int>(gt[0] * scale), static_cast<int>(gt[1] * scale),
            static_cast<int>(gt[2] * scale) - 1,
            static_cast<int>(gt[3] * scale) - 1, kGt);
    const StepOutput& last = traj.steps.back();
    const auto pb = box_to_pixels(last.box, H, W);
    cv.rect(static_cast<int>(pb[0] * scale), static_cast<int>(pb[1] * scale),
            static_cast<int>(pb[2] * scale) - 1,
            static_cast<int>(pb[3] * scale) - 1, kPred);
    char score[32];
    std::snprintf(score, sizeof(score), "%.2f", last.score);
    cv.text(static_cast<int>(pb[0] * scale) - 9,
            static_cast<int>(pb[1] * scale), score, kPred);

    // numbered fixation points, drawn last so they stay visible
    for (int t = 0; t < T; ++t) {
      const auto [cy, cx] =
          to_pixel(FixationPoint{traj.fixations[t]}, H, W);
      const int r = static_cast<int>(std::lround(cy * scale));
      const int c = static_cast<int>(std::lround(cx * scale));
      cv.disc(r, c, std::max(2, scale / 2), kFix);
      cv.text(r + 3, c + 3, std::to_string(t + 1), kFix);
    }

    const std::filesystem::path file = out_dir / (rec.id + "_episode.png");
    cv.save(file);
    written.push_back(file);
  }
  return written;
}

}  // namespace fovea
