#include "fovea/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <stdexcept>

#include "fovea/macs.hpp"
#include "fovea/rng.hpp"

namespace fovea {

std::vector<BenchmarkRow> run_benchmark(const Model& model, int T,
                                        const std::vector<int>& sizes,
                                        int repeats) {
  const ModelConfig& cfg = model.config();
  const int footprint = cfg.glimpse.crop_sides().back();
  std::vector<BenchmarkRow> rows;
  for (int side : sizes) {
    if (side < footprint)
      throw std::invalid_argument(
          "benchmark: image side smaller than the largest glimpse");
    // synthetic image with deterministic texture
    Tensor3 image(side, side, cfg.channels);
    Rng rng(42);
    for (double& v : image.data) v = rng.uniform();

    BenchmarkRow row;
    row.image_side = side;
    row.analytic_macs = episode_mac_count(cfg, T);
    row.global_local_ratio =
        static_cast<double>(side) * side /
        (static_cast<double>(cfg.glimpse.n) * T * cfg.glimpse.su *
         cfg.glimpse.su);

    std::vector<double> times;
    for (int rep = 0; rep < std::max(1, repeats); ++rep) {
      macs::reset();
      const auto t0 = std::chrono::steady_clock::now();
      EpisodeOptions opt;
      opt.T = T;
      opt.mode = EpisodeMode::kDeterministic;
      run_episode(model, image, opt);
      const auto t1 = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double>(t1 - t0).count());
      row.counted_macs = macs::read();
    }
    std::sort(times.begin(), times.end());
    row.episode_seconds = times[times.size() / 2];
    rows.push_back(row);
  }
  return rows;
}

void write_benchmark_csv(const std::vector<BenchmarkRow>& rows,
                         const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("benchmark: cannot write " + path.string());
  out << "image_side,counted_macs,analytic_network_macs,episode_seconds,"
         "global_local_ratio\n";
  for (const auto& r : rows)
    out << r.image_side << "," << r.counted_macs << "," << r.analytic_macs
        << "," << r.episode_seconds << "," << r.global_local_ratio << "\n";
}

}  // namespace fovea
