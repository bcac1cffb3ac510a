#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fovea/network.hpp"

namespace fovea {

struct BenchmarkRow {
  int image_side = 0;
  std::uint64_t counted_macs = 0;   // measured by the forward-pass counter
  std::uint64_t analytic_macs = 0;  // network layers only, from the config
  double episode_seconds = 0.0;     // median wall time per episode
  double global_local_ratio = 0.0;  // M^2 / (n * T * su^2)
};

// Runs deterministic episodes on synthetic images of each size and records
// counted MACs plus the analytic glimpse-vs-whole-image convolution ratio.
std::vector<BenchmarkRow> run_benchmark(const Model& model, int T,
                                        const std::vector<int>& sizes,
                                        int repeats = 5);

void write_benchmark_csv(const std::vector<BenchmarkRow>& rows,
                         const std::filesystem::path& path);

}  // namespace fovea
