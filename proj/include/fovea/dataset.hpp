#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fovea/geometry.hpp"
#include "fovea/tensor.hpp"

namespace fovea {

// Raised for missing, malformed or mismatched data on disk.
struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One dataset record: pixels, ground-truth box, optional class label.
struct AnnotatedImage {
  Tensor3 pixels;       // values in [0, 1]
  BoundingBox bbox;     // normalized, fully inside the image
  std::optional<int> label;
  std::string id;
};

using Dataset = std::vector<AnnotatedImage>;

struct GeneratorConfig {
  int canvas_size = 56;
  double scale_lo = 0.3;
  double scale_hi = 1.5;
  int noise_patch_count = 0;
  int noise_patch_size = 6;
  std::uint64_t seed = 0;
  std::string id_prefix = "rec";
};

// Tight box of nonzero pixels, in pixel indices (inclusive). Returns false if
// the image is entirely zero.
bool tight_nonzero_box(const Tensor3& img, int& rmin, int& cmin, int& rmax,
                       int& cmax);

// Pixel-cell box -> normalized coordinates. Rows/cols are inclusive indices.
BoundingBox pixel_box_to_norm(int rmin, int cmin, int rmax, int cmax, int h,
                              int w);

// Scaled digits on a dark 56x56 canvas; box is the tight ink box.
Dataset generate_mso(const Dataset& source_digits, const GeneratorConfig& cfg);

// MSO plus noise patches cropped from the same source split.
Dataset generate_msno(const Dataset& source_digits, const GeneratorConfig& cfg);

// Unscaled digit on a 100x100 canvas with 8x8 clutter crops from other digits.
Dataset generate_ct100(const Dataset& source_digits, const GeneratorConfig& cfg);

// Directory layout: images/<id>.png + annotations.jsonl (one record per line).
void save_dataset(const Dataset& ds, const std::filesystem::path& root);
Dataset load_dataset(const std::filesystem::path& root);

// Real-world-format loader: same directory layout, RGB pixels, no labels,
// every box checked in-bounds.
Dataset load_fcar(const std::filesystem::path& root);

// Deterministic stroke-rendered 28x28 digit corpus, a stand-in for the
// standard handwritten-digit files when those are not on disk. Labels cycle
// 0..9; boxes are tight ink boxes.
Dataset synthesize_digit_corpus(int count, std::uint64_t seed,
                                const std::string& id_prefix = "digit");

// idx-ubyte pair (images + labels) as distributed for the standard corpus.
Dataset load_idx(const std::filesystem::path& images_file,
                 const std::filesystem::path& labels_file,
                 const std::string& id_prefix = "idx");

// Resolve a source-digit path: a dataset directory, or a directory holding
// train/t10k idx-ubyte files (split selects which pair).
Dataset load_digit_source(const std::filesystem::path& path,
                          const std::string& split);

// One-call construction of a standard benchmark set (mso | msno | ct100) from
// either a provided source corpus or, when `source` is null, the synthetic
// one. Fully determined by (kind, split, seed, count).
Dataset build_benchmark_dataset(const std::string& kind,
                                const std::string& split, std::uint64_t seed,
                                int count, const Dataset* source = nullptr);

}  // namespace fovea
