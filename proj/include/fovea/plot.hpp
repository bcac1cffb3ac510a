#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fovea/tensor.hpp"

namespace fovea {

struct Rgb {
  unsigned char r = 0, g = 0, b = 0;
};

// Tiny RGB raster with just enough drawing for overlays and line charts.
class Canvas {
 public:
  Canvas(int h, int w, Rgb bg = {255, 255, 255});
  explicit Canvas(const Tensor3& image, int scale = 1);  // gray or rgb source

  int height() const { return h_; }
  int width() const { return w_; }

  void set(int r, int c, Rgb color);
  void line(int r0, int c0, int r1, int c1, Rgb color);
  void rect(int r0, int c0, int r1, int c1, Rgb color);       // outline
  void fill_rect(int r0, int c0, int r1, int c1, Rgb color);
  void disc(int r, int c, int radius, Rgb color);
  // 5x7 bitmap font, uppercase + digits + basic punctuation
  void text(int r, int c, const std::string& s, Rgb color, int scale = 1);
  static int text_width(const std::string& s, int scale = 1);

  void save(const std::filesystem::path& path) const;

 private:
  int h_, w_;
  std::vector<unsigned char> px_;
};

// Simple line chart: one polyline per series over categorical x positions.
void plot_series(
    const std::filesystem::path& path, const std::string& title,
    const std::vector<std::string>& x_labels,
    const std::vector<std::pair<std::string, std::vector<double>>>& series);

}  // namespace fovea
