#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace fovea {

// Dense H x W x C array, row-major, channel innermost. Pixel values are
// expected in [0, 1] when the tensor holds an image.
struct Tensor3 {
  int h = 0, w = 0, c = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(int h_, int w_, int c_, double fill = 0.0)
      : h(h_), w(w_), c(c_),
        data(static_cast<std::size_t>(h_) * w_ * c_, fill) {
    if (h_ < 0 || w_ < 0 || c_ < 0)
      throw std::invalid_argument("Tensor3: negative dimension");
  }

  std::size_t size() const { return data.size(); }

  double& at(int r, int col, int ch) {
    return data[(static_cast<std::size_t>(r) * w + col) * c + ch];
  }
  double at(int r, int col, int ch) const {
    return data[(static_cast<std::size_t>(r) * w + col) * c + ch];
  }

  bool same_shape(const Tensor3& o) const {
    return h == o.h && w == o.w && c == o.c;
  }
};

}  // namespace fovea
