#include "fovea/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "fovea/image_io.hpp"

namespace fovea {

namespace {

// 5x7 glyphs; '#' marks a lit pixel.
const std::map<char, std::array<const char*, 7>>& font() {
  static const std::map<char, std::array<const char*, 7>> f = {
      {'0', {" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "}},
      {'1', {"  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
      {'2', {" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"}},
      {'3', {" ### ", "#   #", "    #", "  ## ", "    #", "#   #", " ### "}},
      {'4', {"   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "}},
      {'5', {"#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "}},
      {'6', {"  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "}},
      {'7', {"#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "}},
      {'8', {" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "}},
      {'9', {" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "}},
      {'A', {" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
      {'B', {"#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "}},
      {'C', {" ### ", "#   #", "#    ", "#    ", "#    ", "#   #", " ### "}},
      {'D', {"#### ", "#   #", "#   #", "#   #", "#   #", "#   #", "#### "}},
      {'E', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"}},
      {'F', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "}},
      {'G', {" ### ", "#   #", "#    ", "# ###", "#   #", "#   #", " ### "}},
      {'H', {"#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
      {'I', {" ### ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
      {'J', {"  ###", "   # ", "   # ", "   # ", "   # ", "#  # ", " ##  "}},
      {'K', {"#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"}},
      {'L', {"#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"}},
      {'M', {"#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"}},
      {'N', {"#   #", "##  #", "# # #", "#  ##", "#   #", "#   #", "#   #"}},
      {'O', {" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
      {'P', {"#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "}},
      {'Q', {" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"}},
      {'R', {"#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"}},
      {'S', {" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "}},
      {'T', {"#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "}},
      {'U', {"#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
      {'V', {"#   #", "#   #", "#   #", "#   #", "#   #", " # # ", "  #  "}},
      {'W', {"#   #", "#   #", "#   #", "# # #", "# # #", "## ##", "#   #"}},
      {'X', {"#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"}},
      {'Y', {"#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "}},
      {'Z', {"#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"}},
      {'.', {"     ", "     ", "     ", "     ", "     ", " ##  ", " ##  "}},
      {',', {"     ", "     ", "     ", "     ", "  ## ", "  ## ", " #   "}},
      {'-', {"     ", "     ", "     ", "#####", "     ", "     ", "     "}},
      {'+', {"     ", "  #  ", "  #  ", "#####", "  #  ", "  #  ", "     "}},
      {'=', {"     ", "     ", "#####", "     ", "#####", "     ", "     "}},
      {':', {"     ", " ##  ", " ##  ", "     ", " ##  ", " ##  ", "     "}},
      {'%', {"##   ", "##  #", "   # ", "  #  ", " #   ", "#  ##", "   ##"}},
      {'(', {"   # ", "  #  ", " #   ", " #   ", " #   ", "  #  ", "   # "}},
      {')', {" #   ", "  #  ", "   # ", "   # ", "   # ", "  #  ", " #   "}},
      {'/', {"    #", "    #", "   # ", "  #  ", " #   ", "#    ", "#    "}},
      {'_', {"     ", "     ", "     ", "     ", "     ", "     ", "#####"}},
      {' ', {"     ", "     ", "     ", "     ", "     ", "     ", "     "}},
  };
  return f;
}

char normalize_char(char ch) {
  if (ch >= 'a' && ch <= 'z') return static_cast<char>(ch - 'a' + 'A');
  return ch;
}

const std::array<Rgb, 6> kPalette = {{{214, 69, 65},
                                      {31, 119, 180},
                                      {44, 160, 44},
                                      {255, 127, 14},
                                      {148, 103, 189},
                                      {23, 190, 207}}};

}  // namespace

Canvas::Canvas(int h, int w, Rgb bg) : h_(h), w_(w) {
  px_.resize(static_cast<std::size_t>(h) * w * 3);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) set(r, c, bg);
}

Canvas::Canvas(const Tensor3& image, int scale) : h_(image.h * scale),
                                                  w_(image.w * scale) {
  if (image.c != 1 && image.c != 3)
    throw std::invalid_argument("Canvas: image must be gray or rgb");
  px_.resize(static_cast<std::size_t>(h_) * w_ * 3);
  for (int r = 0; r < h_; ++r)
    for (int c = 0; c < w_; ++c) {
      const int sr = r / scale, sc = c / scale;
      Rgb col;
      if (image.c == 1) {
        const auto v =
            static_cast<unsigned char>(image.at(sr, sc, 0) * 255.0 + 0.5);
        col = {v, v, v};
      } else {
        col = {static_cast<unsigned char>(image.at(sr, sc, 0) * 255.0 + 0.5),
               static_cast<unsigned char>(image.at(sr, sc, 1) * 255.0 + 0.5),
               static_cast<unsigned char>(image.at(sr, sc, 2) * 255.0 + 0.5)};
      }
      set(r, c, col);
    }
}

void Canvas::set(int r, int c, Rgb color) {
  if (r < 0 || r >= h_ || c < 0 || c >= w_) return;
  const std::size_t i = (static_cast<std::size_t>(r) * w_ + c) * 3;
  px_[i] = color.r;
  px_[i + 1] = color.g;
  px_[i + 2] = color.b;
}

void Canvas::line(int r0, int c0, int r1, int c1, Rgb color) {
  int dr = std::abs(r1 - r0), dc = std::abs(c1 - c0);
  const int sr = r0 < r1 ? 1 : -1, sc = c0 < c1 ? 1 : -1;
  int err = (dc > dr ? dc : -dr) / 2;
  while (true) {
    set(r0, c0, color);
    if (r0 == r1 && c0 == c1) break;
    const int e2 = err;
    if (e2 > -dc) {
      err -= dr;
      c0 += sc;
    }
    if (e2 < dr) {
      err += dc;
      r0 += sr;
    }
  }
}

void Canvas::rect(int r0, int c0, int r1, int c1, Rgb color) {
  line(r0, c0, r0, c1, color);
  line(r1, c0, r1, c1, color);
  line(r0, c0, r1, c0, color);
  line(r0, c1, r1, c1, color);
}

void Canvas::fill_rect(int r0, int c0, int r1, int c1, Rgb color) {
  for (int r = std::min(r0, r1); r <= std::max(r0, r1); ++r)
    for (int c = std::min(c0, c1); c <= std::max(c0, c1); ++c)
      set(r, c, color);
}

void Canvas::disc(int r, int c, int radius, Rgb color) {
  for (int dr = -radius; dr <= radius; ++dr)
    for (int dc = -radius; dc <= radius; ++dc)
      if (dr * dr + dc * dc <= radius * radius) set(r + dr, c + dc, color);
}

void Canvas::text(int r, int c, const std::string& s, Rgb color, int scale) {
  int cx = c;
  const auto& f = font();
  for (char raw : s) {
    const char ch = normalize_char(raw);
    const auto it = f.find(ch);
    if (it != f.end()) {
      for (int gr = 0; gr < 7; ++gr)
        for (int gc = 0; gc < 5; ++gc)
          if (it->second[gr][gc] == '#')
            for (int yr = 0; yr < scale; ++yr)
              for (int yc = 0; yc < scale; ++yc)
                set(r + gr * scale + yr, cx + gc * scale + yc, color);
    }
    cx += 6 * scale;
  }
}

int Canvas::text_width(const std::string& s, int scale) {
  return static_cast<int>(s.size()) * 6 * scale;
}

void Canvas::save(const std::filesystem::path& path) const {
  Tensor3 img(h_, w_, 3);
  for (std::size_t i = 0; i < px_.size(); ++i) img.data[i] = px_[i] / 255.0;
  write_png(path, img);
}

void plot_series(
    const std::filesystem::path& path, const std::string& title,
    const std::vector<std::string>& x_labels,
    const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  if (series.empty()) throw std::invalid_argument("plot_series: no series");
  const int W = 720, H = 480;
  const int left = 70, right = 30, top = 50, bottom = 50;
  Canvas cv(H, W);

  double ymin = 1e300, ymax = -1e300;
  for (const auto& [name, ys] : series)
    for (double v : ys) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  if (ymin == ymax) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double pad = (ymax - ymin) * 0.08;
  ymin -= pad;
  ymax += pad;

  const int x0 = left, x1 = W - right, y0 = H - bottom, y1 = top;
  const Rgb black{0, 0, 0}, gray{200, 200, 200};
  cv.text(10, left, title, black);
  cv.line(y0, x0, y0, x1, black);
  cv.line(y0, x0, y1, x0, black);

  auto ypix = [&](double v) {
    return y0 - static_cast<int>((v - ymin) / (ymax - ymin) * (y0 - y1));
  };
  // horizontal grid with tick labels
  for (int t = 0; t <= 4; ++t) {
    const double v = ymin + (ymax - ymin) * t / 4.0;
    const int y = ypix(v);
    if (t > 0) cv.line(y, x0 + 1, y, x1, gray);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    cv.text(y - 3, 8, buf, black);
  }

  const int npoints = static_cast<int>(x_labels.size());
  auto xpix = [&](int i) {
    if (npoints <= 1) return (x0 + x1) / 2;
    return x0 + static_cast<int>(static_cast<double>(i) / (npoints - 1) *
                                 (x1 - x0));
  };
  for (int i = 0; i < npoints; ++i) {
    const int x = xpix(i);
    cv.line(y0, x, y0 + 4, x, black);
    cv.text(y0 + 8, x - Canvas::text_width(x_labels[i]) / 2, x_labels[i],
            black);
  }

  int legend_y = y1 + 4;
  for (std::size_t s = 0; s < series.size(); ++s) {
    const Rgb col = kPalette[s % kPalette.size()];
    const auto& ys = series[s].second;
    for (int i = 0; i + 1 < static_cast<int>(ys.size()); ++i)
      cv.line(ypix(ys[i]), xpix(i), ypix(ys[i + 1]), xpix(i + 1), col);
    for (int i = 0; i < static_cast<int>(ys.size()); ++i)
      cv.fill_rect(ypix(ys[i]) - 2, xpix(i) - 2, ypix(ys[i]) + 2, xpix(i) + 2,
                   col);
    const int lw = Canvas::text_width(series[s].first);
    cv.fill_rect(legend_y + 2, x1 - lw - 24, legend_y + 4, x1 - lw - 12, col);
    cv.text(legend_y, x1 - lw - 8, series[s].first, black);
    legend_y += 12;
  }
  cv.save(path);
}

}  // namespace fovea
