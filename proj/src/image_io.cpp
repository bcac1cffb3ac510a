#include "fovea/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace fovea {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::filesystem::path& path, const Tensor3& image) {
  if (image.c != 1 && image.c != 3)
    throw std::invalid_argument("write_png: channels must be 1 or 3");
  if (image.h <= 0 || image.w <= 0)
    throw std::invalid_argument("write_png: empty image");

  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw std::runtime_error("write_png: cannot open " + path.string());

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("write_png: png_create_write_struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("write_png: png_create_info_struct");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng failure for " + path.string());
  }
  png_init_io(png, fp.get());
  // fixed settings so identical pixels give identical bytes
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, image.w, image.h, 8,
               image.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<std::size_t>(image.w) * image.c);
  for (int r = 0; r < image.h; ++r) {
    for (int c = 0; c < image.w; ++c)
      for (int ch = 0; ch < image.c; ++ch) {
        const double v = image.at(r, c, ch);
        int q = static_cast<int>(v * 255.0 + 0.5);
        q = q < 0 ? 0 : q > 255 ? 255 : q;
        row[static_cast<std::size_t>(c) * image.c + ch] =
            static_cast<png_byte>(q);
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor3 read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw std::runtime_error("read_png: cannot open " + path.string());

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw std::runtime_error("read_png: not a PNG file: " + path.string());

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("read_png: png_create_read_struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("read_png: png_create_info_struct");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: libpng failure for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  // normalize every input to 8-bit gray or RGB
  png_set_strip_16(png);
  png_set_packing(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE)
    png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_ALPHA)
    png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int ch = static_cast<int>(png_get_channels(png, info));
  if (ch != 1 && ch != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: unsupported channel count in " +
                             path.string());
  }

  Tensor3 out(h, w, ch);
  std::vector<png_byte> row(static_cast<std::size_t>(w) * ch);
  for (int r = 0; r < h; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (int c = 0; c < w; ++c)
      for (int k = 0; k < ch; ++k)
        out.at(r, c, k) =
            row[static_cast<std::size_t>(c) * ch + k] / 255.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace fovea
