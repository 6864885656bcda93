#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "racanet/core/error.hpp"
#include "racanet/core/tensor.hpp"

namespace racanet {

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

// Reads an 8-bit grayscale or RGB PNG into {C,H,W} with values k/255.
inline Tensor read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("malformed-file", "cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("malformed-file", "libpng init failed for " + path);
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("malformed-file", "png decode failed for " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("malformed-file", "unsupported channel count in " + path);
  }
  size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor out(Shape{channels, static_cast<int>(h), static_cast<int>(w)});
  for (int y = 0; y < static_cast<int>(h); ++y)
    for (int x = 0; x < static_cast<int>(w); ++x)
      for (int c = 0; c < channels; ++c)
        out.at(c, y, x) = pixels[y * stride + static_cast<size_t>(x) * channels + c] / 255.0;
  return out;
}

// Writes {1,H,W} or {3,H,W} in [0,1] as an 8-bit PNG (values rounded to the
// 8-bit grid; lossless for tensors already on that grid).
inline void write_png(const std::string& path, const Tensor& img) {
  if (img.ndim() != 3 || (img.dim(0) != 1 && img.dim(0) != 3))
    throw ShapeError("write_png: expected {1|3,H,W}, got " + shape_str(img.shape()));
  int C = img.dim(0), H = img.dim(1), W = img.dim(2);

  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("malformed-file", "cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("malformed-file", "libpng init failed for " + path);
  }
  std::vector<png_byte> pixels(static_cast<size_t>(H) * W * C);
  std::vector<png_bytep> rows(static_cast<size_t>(H));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("malformed-file", "png encode failed for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
               C == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        double v = std::min(1.0, std::max(0.0, img.at(c, y, x)));
        pixels[(static_cast<size_t>(y) * W + x) * C + c] =
            static_cast<png_byte>(std::lround(v * 255.0));
      }
  for (int y = 0; y < H; ++y) rows[y] = pixels.data() + static_cast<size_t>(y) * W * C;
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace racanet
