#include "ddit/raster.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

namespace ddit {

Tensor3<double> to_signed_planar(const RgbImage& img) {
  Tensor3<double> t(3, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const Rgb p = img.at(y, x);
      t.at(0, y, x) = p.r / 127.5 - 1.0;
      t.at(1, y, x) = p.g / 127.5 - 1.0;
      t.at(2, y, x) = p.b / 127.5 - 1.0;
    }
  return t;
}

RgbImage from_signed_planar(const Tensor3<double>& t) {
  require(t.channels == 3, ErrorKind::shape, "from_signed_planar: expected 3 channels, got " + t.shape_string());
  auto q = [](double v) {
    const double s = std::clamp((v + 1.0) * 127.5, 0.0, 255.0);
    return static_cast<std::uint8_t>(std::lround(s));
  };
  RgbImage img(t.width, t.height);
  for (int y = 0; y < t.height; ++y)
    for (int x = 0; x < t.width; ++x)
      img.at(y, x) = {q(t.at(0, y, x)), q(t.at(1, y, x)), q(t.at(2, y, x))};
  return img;
}

Tensor3<double> to_unit_planar(const RgbImage& img) {
  Tensor3<double> t(3, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const Rgb p = img.at(y, x);
      t.at(0, y, x) = p.r / 255.0;
      t.at(1, y, x) = p.g / 255.0;
      t.at(2, y, x) = p.b / 255.0;
    }
  return t;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_or_throw(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) fail(ErrorKind::io, "cannot open " + path.string());
  return f;
}

// Shared writer: rows are already packed in the target PNG layout.
void write_png(const std::filesystem::path& path, int width, int height, int bit_depth,
               int color_type, std::span<const Rgb> palette,
               const std::vector<std::vector<png_byte>>& rows) {
  FilePtr f = open_or_throw(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::io, "libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::io, "libpng write failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_color> pal;
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    for (const Rgb& c : palette) pal.push_back({c.r, c.g, c.b});
    png_set_PLTE(png, info, pal.data(), static_cast<int>(pal.size()));
  }
  png_write_info(png, info);
  for (const auto& row : rows) png_write_row(png, row.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(f.get()) != 0) fail(ErrorKind::io, "flush failed for " + path.string());
}

struct Decoded {
  int width = 0, height = 0, bit_depth = 0, color_type = 0;
  std::vector<std::vector<png_byte>> rows;
};

Decoded read_png(const std::filesystem::path& path, bool expand_to_rgb) {
  FilePtr f = open_or_throw(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::io, "libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::io, "cannot decode PNG " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  Decoded d;
  d.width = static_cast<int>(png_get_image_width(png, info));
  d.height = static_cast<int>(png_get_image_height(png, info));
  d.bit_depth = png_get_bit_depth(png, info);
  d.color_type = png_get_color_type(png, info);
  if (d.bit_depth == 16) png_set_strip_16(png);
  if (expand_to_rgb) {
    if (d.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (d.color_type == PNG_COLOR_TYPE_GRAY || d.color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
      if (d.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
      png_set_gray_to_rgb(png);
    }
    if (d.color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  } else {
    // Keep indices / gray levels; unpack sub-byte depths into one byte each.
    if (d.bit_depth < 8) png_set_packing(png);
    if (d.color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  const auto rowbytes = png_get_rowbytes(png, info);
  d.rows.assign(d.height, std::vector<png_byte>(rowbytes));
  for (auto& row : d.rows) png_read_row(png, row.data(), nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return d;
}

}  // namespace

void write_png_rgb(const std::filesystem::path& path, const RgbImage& img) {
  std::vector<std::vector<png_byte>> rows(img.height, std::vector<png_byte>(3 * img.width));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const Rgb p = img.at(y, x);
      rows[y][3 * x] = p.r;
      rows[y][3 * x + 1] = p.g;
      rows[y][3 * x + 2] = p.b;
    }
  write_png(path, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, {}, rows);
}

void write_png_paletted(const std::filesystem::path& path, const LabelImage& img,
                        std::span<const Rgb> palette) {
  require(!palette.empty() && palette.size() <= 256, ErrorKind::input, "palette must hold 1..256 colors");
  std::vector<std::vector<png_byte>> rows(img.height, std::vector<png_byte>(img.width));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      require(img.at(y, x) < palette.size(), ErrorKind::input, "label outside palette");
      rows[y][x] = img.at(y, x);
    }
  write_png(path, img.width, img.height, 8, PNG_COLOR_TYPE_PALETTE, palette, rows);
}

void write_png_bilevel(const std::filesystem::path& path, const LabelImage& img) {
  const int stride = (img.width + 7) / 8;
  std::vector<std::vector<png_byte>> rows(img.height, std::vector<png_byte>(stride, 0));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      require(img.at(y, x) <= 1, ErrorKind::input, "bilevel raster must hold {0,1}");
      if (img.at(y, x)) rows[y][x / 8] |= static_cast<png_byte>(0x80 >> (x % 8));
    }
  write_png(path, img.width, img.height, 1, PNG_COLOR_TYPE_GRAY, {}, rows);
}

RgbImage read_png_rgb(const std::filesystem::path& path) {
  Decoded d = read_png(path, true);
  RgbImage img(d.width, d.height);
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x)
      img.at(y, x) = {d.rows[y][3 * x], d.rows[y][3 * x + 1], d.rows[y][3 * x + 2]};
  return img;
}

LabelImage read_png_indices(const std::filesystem::path& path) {
  Decoded d = read_png(path, false);
  require(d.color_type == PNG_COLOR_TYPE_PALETTE || d.color_type == PNG_COLOR_TYPE_GRAY ||
              d.color_type == PNG_COLOR_TYPE_GRAY_ALPHA,
          ErrorKind::input, path.string() + " is neither paletted nor grayscale");
  LabelImage img(d.width, d.height);
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x) img.at(y, x) = d.rows[y][x];
  return img;
}

}  // namespace ddit
