#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ddit/tensor.hpp"

namespace ddit {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Interleaved 8-bit RGB raster.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<Rgb> pixels;

  RgbImage() = default;
  RgbImage(int w, int h, Rgb fill = {}) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}
  Rgb& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  const Rgb& at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const RgbImage&) const = default;
};

/// Single-channel 8-bit raster (semantic labels or bilevel sketch pixels).
struct LabelImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> labels;

  LabelImage() = default;
  LabelImage(int w, int h, std::uint8_t fill = 0) : width(w), height(h), labels(static_cast<std::size_t>(w) * h, fill) {}
  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const LabelImage&) const = default;
};

// Conversions between 8-bit rasters and planar real tensors.
/// [0,255] -> [-1,1]; the model-side convention.
Tensor3<double> to_signed_planar(const RgbImage& img);
/// [-1,1] -> [0,255], clamped and rounded.
RgbImage from_signed_planar(const Tensor3<double>& t);
/// [0,255] -> [0,1]; the metrics-side convention.
Tensor3<double> to_unit_planar(const RgbImage& img);

// PNG persistence (libpng). All writers throw Error{io} naming the path.
void write_png_rgb(const std::filesystem::path& path, const RgbImage& img);
/// Paletted PNG: each label indexes `palette`.
void write_png_paletted(const std::filesystem::path& path, const LabelImage& img,
                        std::span<const Rgb> palette);
/// 1-bit grayscale PNG from a {0,1} raster.
void write_png_bilevel(const std::filesystem::path& path, const LabelImage& img);

RgbImage read_png_rgb(const std::filesystem::path& path);
/// Reads raw palette indices of a paletted PNG, or the gray values of a
/// grayscale PNG (1-bit images come back as {0,1}).
LabelImage read_png_indices(const std::filesystem::path& path);

}  // namespace ddit
