#pragma once

#include <filesystem>
#include <string>

#include "ddit/raster.hpp"
#include "ddit/tensor.hpp"

namespace ddit {

enum class CodecKind { pixel, haar };

struct CodecConfig {
  CodecKind kind = CodecKind::haar;
  int levels = 2;
  double scaling = 1.0;

  /// Throws Error{config}: pixel forces levels 0, haar needs levels >= 0, scaling > 0.
  void validate() const;
  int latent_channels() const;
  /// Latent side for an image side; throws Error{shape} if not divisible by 2^levels.
  int latent_side(int image_side) const;
};

std::string to_string(CodecKind kind);
CodecKind codec_kind_from_string(const std::string& s);

namespace detail {

// One orthonormal Haar analysis level: (c, h, w) -> (4c, h/2, w/2).
// Output channel = subband * c + channel with subbands LL, LH, HL, HH.
template <typename T>
Tensor3<T> haar_forward(const Tensor3<T>& in) {
  const int c = in.channels, h = in.height / 2, w = in.width / 2;
  Tensor3<T> out(4 * c, h, w);
  const T half = T(0.5);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const T a = in.at(ch, 2 * y, 2 * x), b = in.at(ch, 2 * y, 2 * x + 1);
        const T d = in.at(ch, 2 * y + 1, 2 * x), e = in.at(ch, 2 * y + 1, 2 * x + 1);
        out.at(ch, y, x) = half * (a + b + d + e);
        out.at(c + ch, y, x) = half * (a - b + d - e);
        out.at(2 * c + ch, y, x) = half * (a + b - d - e);
        out.at(3 * c + ch, y, x) = half * (a - b - d + e);
      }
  return out;
}

template <typename T>
Tensor3<T> haar_inverse(const Tensor3<T>& in) {
  const int c = in.channels / 4, h = in.height, w = in.width;
  Tensor3<T> out(c, 2 * h, 2 * w);
  const T half = T(0.5);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const T ll = in.at(ch, y, x), lh = in.at(c + ch, y, x);
        const T hl = in.at(2 * c + ch, y, x), hh = in.at(3 * c + ch, y, x);
        out.at(ch, 2 * y, 2 * x) = half * (ll + lh + hl + hh);
        out.at(ch, 2 * y, 2 * x + 1) = half * (ll - lh + hl - hh);
        out.at(ch, 2 * y + 1, 2 * x) = half * (ll + lh - hl - hh);
        out.at(ch, 2 * y + 1, 2 * x + 1) = half * (ll - lh - hl + hh);
      }
  return out;
}

}  // namespace detail

/// z = scaling * Haar^levels(image). `image` is (3, H, W).
template <typename T>
Tensor3<T> encode(const Tensor3<T>& image, const CodecConfig& cfg) {
  cfg.validate();
  require(image.channels == 3, ErrorKind::shape, "encode expects an RGB image, got " + image.shape_string());
  cfg.latent_side(image.height);
  cfg.latent_side(image.width);
  Tensor3<T> z = image;
  for (int l = 0; l < cfg.levels; ++l) z = detail::haar_forward(z);
  const T s = static_cast<T>(cfg.scaling);
  if (s != T(1))
    for (T& v : z.data) v *= s;
  return z;
}

template <typename T>
Tensor3<T> decode(const Tensor3<T>& z, const CodecConfig& cfg) {
  cfg.validate();
  require(z.channels == cfg.latent_channels(), ErrorKind::shape,
          "decode: latent has " + std::to_string(z.channels) + " channels, codec expects " +
              std::to_string(cfg.latent_channels()));
  Tensor3<T> x = z;
  const T s = static_cast<T>(cfg.scaling);
  if (s != T(1))
    for (T& v : x.data) v /= s;
  for (int l = 0; l < cfg.levels; ++l) x = detail::haar_inverse(x);
  return x;
}

/// Mask labels painted with their class colors, in the model's [-1,1] range.
Tensor3<double> mask_condition_image(const LabelImage& mask);
/// Sketch {0,1} -> {0,255} gray replicated to RGB, in [-1,1].
Tensor3<double> sketch_condition_image(const LabelImage& sketch);

/// Cached latent file: 8-byte magic, u32 dtype (8 = f64), i32 c, h, w, then
/// little-endian payload.
void write_latent_file(const std::filesystem::path& path, const Latent& z);
Latent read_latent_file(const std::filesystem::path& path);

}  // namespace ddit
