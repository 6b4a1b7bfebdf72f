#include "ddit/codec.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "ddit/toydata.hpp"

namespace ddit {

static_assert(std::endian::native == std::endian::little, "latent files assume a little-endian host");

void CodecConfig::validate() const {
  require(scaling > 0.0, ErrorKind::config, "codec scaling must be positive");
  if (kind == CodecKind::pixel)
    require(levels == 0, ErrorKind::config, "pixel codec requires levels = 0");
  else
    require(levels >= 0 && levels <= 8, ErrorKind::config, "haar levels must be in [0, 8]");
}

int CodecConfig::latent_channels() const { return 3 << (2 * levels); }

int CodecConfig::latent_side(int image_side) const {
  const int f = 1 << levels;
  require(image_side > 0 && image_side % f == 0, ErrorKind::shape,
          "image side " + std::to_string(image_side) + " not divisible by 2^" + std::to_string(levels));
  return image_side / f;
}

std::string to_string(CodecKind kind) { return kind == CodecKind::pixel ? "pixel" : "haar"; }

CodecKind codec_kind_from_string(const std::string& s) {
  if (s == "pixel") return CodecKind::pixel;
  if (s == "haar") return CodecKind::haar;
  fail(ErrorKind::config, "unknown codec kind '" + s + "'");
}

Tensor3<double> mask_condition_image(const LabelImage& mask) {
  const auto colors = toy::class_colors();
  RgbImage img(mask.width, mask.height);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      const auto l = mask.at(y, x);
      require(l < colors.size(), ErrorKind::input, "mask label out of range");
      img.at(y, x) = colors[l];
    }
  return to_signed_planar(img);
}

Tensor3<double> sketch_condition_image(const LabelImage& sketch) {
  RgbImage img(sketch.width, sketch.height);
  for (int y = 0; y < sketch.height; ++y)
    for (int x = 0; x < sketch.width; ++x) {
      const std::uint8_t v = sketch.at(y, x) ? 255 : 0;
      img.at(y, x) = {v, v, v};
    }
  return to_signed_planar(img);
}

namespace {
constexpr char kLatentMagic[8] = {'D', 'D', 'I', 'T', 'L', 'A', 'T', '1'};
}

void write_latent_file(const std::filesystem::path& path, const Latent& z) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open " + path.string());
  const std::uint32_t dtype = 8;
  const std::int32_t dims[3] = {z.channels, z.height, z.width};
  out.write(kLatentMagic, sizeof kLatentMagic);
  out.write(reinterpret_cast<const char*>(&dtype), sizeof dtype);
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  out.write(reinterpret_cast<const char*>(z.data.data()), static_cast<std::streamsize>(z.size() * sizeof(double)));
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

Latent read_latent_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  char magic[8];
  std::uint32_t dtype = 0;
  std::int32_t dims[3] = {};
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&dtype), sizeof dtype);
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!in || std::memcmp(magic, kLatentMagic, sizeof magic) != 0 || dtype != 8)
    fail(ErrorKind::input, "not a latent file: " + path.string());
  require(dims[0] > 0 && dims[1] > 0 && dims[2] > 0, ErrorKind::input, "bad latent dims in " + path.string());
  Latent z(dims[0], dims[1], dims[2]);
  in.read(reinterpret_cast<char*>(z.data.data()), static_cast<std::streamsize>(z.size() * sizeof(double)));
  if (!in) fail(ErrorKind::input, "truncated latent file: " + path.string());
  return z;
}

}  // namespace ddit
