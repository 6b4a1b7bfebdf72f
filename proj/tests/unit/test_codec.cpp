#include <doctest.h>

#include <cmath>

#include "ddit/codec.hpp"
#include "ddit/rng.hpp"
#include "ddit/toydata.hpp"
#include "test_util.hpp"

using namespace ddit;

namespace {

template <typename T>
Tensor3<T> random_image(int size, std::uint64_t key) {
  CounterRng rng(key);
  Tensor3<T> x(3, size, size);
  for (T& v : x.data) v = static_cast<T>(rng.uniform() * 2.0 - 1.0);
  return x;
}

CodecConfig haar(int levels, double scaling = 1.0) { return {CodecKind::haar, levels, scaling}; }

template <typename T>
double max_abs_diff(const Tensor3<T>& a, const Tensor3<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a.data[i] - b.data[i])));
  return m;
}

// Direct evaluation of one orthonormal level, independent of the codec loops.
double haar_coefficient(const Tensor3<double>& x, int band, int ch, int y, int xx) {
  const double a = x.at(ch, 2 * y, 2 * xx), b = x.at(ch, 2 * y, 2 * xx + 1);
  const double d = x.at(ch, 2 * y + 1, 2 * xx), e = x.at(ch, 2 * y + 1, 2 * xx + 1);
  const double sx[4] = {1, 1, 1, 1};
  const double col[4] = {1, -1, 1, -1};
  const double row[4] = {1, 1, -1, -1};
  const double diag[4] = {1, -1, -1, 1};
  const double* w = band == 0 ? sx : band == 1 ? col : band == 2 ? row : diag;
  return 0.5 * (w[0] * a + w[1] * b + w[2] * d + w[3] * e);
}

}  // namespace

TEST_CASE("pixel codec is the identity") {
  const auto x = random_image<double>(32, 1);
  const CodecConfig pixel{CodecKind::pixel, 0, 1.0};
  const auto z = encode(x, pixel);
  CHECK(z.same_shape(x));
  CHECK(max_abs_diff(z, x) == 0.0);
  CHECK(max_abs_diff(decode(z, pixel), x) == 0.0);
}

TEST_CASE("one Haar level of a constant image") {
  Tensor3<double> x(3, 8, 8, 0.3);
  const auto z = encode(x, haar(1));
  CHECK(z.channels == 12);
  for (int band = 0; band < 4; ++band)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 4; ++y)
        for (int xx = 0; xx < 4; ++xx) CHECK(z.at(band * 3 + c, y, xx) == doctest::Approx(band == 0 ? 0.6 : 0.0));
}

TEST_CASE("single level matches the direct subband formula") {
  const auto x = random_image<double>(8, 2);
  const auto z = encode(x, haar(1));
  for (int band = 0; band < 4; ++band)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 4; ++y)
        for (int xx = 0; xx < 4; ++xx) CHECK(z.at(band * 3 + c, y, xx) == doctest::Approx(haar_coefficient(x, band, c, y, xx)).epsilon(1e-14));
}

TEST_CASE("latent shapes") {
  const auto z = encode(random_image<double>(32, 3), haar(2));
  CHECK(z.channels == 48);
  CHECK(z.height == 8);
  CHECK(z.width == 8);
  CHECK(haar(3).latent_channels() == 192);
  CHECK(haar(3).latent_side(512) == 64);
}

TEST_CASE("roundtrip in double and single precision") {
  for (int levels : {0, 1, 2, 3}) {
    const auto xd = random_image<double>(32, 4 + levels);
    CHECK(max_abs_diff(decode(encode(xd, haar(levels)), haar(levels)), xd) <= 1e-12);
    const auto xf = random_image<float>(32, 8 + levels);
    CHECK(max_abs_diff(decode(encode(xf, haar(levels)), haar(levels)), xf) <= 1e-5);
  }
}

TEST_CASE("energy is preserved at scaling 1") {
  const auto x = random_image<double>(64, 5);
  const auto z = encode(x, haar(3));
  double ex = 0.0, ez = 0.0;
  for (double v : x.data) ex += v * v;
  for (double v : z.data) ez += v * v;
  CHECK(std::abs(ez - ex) / ex <= 1e-4);
}

TEST_CASE("encode is linear") {
  const auto x = random_image<double>(32, 6), y = random_image<double>(32, 7);
  const double a = 0.7, b = -1.3;
  Tensor3<double> mix = x;
  for (std::size_t i = 0; i < mix.size(); ++i) mix.data[i] = a * x.data[i] + b * y.data[i];
  const auto zx = encode(x, haar(2)), zy = encode(y, haar(2)), zm = encode(mix, haar(2));
  for (std::size_t i = 0; i < zm.size(); ++i) CHECK(zm.data[i] == doctest::Approx(a * zx.data[i] + b * zy.data[i]).epsilon(1e-12));
}

TEST_CASE("zero latent decodes to zero and scaling cancels") {
  Tensor3<double> zero(48, 8, 8, 0.0);
  for (double v : decode(zero, haar(2)).data) CHECK(v == 0.0);
  const auto x = random_image<double>(32, 9);
  const auto unscaled = encode(x, haar(2));
  const auto scaled = encode(x, haar(2, 0.25));
  for (std::size_t i = 0; i < scaled.size(); ++i) CHECK(scaled.data[i] == doctest::Approx(0.25 * unscaled.data[i]));
  CHECK(max_abs_diff(decode(scaled, haar(2, 0.25)), x) <= 1e-12);
}

TEST_CASE("shape errors") {
  CHECK_ERROR_KIND(encode(random_image<double>(30, 1), haar(2)), ErrorKind::shape);
  CHECK_ERROR_KIND(decode(Tensor3<double>(12, 8, 8), haar(2)), ErrorKind::shape);
  CHECK_ERROR_KIND(encode(Tensor3<double>(1, 8, 8), haar(1)), ErrorKind::shape);
}

TEST_CASE("codec configuration validation") {
  CHECK_ERROR_KIND((CodecConfig{CodecKind::pixel, 1, 1.0}.validate()), ErrorKind::config);
  CHECK_ERROR_KIND((CodecConfig{CodecKind::haar, -1, 1.0}.validate()), ErrorKind::config);
  CHECK_ERROR_KIND((CodecConfig{CodecKind::haar, 1, 0.0}.validate()), ErrorKind::config);
  CHECK(codec_kind_from_string(to_string(CodecKind::haar)) == CodecKind::haar);
  CHECK_ERROR_KIND(codec_kind_from_string("vae"), ErrorKind::config);
}

TEST_CASE("condition images use class colours and bilevel gray") {
  const auto s = toy::synthesize_scene(4, 2, 32);
  const auto m = mask_condition_image(s.mask);
  const auto colors = toy::class_colors();
  for (int y = 0; y < 32; y += 5)
    for (int x = 0; x < 32; x += 5) {
      const Rgb c = colors[s.mask.at(y, x)];
      CHECK(m.at(0, y, x) == doctest::Approx(c.r / 127.5 - 1.0));
      CHECK(m.at(2, y, x) == doctest::Approx(c.b / 127.5 - 1.0));
    }
  const auto k = sketch_condition_image(s.sketch);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) CHECK(k.at(c, y, x) == (s.sketch.at(y, x) ? 1.0 : -1.0));
}

TEST_CASE("latent cache files round trip") {
  TempDir tmp("codec");
  const auto z = encode(random_image<double>(32, 10), haar(2));
  write_latent_file(tmp.path / "0001.lat", z);
  const auto back = read_latent_file(tmp.path / "0001.lat");
  CHECK(back.same_shape(z));
  CHECK(back.data == z.data);
  CHECK_ERROR_KIND(read_latent_file(tmp.path / "missing.lat"), ErrorKind::io);
}
