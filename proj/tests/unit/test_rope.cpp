#include <doctest.h>

#include <cmath>

#include "ddit/autograd.hpp"
#include "ddit/rng.hpp"
#include "ddit/rope.hpp"
#include "test_util.hpp"

using namespace ddit;
using namespace ddit::rope;

namespace {

std::vector<double> random_vec(int n, std::uint64_t key) {
  CounterRng rng(key);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> rot1(std::vector<double> x, double pos, const RopeTable& t) {
  apply_rope_1d(x, pos, t);
  return x;
}

std::vector<double> rot2(std::vector<double> x, double r, double c, const RopeTable& t) {
  apply_rope_2d(x, r, c, t);
  return x;
}

}  // namespace

TEST_CASE("frequency table") {
  const RopeTable t = make_table(8);
  REQUIRE(t.frequencies.size() == 4);
  CHECK(t.frequencies[0] == 1.0);
  for (int i = 0; i < 4; ++i) CHECK(t.frequencies[i] == doctest::Approx(std::pow(10000.0, -2.0 * i / 8)));
  for (int i = 1; i < 4; ++i) CHECK(t.frequencies[i] < t.frequencies[i - 1]);
  CHECK_ERROR_KIND(make_table(7), ErrorKind::config);
  CHECK_ERROR_KIND(make_table(8, 1.0), ErrorKind::config);
}

TEST_CASE("position zero is the identity") {
  const auto x = random_vec(8, 1);
  CHECK(rot1(x, 0, make_table(8)) == x);
  CHECK(rot2(x, 0, 0, make_table(4)) == x);
}

TEST_CASE("head dim 4 at position 1") {
  // Direct evaluation: f0 = 1, f1 = 10000^(-1/2) = 0.01.
  const auto y = rot1({1, 0, 1, 0}, 1, make_table(4));
  CHECK(y[0] == doctest::Approx(std::cos(1.0)));
  CHECK(y[1] == doctest::Approx(std::sin(1.0)));
  CHECK(y[2] == doctest::Approx(std::cos(0.01)));
  CHECK(y[3] == doctest::Approx(std::sin(0.01)));
}

TEST_CASE("odd or non-multiple-of-4 dims are configuration errors") {
  std::vector<double> odd(5, 1.0), six(6, 1.0);
  const RopeTable t4 = make_table(4);
  CHECK_ERROR_KIND(apply_rope_1d(odd, 1, t4), ErrorKind::config);
  CHECK_ERROR_KIND(apply_rope_2d(six, 1, 1, make_table(2)), ErrorKind::config);
  CHECK_ERROR_KIND(rotation_angles(TokenPositions::grid(2, 2), 1, 6), ErrorKind::config);
}

TEST_CASE("rotations preserve pair norms and total norm") {
  const RopeTable t = make_table(16);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_vec(16, 100 + trial);
    const auto y = rot1(x, 37.0 * trial + 3, t);
    for (int i = 0; i < 8; ++i)
      CHECK(std::hypot(y[2 * i], y[2 * i + 1]) == doctest::Approx(std::hypot(x[2 * i], x[2 * i + 1])).epsilon(1e-12));
    CHECK(std::abs(std::sqrt(dot(y, y)) - std::sqrt(dot(x, x))) < 1e-6);
    const auto z = rot2(x, trial, 31 - trial, make_table(8));
    CHECK(std::abs(std::sqrt(dot(z, z)) - std::sqrt(dot(x, x))) < 1e-6);
  }
}

TEST_CASE("1D scores depend only on the offset") {
  const RopeTable t = make_table(16);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = random_vec(16, 200 + trial), k = random_vec(16, 300 + trial);
    const double m = trial, n = 3 * trial + 1, s = 17 + trial;
    CHECK(std::abs(dot(rot1(q, m, t), rot1(k, n, t)) - dot(rot1(q, m + s, t), rot1(k, n + s, t))) < 1e-5);
  }
}

TEST_CASE("composition adds positions") {
  const RopeTable t = make_table(8);
  const auto x = random_vec(8, 5);
  const auto twice = rot1(rot1(x, 4, t), 9, t);
  const auto once = rot1(x, 13, t);
  for (int i = 0; i < 8; ++i) CHECK(std::abs(twice[i] - once[i]) < 1e-6);
}

TEST_CASE("2D axial decomposition") {
  const RopeTable axis = make_table(4);
  const auto x = random_vec(8, 6);
  const auto y = rot2(x, 5, 0, axis);
  const auto row_half = rot1({x[0], x[1], x[2], x[3]}, 5, axis);
  for (int i = 0; i < 4; ++i) {
    CHECK(y[i] == doctest::Approx(row_half[i]));
    CHECK(y[4 + i] == x[4 + i]);
  }
}

TEST_CASE("2D scores are invariant to a shared shift") {
  const RopeTable axis = make_table(8);
  CounterRng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = random_vec(16, 400 + trial), k = random_vec(16, 500 + trial);
    const double r1 = rng.uniform_int(0, 15), c1 = rng.uniform_int(0, 15);
    const double r2 = rng.uniform_int(0, 15), c2 = rng.uniform_int(0, 15);
    const double s = rng.uniform_int(0, 20), u = rng.uniform_int(0, 20);
    const double a = dot(rot2(q, r1, c1, axis), rot2(k, r2, c2, axis));
    const double b = dot(rot2(q, r1 + s, c1 + u, axis), rot2(k, r2 + s, c2 + u, axis));
    CHECK(std::abs(a - b) < 1e-5);
  }
}

TEST_CASE("angle tables drive rotate_pairs consistently with the span API") {
  const int heads = 2, dh = 8;
  const TokenPositions grid = TokenPositions::grid(3, 2);
  const TokenPositions seq = TokenPositions::sequence(4);
  CHECK(grid.size() == 6);
  CHECK(grid.primary[3] == 1);
  CHECK(grid.secondary[3] == 1);

  CounterRng rng(9);
  for (const TokenPositions* pos : {&grid, &seq}) {
    Mat x(pos->size(), heads * dh);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    ag::Tape tape;
    const Mat y = tape.value(ag::rotate_pairs(tape, tape.constant(x), rotation_angles(*pos, heads, dh)));
    for (int r = 0; r < pos->size(); ++r)
      for (int h = 0; h < heads; ++h) {
        std::vector<double> v(x.row(r).data() + h * dh, x.row(r).data() + (h + 1) * dh);
        if (pos->kind == PositionKind::grid_2d)
          apply_rope_2d(v, pos->primary[r], pos->secondary[r], make_table(dh / 2));
        else
          apply_rope_1d(v, pos->primary[r], make_table(dh));
        for (int d = 0; d < dh; ++d) CHECK(y(r, h * dh + d) == doctest::Approx(v[d]).epsilon(1e-13));
      }
  }
}
