#include "ddit/rope.hpp"

#include <cmath>

namespace ddit::rope {

RopeTable make_table(int rotated_dims, double base) {
  require(rotated_dims > 0 && rotated_dims % 2 == 0, ErrorKind::config,
          "RoPE needs an even positive rotated dimension, got " + std::to_string(rotated_dims));
  require(base > 1.0, ErrorKind::config, "RoPE base must exceed 1");
  RopeTable t;
  t.base = base;
  t.rotated_dims = rotated_dims;
  for (int i = 0; i < rotated_dims / 2; ++i)
    t.frequencies.push_back(std::pow(base, -2.0 * i / rotated_dims));
  return t;
}

TokenPositions TokenPositions::sequence(int count, int start) {
  require(count >= 0 && start >= 0, ErrorKind::input, "negative sequence positions");
  TokenPositions p;
  p.kind = PositionKind::seq_1d;
  for (int i = 0; i < count; ++i) p.primary.push_back(start + i);
  return p;
}

TokenPositions TokenPositions::grid(int rows, int cols) {
  require(rows > 0 && cols > 0, ErrorKind::input, "empty patch grid");
  TokenPositions p;
  p.kind = PositionKind::grid_2d;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      p.primary.push_back(r);
      p.secondary.push_back(c);
    }
  return p;
}

void apply_rope_1d(std::span<double> x, double position, const RopeTable& table) {
  require(x.size() % 2 == 0, ErrorKind::config, "RoPE head dimension must be even");
  require(static_cast<int>(x.size()) == table.rotated_dims, ErrorKind::config, "RoPE table/head size mismatch");
  for (std::size_t i = 0; i < table.frequencies.size(); ++i) {
    const double angle = position * table.frequencies[i];
    const double c = std::cos(angle), s = std::sin(angle);
    const double a = x[2 * i], b = x[2 * i + 1];
    x[2 * i] = a * c - b * s;
    x[2 * i + 1] = a * s + b * c;
  }
}

void apply_rope_2d(std::span<double> x, double row, double col, const RopeTable& axis_table) {
  require(x.size() % 4 == 0, ErrorKind::config, "2D RoPE head dimension must be divisible by 4");
  const std::size_t half = x.size() / 2;
  apply_rope_1d(x.first(half), row, axis_table);
  apply_rope_1d(x.subspan(half), col, axis_table);
}

Mat rotation_angles(const TokenPositions& positions, int heads, int head_dim, double base) {
  const int n = positions.size();
  Mat angles(n, heads * head_dim / 2);
  if (positions.kind == PositionKind::seq_1d) {
    const RopeTable t = make_table(head_dim, base);
    for (int r = 0; r < n; ++r)
      for (int h = 0; h < heads; ++h)
        for (int j = 0; j < head_dim / 2; ++j)
          angles(r, h * head_dim / 2 + j) = positions.primary[r] * t.frequencies[j];
  } else {
    require(head_dim % 4 == 0, ErrorKind::config, "2D RoPE head dimension must be divisible by 4");
    require(static_cast<int>(positions.secondary.size()) == n, ErrorKind::input, "grid positions need (row, col)");
    const RopeTable t = make_table(head_dim / 2, base);
    const int quarter = head_dim / 4;
    for (int r = 0; r < n; ++r)
      for (int h = 0; h < heads; ++h)
        for (int j = 0; j < quarter; ++j) {
          angles(r, h * head_dim / 2 + j) = positions.primary[r] * t.frequencies[j];
          angles(r, h * head_dim / 2 + quarter + j) = positions.secondary[r] * t.frequencies[j];
        }
  }
  return angles;
}

}  // namespace ddit::rope
