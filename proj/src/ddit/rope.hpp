#pragma once

#include <span>
#include <vector>

#include "ddit/tensor.hpp"

namespace ddit::rope {

inline constexpr double kDefaultBase = 10000.0;

/// Inverse wavelengths base^(-2i/rotated_dims), i = 0 .. rotated_dims/2 - 1.
struct RopeTable {
  double base = kDefaultBase;
  int rotated_dims = 0;
  std::vector<double> frequencies;
};

/// Throws Error{config} for odd or non-positive `rotated_dims` or base <= 1.
RopeTable make_table(int rotated_dims, double base = kDefaultBase);

enum class PositionKind { seq_1d, grid_2d };

/// Per-token positions. For seq_1d only `primary` is used; for grid_2d
/// (primary, secondary) = (row, col).
struct TokenPositions {
  PositionKind kind = PositionKind::seq_1d;
  std::vector<int> primary;
  std::vector<int> secondary;

  static TokenPositions sequence(int count, int start = 0);
  /// Row-major over a rows x cols patch grid.
  static TokenPositions grid(int rows, int cols);
  int size() const { return static_cast<int>(primary.size()); }
};

/// Rotates each pair (x[2i], x[2i+1]) by position * freq_i. x.size() must
/// equal table.rotated_dims.
void apply_rope_1d(std::span<double> x, double position, const RopeTable& table);

/// Axial variant: the first half of x is rotated by `row`, the second half
/// by `col`, each with `axis_table` (rotated_dims = x.size()/2). Throws
/// Error{config} unless x.size() is divisible by 4.
void apply_rope_2d(std::span<double> x, double row, double col, const RopeTable& axis_table);

/// Rotation angles for a (tokens, heads * head_dim) activation, one column
/// per rotated pair, consumed by ag::rotate_pairs. Every head uses the same
/// angles.
Mat rotation_angles(const TokenPositions& positions, int heads, int head_dim, double base = kDefaultBase);

}  // namespace ddit::rope
