#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

#include "ddit/errors.hpp"

namespace ddit {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Dense (channels, height, width) grid, planar layout: index = (c*h + y)*w + x.
template <typename T>
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w, T fill = T{})
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t size() const { return data.size(); }
  T& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  const T& at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool same_shape(const Tensor3& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  std::string shape_string() const {
    return "(" + std::to_string(channels) + ", " + std::to_string(height) + ", " +
           std::to_string(width) + ")";
  }
};

/// The latent z / z_c / z_t. Always double precision inside the model.
using Latent = Tensor3<double>;

inline void require_same_shape(const Latent& a, const Latent& b, const char* what) {
  require(a.same_shape(b), ErrorKind::shape,
          std::string(what) + ": shape " + a.shape_string() + " vs " + b.shape_string());
}

}  // namespace ddit
