#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ddit/tensor.hpp"

namespace ddit {

enum class ParamInit { zeros, trunc_normal };

struct ParamSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  ParamInit init = ParamInit::zeros;
  double stddev = 0.02;
  /// Whether decoupled weight decay applies (false for biases, embedding
  /// tables and modulation projections).
  bool decay = true;
};

/// Named, ordered collection of learnable matrices.
class ParamStore {
 public:
  /// With `allocate = false` only the layout is recorded (values() stays empty).
  explicit ParamStore(bool allocate = true) : allocate_(allocate) {}

  int add(ParamSpec spec);
  /// Draws every tensor from its init rule with a per-tensor stream keyed on
  /// (seed, tensor index).
  void initialize(std::uint64_t seed);

  int size() const { return static_cast<int>(specs_.size()); }
  const ParamSpec& spec(int id) const { return specs_.at(id); }
  Mat& value(int id) { return values_.at(id); }
  const Mat& value(int id) const { return values_.at(id); }
  /// -1 when absent.
  int find(const std::string& name) const;
  std::int64_t scalar_count() const;
  std::vector<Mat> zeros_like() const;
  std::vector<Mat>& values() { return values_; }
  const std::vector<Mat>& values() const { return values_; }
  const std::vector<ParamSpec>& specs() const { return specs_; }
  bool allocated() const { return allocate_; }

 private:
  bool allocate_ = true;
  std::vector<ParamSpec> specs_;
  std::vector<Mat> values_;
  std::unordered_map<std::string, int> index_;
};

using GradStore = std::vector<Mat>;

}  // namespace ddit
