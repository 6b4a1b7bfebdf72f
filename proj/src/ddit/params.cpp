#include "ddit/params.hpp"

#include <cmath>

#include "ddit/errors.hpp"
#include "ddit/rng.hpp"

namespace ddit {

int ParamStore::add(ParamSpec spec) {
  require(spec.rows > 0 && spec.cols > 0, ErrorKind::config, "parameter " + spec.name + " has an empty shape");
  require(!index_.contains(spec.name), ErrorKind::config, "duplicate parameter " + spec.name);
  const int id = size();
  index_.emplace(spec.name, id);
  if (allocate_) values_.push_back(Mat::Zero(spec.rows, spec.cols));
  specs_.push_back(std::move(spec));
  return id;
}

void ParamStore::initialize(std::uint64_t seed) {
  require(allocate_, ErrorKind::state, "cannot initialize a layout-only parameter store");
  for (int id = 0; id < size(); ++id) {
    const ParamSpec& s = specs_[id];
    Mat& m = values_[id];
    if (s.init == ParamInit::zeros) {
      m.setZero();
      continue;
    }
    CounterRng rng(derive_key({seed, static_cast<std::uint64_t>(id), 0x1417ull}));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      double v;
      do {
        v = rng.normal();
      } while (std::abs(v) > 2.0);
      m.data()[i] = v * s.stddev;
    }
  }
}

int ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

std::int64_t ParamStore::scalar_count() const {
  std::int64_t n = 0;
  for (const ParamSpec& s : specs_) n += static_cast<std::int64_t>(s.rows) * s.cols;
  return n;
}

std::vector<Mat> ParamStore::zeros_like() const {
  std::vector<Mat> out;
  out.reserve(values_.size());
  for (const Mat& m : values_) out.push_back(Mat::Zero(m.rows(), m.cols()));
  return out;
}

}  // namespace ddit
