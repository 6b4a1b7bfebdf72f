#pragma once

#include <cstdint>
#include <initializer_list>

namespace ddit {

/// Mixes a list of integers into a single 64-bit key. Used to derive
/// independent streams from (seed, sample_id), (seed, step, slot), ...
std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts);

/// Counter-based generator: output i is a pure function of (key, i), so a
/// stream is fully described by its key and how many values were consumed.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0)
      : key_(key), counter_(counter) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal via Box-Muller (both outputs used).
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ddit
