#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ddit/config.hpp"
#include "ddit/model.hpp"

namespace ddit {

struct NamedTensor {
  std::string name;
  Mat value;
};

struct TensorInfo {
  std::string name;
  std::string dtype;
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::uint64_t offset = 0;
};

/// Container layout: 8-byte magic "DDITTNS1", u64 header length, JSON header
/// {"tensors": [{name, dtype, shape, offset}]}, then little-endian f64
/// payloads (offsets relative to the end of the header).
void write_tensor_file(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path);
std::vector<TensorInfo> read_tensor_index(const std::filesystem::path& path);

/// Everything needed to resume a run bit-for-bit or to sample from it.
struct Checkpoint {
  RunConfig config;
  std::int64_t step = 0;
  std::int64_t adam_steps = 0;
  double smoothed_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> names;
  std::vector<Mat> params;
  std::vector<Mat> ema;
  std::vector<Mat> adam_m;
  std::vector<Mat> adam_v;
};

inline constexpr const char* kTensorFile = "tensors.bin";
inline constexpr const char* kSidecarFile = "config.ini";

std::filesystem::path checkpoint_dir(const std::filesystem::path& run_dir, std::int64_t step);
/// Writes `dir`/tensors.bin and `dir`/config.ini via a temporary directory.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck);
/// Throws Error{io} for missing files, Error{state} for inconsistent contents.
Checkpoint load_checkpoint(const std::filesystem::path& dir);
/// Reads only the sidecar (configs, step, loss).
Checkpoint load_checkpoint_header(const std::filesystem::path& dir);

/// Model with the checkpoint's parameters (or its EMA copy).
DiT model_from_checkpoint(const Checkpoint& ck, bool use_ema);

/// Steps of every ckpt_<step> directory below `run_dir`, ascending.
std::vector<std::int64_t> list_checkpoints(const std::filesystem::path& run_dir);
/// Deletes checkpoints beyond the newest `keep_last`, sparing the lowest smoothed loss.
void prune_checkpoints(const std::filesystem::path& run_dir, int keep_last);

}  // namespace ddit
