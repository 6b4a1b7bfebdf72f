#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <vector>

#include "ddit/checkpoint.hpp"
#include "ddit/config.hpp"
#include "ddit/model.hpp"
#include "ddit/optim.hpp"
#include "ddit/toydata.hpp"

namespace ddit {

/// Encoded samples of one dataset range, ready for the denoiser.
struct TrainingSet {
  std::vector<Latent> images;
  std::vector<Latent> masks;
  std::vector<Latent> sketches;
  std::vector<std::vector<int>> captions;

  std::size_t size() const { return images.size(); }
  static TrainingSet load(const toy::Dataset& data, const CodecConfig& codec, std::size_t begin, std::size_t end);
};

struct StepLog {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

/// Trailing mean over the last min(window, step) logged losses.
double smoothed_loss(const std::vector<StepLog>& log, std::int64_t step, int window = 100);

/// Owns model, optimizer and EMA for one run. Optimizer step s (1-based)
/// consumes examples (s-1)*B*K .. s*B*K-1 of the seed-permuted epoch stream,
/// so every draw is a pure function of (seed, s, slot).
class Trainer {
 public:
  Trainer(RunConfig cfg, std::shared_ptr<const TrainingSet> data);

  const RunConfig& config() const { return cfg_; }
  std::int64_t step() const { return step_; }
  std::int64_t total_steps() const { return total_; }
  const DiT& model() const { return model_; }
  DiT& model() { return model_; }
  const ParamStore& ema() const { return ema_; }
  const AdamW& optimizer() const { return opt_; }

  /// Examples of slots [first_slot, first_slot + count) for optimizer step `step`, after dropout.
  std::vector<TrainExample> examples(std::int64_t step, int first_slot, int count) const;
  /// Dataset index behind a global example number.
  std::size_t sample_index(std::int64_t example) const;
  /// Mean-reduced gradient of optimizer step `step` over `accum` micro-batches
  /// covering the step's B*K slots. Parameters are left untouched.
  GradStore gradients(std::int64_t step, int accum, double* loss = nullptr) const;
  /// One full optimizer step (accumulate, clip, AdamW, EMA).
  StepLog advance();

  void restore(const Checkpoint& ck);
  Checkpoint snapshot(double smoothed) const;

 private:
  RunConfig cfg_;
  std::shared_ptr<const TrainingSet> data_;
  NoiseSchedule sched_;
  DiT model_;
  ParamStore ema_;
  AdamW opt_;
  Latent zero_condition_;
  std::int64_t step_ = 0;
  std::int64_t total_ = 0;
  mutable std::int64_t perm_epoch_ = -1;
  mutable std::vector<std::size_t> perm_;
};

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  /// Stop after this optimizer step (the schedule still spans the full run).
  std::int64_t stop_at_step = -1;
  bool write_checkpoints = true;
  std::function<void(const StepLog&, const Trainer&)> on_step;
  std::ostream* progress = nullptr;
  int progress_every = 100;
};

struct TrainResult {
  std::int64_t final_step = 0;
  std::filesystem::path last_checkpoint;
  std::vector<StepLog> log;
};

/// Full loop over the training split of cfg.data.dir. Writes loss.csv,
/// config.ini and ckpt_<step>/ under out_dir. On a non-finite loss or
/// gradient writes nan_step_<s>.ini for replay and throws Error{numeric}.
TrainResult train(const RunConfig& cfg, const TrainOptions& opts);

}  // namespace ddit
