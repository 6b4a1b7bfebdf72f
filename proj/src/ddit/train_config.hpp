#pragma once

#include <cstdint>

#include "ddit/objectives.hpp"

namespace ddit {

struct TrainConfig {
  Objective objective = Objective::ddpm;
  /// Optimizer steps; when 0 the count follows from `epochs`.
  std::int64_t steps = 2000;
  std::int64_t epochs = 0;
  int batch_size = 32;
  int accum_steps = 1;
  double base_lr = 1e-3;
  std::int64_t warmup_steps = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double adam_eps = 1e-8;
  double max_grad_norm = 0.5;
  double ema_decay = 0.9999;
  double cond_dropout = 0.05;
  std::uint64_t seed = 0;
  double min_snr_lambda = 5.0;
  int timesteps = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  /// Probability that an example is conditioned on its sketch instead of its mask.
  double sketch_fraction = 0.5;
  std::int64_t checkpoint_every = 500;
  int keep_last = 3;

  /// Throws Error{config}.
  void validate() const;
  /// Resolved optimizer step count for a training split of `train_samples`.
  std::int64_t total_steps(std::size_t train_samples) const;
  NoiseSchedule schedule() const { return make_linear_schedule(timesteps, beta_start, beta_end); }
};

}  // namespace ddit
