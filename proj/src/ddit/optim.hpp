#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ddit/objectives.hpp"
#include "ddit/params.hpp"

namespace ddit {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adaptive moments with decoupled weight decay. Decay applies only to
/// tensors whose spec has `decay` set.
class AdamW {
 public:
  AdamW(const ParamStore& params, AdamWConfig cfg);

  void step(ParamStore& params, const GradStore& grads, double lr);

  std::int64_t steps_taken() const { return t_; }
  std::vector<Mat>& first_moment() { return m_; }
  std::vector<Mat>& second_moment() { return v_; }
  const std::vector<Mat>& first_moment() const { return m_; }
  const std::vector<Mat>& second_moment() const { return v_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }

 private:
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Mat> m_, v_;
};

/// Linear warmup 0 -> base_lr, then half-cosine decay to 0 at `total`.
double cosine_lr(std::int64_t step, std::int64_t warmup, std::int64_t total, double base_lr);

double global_grad_norm(const GradStore& grads);
/// Rescales in place so the global norm is at most max_norm. Returns the norm before clipping.
double clip_grad_norm(GradStore& grads, double max_norm);

/// ema <- decay * ema + (1 - decay) * model. Throws Error{state} when the
/// name sets or shapes differ.
void ema_update(ParamStore& ema, const ParamStore& model, double decay);

struct DropoutDecision {
  bool caption = false;
  bool condition = false;
};
/// Two independent coins for one slot.
DropoutDecision dropout_coins(std::uint64_t seed, std::uint64_t step, std::uint64_t slot, double p);
/// Replaces dropped captions with the null caption and dropped conditions
/// with `zero_condition`. Slots are numbered from `first_slot`.
std::vector<DropoutDecision> apply_cond_dropout(std::span<TrainExample> batch, double p, std::uint64_t seed,
                                                std::uint64_t step, std::uint64_t first_slot,
                                                const Latent* zero_condition);

}  // namespace ddit
