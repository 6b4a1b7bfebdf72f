#include "ddit/optim.hpp"

#include <cmath>
#include <numbers>

#include "ddit/rng.hpp"

namespace ddit {

AdamW::AdamW(const ParamStore& params, AdamWConfig cfg) : cfg_(cfg), m_(params.zeros_like()), v_(params.zeros_like()) {
  require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0, ErrorKind::config,
          "adam betas must lie in [0, 1)");
  require(cfg.eps > 0.0 && cfg.weight_decay >= 0.0, ErrorKind::config, "adam eps must be positive, decay non-negative");
}

void AdamW::step(ParamStore& params, const GradStore& grads, double lr) {
  require(static_cast<int>(grads.size()) == params.size() && m_.size() == grads.size(), ErrorKind::state,
          "optimizer state does not match the parameter set");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (int i = 0; i < params.size(); ++i) {
    Mat& p = params.value(i);
    const Mat& g = grads[i];
    require(g.rows() == p.rows() && g.cols() == p.cols(), ErrorKind::state, "gradient shape differs for " + params.spec(i).name);
    const double shrink = params.spec(i).decay ? 1.0 - lr * cfg_.weight_decay : 1.0;
    double* pd = p.data();
    double* md = m_[i].data();
    double* vd = v_[i].data();
    const double* gd = g.data();
    for (Eigen::Index j = 0; j < p.size(); ++j) {
      md[j] = cfg_.beta1 * md[j] + (1.0 - cfg_.beta1) * gd[j];
      vd[j] = cfg_.beta2 * vd[j] + (1.0 - cfg_.beta2) * gd[j] * gd[j];
      pd[j] = pd[j] * shrink - lr * (md[j] / bc1) / (std::sqrt(vd[j] / bc2) + cfg_.eps);
    }
  }
}

double cosine_lr(std::int64_t step, std::int64_t warmup, std::int64_t total, double base_lr) {
  require(warmup >= 0 && warmup < total, ErrorKind::config, "warmup must be smaller than the total step count");
  require(step >= 0 && step <= total, ErrorKind::input, "step outside [0, total]");
  if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double global_grad_norm(const GradStore& grads) {
  double s = 0.0;
  for (const Mat& g : grads) s += g.squaredNorm();
  return std::sqrt(s);
}

double clip_grad_norm(GradStore& grads, double max_norm) {
  require(max_norm > 0.0, ErrorKind::config, "max_grad_norm must be positive");
  const double norm = global_grad_norm(grads);
  require(std::isfinite(norm), ErrorKind::numeric, "gradient norm is not finite");
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (Mat& g : grads) g *= scale;
  }
  return norm;
}

void ema_update(ParamStore& ema, const ParamStore& model, double decay) {
  require(decay >= 0.0 && decay <= 1.0, ErrorKind::config, "ema decay must lie in [0, 1]");
  require(ema.size() == model.size(), ErrorKind::state, "ema and model parameter sets differ");
  for (int i = 0; i < model.size(); ++i) {
    require(ema.spec(i).name == model.spec(i).name, ErrorKind::state,
            "ema tensor " + ema.spec(i).name + " does not match model tensor " + model.spec(i).name);
    Mat& e = ema.value(i);
    const Mat& p = model.value(i);
    require(e.rows() == p.rows() && e.cols() == p.cols(), ErrorKind::state, "ema shape differs for " + model.spec(i).name);
    e = decay * e + (1.0 - decay) * p;
  }
}

DropoutDecision dropout_coins(std::uint64_t seed, std::uint64_t step, std::uint64_t slot, double p) {
  require(p >= 0.0 && p <= 1.0, ErrorKind::config, "dropout probability outside [0, 1]");
  CounterRng rng(derive_key({seed, step, slot, 0xD809ull}));
  DropoutDecision d;
  d.caption = rng.uniform() < p;
  d.condition = rng.uniform() < p;
  return d;
}

std::vector<DropoutDecision> apply_cond_dropout(std::span<TrainExample> batch, double p, std::uint64_t seed,
                                                std::uint64_t step, std::uint64_t first_slot,
                                                const Latent* zero_condition) {
  std::vector<DropoutDecision> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const DropoutDecision d = dropout_coins(seed, step, first_slot + i, p);
    if (d.caption) batch[i].caption = {0};
    if (d.condition) {
      require(zero_condition != nullptr, ErrorKind::input, "condition dropout needs a zero latent");
      batch[i].condition = zero_condition;
    }
    out.push_back(d);
  }
  return out;
}

}  // namespace ddit
