#include "ddit/samplers.hpp"

#include <cmath>

#include "ddit/rng.hpp"

namespace ddit {

std::string sampler_name(SamplerKind k) {
  switch (k) {
    case SamplerKind::ddpm_ancestral: return "ddpm";
    case SamplerKind::ddim: return "ddim";
    case SamplerKind::rfm_euler: return "euler";
  }
  return "?";
}

SamplerKind parse_sampler(const std::string& s) {
  if (s == "ddpm") return SamplerKind::ddpm_ancestral;
  if (s == "ddim") return SamplerKind::ddim;
  if (s == "euler") return SamplerKind::rfm_euler;
  fail(ErrorKind::usage, "unknown sampler '" + s + "' (expected ddpm, ddim or euler)");
}

Objective sampler_objective(SamplerKind k) { return k == SamplerKind::rfm_euler ? Objective::rfm : Objective::ddpm; }

Latent cfg_combine(const Latent& uncond, const Latent& cond, double omega) {
  require(uncond.same_shape(cond), ErrorKind::input,
          "guidance branches differ in shape: " + uncond.shape_string() + " vs " + cond.shape_string());
  require(std::isfinite(omega), ErrorKind::input, "guidance scale must be finite");
  Latent out(cond.channels, cond.height, cond.width);
  for (std::size_t i = 0; i < cond.size(); ++i) out.data[i] = (1.0 - omega) * uncond.data[i] + omega * cond.data[i];
  return out;
}

std::vector<int> timestep_sequence(int T, int steps) {
  require(steps >= 1, ErrorKind::config, "sampler needs at least one step");
  require(steps <= T, ErrorKind::config, "sampler steps " + std::to_string(steps) + " exceed schedule length " + std::to_string(T));
  std::vector<int> ts(steps);
  for (int i = 0; i < steps; ++i)
    ts[i] = static_cast<int>((static_cast<std::int64_t>(steps - i) * T) / steps);
  return ts;
}

namespace {

void check_field_output(const std::vector<Latent>& out, const std::vector<Latent>& z) {
  require(out.size() == z.size(), ErrorKind::shape, "denoiser returned the wrong batch size");
  for (std::size_t i = 0; i < z.size(); ++i) require_same_shape(out[i], z[i], "denoiser output");
}

void check_finite(const std::vector<Latent>& z) {
  for (const Latent& l : z)
    for (double v : l.data) require(std::isfinite(v), ErrorKind::numeric, "sampler state became non-finite");
}

}  // namespace

std::vector<Latent> euler_integrate(std::vector<Latent> z, const BatchField& velocity, int steps) {
  require(steps >= 1, ErrorKind::config, "sampler needs at least one step");
  const double dt = 1.0 / steps;
  for (int i = 0; i < steps; ++i) {
    const std::vector<Latent> v = velocity(z, i * dt);
    check_field_output(v, z);
    for (std::size_t b = 0; b < z.size(); ++b)
      for (std::size_t k = 0; k < z[b].size(); ++k) z[b].data[k] += v[b].data[k] * dt;
  }
  check_finite(z);
  return z;
}

std::vector<Latent> ddim_integrate(std::vector<Latent> z, const BatchField& noise, const NoiseSchedule& sched,
                                   int steps, double eta, std::vector<CounterRng>* rngs) {
  require(eta >= 0.0, ErrorKind::config, "ddim eta must be non-negative");
  require(eta == 0.0 || (rngs && rngs->size() == z.size()), ErrorKind::config, "stochastic ddim needs one stream per state");
  const std::vector<int> ts = timestep_sequence(sched.T, steps);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    const double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(prev);
    const double sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    const std::vector<Latent> eps = noise(z, t);
    check_field_output(eps, z);
    for (std::size_t b = 0; b < z.size(); ++b)
      for (std::size_t k = 0; k < z[b].size(); ++k) {
        const double e = eps[b].data[k];
        const double x0 = (z[b].data[k] - std::sqrt(1.0 - ab) * e) / std::sqrt(ab);
        double next = std::sqrt(ab_prev) * x0 + dir * e;
        if (sigma > 0.0) next += sigma * (*rngs)[b].normal();
        z[b].data[k] = next;
      }
  }
  check_finite(z);
  return z;
}

std::vector<Latent> ddpm_ancestral_integrate(std::vector<Latent> z, const BatchField& noise, const NoiseSchedule& sched,
                                             int steps, std::vector<CounterRng>& rngs) {
  require(rngs.size() == z.size(), ErrorKind::config, "ancestral sampling needs one stream per state");
  const std::vector<int> ts = timestep_sequence(sched.T, steps);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    const double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(prev);
    const double alpha = ab / ab_prev;  // product of (1 - beta) over the stride
    const double beta = 1.0 - alpha;
    const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
    const double ct = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab);
    const double sd = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
    const std::vector<Latent> eps = noise(z, t);
    check_field_output(eps, z);
    for (std::size_t b = 0; b < z.size(); ++b)
      for (std::size_t k = 0; k < z[b].size(); ++k) {
        const double x0 = (z[b].data[k] - std::sqrt(1.0 - ab) * eps[b].data[k]) / std::sqrt(ab);
        double next = c0 * x0 + ct * z[b].data[k];
        if (prev > 0) next += sd * rngs[b].normal();
        z[b].data[k] = next;
      }
  }
  check_finite(z);
  return z;
}

BatchField guided_field(const DiT& model, Objective trained, std::span<const SampleRequest> requests,
                        const GuidanceConfig& guidance, const SamplerConfig& cfg) {
  require(std::isfinite(guidance.omega) && guidance.omega >= 0.0, ErrorKind::config, "guidance scale must be finite and >= 0");
  std::vector<Latent> zero_conditions;
  if (cfg.null_condition)
    for (const SampleRequest& r : requests) zero_conditions.emplace_back(r.condition->channels, r.condition->height, r.condition->width);
  std::vector<SampleRequest> reqs(requests.begin(), requests.end());
  return [&model, trained, reqs = std::move(reqs), guidance, cfg, zero_conditions = std::move(zero_conditions)](
             const std::vector<Latent>& z, double time) {
    const double tv = trained == Objective::rfm ? flow_time_value(time) : ddpm_time_value(static_cast<int>(time));
    const std::size_t B = z.size();
    std::vector<ModelInput> cond, uncond;
    for (std::size_t b = 0; b < B; ++b) {
      cond.push_back({&z[b], reqs[b].condition, tv, reqs[b].caption, reqs[b].modality});
      const Latent* c = cfg.null_condition ? &zero_conditions[b] : reqs[b].condition;
      uncond.push_back({&z[b], c, tv, guidance.null_caption, reqs[b].modality});
    }
    std::vector<Latent> pc, pu;
    if (cfg.batched_cfg) {
      std::vector<ModelInput> both = cond;
      both.insert(both.end(), uncond.begin(), uncond.end());
      std::vector<Latent> all = model.predict(both);
      pc.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + B));
      pu.assign(std::make_move_iterator(all.begin() + B), std::make_move_iterator(all.end()));
    } else {
      pu = model.predict(uncond);
      pc = model.predict(cond);
    }
    std::vector<Latent> out;
    out.reserve(B);
    for (std::size_t b = 0; b < B; ++b) out.push_back(cfg_combine(pu[b], pc[b], guidance.omega));
    return out;
  };
}

std::vector<Latent> sample(const DiT& model, Objective trained, std::span<const SampleRequest> requests,
                           const GuidanceConfig& guidance, const SamplerConfig& cfg, const NoiseSchedule& sched) {
  require(!requests.empty(), ErrorKind::input, "no sample requests");
  require(sampler_objective(cfg.kind) == trained, ErrorKind::usage,
          "sampler " + sampler_name(cfg.kind) + " does not match a checkpoint trained with " + objective_name(trained));
  require(cfg.steps >= 1, ErrorKind::config, "sampler needs at least one step");
  const ModelConfig& mc = model.config();
  std::vector<Latent> z;
  std::vector<CounterRng> rngs;
  for (const SampleRequest& r : requests) {
    require(r.condition != nullptr, ErrorKind::input, "sample request without a condition latent");
    require(r.condition->channels == mc.latent_channels, ErrorKind::shape, "condition latent has the wrong channel count");
    rngs.emplace_back(derive_key({cfg.seed, r.seed, 0x5A3Bull}));
    Latent start(r.condition->channels, r.condition->height, r.condition->width);
    for (double& v : start.data) v = rngs.back().normal();
    z.push_back(std::move(start));
  }
  const BatchField field = guided_field(model, trained, requests, guidance, cfg);
  switch (cfg.kind) {
    case SamplerKind::rfm_euler: return euler_integrate(std::move(z), field, cfg.steps);
    case SamplerKind::ddim: return ddim_integrate(std::move(z), field, sched, cfg.steps, cfg.eta, &rngs);
    case SamplerKind::ddpm_ancestral: return ddpm_ancestral_integrate(std::move(z), field, sched, cfg.steps, rngs);
  }
  return {};
}

}  // namespace ddit
