#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ddit/model.hpp"
#include "ddit/objectives.hpp"
#include "ddit/rng.hpp"

namespace ddit {

enum class SamplerKind { ddpm_ancestral, ddim, rfm_euler };
std::string sampler_name(SamplerKind k);
/// Accepts ddpm, ddim, euler. Unknown names are usage errors.
SamplerKind parse_sampler(const std::string& s);
Objective sampler_objective(SamplerKind k);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::ddim;
  int steps = 50;
  double eta = 0.0;
  std::uint64_t seed = 0;
  /// Evaluate both guidance branches as one doubled batch.
  bool batched_cfg = false;
  /// Also zero the spatial condition in the unconditional branch.
  bool null_condition = false;
};

struct GuidanceConfig {
  double omega = 1.0;
  std::vector<int> null_caption{0};
};

/// (1 - omega) * uncond + omega * cond, exact at omega 0 and 1.
Latent cfg_combine(const Latent& uncond, const Latent& cond, double omega);

/// Descending discrete timesteps floor((N - i) * T / N), i = 0..N-1.
std::vector<int> timestep_sequence(int T, int steps);

/// A batch of states sharing one time value.
using BatchField = std::function<std::vector<Latent>(const std::vector<Latent>& z, double time_value)>;

/// Euler integration from t = 0 to 1 in `steps` uniform steps; the field
/// receives flow time t (not scaled).
std::vector<Latent> euler_integrate(std::vector<Latent> z, const BatchField& velocity, int steps);

/// Deterministic (eta = 0) or stochastic DDIM over timestep_sequence; the
/// field receives the integer timestep and predicts noise. `rngs` holds one
/// stream per state and may be empty when eta = 0.
std::vector<Latent> ddim_integrate(std::vector<Latent> z, const BatchField& noise, const NoiseSchedule& sched,
                                   int steps, double eta, std::vector<CounterRng>* rngs);
/// Ancestral posterior sampling over the same strided timesteps.
std::vector<Latent> ddpm_ancestral_integrate(std::vector<Latent> z, const BatchField& noise, const NoiseSchedule& sched,
                                             int steps, std::vector<CounterRng>& rngs);

/// One generation job.
struct SampleRequest {
  const Latent* condition = nullptr;
  std::vector<int> caption;
  int modality = 0;
  std::uint64_t seed = 0;
};

/// Guided sampling for every request. The stream of request i is keyed on
/// (cfg.seed, request.seed); the first draws give the starting noise.
std::vector<Latent> sample(const DiT& model, Objective trained, std::span<const SampleRequest> requests,
                           const GuidanceConfig& guidance, const SamplerConfig& cfg, const NoiseSchedule& sched);

/// The guided denoiser used by `sample`, exposed for tests.
BatchField guided_field(const DiT& model, Objective trained, std::span<const SampleRequest> requests,
                        const GuidanceConfig& guidance, const SamplerConfig& cfg);

}  // namespace ddit
