#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ddit/autograd.hpp"
#include "ddit/model.hpp"
#include "ddit/tensor.hpp"

namespace ddit {

enum class Objective { ddpm, rfm };
std::string objective_name(Objective o);
/// Throws Error{usage} for anything but "ddpm" / "rfm".
Objective parse_objective(const std::string& s);

/// Discrete schedule indexed t = 1..T; index 0 holds the clean state (alpha_bar = 1).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;       // [0] unused (0)
  std::vector<double> alphas_bar;  // [0] = 1
  std::vector<double> snr;         // [0] = +inf

  double beta(int t) const { return betas.at(t); }
  double alpha_bar(int t) const { return alphas_bar.at(t); }
  double snr_at(int t) const { return snr.at(t); }
};

NoiseSchedule make_linear_schedule(int T = 1000, double beta_start = 1e-4, double beta_end = 2e-2);

/// sqrt(alpha_bar) * z0 + sqrt(1 - alpha_bar) * eps.
Latent add_noise(const Latent& z0, const Latent& eps, double alpha_bar);
/// Same with alpha_bar = sched.alpha_bar(t); t outside 1..T is an input error.
Latent add_noise(const Latent& z0, const Latent& eps, int t, const NoiseSchedule& sched);

double min_snr_weight(double snr, double lambda);
double min_snr_weight(int t, const NoiseSchedule& sched, double lambda);

struct FlowPath {
  double t = 0.0;
  Latent z_t;
  Latent target_v;
};
/// z_t = (1 - t) x0 + t x1, v = x1 - x0, with x0 the noise end.
FlowPath flow_path(const Latent& x0, const Latent& x1, double t);

/// One training example after conditioning dropout.
struct TrainExample {
  const Latent* z0 = nullptr;
  const Latent* condition = nullptr;
  std::vector<int> caption;
  int modality = 0;
};

/// Per-slot random draws; slot = position of the example inside its optimizer step.
struct DdpmDraw {
  int t = 1;
  Latent eps;
};
struct FlowDraw {
  double t = 0.0;
  Latent x0;
};
DdpmDraw draw_ddpm(std::uint64_t seed, std::uint64_t step, std::uint64_t slot, const Latent& like, int T);
FlowDraw draw_flow(std::uint64_t seed, std::uint64_t step, std::uint64_t slot, const Latent& like);
/// Standard-normal latent from the stream (key, counter 0).
Latent normal_latent(std::uint64_t key, int c, int h, int w);

struct LossReport {
  Objective objective = Objective::ddpm;
  double loss = 0.0;
  std::vector<double> weights;
  std::vector<double> times;
};

struct LossGraph {
  ag::Var loss;
  LossReport report;
};

/// Batch mean of w(t) * MSE(eps, eps_pred), as a differentiable graph.
LossGraph ddpm_loss_graph(ag::Tape& tape, const DiT& model, std::span<const TrainExample> batch,
                          std::span<const DdpmDraw> draws, const NoiseSchedule& sched, double lambda);
/// Batch mean of MSE(v_pred, x1 - x0).
LossGraph rfm_loss_graph(ag::Tape& tape, const DiT& model, std::span<const TrainExample> batch,
                         std::span<const FlowDraw> draws);

/// Any batched denoiser; used to inject oracle predictions.
using Predictor = std::function<std::vector<Latent>(std::span<const ModelInput>)>;

LossReport ddpm_loss(const Predictor& predict, std::span<const TrainExample> batch, std::span<const DdpmDraw> draws,
                     const NoiseSchedule& sched, double lambda);
LossReport rfm_loss(const Predictor& predict, std::span<const TrainExample> batch, std::span<const FlowDraw> draws);

}  // namespace ddit
