#include "ddit/objectives.hpp"

#include <cmath>
#include <limits>

#include "ddit/rng.hpp"

namespace ddit {

namespace {
constexpr std::uint64_t kDdpmTag = 0xD0D0;
constexpr std::uint64_t kFlowTag = 0xF10F;

double mean_sq_diff(const Latent& a, const Latent& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

void check_batch(std::span<const TrainExample> batch, std::size_t draws) {
  require(!batch.empty(), ErrorKind::input, "empty training batch");
  require(batch.size() == draws, ErrorKind::input, "batch and draw counts differ");
  for (const TrainExample& ex : batch) {
    require(ex.z0 && ex.condition, ErrorKind::input, "training example without latents");
    require(ex.z0->same_shape(*ex.condition), ErrorKind::input, "target and condition latents differ in shape");
    require(ex.z0->same_shape(*batch.front().z0), ErrorKind::input, "latents in one batch must share a shape");
  }
}

void check_finite(double loss, const char* what) {
  require(std::isfinite(loss), ErrorKind::numeric, std::string(what) + " loss is not finite");
}

// Stacks patch-flattened targets and builds the per-row coefficient w_b / (B * numel).
Mat stacked_targets(const std::vector<Latent>& targets, int p, std::span<const double> weights,
                    std::vector<double>& coeff) {
  const int B = static_cast<int>(targets.size());
  Mat first = patch_flatten(targets.front(), p);
  const Eigen::Index N = first.rows();
  Mat out(N * B, first.cols());
  const double numel = static_cast<double>(targets.front().size());
  coeff.assign(static_cast<std::size_t>(N * B), 0.0);
  for (int b = 0; b < B; ++b) {
    out.middleRows(b * N, N) = b == 0 ? first : patch_flatten(targets[b], p);
    for (Eigen::Index r = 0; r < N; ++r) coeff[b * N + r] = weights[b] / (B * numel);
  }
  return out;
}
}  // namespace

std::string objective_name(Objective o) { return o == Objective::ddpm ? "ddpm" : "rfm"; }

Objective parse_objective(const std::string& s) {
  if (s == "ddpm") return Objective::ddpm;
  if (s == "rfm") return Objective::rfm;
  fail(ErrorKind::usage, "unknown objective '" + s + "' (expected ddpm or rfm)");
}

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
  require(T >= 1, ErrorKind::config, "schedule needs T >= 1");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, ErrorKind::config,
          "schedule requires 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.betas.assign(T + 1, 0.0);
  s.alphas_bar.assign(T + 1, 1.0);
  s.snr.assign(T + 1, std::numeric_limits<double>::infinity());
  for (int t = 1; t <= T; ++t) {
    s.betas[t] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
    s.alphas_bar[t] = s.alphas_bar[t - 1] * (1.0 - s.betas[t]);
    s.snr[t] = s.alphas_bar[t] / (1.0 - s.alphas_bar[t]);
  }
  return s;
}

Latent add_noise(const Latent& z0, const Latent& eps, double alpha_bar) {
  require_same_shape(z0, eps, "add_noise");
  require(alpha_bar >= 0.0 && alpha_bar <= 1.0, ErrorKind::input, "alpha_bar outside [0, 1]");
  const double a = std::sqrt(alpha_bar), s = std::sqrt(1.0 - alpha_bar);
  Latent out(z0.channels, z0.height, z0.width);
  for (std::size_t i = 0; i < z0.size(); ++i) out.data[i] = a * z0.data[i] + s * eps.data[i];
  return out;
}

Latent add_noise(const Latent& z0, const Latent& eps, int t, const NoiseSchedule& sched) {
  require(t >= 1 && t <= sched.T, ErrorKind::input, "timestep " + std::to_string(t) + " outside 1.." + std::to_string(sched.T));
  return add_noise(z0, eps, sched.alpha_bar(t));
}

double min_snr_weight(double snr, double lambda) {
  require(lambda > 0.0 && snr > 0.0, ErrorKind::input, "min-SNR weight needs positive SNR and lambda");
  return std::min(snr, lambda) / snr;
}

double min_snr_weight(int t, const NoiseSchedule& sched, double lambda) {
  require(t >= 1 && t <= sched.T, ErrorKind::input, "timestep outside schedule");
  return min_snr_weight(sched.snr_at(t), lambda);
}

FlowPath flow_path(const Latent& x0, const Latent& x1, double t) {
  require_same_shape(x0, x1, "flow_path");
  require(t >= 0.0 && t <= 1.0, ErrorKind::input, "flow time outside [0, 1]");
  FlowPath f{t, Latent(x0.channels, x0.height, x0.width), Latent(x0.channels, x0.height, x0.width)};
  for (std::size_t i = 0; i < x0.size(); ++i) {
    f.z_t.data[i] = (1.0 - t) * x0.data[i] + t * x1.data[i];
    f.target_v.data[i] = x1.data[i] - x0.data[i];
  }
  return f;
}

Latent normal_latent(std::uint64_t key, int c, int h, int w) {
  CounterRng rng(key);
  Latent z(c, h, w);
  for (double& v : z.data) v = rng.normal();
  return z;
}

DdpmDraw draw_ddpm(std::uint64_t seed, std::uint64_t step, std::uint64_t slot, const Latent& like, int T) {
  CounterRng rng(derive_key({seed, step, slot, kDdpmTag}));
  DdpmDraw d;
  d.t = static_cast<int>(rng.uniform_int(1, T));
  d.eps = Latent(like.channels, like.height, like.width);
  for (double& v : d.eps.data) v = rng.normal();
  return d;
}

FlowDraw draw_flow(std::uint64_t seed, std::uint64_t step, std::uint64_t slot, const Latent& like) {
  CounterRng rng(derive_key({seed, step, slot, kFlowTag}));
  FlowDraw d;
  d.t = rng.uniform();
  d.x0 = Latent(like.channels, like.height, like.width);
  for (double& v : d.x0.data) v = rng.normal();
  return d;
}

namespace {

struct Prepared {
  std::vector<Latent> noisy;
  std::vector<Latent> targets;
  std::vector<ModelInput> inputs;
  LossReport report;
};

Prepared prepare_ddpm(std::span<const TrainExample> batch, std::span<const DdpmDraw> draws, const NoiseSchedule& sched,
                      double lambda) {
  check_batch(batch, draws.size());
  Prepared p;
  p.report.objective = Objective::ddpm;
  p.noisy.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    require(draws[b].eps.same_shape(*batch[b].z0), ErrorKind::input, "noise draw shape differs from latent");
    p.noisy.push_back(add_noise(*batch[b].z0, draws[b].eps, draws[b].t, sched));
    p.targets.push_back(draws[b].eps);
    p.report.weights.push_back(min_snr_weight(draws[b].t, sched, lambda));
    p.report.times.push_back(draws[b].t);
  }
  for (std::size_t b = 0; b < batch.size(); ++b)
    p.inputs.push_back({&p.noisy[b], batch[b].condition, ddpm_time_value(draws[b].t), batch[b].caption, batch[b].modality});
  return p;
}

Prepared prepare_flow(std::span<const TrainExample> batch, std::span<const FlowDraw> draws) {
  check_batch(batch, draws.size());
  Prepared p;
  p.report.objective = Objective::rfm;
  p.noisy.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    FlowPath f = flow_path(draws[b].x0, *batch[b].z0, draws[b].t);
    p.noisy.push_back(std::move(f.z_t));
    p.targets.push_back(std::move(f.target_v));
    p.report.weights.push_back(1.0);
    p.report.times.push_back(draws[b].t);
  }
  for (std::size_t b = 0; b < batch.size(); ++b)
    p.inputs.push_back({&p.noisy[b], batch[b].condition, flow_time_value(draws[b].t), batch[b].caption, batch[b].modality});
  return p;
}

LossGraph graph_from(ag::Tape& tape, const DiT& model, Prepared& p, const char* what) {
  const DiT::Output out = model.forward(tape, p.inputs);
  std::vector<double> coeff;
  Mat target = stacked_targets(p.targets, model.config().patch, p.report.weights, coeff);
  LossGraph g;
  g.loss = ag::weighted_sq_error(tape, out.tokens, std::move(target), std::move(coeff));
  p.report.loss = tape.value(g.loss)(0, 0);
  check_finite(p.report.loss, what);
  g.report = std::move(p.report);
  return g;
}

LossReport value_from(const Predictor& predict, Prepared& p, const char* what) {
  const std::vector<Latent> pred = predict(p.inputs);
  require(pred.size() == p.targets.size(), ErrorKind::shape, "predictor returned the wrong batch size");
  double total = 0.0;
  for (std::size_t b = 0; b < pred.size(); ++b) {
    require_same_shape(pred[b], p.targets[b], "prediction");
    total += p.report.weights[b] * mean_sq_diff(pred[b], p.targets[b]);
  }
  p.report.loss = total / static_cast<double>(pred.size());
  check_finite(p.report.loss, what);
  return std::move(p.report);
}

}  // namespace

LossGraph ddpm_loss_graph(ag::Tape& tape, const DiT& model, std::span<const TrainExample> batch,
                          std::span<const DdpmDraw> draws, const NoiseSchedule& sched, double lambda) {
  Prepared p = prepare_ddpm(batch, draws, sched, lambda);
  return graph_from(tape, model, p, "ddpm");
}

LossGraph rfm_loss_graph(ag::Tape& tape, const DiT& model, std::span<const TrainExample> batch,
                         std::span<const FlowDraw> draws) {
  Prepared p = prepare_flow(batch, draws);
  return graph_from(tape, model, p, "rfm");
}

LossReport ddpm_loss(const Predictor& predict, std::span<const TrainExample> batch, std::span<const DdpmDraw> draws,
                     const NoiseSchedule& sched, double lambda) {
  Prepared p = prepare_ddpm(batch, draws, sched, lambda);
  return value_from(predict, p, "ddpm");
}

LossReport rfm_loss(const Predictor& predict, std::span<const TrainExample> batch, std::span<const FlowDraw> draws) {
  Prepared p = prepare_flow(batch, draws);
  return value_from(predict, p, "rfm");
}

}  // namespace ddit
