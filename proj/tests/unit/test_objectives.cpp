#include <doctest.h>

#include <cmath>

#include "ddit/objectives.hpp"
#include "ddit/rng.hpp"
#include "test_util.hpp"

using namespace ddit;

namespace {

Latent filled(int c, int h, int w, double v) { return Latent(c, h, w, v); }

std::vector<Latent> zeros_for(std::span<const ModelInput> in) {
  std::vector<Latent> out;
  for (const auto& i : in) out.emplace_back(i.noisy->channels, i.noisy->height, i.noisy->width, 0.0);
  return out;
}

struct Batch {
  std::vector<Latent> z0, cond;
  std::vector<TrainExample> ex;
};

Batch make_batch(int B, int c, int h, int w, std::uint64_t key) {
  Batch b;
  for (int i = 0; i < B; ++i) {
    b.z0.push_back(normal_latent(key + 2 * i, c, h, w));
    b.cond.push_back(normal_latent(key + 2 * i + 1, c, h, w));
  }
  for (int i = 0; i < B; ++i) b.ex.push_back({&b.z0[i], &b.cond[i], {1, 2}, i % 2});
  return b;
}

ModelConfig small_model() {
  ModelConfig c;
  c.hidden = 32;
  c.depth = 1;
  c.heads = 2;
  c.latent_channels = 4;
  c.text_dim = 16;
  c.freq_dim = 32;
  return c;
}

}  // namespace

TEST_CASE("linear schedule tables") {
  const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 2e-2);
  CHECK(s.T == 1000);
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(std::isinf(s.snr_at(0)));
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9999).epsilon(1e-12));
  CHECK(s.snr_at(1) == doctest::Approx(9999.0).epsilon(1e-9));
  CHECK(s.beta(1000) == doctest::Approx(2e-2));
  for (int t = 1; t <= 1000; ++t) {
    CHECK(s.beta(t) > 0.0);
    CHECK(s.beta(t) < 1.0);
    if (t > 1) {
      CHECK(s.beta(t) >= s.beta(t - 1));
      CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
      CHECK(s.snr_at(t) < s.snr_at(t - 1));
    }
    CHECK(s.snr_at(t) > 0.0);
  }
  // Product form.
  double prod = 1.0;
  for (int t = 1; t <= 1000; ++t) prod *= 1.0 - s.beta(t);
  CHECK(s.alpha_bar(1000) == doctest::Approx(prod).epsilon(1e-12));
}

TEST_CASE("schedule validation") {
  CHECK_ERROR_KIND(make_linear_schedule(0), ErrorKind::config);
  CHECK_ERROR_KIND(make_linear_schedule(10, 0.0, 0.1), ErrorKind::config);
  CHECK_ERROR_KIND(make_linear_schedule(10, 0.2, 0.1), ErrorKind::config);
  CHECK_ERROR_KIND(make_linear_schedule(10, 0.1, 1.0), ErrorKind::config);
}

TEST_CASE("forward diffusion") {
  const Latent z0 = normal_latent(1, 3, 4, 4), eps = normal_latent(2, 3, 4, 4);
  CHECK(add_noise(z0, eps, 1.0).data == z0.data);
  CHECK(add_noise(z0, eps, 0.0).data == eps.data);
  const Latent half = add_noise(filled(3, 4, 4, 0.0), filled(3, 4, 4, 1.0), 0.75);
  for (double v : half.data) CHECK(v == doctest::Approx(0.5));

  const NoiseSchedule s = make_linear_schedule();
  const Latent zt = add_noise(z0, eps, 400, s);
  CHECK(zt.same_shape(z0));
  for (std::size_t i = 0; i < zt.size(); ++i)
    CHECK(zt.data[i] == doctest::Approx(std::sqrt(s.alpha_bar(400)) * z0.data[i] + std::sqrt(1 - s.alpha_bar(400)) * eps.data[i]));
  CHECK_ERROR_KIND(add_noise(z0, eps, 0, s), ErrorKind::input);
  CHECK_ERROR_KIND(add_noise(z0, eps, 1001, s), ErrorKind::input);
  CHECK_ERROR_KIND(add_noise(z0, normal_latent(3, 3, 4, 2), 0.5), ErrorKind::shape);
}

TEST_CASE("forward diffusion is linear in (z0, eps)") {
  const Latent a0 = normal_latent(1, 2, 4, 4), a1 = normal_latent(2, 2, 4, 4);
  const Latent b0 = normal_latent(3, 2, 4, 4), b1 = normal_latent(4, 2, 4, 4);
  Latent m0 = a0, m1 = a1;
  for (std::size_t i = 0; i < m0.size(); ++i) {
    m0.data[i] = 2 * a0.data[i] - b0.data[i];
    m1.data[i] = 2 * a1.data[i] - b1.data[i];
  }
  const Latent za = add_noise(a0, a1, 0.3), zb = add_noise(b0, b1, 0.3), zm = add_noise(m0, m1, 0.3);
  for (std::size_t i = 0; i < zm.size(); ++i) CHECK(zm.data[i] == doctest::Approx(2 * za.data[i] - zb.data[i]));
}

TEST_CASE("min-SNR weights") {
  CHECK(min_snr_weight(25.0, 5.0) == doctest::Approx(0.2));
  CHECK(min_snr_weight(5.0, 5.0) == 1.0);
  CHECK(min_snr_weight(0.5, 5.0) == 1.0);
  const NoiseSchedule s = make_linear_schedule();
  double prev = 0.0;
  for (int t = 1; t <= s.T; ++t) {
    const double w = min_snr_weight(t, s, 5.0);
    CHECK(w > 0.0);
    CHECK(w <= 1.0);
    CHECK(w >= prev);
    CHECK((w == 1.0) == (s.snr_at(t) <= 5.0));
    prev = w;
  }
}

TEST_CASE("flow path") {
  const Latent x0 = normal_latent(5, 2, 2, 2), x1 = normal_latent(6, 2, 2, 2);
  const FlowPath f = flow_path(x0, x1, 0.25);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    CHECK(f.z_t.data[i] == 0.75 * x0.data[i] + 0.25 * x1.data[i]);
    CHECK(f.target_v.data[i] == x1.data[i] - x0.data[i]);
  }
  CHECK(flow_path(x0, x1, 0.0).z_t.data == x0.data);
  CHECK(flow_path(x0, x1, 1.0).z_t.data == x1.data);
  CHECK_ERROR_KIND(flow_path(x0, x1, 1.5), ErrorKind::input);
}

TEST_CASE("per-slot draws are keyed and reproducible") {
  const Latent like(3, 4, 4);
  const DdpmDraw a = draw_ddpm(1, 2, 3, like, 1000), b = draw_ddpm(1, 2, 3, like, 1000);
  CHECK(a.t == b.t);
  CHECK(a.eps.data == b.eps.data);
  CHECK(draw_ddpm(1, 2, 4, like, 1000).eps.data != a.eps.data);
  CHECK(draw_ddpm(1, 3, 3, like, 1000).eps.data != a.eps.data);
  CHECK(draw_flow(1, 2, 3, like).x0.data == draw_flow(1, 2, 3, like).x0.data);
  CHECK(draw_flow(1, 2, 3, like).x0.data != a.eps.data);
  int lo = 1000, hi = 1;
  double tmin = 1.0, tmax = 0.0;
  for (std::uint64_t slot = 0; slot < 4000; ++slot) {
    const int t = draw_ddpm(9, 1, slot, Latent(1, 1, 1), 1000).t;
    lo = std::min(lo, t);
    hi = std::max(hi, t);
    const double u = draw_flow(9, 1, slot, Latent(1, 1, 1)).t;
    tmin = std::min(tmin, u);
    tmax = std::max(tmax, u);
  }
  CHECK(lo >= 1);
  CHECK(lo < 5);
  CHECK(hi <= 1000);
  CHECK(hi > 995);
  CHECK(tmin >= 0.0);
  CHECK(tmax < 1.0);
}

TEST_CASE("perfect predictions give zero loss") {
  Batch b = make_batch(4, 3, 4, 4, 10);
  const NoiseSchedule s = make_linear_schedule();
  std::vector<DdpmDraw> dd;
  std::vector<FlowDraw> fd;
  for (int i = 0; i < 4; ++i) {
    dd.push_back(draw_ddpm(1, 1, i, b.z0[i], s.T));
    fd.push_back(draw_flow(1, 1, i, b.z0[i]));
  }
  const Predictor eps_oracle = [&](std::span<const ModelInput> in) {
    std::vector<Latent> out;
    for (std::size_t i = 0; i < in.size(); ++i) out.push_back(dd[i].eps);
    return out;
  };
  CHECK(ddpm_loss(eps_oracle, b.ex, dd, s, 5.0).loss == 0.0);

  const Predictor v_oracle = [&](std::span<const ModelInput> in) {
    std::vector<Latent> out;
    for (std::size_t i = 0; i < in.size(); ++i) out.push_back(flow_path(fd[i].x0, b.z0[i], fd[i].t).target_v);
    return out;
  };
  const LossReport r = rfm_loss(v_oracle, b.ex, fd);
  CHECK(r.loss == 0.0);
  CHECK(r.objective == Objective::rfm);
}

TEST_CASE("zero predictor: DDPM loss is about the mean weight") {
  Batch b = make_batch(8, 48, 8, 8, 20);  // 24576 elements
  const NoiseSchedule s = make_linear_schedule();
  std::vector<DdpmDraw> dd;
  for (int i = 0; i < 8; ++i) dd.push_back(draw_ddpm(3, 1, i, b.z0[i], s.T));
  const LossReport r = ddpm_loss(zeros_for, b.ex, dd, s, 5.0);
  double mean_w = 0.0;
  for (double w : r.weights) mean_w += w / 8;
  CHECK(std::abs(r.loss - mean_w) / mean_w < 0.05);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(r.times[i] == dd[i].t);
    CHECK(r.weights[i] == min_snr_weight(dd[i].t, s, 5.0));
  }
  // With the clamp inactive every weight is 1.
  const LossReport plain = ddpm_loss(zeros_for, b.ex, dd, s, 1e300);
  for (double w : plain.weights) CHECK(w == 1.0);
  double mse = 0.0;
  for (const auto& d : dd)
    for (double e : d.eps.data) mse += e * e / static_cast<double>(d.eps.size() * 8);
  CHECK(plain.loss == doctest::Approx(mse).epsilon(1e-12));
}

TEST_CASE("zero predictor: RFM loss on zero data is about one") {
  std::vector<Latent> z0(8, Latent(48, 8, 8, 0.0)), cond(8, Latent(48, 8, 8, 0.0));
  std::vector<TrainExample> ex;
  std::vector<FlowDraw> fd;
  for (int i = 0; i < 8; ++i) {
    ex.push_back({&z0[i], &cond[i], {}, 0});
    fd.push_back(draw_flow(4, 1, i, z0[i]));
  }
  CHECK(std::abs(rfm_loss(zeros_for, ex, fd).loss - 1.0) < 0.05);
}

TEST_CASE("identical endpoints give zero RFM loss on a fresh model") {
  // x0 = x1: replace the noise draw with the data itself.
  Batch b = make_batch(2, 4, 4, 4, 30);
  std::vector<FlowDraw> fd = {{0.3, b.z0[0]}, {0.8, b.z0[1]}};
  const DiT model(small_model(), 1);
  ag::Tape t(&model.params(), false);
  CHECK(rfm_loss_graph(t, model, b.ex, fd).report.loss == 0.0);
}

TEST_CASE("graph losses agree with the value path") {
  const ModelConfig c = small_model();
  DiT model(c, 2);
  CounterRng rng(7);
  for (Mat& m : model.params().values())
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 0.1 * rng.normal();
  Batch b = make_batch(3, 4, 4, 4, 40);
  const NoiseSchedule s = make_linear_schedule();
  std::vector<DdpmDraw> dd;
  std::vector<FlowDraw> fd;
  for (int i = 0; i < 3; ++i) {
    dd.push_back(draw_ddpm(5, 1, i, b.z0[i], s.T));
    fd.push_back(draw_flow(5, 1, i, b.z0[i]));
  }
  const Predictor pred = [&](std::span<const ModelInput> in) { return model.predict(in); };
  ag::Tape t1(&model.params(), false), t2(&model.params(), false);
  CHECK(ddpm_loss_graph(t1, model, b.ex, dd, s, 5.0).report.loss ==
        doctest::Approx(ddpm_loss(pred, b.ex, dd, s, 5.0).loss).epsilon(1e-12));
  CHECK(rfm_loss_graph(t2, model, b.ex, fd).report.loss == doctest::Approx(rfm_loss(pred, b.ex, fd).loss).epsilon(1e-12));
}

TEST_CASE("losses are invariant to batch order when draws travel with examples") {
  const ModelConfig c = small_model();
  DiT model(c, 3);
  CounterRng rng(8);
  for (Mat& m : model.params().values())
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 0.1 * rng.normal();
  Batch b = make_batch(4, 4, 4, 4, 50);
  const NoiseSchedule s = make_linear_schedule();
  std::vector<DdpmDraw> dd;
  std::vector<FlowDraw> fd;
  for (int i = 0; i < 4; ++i) {
    dd.push_back(draw_ddpm(6, 1, i, b.z0[i], s.T));
    fd.push_back(draw_flow(6, 1, i, b.z0[i]));
  }
  const int perm[] = {2, 0, 3, 1};
  std::vector<TrainExample> pex;
  std::vector<DdpmDraw> pdd;
  std::vector<FlowDraw> pfd;
  for (int i : perm) {
    pex.push_back(b.ex[i]);
    pdd.push_back(dd[i]);
    pfd.push_back(fd[i]);
  }
  ag::Tape t1(&model.params(), false), t2(&model.params(), false), t3(&model.params(), false), t4(&model.params(), false);
  CHECK(ddpm_loss_graph(t1, model, b.ex, dd, s, 5.0).report.loss ==
        doctest::Approx(ddpm_loss_graph(t2, model, pex, pdd, s, 5.0).report.loss).epsilon(1e-13));
  CHECK(rfm_loss_graph(t3, model, b.ex, fd).report.loss ==
        doctest::Approx(rfm_loss_graph(t4, model, pex, pfd).report.loss).epsilon(1e-13));
}

TEST_CASE("non-finite predictions are numeric errors") {
  Batch b = make_batch(1, 2, 2, 2, 60);
  std::vector<FlowDraw> fd = {draw_flow(1, 1, 0, b.z0[0])};
  const Predictor bad = [](std::span<const ModelInput> in) {
    std::vector<Latent> out;
    for (const auto& i : in) out.emplace_back(i.noisy->channels, i.noisy->height, i.noisy->width, std::nan(""));
    return out;
  };
  CHECK_ERROR_KIND(rfm_loss(bad, b.ex, fd), ErrorKind::numeric);
}

TEST_CASE("objective names") {
  CHECK(parse_objective("ddpm") == Objective::ddpm);
  CHECK(parse_objective(objective_name(Objective::rfm)) == Objective::rfm);
  CHECK_ERROR_KIND(parse_objective("edm"), ErrorKind::usage);
}
