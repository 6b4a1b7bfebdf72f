#include <doctest.h>

#include <cmath>
#include <set>

#include "ddit/codec.hpp"
#include "ddit/config.hpp"
#include "ddit/model.hpp"
#include "ddit/objectives.hpp"
#include "ddit/optim.hpp"
#include "ddit/rng.hpp"
#include "test_util.hpp"

using namespace ddit;

namespace {

Latent random_latent(int c, int h, int w, std::uint64_t key) {
  CounterRng rng(key);
  Latent z(c, h, w);
  for (double& v : z.data) v = rng.normal();
  return z;
}

void randomize(ParamStore& store, std::uint64_t key, double scale) {
  CounterRng rng(key);
  for (Mat& m : store.values())
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
}

ModelConfig small_config() {
  ModelConfig c;
  c.hidden = 32;
  c.depth = 2;
  c.heads = 2;
  c.patch = 2;
  c.latent_channels = 4;
  c.text_dim = 16;
  c.text_len_max = 8;
  c.freq_dim = 32;
  return c;
}

struct Inputs {
  std::vector<Latent> noisy, cond;
  std::vector<ModelInput> in;
};

Inputs make_inputs(const ModelConfig& c, int h, int w, std::vector<std::vector<int>> captions, std::uint64_t key) {
  Inputs x;
  const std::size_t B = captions.size();
  for (std::size_t b = 0; b < B; ++b) {
    x.noisy.push_back(random_latent(c.latent_channels, h, w, key + 2 * b));
    x.cond.push_back(random_latent(c.latent_channels, h, w, key + 2 * b + 1));
  }
  for (std::size_t b = 0; b < B; ++b) {
    ModelInput mi;
    mi.noisy = &x.noisy[b];
    mi.condition = &x.cond[b];
    mi.time_value = 100.0 + 250.0 * static_cast<double>(b);
    mi.caption = captions[b];
    mi.modality = static_cast<int>(b % 2);
    x.in.push_back(mi);
  }
  return x;
}

// ---- dense single-sample reference -----------------------------------------

const Mat& P(const ParamStore& s, const std::string& name) {
  const int id = s.find(name);
  REQUIRE_MESSAGE(id >= 0, name);
  return s.value(id);
}

Mat ref_linear(const ParamStore& s, const std::string& prefix, const Mat& x) {
  return (x * P(s, prefix + ".weight")).rowwise() + RowVec(P(s, prefix + ".bias").row(0));
}

Mat ref_ln(const Mat& x, double eps) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    y.row(r) = (x.row(r).array() - mean) / std::sqrt(var + eps);
  }
  return y;
}

Mat ref_modulate(const Mat& x, const RowVec& shift, const RowVec& scale) {
  Mat y = x;
  for (Eigen::Index r = 0; r < x.rows(); ++r) y.row(r) = x.row(r).cwiseProduct((scale.array() + 1.0).matrix()) + shift;
  return y;
}

Mat ref_gelu(const Mat& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v))); });
}

// Rotates every head of every row with the span-based rotary API.
Mat ref_rope(const Mat& x, int heads, bool grid, int cols, double base) {
  const int dh = static_cast<int>(x.cols()) / heads;
  Mat y = x;
  const rope::RopeTable t1 = rope::make_table(dh, base);
  const rope::RopeTable t2 = rope::make_table(dh / 2, base);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (int h = 0; h < heads; ++h) {
      std::span<double> v(y.row(r).data() + h * dh, static_cast<std::size_t>(dh));
      if (grid)
        rope::apply_rope_2d(v, static_cast<double>(r / cols), static_cast<double>(r % cols), t2);
      else
        rope::apply_rope_1d(v, static_cast<double>(r), t1);
    }
  return y;
}

// Plain softmax attention over one sequence.
Mat ref_attention(const Mat& Q, const Mat& K, const Mat& V, int heads, std::vector<Mat>* probs = nullptr) {
  const int dh = static_cast<int>(Q.cols()) / heads;
  Mat out(Q.rows(), Q.cols());
  for (int h = 0; h < heads; ++h) {
    Mat S = Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose() / std::sqrt(static_cast<double>(dh));
    for (Eigen::Index i = 0; i < S.rows(); ++i) {
      S.row(i) = (S.row(i).array() - S.row(i).maxCoeff()).exp();
      S.row(i) /= S.row(i).sum();
    }
    out.middleCols(h * dh, dh) = S * V.middleCols(h * dh, dh);
    if (probs) probs->push_back(S);
  }
  return out;
}

struct RefStreams {
  Mat image, text;
};

RefStreams ref_block(const ParamStore& s, const ModelConfig& c, int block, const RefStreams& in, const RowVec& cond_act,
                     int grid_cols) {
  const int D = c.hidden;
  const std::string pre = "blocks." + std::to_string(block);
  const Mat mod = ref_linear(s, pre + ".modulation", cond_act);
  auto chunk = [&](int k) { return RowVec(mod.row(0).segment(k * D, D)); };
  const Mat* xs[2] = {&in.image, &in.text};
  const char* names[2] = {"image", "text"};
  Mat q[2], k[2], v[2];
  for (int st = 0; st < 2; ++st) {
    const int base = 6 * st;
    const Mat h = ref_modulate(ref_ln(*xs[st], c.ln_eps), chunk(base), chunk(base + 1));
    const Mat qkv = ref_linear(s, pre + "." + names[st] + ".qkv", h);
    q[st] = ref_rope(qkv.leftCols(D), c.heads, st == 0, grid_cols, c.rope_base);
    k[st] = ref_rope(qkv.middleCols(D, D), c.heads, st == 0, grid_cols, c.rope_base);
    v[st] = qkv.rightCols(D);
  }
  const Eigen::Index n = in.image.rows(), L = in.text.rows();
  Mat Q(n + L, D), K(n + L, D), V(n + L, D);
  Q << q[0], q[1];
  K << k[0], k[1];
  V << v[0], v[1];
  const Mat joint = ref_attention(Q, K, V, c.heads);
  const Mat attn[2] = {joint.topRows(n), joint.bottomRows(L)};
  RefStreams out;
  Mat* outs[2] = {&out.image, &out.text};
  for (int st = 0; st < 2; ++st) {
    const int base = 6 * st;
    const std::string sp = pre + "." + names[st];
    Mat x = *xs[st];
    const Mat o = ref_linear(s, sp + ".out", attn[st]);
    for (Eigen::Index r = 0; r < x.rows(); ++r) x.row(r) += chunk(base + 2).cwiseProduct(o.row(r));
    const Mat h = ref_modulate(ref_ln(x, c.ln_eps), chunk(base + 3), chunk(base + 4));
    const Mat y = ref_linear(s, sp + ".mlp.fc2", ref_gelu(ref_linear(s, sp + ".mlp.fc1", h)));
    for (Eigen::Index r = 0; r < x.rows(); ++r) x.row(r) += chunk(base + 5).cwiseProduct(y.row(r));
    *outs[st] = x;
  }
  return out;
}

RowVec silu_row(const RowVec& x) {
  return x.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
}

}  // namespace

TEST_CASE("paper-profile parameter count") {
  const ModelConfig c = preset("paper-profile").model;
  CHECK(c.hidden == 1152);
  CHECK(c.depth == 28);
  CHECK(c.heads == 16);
  const std::int64_t D = 1152;
  CHECK(36 * D * D == 47775744);
  CHECK(36 * D * D * 28 == 1337720832);
  CHECK(block_parameter_count(c) == 36 * D * D + 30 * D);
  const std::int64_t total = count_parameters(c);
  CHECK(total == 1349390592);
  CHECK(total >= 1330000000);
  CHECK(total <= 1360000000);
  CHECK(std::abs(static_cast<double>(total) - 1.345e9) / 1.345e9 < 0.01);

  // Hand-written layout sum for the same configuration.
  const std::int64_t Dt = c.text_dim, pc = static_cast<std::int64_t>(c.patch) * c.patch * c.latent_channels;
  auto lin = [](std::int64_t i, std::int64_t o) { return i * o + o; };
  const std::int64_t by_hand = lin(2 * pc, D) + lin(c.freq_dim, D) + lin(D, D) + c.vocab_size * Dt +
                               c.text_len_max * Dt + lin(Dt, Dt) + lin(Dt, D) + lin(D, D) + c.modalities * D +
                               lin(Dt, D) + 28 * (36 * D * D + 30 * D) + lin(D, 2 * D) + lin(D, pc);
  CHECK(total == by_hand);

  std::int64_t from_layout = 0;
  for (const ParamSpec& s : parameter_layout(c)) from_layout += static_cast<std::int64_t>(s.rows) * s.cols;
  CHECK(from_layout == total);
}

TEST_CASE("toy parameter count") {
  const ModelConfig c = preset("toy").model;
  CHECK(count_parameters(c) == 2570304);
  const DiT model(c, 1);
  CHECK(model.params().scalar_count() == 2570304);
}

TEST_CASE("closed-form count equals the instantiated arrays") {
  ModelConfig c;
  c.hidden = 16;
  c.depth = 1;
  c.heads = 2;
  c.latent_channels = 3;
  c.text_dim = 8;
  c.freq_dim = 16;
  const DiT model(c, 3);
  std::int64_t brute = 0;
  for (const Mat& m : model.params().values()) brute += m.size();
  CHECK(brute == count_parameters(c));

  for (int k : {1, 2, 5}) {
    ModelConfig a = c, b = c;
    a.depth = k;
    b.depth = 2 * k;
    CHECK(count_parameters(b) - count_parameters(a) == k * block_parameter_count(c));
  }
}

TEST_CASE("parameter names and decay flags") {
  const auto layout = parameter_layout(small_config());
  std::set<std::string> names;
  for (const auto& s : layout) names.insert(s.name);
  for (const char* n : {"patch_embed.weight", "time_embed.fc1.weight", "caption_encoder.token_table",
                        "modality_embed.table", "text_proj.weight", "blocks.0.modulation.weight",
                        "blocks.1.image.qkv.weight", "blocks.1.text.mlp.fc2.bias", "final.modulation.weight",
                        "final.linear.weight"})
    CHECK_MESSAGE(names.count(n) == 1, n);
  for (const auto& s : layout) {
    const bool is_bias = s.name.ends_with(".bias");
    if (is_bias || s.name.find("table") != std::string::npos || s.name.find("modulation") != std::string::npos)
      CHECK_MESSAGE(!s.decay, s.name);
    else
      CHECK_MESSAGE(s.decay, s.name);
  }
}

TEST_CASE("config validation") {
  ModelConfig c = small_config();
  c.heads = 3;
  CHECK_ERROR_KIND(c.validate(), ErrorKind::config);
  c = small_config();
  c.hidden = 24;
  c.heads = 4;  // head dim 6
  CHECK_ERROR_KIND(c.validate(), ErrorKind::config);
  CHECK(small_config().in_channels() == 8);
}

TEST_CASE("patch grids") {
  const Latent z = random_latent(3, 4, 4, 1);
  CHECK(patch_flatten(z, 2).rows() == 4);
  CodecConfig codec{CodecKind::haar, 3, 1.0};
  const int side = codec.latent_side(512) / 2;
  CHECK(side == 32);
  CHECK(side * side == 1024);
  CHECK_ERROR_KIND(patch_flatten(random_latent(3, 5, 4, 2), 2), ErrorKind::shape);
}

TEST_CASE("patch layout is channel, then row, then column") {
  const Latent z = random_latent(3, 4, 6, 3);
  const Mat t = patch_flatten(z, 2);
  CHECK(t.rows() == 6);
  CHECK(t.cols() == 12);
  for (int gy = 0; gy < 2; ++gy)
    for (int gx = 0; gx < 3; ++gx)
      for (int c = 0; c < 3; ++c)
        for (int py = 0; py < 2; ++py)
          for (int px = 0; px < 2; ++px) CHECK(t(gy * 3 + gx, c * 4 + py * 2 + px) == z.at(c, gy * 2 + py, gx * 2 + px));
}

TEST_CASE("unpatchify inverts patch flattening") {
  const Latent z = random_latent(5, 6, 4, 4);
  const Latent back = unpatchify(patch_flatten(z, 2), 3, 2, 2, 5);
  CHECK(back.same_shape(z));
  CHECK(back.data == z.data);

  const Latent one = unpatchify(Mat::Constant(1, 7, 0.5), 1, 1, 1, 7);
  CHECK(one.channels == 7);
  CHECK(one.height == 1);

  Mat tokens = patch_flatten(z, 2);
  tokens.row(0).swap(tokens.row(1));
  CHECK(unpatchify(tokens, 3, 2, 2, 5).data != z.data);

  CHECK_ERROR_KIND(unpatchify(patch_flatten(z, 2), 2, 2, 2, 5), ErrorKind::shape);
  CHECK_ERROR_KIND(unpatchify(patch_flatten(z, 2), 3, 2, 2, 4), ErrorKind::shape);
}

TEST_CASE("zero input with zero patch bias embeds to zero") {
  const ModelConfig c = small_config();
  DiT model(c, 2);
  Latent zero(c.latent_channels, 4, 4, 0.0);
  ModelInput mi{&zero, &zero, 1.0, {1}, 0};
  ag::Tape t(&model.params(), false);
  const TokenStreams s = model.embed_streams(t, std::span(&mi, 1));
  CHECK(t.value(s.image).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fresh model predicts exactly zero") {
  const ModelConfig c = small_config();
  const DiT model(c, 7);
  for (auto [h, w] : {std::pair{4, 4}, std::pair{6, 2}, std::pair{8, 10}}) {
    auto x = make_inputs(c, h, w, {{1, 2, 3}, {}}, 11);
    const auto out = model.predict(x.in);
    REQUIRE(out.size() == 2);
    for (const Latent& z : out) {
      CHECK(z.channels == c.latent_channels);
      CHECK(z.height == h);
      CHECK(z.width == w);
      for (double v : z.data) REQUIRE(v == 0.0);
    }
  }
}

TEST_CASE("prediction shape follows the noisy latent on a trained-looking model") {
  const ModelConfig c = small_config();
  DiT model(c, 7);
  randomize(model.params(), 5, 0.1);
  for (auto [h, w] : {std::pair{2, 2}, std::pair{4, 8}}) {
    auto x = make_inputs(c, h, w, {{4}}, 13);
    const Latent z = model.predict(x.in.front());
    CHECK(z.channels == c.latent_channels);
    CHECK(z.height == h);
    CHECK(z.width == w);
  }
}

TEST_CASE("zero gates make a block the identity") {
  const ModelConfig c = small_config();
  DiT model(c, 3);
  randomize(model.params(), 17, 0.2);
  const int D = c.hidden;
  for (int b = 0; b < c.depth; ++b) {
    const LinearIds& m = model.block_ids(b).modulation;
    for (int gate : {2, 5, 8, 11}) {
      model.params().value(m.weight).middleCols(gate * D, D).setZero();
      model.params().value(m.bias).middleCols(gate * D, D).setZero();
    }
  }
  auto x = make_inputs(c, 4, 6, {{1, 5, 9}, {2}}, 19);
  ag::Tape t(&model.params(), false);
  CaptionVars caps;
  const TokenStreams s = model.embed_streams(t, x.in, &caps);
  const double times[] = {1.0, 2.0};
  const int flags[] = {0, 1};
  auto g = global_conditioning(t, model.conditioning(), times, caps.pooled, flags);
  const TokenStreams o = model.block_forward(t, 0, s, ag::silu(t, g.total));
  CHECK(t.value(o.image) == t.value(s.image));
  CHECK(t.value(o.text) == t.value(s.text));
}

TEST_CASE("blocks and final layer match a dense per-sample reference") {
  const ModelConfig c = small_config();
  DiT model(c, 3);
  randomize(model.params(), 23, 0.15);
  const int h = 4, w = 6, cols = w / c.patch;
  auto x = make_inputs(c, h, w, {{1, 5, 9, 13}, {7}, {}}, 29);

  ForwardTrace trace;
  trace.keep_attention = true;
  ag::Tape t(&model.params(), false);
  CaptionVars caps;
  const TokenStreams s = model.embed_streams(t, x.in, &caps);
  const auto out = model.forward(t, x.in, &trace);
  const Mat pred = t.value(out.tokens);
  const Mat cond = t.value(out.cond.total);
  const Mat img = t.value(s.image), txt = t.value(s.text);

  const int N = (h / c.patch) * cols;
  int text_row = 0;
  for (int b = 0; b < 3; ++b) {
    const int len = caps.segments[b].second;
    RefStreams r{img.middleRows(b * N, N), txt.middleRows(text_row, len)};
    text_row += len;
    const RowVec act = silu_row(cond.row(b));
    for (int k = 0; k < c.depth; ++k) r = ref_block(model.params(), c, k, r, act, cols);
    const Mat fmod = ref_linear(model.params(), "final.modulation", act);
    const Mat final_h = ref_modulate(ref_ln(r.image, c.ln_eps), fmod.row(0).head(c.hidden), fmod.row(0).tail(c.hidden));
    const Mat expect = ref_linear(model.params(), "final.linear", final_h);
    CHECK((pred.middleRows(b * N, N) - expect).cwiseAbs().maxCoeff() < 1e-10);
  }

  REQUIRE(trace.attention.size() == static_cast<std::size_t>(c.depth * 3 * c.heads));
  for (const Mat& p : trace.attention)
    for (Eigen::Index r = 0; r < p.rows(); ++r) CHECK(std::abs(p.row(r).sum() - 1.0) < 1e-6);
  // First sample: 6 image tokens + 4 text tokens share one attention matrix.
  CHECK(trace.attention[0].rows() == 10);
  CHECK(trace.attention[2 * c.heads].rows() == 7);  // null caption is one token
}

TEST_CASE("joint attention equals single-sequence attention when every token has 1D positions") {
  // With 1D positions on both streams the joint step is attention over the
  // concatenation; compare the grouped op with a dense oracle on that sequence.
  CounterRng rng(31);
  const int n = 5, L = 1, D = 16, heads = 2;
  Mat Q(n + L, D), K(n + L, D), V(n + L, D);
  for (Mat* m : {&Q, &K, &V})
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = rng.normal();
  // The text token mirrors image token 0.
  Q.row(n) = Q.row(0);
  K.row(n) = K.row(0);
  V.row(n) = V.row(0);
  const Mat angles = rope::rotation_angles(rope::TokenPositions::sequence(n + L), heads, D / heads);
  ag::Tape t;
  ag::Var q = ag::rotate_pairs(t, t.constant(Q), angles), k = ag::rotate_pairs(t, t.constant(K), angles);
  std::vector<int> all(n + L);
  for (int i = 0; i < n + L; ++i) all[i] = i;
  const Mat got = t.value(ag::grouped_attention(t, q, k, t.constant(V), heads, {all}));
  const Mat expect = ref_attention(ref_rope(Q, heads, false, 0, 1e4), ref_rope(K, heads, false, 0, 1e4), V, heads);
  CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("mismatched noisy and condition latents are input errors") {
  const ModelConfig c = small_config();
  const DiT model(c, 1);
  Latent a = random_latent(c.latent_channels, 4, 4, 1), b = random_latent(c.latent_channels, 4, 6, 2);
  ModelInput mi{&a, &b, 1.0, {1}, 0};
  CHECK_ERROR_KIND(model.predict(mi), ErrorKind::input);
  Latent wrong = random_latent(c.latent_channels + 1, 4, 4, 3);
  ModelInput mw{&wrong, &wrong, 1.0, {1}, 0};
  CHECK_ERROR_KIND(model.predict(mw), ErrorKind::shape);
}

TEST_CASE("non-finite activations name the failing block") {
  const ModelConfig c = small_config();
  DiT model(c, 1);
  randomize(model.params(), 3, 0.1);
  model.params().value(model.block_ids(1).image.fc1.bias)(0, 0) = std::numeric_limits<double>::infinity();
  auto x = make_inputs(c, 4, 4, {{1}}, 5);
  try {
    model.predict(x.in.front());
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numeric);
    CHECK(std::string(e.what()).find("block 1") != std::string::npos);
  }
}

TEST_CASE("analytic gradients match central differences on a tiny model") {
  ModelConfig c;
  c.hidden = 16;
  c.depth = 2;
  c.heads = 2;
  c.patch = 2;
  c.latent_channels = 3;
  c.text_dim = 8;
  c.text_len_max = 4;
  c.freq_dim = 16;
  DiT model(c, 41);
  randomize(model.params(), 43, 0.3);
  auto x = make_inputs(c, 8, 8, {{1, 2, 3, 4}, {5, 6}}, 47);

  const Mat target = [&] {
    CounterRng rng(53);
    Mat m(2 * 16, c.patch_dim());
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
  }();
  const std::vector<double> coeff(32, 1.0 / 32);
  auto loss_of = [&](bool record, GradStore* grads) {
    ag::Tape t(&model.params(), record);
    const auto out = model.forward(t, x.in);
    ag::Var loss = ag::weighted_sq_error(t, out.tokens, target, coeff);
    const double v = t.value(loss)(0, 0);
    if (record) {
      t.backward(loss);
      t.accumulate_param_grads(*grads);
    }
    return v;
  };
  GradStore grads = model.params().zeros_like();
  loss_of(true, &grads);

  // One entry of every tensor plus a random 1% of all scalars.
  CounterRng rng(59);
  std::vector<std::pair<int, Eigen::Index>> picks;
  std::int64_t total = 0;
  for (int p = 0; p < model.params().size(); ++p) {
    const Eigen::Index n = model.params().value(p).size();
    total += n;
    picks.emplace_back(p, static_cast<Eigen::Index>(rng.uniform_int(0, n - 1)));
  }
  for (std::int64_t i = 0; i < total / 100; ++i) {
    const int p = static_cast<int>(rng.uniform_int(0, model.params().size() - 1));
    picks.emplace_back(p, static_cast<Eigen::Index>(rng.uniform_int(0, model.params().value(p).size() - 1)));
  }

  const double h = 1e-4;
  int worst_index = -1;
  double worst = 0.0;
  for (std::size_t i = 0; i < picks.size(); ++i) {
    auto [p, e] = picks[i];
    double& v = model.params().value(p).data()[e];
    const double saved = v;
    v = saved + h;
    const double up = loss_of(false, nullptr);
    v = saved - h;
    const double down = loss_of(false, nullptr);
    v = saved;
    const double numeric = (up - down) / (2 * h);
    const double analytic = grads[p].data()[e];
    const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-7});
    if (rel > worst) worst = rel, worst_index = static_cast<int>(i);
  }
  INFO("worst at " << (worst_index >= 0 ? model.params().spec(picks[worst_index].first).name : std::string("-")));
  CHECK(picks.size() > 200);
  CHECK(worst < 1e-4);
}

TEST_CASE("modality reaches the output only once the zero-initialised paths have moved") {
  const ModelConfig c = small_config();
  DiT model(c, 61);
  const NoiseSchedule sched = make_linear_schedule();
  auto x = make_inputs(c, 4, 4, {{1, 5, 9}, {2, 6}, {3}, {4, 8, 12, 16}}, 67);
  std::vector<TrainExample> batch;
  for (std::size_t b = 0; b < x.in.size(); ++b)
    batch.push_back({&x.noisy[b], &x.cond[b], x.in[b].caption, static_cast<int>(b % 2)});
  AdamW opt(model.params(), {});

  auto modality_grad_norm = [&](int step) {
    std::vector<DdpmDraw> draws;
    for (std::size_t b = 0; b < batch.size(); ++b) draws.push_back(draw_ddpm(1, step, b, x.noisy[b], sched.T));
    ag::Tape t(&model.params(), true);
    auto g = ddpm_loss_graph(t, model, batch, draws, sched, 5.0);
    t.backward(g.loss);
    GradStore grads = model.params().zeros_like();
    t.accumulate_param_grads(grads);
    const double norm = grads[model.conditioning().modality_table].norm();
    opt.step(model.params(), grads, 1e-3);
    return norm;
  };
  auto prediction_gap = [&] {
    ModelInput a = x.in[0], b = x.in[0];
    a.modality = 0;
    b.modality = 1;
    const Latent pa = model.predict(a), pb = model.predict(b);
    double gap = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) gap = std::max(gap, std::abs(pa.data[i] - pb.data[i]));
    return gap;
  };

  CHECK(prediction_gap() == 0.0);
  CHECK(modality_grad_norm(1) == 0.0);  // identity at init
  // After one update only final.linear has moved, and its input does not see C_global.
  CHECK(prediction_gap() == 0.0);
  CHECK(modality_grad_norm(2) == 0.0);
  // The second update moves the modulation projections.
  CHECK(prediction_gap() > 1e-8);
  CHECK(modality_grad_norm(3) > 0.0);
}
