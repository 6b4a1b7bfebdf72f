#include "ddit/model.hpp"

#include <string>

namespace ddit {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    require(v > 0, ErrorKind::config, std::string("model.") + name + " must be positive");
  };
  positive(hidden, "hidden");
  positive(depth, "depth");
  positive(heads, "heads");
  positive(patch, "patch");
  positive(latent_channels, "latent_channels");
  positive(mlp_ratio, "mlp_ratio");
  positive(text_dim, "text_dim");
  positive(text_len_max, "text_len_max");
  positive(vocab_size, "vocab_size");
  positive(freq_dim, "freq_dim");
  positive(modalities, "modalities");
  require(hidden % heads == 0, ErrorKind::config,
          "hidden " + std::to_string(hidden) + " not divisible by heads " + std::to_string(heads));
  require(head_dim() % 4 == 0, ErrorKind::config,
          "head dimension " + std::to_string(head_dim()) + " must be divisible by 4 for axial rotary embedding");
  require(freq_dim % 2 == 0, ErrorKind::config, "freq_dim must be even");
  require(rope_base > 1.0, ErrorKind::config, "rope_base must exceed 1");
  require(ln_eps > 0.0 && init_std > 0.0, ErrorKind::config, "ln_eps and init_std must be positive");
}

namespace {

struct Layout {
  ConditioningLayout cond;
  LinearIds patch_embed, text_proj;
  std::vector<BlockIds> blocks;
  LinearIds final_modulation, final_linear;
};

StreamIds declare_stream(ParamStore& s, const std::string& prefix, const ModelConfig& c) {
  const auto tn = ParamInit::trunc_normal;
  const int D = c.hidden;
  StreamIds ids;
  ids.qkv = declare_linear(s, prefix + ".qkv", D, 3 * D, tn, c.init_std);
  ids.out = declare_linear(s, prefix + ".out", D, D, tn, c.init_std);
  ids.fc1 = declare_linear(s, prefix + ".mlp.fc1", D, c.mlp_ratio * D, tn, c.init_std);
  ids.fc2 = declare_linear(s, prefix + ".mlp.fc2", c.mlp_ratio * D, D, tn, c.init_std);
  return ids;
}

Layout declare_layout(ParamStore& s, const ModelConfig& c) {
  c.validate();
  const auto tn = ParamInit::trunc_normal;
  const int D = c.hidden;
  Layout L;
  L.patch_embed = declare_linear(s, "patch_embed", c.in_channels() * c.patch * c.patch, D, tn, c.init_std);
  L.cond = ConditioningLayout::declare(s, c.freq_dim, D, c.text_dim, c.vocab_size, c.text_len_max, c.modalities,
                                       c.init_std);
  L.text_proj = declare_linear(s, "text_proj", c.text_dim, D, tn, c.init_std);
  for (int b = 0; b < c.depth; ++b) {
    const std::string prefix = "blocks." + std::to_string(b);
    BlockIds ids;
    ids.modulation = declare_linear(s, prefix + ".modulation", D, 12 * D, ParamInit::zeros, 0.0, false);
    ids.image = declare_stream(s, prefix + ".image", c);
    ids.text = declare_stream(s, prefix + ".text", c);
    L.blocks.push_back(ids);
  }
  L.final_modulation = declare_linear(s, "final.modulation", D, 2 * D, ParamInit::zeros, 0.0, false);
  L.final_linear = declare_linear(s, "final.linear", D, c.patch_dim(), ParamInit::zeros, 0.0);
  return L;
}

std::int64_t linear_count(std::int64_t in, std::int64_t out) { return in * out + out; }

}  // namespace

std::int64_t block_parameter_count(const ModelConfig& c) {
  const std::int64_t D = c.hidden, r = c.mlp_ratio;
  const std::int64_t stream = linear_count(D, 3 * D) + linear_count(D, D) + linear_count(D, r * D) + linear_count(r * D, D);
  return 2 * stream + linear_count(D, 12 * D);
}

std::int64_t count_parameters(const ModelConfig& c) {
  c.validate();
  const std::int64_t D = c.hidden, Dt = c.text_dim;
  std::int64_t n = linear_count(static_cast<std::int64_t>(c.in_channels()) * c.patch * c.patch, D);
  n += linear_count(c.freq_dim, D) + linear_count(D, D);
  n += static_cast<std::int64_t>(c.vocab_size) * Dt + static_cast<std::int64_t>(c.text_len_max) * Dt;
  n += linear_count(Dt, Dt);
  n += linear_count(Dt, D) + linear_count(D, D);
  n += static_cast<std::int64_t>(c.modalities) * D;
  n += linear_count(Dt, D);
  n += c.depth * block_parameter_count(c);
  n += linear_count(D, 2 * D) + linear_count(D, c.patch_dim());
  return n;
}

std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg) {
  ParamStore layout(false);
  declare_layout(layout, cfg);
  return layout.specs();
}

Mat patch_flatten(const Latent& z, int p) {
  require(p > 0 && z.height % p == 0 && z.width % p == 0, ErrorKind::shape,
          "latent " + z.shape_string() + " not divisible by patch " + std::to_string(p));
  const int rows = z.height / p, cols = z.width / p;
  Mat out(rows * cols, z.channels * p * p);
  for (int gy = 0; gy < rows; ++gy)
    for (int gx = 0; gx < cols; ++gx) {
      const int r = gy * cols + gx;
      for (int c = 0; c < z.channels; ++c)
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px) out(r, (c * p + py) * p + px) = z.at(c, gy * p + py, gx * p + px);
    }
  return out;
}

Mat patch_flatten_pair(const Latent& noisy, const Latent& condition, int p) {
  require(noisy.same_shape(condition), ErrorKind::input,
          "noisy latent " + noisy.shape_string() + " and condition " + condition.shape_string() + " differ");
  const Mat a = patch_flatten(noisy, p);
  const Mat b = patch_flatten(condition, p);
  Mat out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

Latent unpatchify(const Mat& tokens, int grid_rows, int grid_cols, int p, int channels) {
  require(grid_rows > 0 && grid_cols > 0 && p > 0 && channels > 0, ErrorKind::shape, "unpatchify: empty grid");
  require(tokens.rows() == static_cast<Eigen::Index>(grid_rows) * grid_cols, ErrorKind::shape,
          "unpatchify: " + std::to_string(tokens.rows()) + " tokens for a " + std::to_string(grid_rows) + "x" +
              std::to_string(grid_cols) + " grid");
  require(tokens.cols() == static_cast<Eigen::Index>(channels) * p * p, ErrorKind::shape,
          "unpatchify: token width " + std::to_string(tokens.cols()) + " does not match channels*p*p");
  Latent z(channels, grid_rows * p, grid_cols * p);
  for (int gy = 0; gy < grid_rows; ++gy)
    for (int gx = 0; gx < grid_cols; ++gx) {
      const int r = gy * grid_cols + gx;
      for (int c = 0; c < channels; ++c)
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px) z.at(c, gy * p + py, gx * p + px) = tokens(r, (c * p + py) * p + px);
    }
  return z;
}

DiT::DiT(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  Layout L = declare_layout(params_, cfg_);
  cond_ = L.cond;
  patch_embed_ = L.patch_embed;
  text_proj_ = L.text_proj;
  blocks_ = std::move(L.blocks);
  final_modulation_ = L.final_modulation;
  final_linear_ = L.final_linear;
  params_.initialize(seed);
}

TokenStreams DiT::embed_streams(ag::Tape& tape, std::span<const ModelInput> inputs, CaptionVars* captions) const {
  require(!inputs.empty(), ErrorKind::input, "empty model batch");
  const Latent* first = inputs.front().noisy;
  require(first != nullptr, ErrorKind::input, "model input without a noisy latent");
  require(first->channels == cfg_.latent_channels, ErrorKind::shape,
          "latent has " + std::to_string(first->channels) + " channels, model expects " +
              std::to_string(cfg_.latent_channels));
  const int p = cfg_.patch;
  require(first->height % p == 0 && first->width % p == 0, ErrorKind::shape,
          "latent " + first->shape_string() + " not divisible by patch " + std::to_string(p));

  TokenStreams s;
  s.batch = static_cast<int>(inputs.size());
  s.grid_rows = first->height / p;
  s.grid_cols = first->width / p;
  const int N = s.grid_rows * s.grid_cols;

  Mat X(static_cast<Eigen::Index>(N) * s.batch, cfg_.in_channels() * p * p);
  std::vector<std::vector<int>> caption_list;
  caption_list.reserve(inputs.size());
  const auto grid = rope::TokenPositions::grid(s.grid_rows, s.grid_cols);
  s.image_positions.kind = rope::PositionKind::grid_2d;
  for (int b = 0; b < s.batch; ++b) {
    const ModelInput& in = inputs[b];
    require(in.noisy && in.condition, ErrorKind::input, "model input missing a latent");
    require(in.noisy->same_shape(*first), ErrorKind::input, "latents in one batch must share a shape");
    X.middleRows(static_cast<Eigen::Index>(b) * N, N) = patch_flatten_pair(*in.noisy, *in.condition, p);
    caption_list.push_back(in.caption);
    for (int i = 0; i < N; ++i) s.image_sample.push_back(b);
    s.image_positions.primary.insert(s.image_positions.primary.end(), grid.primary.begin(), grid.primary.end());
    s.image_positions.secondary.insert(s.image_positions.secondary.end(), grid.secondary.begin(), grid.secondary.end());
  }
  s.image = apply_linear(tape, patch_embed_, tape.constant(std::move(X)));

  CaptionVars caps = encode_captions(tape, cond_, caption_list);
  s.text = apply_linear(tape, text_proj_, caps.sequence);
  s.text_positions.kind = rope::PositionKind::seq_1d;
  for (int b = 0; b < s.batch; ++b) {
    const int len = caps.segments[b].second;
    for (int i = 0; i < len; ++i) {
      s.text_sample.push_back(b);
      s.text_positions.primary.push_back(i);
    }
  }
  if (captions) *captions = std::move(caps);
  return s;
}

TokenStreams DiT::block_forward(ag::Tape& t, int block, const TokenStreams& in, ag::Var cond_act,
                                ForwardTrace* trace) const {
  const BlockIds& ids = blocks_.at(block);
  const int D = cfg_.hidden;
  try {
    ag::Var mod = apply_linear(t, ids.modulation, cond_act);
    auto chunk = [&](int k) { return ag::slice_cols(t, mod, k * D, D); };

    struct Branch {
      ag::Var x, q, k, v;
      const StreamIds* ids;
      const std::vector<int>* sample;
      int base;  // first modulation chunk of the stream
    };
    Branch streams[2] = {{in.image, {}, {}, {}, &ids.image, &in.image_sample, 0},
                         {in.text, {}, {}, {}, &ids.text, &in.text_sample, 6}};
    const rope::TokenPositions* positions[2] = {&in.image_positions, &in.text_positions};

    for (int s = 0; s < 2; ++s) {
      Branch& br = streams[s];
      ag::Var h = ag::modulate(t, ag::layer_norm(t, br.x, cfg_.ln_eps), chunk(br.base), chunk(br.base + 1), *br.sample);
      ag::Var qkv = apply_linear(t, br.ids->qkv, h);
      const Mat angles = rope::rotation_angles(*positions[s], cfg_.heads, cfg_.head_dim(), cfg_.rope_base);
      br.q = ag::rotate_pairs(t, ag::slice_cols(t, qkv, 0, D), angles);
      br.k = ag::rotate_pairs(t, ag::slice_cols(t, qkv, D, D), angles);
      br.v = ag::slice_cols(t, qkv, 2 * D, D);
    }

    const int n_img = static_cast<int>(in.image_sample.size());
    const int n_txt = static_cast<int>(in.text_sample.size());
    std::vector<std::vector<int>> groups(in.batch);
    for (int r = 0; r < n_img; ++r) groups.at(in.image_sample[r]).push_back(r);
    for (int r = 0; r < n_txt; ++r) groups.at(in.text_sample[r]).push_back(n_img + r);

    const ag::Var qs[2] = {streams[0].q, streams[1].q};
    const ag::Var ks[2] = {streams[0].k, streams[1].k};
    const ag::Var vs[2] = {streams[0].v, streams[1].v};
    std::vector<Mat> probs;
    ag::Var joint = ag::grouped_attention(t, ag::concat_rows(t, qs), ag::concat_rows(t, ks), ag::concat_rows(t, vs),
                                          cfg_.heads, std::move(groups),
                                          trace && trace->keep_attention ? &probs : nullptr);
    if (trace && trace->keep_attention)
      for (Mat& m : probs) trace->attention.push_back(std::move(m));
    const ag::Var attn[2] = {ag::slice_rows(t, joint, 0, n_img), ag::slice_rows(t, joint, n_img, n_txt)};

    for (int s = 0; s < 2; ++s) {
      Branch& br = streams[s];
      br.x = ag::gated_add(t, br.x, chunk(br.base + 2), apply_linear(t, br.ids->out, attn[s]), *br.sample);
      ag::Var h = ag::modulate(t, ag::layer_norm(t, br.x, cfg_.ln_eps), chunk(br.base + 3), chunk(br.base + 4), *br.sample);
      ag::Var y = apply_linear(t, br.ids->fc2, ag::gelu(t, apply_linear(t, br.ids->fc1, h)));
      br.x = ag::gated_add(t, br.x, chunk(br.base + 5), y, *br.sample);
    }

    TokenStreams out = in;
    out.image = streams[0].x;
    out.text = streams[1].x;
    return out;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::numeric) throw;
    fail(ErrorKind::numeric, "block " + std::to_string(block) + ": " + e.what());
  }
}

DiT::Output DiT::forward(ag::Tape& t, std::span<const ModelInput> inputs, ForwardTrace* trace) const {
  CaptionVars caps;
  TokenStreams s = embed_streams(t, inputs, &caps);
  std::vector<double> times;
  std::vector<int> flags;
  for (const ModelInput& in : inputs) {
    times.push_back(in.time_value);
    flags.push_back(in.modality);
  }
  Output out;
  out.cond = global_conditioning(t, cond_, times, caps.pooled, flags);
  out.grid_rows = s.grid_rows;
  out.grid_cols = s.grid_cols;
  ag::Var act = ag::silu(t, out.cond.total);
  for (int b = 0; b < cfg_.depth; ++b) s = block_forward(t, b, s, act, trace);

  const int D = cfg_.hidden;
  ag::Var mod = apply_linear(t, final_modulation_, act);
  ag::Var h = ag::modulate(t, ag::layer_norm(t, s.image, cfg_.ln_eps), ag::slice_cols(t, mod, 0, D),
                           ag::slice_cols(t, mod, D, D), s.image_sample);
  out.tokens = apply_linear(t, final_linear_, h);
  return out;
}

std::vector<Latent> DiT::predict(std::span<const ModelInput> inputs) const {
  ag::Tape tape(&params_, false);
  const Output out = forward(tape, inputs);
  const Mat& tokens = tape.value(out.tokens);
  const int N = out.grid_rows * out.grid_cols;
  std::vector<Latent> result;
  result.reserve(inputs.size());
  for (std::size_t b = 0; b < inputs.size(); ++b)
    result.push_back(unpatchify(tokens.middleRows(static_cast<Eigen::Index>(b) * N, N), out.grid_rows, out.grid_cols,
                                cfg_.patch, cfg_.latent_channels));
  return result;
}

Latent DiT::predict(const ModelInput& input) const { return std::move(predict(std::span(&input, 1)).front()); }

}  // namespace ddit
