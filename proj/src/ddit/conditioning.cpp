#include "ddit/conditioning.hpp"

#include <cmath>

namespace ddit {

std::vector<double> timestep_sinusoid(double time_value, int dim) {
  require(dim > 0 && dim % 2 == 0, ErrorKind::config, "timestep embedding dimension must be even, got " + std::to_string(dim));
  require(time_value >= 0.0, ErrorKind::input, "timestep must be non-negative");
  const int half = dim / 2;
  std::vector<double> out(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / dim);
    out[i] = std::cos(time_value * freq);
    out[half + i] = std::sin(time_value * freq);
  }
  return out;
}

LinearIds declare_linear(ParamStore& store, const std::string& prefix, int in, int out, ParamInit init,
                         double stddev, bool decay_weight) {
  LinearIds ids;
  ids.weight = store.add({prefix + ".weight", in, out, init, stddev, decay_weight});
  ids.bias = store.add({prefix + ".bias", 1, out, ParamInit::zeros, 0.0, false});
  return ids;
}

ag::Var apply_linear(ag::Tape& t, const LinearIds& ids, ag::Var x) {
  return ag::linear(t, x, t.param(ids.weight), t.param(ids.bias));
}

ConditioningLayout ConditioningLayout::declare(ParamStore& store, int freq_dim, int hidden, int text_dim, int vocab,
                                               int max_len, int modalities, double init_std) {
  ConditioningLayout L;
  L.freq_dim = freq_dim;
  L.hidden = hidden;
  L.text_dim = text_dim;
  L.vocab = vocab;
  L.max_len = max_len;
  L.modalities = modalities;
  const auto tn = ParamInit::trunc_normal;
  L.time_fc1 = declare_linear(store, "time_embed.fc1", freq_dim, hidden, tn, init_std);
  L.time_fc2 = declare_linear(store, "time_embed.fc2", hidden, hidden, tn, init_std);
  L.token_table = store.add({"caption_encoder.token_table", vocab, text_dim, tn, init_std, false});
  L.position_table = store.add({"caption_encoder.position_table", max_len, text_dim, tn, init_std, false});
  L.pool = declare_linear(store, "caption_encoder.pool", text_dim, text_dim, tn, init_std);
  L.caption_fc1 = declare_linear(store, "caption_embed.fc1", text_dim, hidden, tn, init_std);
  L.caption_fc2 = declare_linear(store, "caption_embed.fc2", hidden, hidden, tn, init_std);
  L.modality_table = store.add({"modality_embed.table", modalities, hidden, tn, init_std, false});
  return L;
}

std::vector<int> normalize_caption(std::span<const int> tokens, int vocab, int max_len) {
  if (tokens.empty()) return {0};
  require(static_cast<int>(tokens.size()) <= max_len, ErrorKind::input,
          "caption length " + std::to_string(tokens.size()) + " exceeds maximum " + std::to_string(max_len));
  for (int id : tokens)
    require(id >= 0 && id < vocab, ErrorKind::input, "caption token " + std::to_string(id) + " outside vocabulary");
  return {tokens.begin(), tokens.end()};
}

ag::Var embed_timestep(ag::Tape& t, const ConditioningLayout& L, std::span<const double> time_values) {
  Mat feats(static_cast<Eigen::Index>(time_values.size()), L.freq_dim);
  for (std::size_t b = 0; b < time_values.size(); ++b) {
    const auto s = timestep_sinusoid(time_values[b], L.freq_dim);
    for (int j = 0; j < L.freq_dim; ++j) feats(static_cast<Eigen::Index>(b), j) = s[j];
  }
  ag::Var h = apply_linear(t, L.time_fc1, t.constant(std::move(feats)));
  return apply_linear(t, L.time_fc2, ag::silu(t, h));
}

CaptionVars encode_captions(ag::Tape& t, const ConditioningLayout& L, std::span<const std::vector<int>> captions) {
  require(!captions.empty(), ErrorKind::input, "no captions to encode");
  CaptionVars out;
  std::vector<int> token_rows, position_rows;
  for (const auto& raw : captions) {
    const auto caption = normalize_caption(raw, L.vocab, L.max_len);
    out.segments.emplace_back(static_cast<int>(token_rows.size()), static_cast<int>(caption.size()));
    for (std::size_t i = 0; i < caption.size(); ++i) {
      token_rows.push_back(caption[i]);
      position_rows.push_back(static_cast<int>(i));
    }
  }
  ag::Var tokens = ag::gather_rows(t, t.param(L.token_table), std::move(token_rows));
  ag::Var positions = ag::gather_rows(t, t.param(L.position_table), std::move(position_rows));
  out.sequence = ag::add(t, tokens, positions);
  out.pooled = apply_linear(t, L.pool, ag::segment_mean(t, out.sequence, out.segments));
  return out;
}

ag::Var embed_modality(ag::Tape& t, const ConditioningLayout& L, std::span<const int> flags) {
  std::vector<int> rows(flags.begin(), flags.end());
  for (int f : rows)
    require(f >= 0 && f < L.modalities, ErrorKind::input, "modality flag " + std::to_string(f) + " out of range");
  return ag::gather_rows(t, t.param(L.modality_table), std::move(rows));
}

ag::Var embed_caption(ag::Tape& t, const ConditioningLayout& L, ag::Var pooled) {
  require(t.value(pooled).cols() == L.text_dim, ErrorKind::config, "pooled caption width differs from text_dim");
  return apply_linear(t, L.caption_fc2, ag::silu(t, apply_linear(t, L.caption_fc1, pooled)));
}

GlobalCondVars global_conditioning(ag::Tape& t, const ConditioningLayout& L, std::span<const double> time_values,
                                   ag::Var pooled, std::span<const int> flags) {
  require(time_values.size() == flags.size() &&
              static_cast<Eigen::Index>(flags.size()) == t.value(pooled).rows(),
          ErrorKind::input, "conditioning batch sizes disagree");
  GlobalCondVars g;
  g.time = embed_timestep(t, L, time_values);
  g.caption = embed_caption(t, L, pooled);
  g.modality = embed_modality(t, L, flags);
  for (ag::Var v : {g.time, g.caption, g.modality})
    require(t.value(v).cols() == L.hidden, ErrorKind::config, "conditioning embedders disagree on output width");
  g.total = ag::add(t, ag::add(t, g.time, g.caption), g.modality);
  return g;
}

}  // namespace ddit
