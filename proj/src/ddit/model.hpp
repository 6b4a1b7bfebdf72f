#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ddit/autograd.hpp"
#include "ddit/conditioning.hpp"
#include "ddit/params.hpp"
#include "ddit/rope.hpp"
#include "ddit/tensor.hpp"

namespace ddit {

struct ModelConfig {
  int hidden = 128;
  int depth = 4;
  int heads = 4;
  int patch = 2;
  int latent_channels = 48;
  int mlp_ratio = 4;
  int text_dim = 64;
  int text_len_max = 8;
  int vocab_size = 17;
  int freq_dim = 256;
  int modalities = 2;
  double rope_base = rope::kDefaultBase;
  double ln_eps = 1e-6;
  double init_std = 0.02;

  int in_channels() const { return 2 * latent_channels; }
  int head_dim() const { return hidden / heads; }
  int patch_dim() const { return patch * patch * latent_channels; }
  /// Throws Error{config}.
  void validate() const;
};

/// Learnable scalars in one dual-stream block.
std::int64_t block_parameter_count(const ModelConfig& cfg);
/// Closed-form total, no allocation.
std::int64_t count_parameters(const ModelConfig& cfg);
/// Name, shape and init rule of every tensor in declaration order.
std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg);

/// (c, h, w) -> (h/p * w/p) x (c*p*p); each row is one patch flattened
/// channel-major, then patch row, then patch column.
Mat patch_flatten(const Latent& z, int p);
/// Inverse of patch_flatten for a rows x cols grid.
Latent unpatchify(const Mat& tokens, int grid_rows, int grid_cols, int p, int channels);
/// Channel concatenation [z_t; z_c] followed by patch_flatten.
Mat patch_flatten_pair(const Latent& noisy, const Latent& condition, int p);

/// Row-stacked image and text tokens of a batch. Each row carries its batch
/// index and its position; the image positions of one sample form the patch grid.
struct TokenStreams {
  ag::Var image;
  ag::Var text;
  int grid_rows = 0;
  int grid_cols = 0;
  std::vector<int> image_sample;
  std::vector<int> text_sample;
  rope::TokenPositions image_positions;
  rope::TokenPositions text_positions;
  int batch = 0;
};

/// One denoiser query.
struct ModelInput {
  const Latent* noisy = nullptr;
  const Latent* condition = nullptr;
  double time_value = 0.0;  // ddpm step index, or 1000 * t for flow matching
  std::vector<int> caption;
  int modality = 0;
};

struct StreamIds {
  LinearIds qkv, out, fc1, fc2;
};

struct BlockIds {
  LinearIds modulation;  // D -> 12D, shared by both streams
  StreamIds image, text;
};

/// Per-call diagnostics.
struct ForwardTrace {
  /// Attention matrices of every block in (block, sample, head) order.
  std::vector<Mat> attention;
  bool keep_attention = false;
};

class DiT {
 public:
  explicit DiT(ModelConfig cfg, std::uint64_t seed = 0);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ConditioningLayout& conditioning() const { return cond_; }
  const BlockIds& block_ids(int block) const { return blocks_.at(block); }

  struct Output {
    ag::Var tokens;  // (B*N) x (p*p*c), sample after sample
    GlobalCondVars cond;
    int grid_rows = 0;
    int grid_cols = 0;
  };
  /// Builds the full graph on `tape`. All inputs must share one latent shape.
  Output forward(ag::Tape& tape, std::span<const ModelInput> inputs, ForwardTrace* trace = nullptr) const;
  /// Inference: one latent-shaped prediction per input.
  std::vector<Latent> predict(std::span<const ModelInput> inputs) const;
  Latent predict(const ModelInput& input) const;

  /// Image and text tokens before the first block.
  TokenStreams embed_streams(ag::Tape& tape, std::span<const ModelInput> inputs, CaptionVars* captions = nullptr) const;
  /// One dual-stream block; `cond_act` is SiLU(C_global), one row per sample.
  TokenStreams block_forward(ag::Tape& tape, int block, const TokenStreams& in, ag::Var cond_act,
                             ForwardTrace* trace = nullptr) const;

 private:
  ModelConfig cfg_;
  ParamStore params_;
  ConditioningLayout cond_;
  LinearIds patch_embed_;
  LinearIds text_proj_;
  std::vector<BlockIds> blocks_;
  LinearIds final_modulation_;
  LinearIds final_linear_;
};

}  // namespace ddit
