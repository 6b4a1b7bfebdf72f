#pragma once

#include <span>
#include <utility>
#include <vector>

#include "ddit/autograd.hpp"
#include "ddit/params.hpp"

namespace ddit {

enum class ModalityFlag : int { mask = 0, sketch = 1 };

/// Continuous flow time t in [0,1] is multiplied by this before the
/// sinusoidal embedding so that both objectives share one input range.
inline constexpr double kFlowTimeScale = 1000.0;

inline double ddpm_time_value(int step) { return static_cast<double>(step); }
inline double flow_time_value(double t) { return kFlowTimeScale * t; }

/// Raw sinusoidal features [cos(s f_0) .. cos(s f_{n-1}), sin(s f_0) .. sin(s f_{n-1})]
/// with f_i = 10000^(-2i/dim), n = dim/2. Throws Error{config} for odd dim.
std::vector<double> timestep_sinusoid(double time_value, int dim);

struct LinearIds {
  int weight = -1;
  int bias = -1;
};

/// Declares `prefix.weight` (in x out) and `prefix.bias` (1 x out).
LinearIds declare_linear(ParamStore& store, const std::string& prefix, int in, int out, ParamInit init,
                         double stddev, bool decay_weight = true);
ag::Var apply_linear(ag::Tape& t, const LinearIds& ids, ag::Var x);

/// Parameter ids of every non-tokenized conditioning path.
struct ConditioningLayout {
  int freq_dim = 0;
  int hidden = 0;
  int text_dim = 0;
  int vocab = 0;
  int max_len = 0;
  int modalities = 0;

  LinearIds time_fc1, time_fc2;         // freq_dim -> D -> D
  int token_table = -1;                 // vocab x D_text
  int position_table = -1;              // max_len x D_text
  LinearIds pool;                       // D_text -> D_text
  LinearIds caption_fc1, caption_fc2;   // D_text -> D -> D
  int modality_table = -1;              // modalities x D

  static ConditioningLayout declare(ParamStore& store, int freq_dim, int hidden, int text_dim, int vocab,
                                    int max_len, int modalities, double init_std);
};

/// Token embeddings of a batch of captions, rows stacked caption after caption.
struct CaptionVars {
  ag::Var sequence;  // (sum L_b) x D_text
  ag::Var pooled;    // B x D_text
  std::vector<std::pair<int, int>> segments;  // (first row, length) per caption
};

struct GlobalCondVars {
  ag::Var time;
  ag::Var caption;
  ag::Var modality;
  ag::Var total;  // time + caption + modality, B x D
};

/// Validates ids and length; an empty caption becomes the null caption {0}.
std::vector<int> normalize_caption(std::span<const int> tokens, int vocab, int max_len);

ag::Var embed_timestep(ag::Tape& t, const ConditioningLayout& L, std::span<const double> time_values);
CaptionVars encode_captions(ag::Tape& t, const ConditioningLayout& L, std::span<const std::vector<int>> captions);
ag::Var embed_modality(ag::Tape& t, const ConditioningLayout& L, std::span<const int> flags);
/// E_caption(pooled): the two-layer projection D_text -> D.
ag::Var embed_caption(ag::Tape& t, const ConditioningLayout& L, ag::Var pooled);
GlobalCondVars global_conditioning(ag::Tape& t, const ConditioningLayout& L, std::span<const double> time_values,
                                   ag::Var pooled, std::span<const int> flags);

}  // namespace ddit
