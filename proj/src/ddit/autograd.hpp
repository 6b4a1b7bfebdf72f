#pragma once

// Minimal reverse-mode differentiation over row-major double matrices.
// Nodes are appended in evaluation order, so reverse creation order is a
// valid topological order for the backward sweep.

#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "ddit/params.hpp"
#include "ddit/tensor.hpp"

namespace ddit::ag {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, Var self, const Mat& grad_out)>;

  /// `params` may be null when no parameter leaves are used. With
  /// `record = false` no backward closures are kept (inference).
  explicit Tape(const ParamStore* params = nullptr, bool record = true);

  Var constant(Mat value);
  Var param(int param_id);

  const Mat& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  /// Null when no gradient reached the node.
  const Mat* grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 on a 1x1 node and sweeps backwards.
  void backward(Var loss);
  /// grads[pid] += scale * d(loss)/d(param pid) for every parameter leaf.
  void accumulate_param_grads(GradStore& grads, double scale = 1.0) const;

  // Op-author interface.
  Var emit(Mat value, std::initializer_list<Var> parents, BackwardFn backward);
  Var emit(Mat value, std::span<const Var> parents, BackwardFn backward);
  /// Gradient buffer of `v`, zero-allocated on first use.
  Mat& grad_buffer(Var v);
  bool recording() const { return record_; }

 private:
  struct Node {
    Mat owned;
    const Mat* ref = nullptr;  // parameter leaves alias the store
    Mat grad;
    bool has_grad = false;
    bool requires_grad = false;
    int param_id = -1;
    BackwardFn backward;
  };
  const ParamStore* params_;
  bool record_;
  std::vector<Node> nodes_;
  std::vector<int> param_leaf_;  // param id -> node id (deduplicated)
};

// ---- ops ----------------------------------------------------------------

Var matmul(Tape& t, Var a, Var b);
/// x (n, in) * w (in, out) + b (1, out).
Var linear(Tape& t, Var x, Var w, Var b);
Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var gather_rows(Tape& t, Var x, std::vector<int> rows);
Var slice_cols(Tape& t, Var x, int first, int count);
Var slice_rows(Tape& t, Var x, int first, int count);
Var concat_rows(Tape& t, std::span<const Var> parts);
/// Row-wise layer norm without learned affine.
Var layer_norm(Tape& t, Var x, double eps);
/// x * (1 + scale[g]) + shift[g], g = row_group[row]; shift/scale hold one row per group.
Var modulate(Tape& t, Var x, Var shift, Var scale, std::vector<int> row_group);
/// x + gate[g] * y with the same grouping convention.
Var gated_add(Tape& t, Var x, Var gate, Var y, std::vector<int> row_group);
/// GeLU, tanh approximation.
Var gelu(Tape& t, Var x);
Var silu(Tape& t, Var x);
/// Rotates consecutive column pairs (2j, 2j+1) of row r by angle(r, j).
Var rotate_pairs(Tape& t, Var x, Mat angles);

/// Multi-head softmax attention applied independently to each group of rows
/// (a group is one sample's joint token sequence). q, k, v share the row
/// layout; output has q's layout. When `probs` is non-null it receives the
/// attention matrices in (group, head) order.
Var grouped_attention(Tape& t, Var q, Var k, Var v, int heads,
                      std::vector<std::vector<int>> groups, std::vector<Mat>* probs = nullptr);

/// Mean of rows [first, first+count) per segment -> one row per segment.
Var segment_mean(Tape& t, Var x, std::vector<std::pair<int, int>> segments);
/// sum_r coeff[r] * sum_c (pred - target)^2, returned as a 1x1 node.
Var weighted_sq_error(Tape& t, Var pred, Mat target, std::vector<double> row_coeff);

}  // namespace ddit::ag
