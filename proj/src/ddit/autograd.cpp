#include "ddit/autograd.hpp"

#include <cmath>
#include <numbers>

namespace ddit::ag {

Tape::Tape(const ParamStore* params, bool record) : params_(params), record_(record) {
  if (params_) param_leaf_.assign(params_->size(), -1);
  nodes_.reserve(1024);
}

Var Tape::constant(Mat value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(int param_id) {
  require(params_ != nullptr, ErrorKind::state, "tape has no parameter store");
  int& leaf = param_leaf_.at(param_id);
  if (leaf >= 0) return {leaf};
  Node n;
  n.ref = &params_->value(param_id);
  n.requires_grad = record_;
  n.param_id = param_id;
  nodes_.push_back(std::move(n));
  leaf = static_cast<int>(nodes_.size()) - 1;
  return {leaf};
}

const Mat& Tape::value(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.ref ? *n.ref : n.owned;
}

const Mat* Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.has_grad ? &n.grad : nullptr;
}

Mat& Tape::grad_buffer(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.has_grad) {
    const Mat& val = n.ref ? *n.ref : n.owned;
    n.grad = Mat::Zero(val.rows(), val.cols());
    n.has_grad = true;
  }
  return n.grad;
}

Var Tape::emit(Mat value, std::initializer_list<Var> parents, BackwardFn backward) {
  return emit(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::emit(Mat value, std::span<const Var> parents, BackwardFn backward) {
  if (!value.allFinite())
    fail(ErrorKind::numeric, "non-finite activation in autograd node " + std::to_string(nodes_.size()));
  Node n;
  n.owned = std::move(value);
  if (record_) {
    for (Var p : parents)
      if (nodes_.at(p.id).requires_grad) n.requires_grad = true;
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var loss) {
  require(record_, ErrorKind::usage, "backward on a non-recording tape");
  const Mat& l = value(loss);
  require(l.rows() == 1 && l.cols() == 1, ErrorKind::shape, "backward needs a scalar loss");
  if (!nodes_.at(loss.id).requires_grad) return;
  grad_buffer(loss)(0, 0) += 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, Var{id}, n.grad);
  }
}

void Tape::accumulate_param_grads(GradStore& grads, double scale) const {
  for (std::size_t pid = 0; pid < param_leaf_.size(); ++pid) {
    const int leaf = param_leaf_[pid];
    if (leaf < 0 || !nodes_[leaf].has_grad) continue;
    grads.at(pid) += scale * nodes_[leaf].grad;
  }
}

// ---- ops ---------------------------------------------------------------------

namespace {

bool needs(const Tape& t, Var v) { return t.requires_grad(v); }

void check(bool ok, const char* op, const std::string& detail) {
  if (!ok) fail(ErrorKind::shape, std::string(op) + ": " + detail);
}

std::string dims(const Mat& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void check_groups(const Mat& x, const Mat& per_group, const std::vector<int>& row_group, const char* op) {
  check(static_cast<Eigen::Index>(row_group.size()) == x.rows(), op, "row_group size mismatch");
  check(per_group.cols() == x.cols(), op, "group vector width " + dims(per_group) + " vs " + dims(x));
  for (int g : row_group) check(g >= 0 && g < per_group.rows(), op, "group index out of range");
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  const Mat& A = t.value(a);
  const Mat& B = t.value(b);
  check(A.cols() == B.rows(), "matmul", dims(A) + " * " + dims(B));
  Mat out(A.rows(), B.cols());
  out.noalias() = A * B;
  return t.emit(std::move(out), {a, b}, [a, b](Tape& t, Var, const Mat& g) {
    if (needs(t, a)) t.grad_buffer(a).noalias() += g * t.value(b).transpose();
    if (needs(t, b)) t.grad_buffer(b).noalias() += t.value(a).transpose() * g;
  });
}

Var linear(Tape& t, Var x, Var w, Var b) {
  const Mat& X = t.value(x);
  const Mat& W = t.value(w);
  const Mat& Bv = t.value(b);
  check(X.cols() == W.rows() && Bv.rows() == 1 && Bv.cols() == W.cols(), "linear",
        dims(X) + " * " + dims(W) + " + " + dims(Bv));
  Mat out(X.rows(), W.cols());
  out.noalias() = X * W;
  out.rowwise() += Bv.row(0);
  return t.emit(std::move(out), {x, w, b}, [x, w, b](Tape& t, Var, const Mat& g) {
    if (needs(t, x)) t.grad_buffer(x).noalias() += g * t.value(w).transpose();
    if (needs(t, w)) t.grad_buffer(w).noalias() += t.value(x).transpose() * g;
    if (needs(t, b)) t.grad_buffer(b) += g.colwise().sum();
  });
}

Var add(Tape& t, Var a, Var b) {
  const Mat& A = t.value(a);
  const Mat& B = t.value(b);
  check(A.rows() == B.rows() && A.cols() == B.cols(), "add", dims(A) + " + " + dims(B));
  return t.emit(A + B, {a, b}, [a, b](Tape& t, Var, const Mat& g) {
    if (needs(t, a)) t.grad_buffer(a) += g;
    if (needs(t, b)) t.grad_buffer(b) += g;
  });
}

Var scale(Tape& t, Var a, double s) {
  return t.emit(s * t.value(a), {a}, [a, s](Tape& t, Var, const Mat& g) { t.grad_buffer(a) += s * g; });
}

Var gather_rows(Tape& t, Var x, std::vector<int> rows) {
  const Mat& X = t.value(x);
  Mat out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    check(rows[i] >= 0 && rows[i] < X.rows(), "gather_rows", "row index out of range");
    out.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
  }
  return t.emit(std::move(out), {x}, [x, rows = std::move(rows)](Tape& t, Var, const Mat& g) {
    Mat& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < rows.size(); ++i) gx.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var slice_cols(Tape& t, Var x, int first, int count) {
  const Mat& X = t.value(x);
  check(first >= 0 && count > 0 && first + count <= X.cols(), "slice_cols", "range outside " + dims(X));
  Mat out = X.middleCols(first, count);
  return t.emit(std::move(out), {x}, [x, first, count](Tape& t, Var, const Mat& g) {
    t.grad_buffer(x).middleCols(first, count) += g;
  });
}

Var slice_rows(Tape& t, Var x, int first, int count) {
  const Mat& X = t.value(x);
  check(first >= 0 && count > 0 && first + count <= X.rows(), "slice_rows", "range outside " + dims(X));
  Mat out = X.middleRows(first, count);
  return t.emit(std::move(out), {x}, [x, first, count](Tape& t, Var, const Mat& g) {
    t.grad_buffer(x).middleRows(first, count) += g;
  });
}

Var concat_rows(Tape& t, std::span<const Var> parts) {
  check(!parts.empty(), "concat_rows", "no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = t.value(parts[0]).cols();
  for (Var p : parts) {
    check(t.value(p).cols() == cols, "concat_rows", "column mismatch");
    rows += t.value(p).rows();
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    out.middleRows(r, t.value(p).rows()) = t.value(p);
    r += t.value(p).rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.emit(std::move(out), parts, [ps = std::move(ps)](Tape& t, Var, const Mat& g) {
    Eigen::Index r = 0;
    for (Var p : ps) {
      const Eigen::Index n = t.value(p).rows();
      if (needs(t, p)) t.grad_buffer(p) += g.middleRows(r, n);
      r += n;
    }
  });
}

Var layer_norm(Tape& t, Var x, double eps) {
  const Mat& X = t.value(x);
  const Eigen::Index n = X.rows();
  Mat out(n, X.cols());
  std::vector<double> inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = X.row(r).mean();
    const double var = (X.row(r).array() - mean).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    out.row(r) = (X.row(r).array() - mean) * inv_std[r];
  }
  return t.emit(std::move(out), {x}, [x, inv_std = std::move(inv_std)](Tape& t, Var self, const Mat& g) {
    const Mat& xhat = t.value(self);
    Mat& gx = t.grad_buffer(x);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double mg = g.row(r).mean();
      const double mgx = g.row(r).dot(xhat.row(r)) / static_cast<double>(g.cols());
      gx.row(r).array() += inv_std[r] * (g.row(r).array() - mg - xhat.row(r).array() * mgx);
    }
  });
}

Var modulate(Tape& t, Var x, Var shift, Var scale, std::vector<int> row_group) {
  const Mat& X = t.value(x);
  const Mat& Sh = t.value(shift);
  const Mat& Sc = t.value(scale);
  check_groups(X, Sh, row_group, "modulate");
  check_groups(X, Sc, row_group, "modulate");
  Mat out(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const int g = row_group[r];
    out.row(r) = X.row(r).array() * (1.0 + Sc.row(g).array()) + Sh.row(g).array();
  }
  return t.emit(std::move(out), {x, shift, scale},
                [x, shift, scale, row_group = std::move(row_group)](Tape& t, Var, const Mat& g) {
                  const Mat& X = t.value(x);
                  const Mat& Sc = t.value(scale);
                  const bool dx = needs(t, x), dsh = needs(t, shift), dsc = needs(t, scale);
                  for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    const int grp = row_group[r];
                    if (dx) t.grad_buffer(x).row(r).array() += g.row(r).array() * (1.0 + Sc.row(grp).array());
                    if (dsh) t.grad_buffer(shift).row(grp) += g.row(r);
                    if (dsc) t.grad_buffer(scale).row(grp).array() += g.row(r).array() * X.row(r).array();
                  }
                });
}

Var gated_add(Tape& t, Var x, Var gate, Var y, std::vector<int> row_group) {
  const Mat& X = t.value(x);
  const Mat& G = t.value(gate);
  const Mat& Y = t.value(y);
  check(X.rows() == Y.rows() && X.cols() == Y.cols(), "gated_add", dims(X) + " vs " + dims(Y));
  check_groups(X, G, row_group, "gated_add");
  Mat out(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r)
    out.row(r) = X.row(r).array() + G.row(row_group[r]).array() * Y.row(r).array();
  return t.emit(std::move(out), {x, gate, y},
                [x, gate, y, row_group = std::move(row_group)](Tape& t, Var, const Mat& g) {
                  const Mat& G = t.value(gate);
                  const Mat& Y = t.value(y);
                  if (needs(t, x)) t.grad_buffer(x) += g;
                  const bool dg = needs(t, gate), dy = needs(t, y);
                  for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    const int grp = row_group[r];
                    if (dg) t.grad_buffer(gate).row(grp).array() += g.row(r).array() * Y.row(r).array();
                    if (dy) t.grad_buffer(y).row(r).array() += g.row(r).array() * G.row(grp).array();
                  }
                });
}

Var gelu(Tape& t, Var x) {
  const Mat& X = t.value(x);
  Mat out(X.rows(), X.cols());
  Mat d(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.size(); ++i) {
    const double v = X.data()[i];
    const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    out.data()[i] = 0.5 * v * (1.0 + th);
    d.data()[i] = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
  }
  return t.emit(std::move(out), {x}, [x, d = std::move(d)](Tape& t, Var, const Mat& g) {
    t.grad_buffer(x).array() += g.array() * d.array();
  });
}

Var silu(Tape& t, Var x) {
  const Mat& X = t.value(x);
  Mat out(X.rows(), X.cols());
  Mat d(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.size(); ++i) {
    const double v = X.data()[i];
    const double s = 1.0 / (1.0 + std::exp(-v));
    out.data()[i] = v * s;
    d.data()[i] = s * (1.0 + v * (1.0 - s));
  }
  return t.emit(std::move(out), {x}, [x, d = std::move(d)](Tape& t, Var, const Mat& g) {
    t.grad_buffer(x).array() += g.array() * d.array();
  });
}

Var rotate_pairs(Tape& t, Var x, Mat angles) {
  const Mat& X = t.value(x);
  check(X.cols() % 2 == 0 && angles.rows() == X.rows() && angles.cols() * 2 == X.cols(), "rotate_pairs",
        "angles " + dims(angles) + " for input " + dims(X));
  Mat cosv = angles.array().cos().matrix();
  Mat sinv = angles.array().sin().matrix();
  Mat out(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r)
    for (Eigen::Index j = 0; j < angles.cols(); ++j) {
      const double a = X(r, 2 * j), b = X(r, 2 * j + 1), c = cosv(r, j), s = sinv(r, j);
      out(r, 2 * j) = a * c - b * s;
      out(r, 2 * j + 1) = a * s + b * c;
    }
  return t.emit(std::move(out), {x},
                [x, cosv = std::move(cosv), sinv = std::move(sinv)](Tape& t, Var, const Mat& g) {
                  Mat& gx = t.grad_buffer(x);
                  for (Eigen::Index r = 0; r < g.rows(); ++r)
                    for (Eigen::Index j = 0; j < cosv.cols(); ++j) {
                      const double ga = g(r, 2 * j), gb = g(r, 2 * j + 1), c = cosv(r, j), s = sinv(r, j);
                      gx(r, 2 * j) += ga * c + gb * s;
                      gx(r, 2 * j + 1) += -ga * s + gb * c;
                    }
                });
}

namespace {

Mat gather_rows(const Mat& m, const std::vector<int>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

void scatter_add_rows(Mat& m, const std::vector<int>& rows, const Mat& block) {
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(rows[i]) += block.row(static_cast<Eigen::Index>(i));
}

}  // namespace

Var grouped_attention(Tape& t, Var q, Var k, Var v, int heads, std::vector<std::vector<int>> groups,
                      std::vector<Mat>* probs) {
  const Mat& Q = t.value(q);
  const Mat& K = t.value(k);
  const Mat& V = t.value(v);
  check(Q.rows() == K.rows() && Q.rows() == V.rows() && Q.cols() == K.cols() && Q.cols() == V.cols(),
        "attention", "q/k/v layouts differ");
  check(heads > 0 && Q.cols() % heads == 0, "attention", "width not divisible by heads");
  const Eigen::Index dh = Q.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  auto saved = std::make_shared<std::vector<Mat>>();
  saved->reserve(groups.size() * heads);
  Mat out = Mat::Zero(Q.rows(), Q.cols());
  for (const auto& rows : groups) {
    for (const int r : rows) check(r >= 0 && r < Q.rows(), "attention", "group row out of range");
    const Mat Qg = gather_rows(Q, rows);
    const Mat Kg = gather_rows(K, rows);
    const Mat Vg = gather_rows(V, rows);
    Mat Og(Qg.rows(), Qg.cols());
    for (int h = 0; h < heads; ++h) {
      Mat S(Qg.rows(), Kg.rows());
      S.noalias() = inv_sqrt * (Qg.middleCols(h * dh, dh) * Kg.middleCols(h * dh, dh).transpose());
      for (Eigen::Index i = 0; i < S.rows(); ++i) {
        const double m = S.row(i).maxCoeff();
        S.row(i) = (S.row(i).array() - m).exp();
        S.row(i) /= S.row(i).sum();
      }
      Og.middleCols(h * dh, dh).noalias() = S * Vg.middleCols(h * dh, dh);
      saved->push_back(std::move(S));
    }
    scatter_add_rows(out, rows, Og);
  }
  if (probs) *probs = *saved;
  return t.emit(std::move(out), {q, k, v},
                [q, k, v, heads, dh, inv_sqrt, groups = std::move(groups), saved](Tape& t, Var, const Mat& g) {
                  const bool dq = needs(t, q), dk = needs(t, k), dv = needs(t, v);
                  std::size_t idx = 0;
                  for (const auto& rows : groups) {
                    const Mat dO = gather_rows(g, rows);
                    const Mat Qg = gather_rows(t.value(q), rows);
                    const Mat Kg = gather_rows(t.value(k), rows);
                    const Mat Vg = gather_rows(t.value(v), rows);
                    Mat dQg = Mat::Zero(Qg.rows(), Qg.cols());
                    Mat dKg = Mat::Zero(Kg.rows(), Kg.cols());
                    Mat dVg = Mat::Zero(Vg.rows(), Vg.cols());
                    for (int h = 0; h < heads; ++h, ++idx) {
                      const Mat& P = (*saved)[idx];
                      const auto dOh = dO.middleCols(h * dh, dh);
                      if (dv) dVg.middleCols(h * dh, dh).noalias() = P.transpose() * dOh;
                      if (!dq && !dk) continue;
                      Mat dP(P.rows(), P.cols());
                      dP.noalias() = dOh * Vg.middleCols(h * dh, dh).transpose();
                      Mat dS = P.array() * (dP.colwise() - (dP.array() * P.array()).rowwise().sum().matrix()).array();
                      dS *= inv_sqrt;
                      if (dq) dQg.middleCols(h * dh, dh).noalias() = dS * Kg.middleCols(h * dh, dh);
                      if (dk) dKg.middleCols(h * dh, dh).noalias() = dS.transpose() * Qg.middleCols(h * dh, dh);
                    }
                    if (dq) scatter_add_rows(t.grad_buffer(q), rows, dQg);
                    if (dk) scatter_add_rows(t.grad_buffer(k), rows, dKg);
                    if (dv) scatter_add_rows(t.grad_buffer(v), rows, dVg);
                  }
                });
}

Var segment_mean(Tape& t, Var x, std::vector<std::pair<int, int>> segments) {
  const Mat& X = t.value(x);
  Mat out(static_cast<Eigen::Index>(segments.size()), X.cols());
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto [first, count] = segments[s];
    check(count > 0 && first >= 0 && first + count <= X.rows(), "segment_mean", "segment out of range");
    out.row(static_cast<Eigen::Index>(s)) = X.middleRows(first, count).colwise().mean();
  }
  return t.emit(std::move(out), {x}, [x, segments = std::move(segments)](Tape& t, Var, const Mat& g) {
    Mat& gx = t.grad_buffer(x);
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const auto [first, count] = segments[s];
      const RowVec share = g.row(static_cast<Eigen::Index>(s)) / static_cast<double>(count);
      for (int r = first; r < first + count; ++r) gx.row(r) += share;
    }
  });
}

Var weighted_sq_error(Tape& t, Var pred, Mat target, std::vector<double> row_coeff) {
  const Mat& P = t.value(pred);
  check(P.rows() == target.rows() && P.cols() == target.cols(), "weighted_sq_error",
        dims(P) + " vs " + dims(target));
  check(static_cast<Eigen::Index>(row_coeff.size()) == P.rows(), "weighted_sq_error", "coefficient count");
  double loss = 0.0;
  for (Eigen::Index r = 0; r < P.rows(); ++r) loss += row_coeff[r] * (P.row(r) - target.row(r)).squaredNorm();
  Mat out(1, 1);
  out(0, 0) = loss;
  return t.emit(std::move(out), {pred},
                [pred, target = std::move(target), row_coeff = std::move(row_coeff)](Tape& t, Var, const Mat& g) {
                  const Mat& P = t.value(pred);
                  Mat& gp = t.grad_buffer(pred);
                  for (Eigen::Index r = 0; r < P.rows(); ++r)
                    gp.row(r) += (2.0 * row_coeff[r] * g(0, 0)) * (P.row(r) - target.row(r));
                });
}

}  // namespace ddit::ag
