#pragma once

#include <Eigen/Dense>
#include <functional>
#include <utility>
#include <vector>

#include "avtok/fsq.hpp"

namespace avtok {

inline constexpr double kLayerNormEps = 1e-5;

/// Handle into a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// One input position for the mixed embedding: either a vocabulary token or a
/// raw conditioning vector pushed through its own projection.
struct EmbedSlot {
  int token_id = -1;    // >= 0 selects a row of the embedding table
  Eigen::VectorXd vec;  // otherwise projected by the vector weight

  static EmbedSlot token(int id) { return EmbedSlot{id, {}}; }
  static EmbedSlot vector(Eigen::VectorXd v) {
    return EmbedSlot{-1, std::move(v)};
  }
};

/// Reverse-mode tape over dense double matrices.  Values are computed
/// eagerly; backward() replays the tape in reverse, accumulating gradients
/// into every node created with requires_grad.
class Tape {
 public:
  /// Leaf that receives a gradient (parameters).
  Var leaf(const Eigen::MatrixXd& value);
  /// Leaf with no gradient (data, targets).
  Var constant(Eigen::MatrixXd value);

  const Eigen::MatrixXd& val(Var v) const;
  /// Gradient of the last backward() call; zero matrix if untouched.
  const Eigen::MatrixXd& grad(Var v) const;

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  /// Broadcast a 1 x D row onto every row of a T x D matrix.
  Var add_rowvec(Var a, Var row);
  Var scale(Var a, double s);
  Var softplus(Var a);
  Var gelu(Var a);
  Var tanh(Var a);
  /// Row-wise layer norm with learned gain and bias (both 1 x D).
  Var layernorm(Var x, Var gain, Var bias);
  /// Causal 1-D convolution over time.  x is T x C_in; weight is
  /// (kernel * C_in) x C_out with tap k in rows [k*C_in, (k+1)*C_in); bias is
  /// 1 x C_out.  Tap k reads x at offset t - k; out-of-range taps are zero.
  Var causal_conv1d(Var x, Var weight, Var bias, int kernel);
  /// Straight-through quantization: forward quantize+dequantize per column,
  /// backward the bounding-map derivative.
  Var fsq_ste(Var z, const FsqConfig& cfg);
  /// Fused causal multi-head self-attention.  x is T x D; the four weights
  /// are D x D, the four biases 1 x D.
  Var causal_self_attention(Var x, Var wq, Var bq, Var wk, Var bk, Var wv,
                            Var bv, Var wo, Var bo, int n_heads);
  /// Token/vector mixed embedding plus learned positional rows.
  /// embed is V x D, pos is maxT x D, vec_proj is vec_dim x D.
  Var mixed_embed(const std::vector<EmbedSlot>& slots, Var embed, Var pos,
                  Var vec_proj);
  /// Mean squared error over all elements; result is 1 x 1.
  Var mse_loss(Var pred, Var target);
  /// Sum of cross-entropies at selected (row, class) targets; result is 1 x 1.
  Var ce_loss_sum(Var logits, const std::vector<std::pair<int, int>>& targets);

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    bool requires_grad = false;
    std::function<void()> back;
  };

  Var push(Eigen::MatrixXd value, bool requires_grad,
           std::function<void()> back = nullptr);
  Eigen::MatrixXd& g(Var v) { return nodes_[v.id].grad; }
  bool rg(Var v) const { return nodes_[v.id].requires_grad; }
  void check(Var v, const char* what) const;

  std::vector<Node> nodes_;
};

/// Numerically stable softplus and its derivative (shared by tape and the
/// forward-only paths).
double softplus_one(double x);
double sigmoid_one(double x);
/// tanh-approximation GELU, identical to the tape op.
double gelu_one(double x);

}  // namespace avtok
