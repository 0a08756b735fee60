#include "avtok/autodiff.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "avtok/errors.hpp"

namespace avtok {

double softplus_one(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid_one(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

constexpr double kGeluC = 0.797884560802865355;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;


}  // namespace

double gelu_one(double x) {
  double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

namespace {

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& s) {
  Eigen::MatrixXd p(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    double m = s.row(i).maxCoeff();
    Eigen::RowVectorXd e = (s.row(i).array() - m).exp().matrix();
    p.row(i) = e / e.sum();
  }
  return p;
}

}  // namespace

Var Tape::push(Eigen::MatrixXd value, bool requires_grad,
               std::function<void()> back) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::check(Var v, const char* what) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw ValidationError(std::string("tape: invalid var for ") + what);
}

Var Tape::leaf(const Eigen::MatrixXd& value) { return push(value, true); }

Var Tape::constant(Eigen::MatrixXd value) {
  return push(std::move(value), false);
}

const Eigen::MatrixXd& Tape::val(Var v) const {
  check(v, "val");
  return nodes_[v.id].value;
}

const Eigen::MatrixXd& Tape::grad(Var v) const {
  check(v, "grad");
  return nodes_[v.id].grad;
}

Var Tape::matmul(Var a, Var b) {
  check(a, "matmul");
  check(b, "matmul");
  const auto& A = val(a);
  const auto& B = val(b);
  if (A.cols() != B.rows())
    throw ValidationError("matmul: inner dims " + std::to_string(A.cols()) +
                          " vs " + std::to_string(B.rows()));
  Var out = push(A * B, rg(a) || rg(b));
  if (!nodes_[out.id].requires_grad) return out;
  nodes_[out.id].back = [this, a, b, out] {
    const auto& G = g(out);
    if (rg(a)) g(a).noalias() += G * val(b).transpose();
    if (rg(b)) g(b).noalias() += val(a).transpose() * G;
  };
  return out;
}

Var Tape::add(Var a, Var b) {
  check(a, "add");
  check(b, "add");
  const auto& A = val(a);
  const auto& B = val(b);
  if (A.rows() != B.rows() || A.cols() != B.cols())
    throw ValidationError("add: shape mismatch");
  Var out = push(A + B, rg(a) || rg(b));
  if (!nodes_[out.id].requires_grad) return out;
  nodes_[out.id].back = [this, a, b, out] {
    if (rg(a)) g(a) += g(out);
    if (rg(b)) g(b) += g(out);
  };
  return out;
}

Var Tape::add_rowvec(Var a, Var row) {
  check(a, "add_rowvec");
  check(row, "add_rowvec");
  const auto& A = val(a);
  const auto& R = val(row);
  if (R.rows() != 1 || R.cols() != A.cols())
    throw ValidationError("add_rowvec: need 1 x " + std::to_string(A.cols()) +
                          " row");
  Eigen::MatrixXd y = A;
  y.rowwise() += R.row(0);
  Var out = push(std::move(y), rg(a) || rg(row));
  if (!nodes_[out.id].requires_grad) return out;
  nodes_[out.id].back = [this, a, row, out] {
    if (rg(a)) g(a) += g(out);
    if (rg(row)) g(row).row(0) += g(out).colwise().sum();
  };
  return out;
}

Var Tape::scale(Var a, double s) {
  check(a, "scale");
  Var out = push(val(a) * s, rg(a));
  if (!nodes_[out.id].requires_grad) return out;
  nodes_[out.id].back = [this, a, out, s] { g(a) += s * g(out); };
  return out;
}

Var Tape::softplus(Var a) {
  check(a, "softplus");
  const auto& A = val(a);
  Eigen::MatrixXd y(A.rows(), A.cols());
  for (Eigen::Index i = 0; i < A.size(); ++i)
    y.data()[i] = softplus_one(A.data()[i]);
  Var out = push(std::move(y), rg(a));
  if (!nodes_[out.id].requires_grad) return out;
  nodes_[out.id].back = [this, a, out] {
    const auto& A2 = val(a);
    const auto& G = g(out);
    auto& GA = g(a);
    for (Eigen::Index i = 0; i < A2.size(); ++i)
      GA.data()[i] += G.data()[i] * sigmoid_one(A2.data()[i]);
  };
  return out;
}

Var Tape::gelu(Var a) {
  check(a, "gelu");
  const auto& A = val(a);
  Eigen::MatrixXd y(A.rows(), A.cols());
  for (Eigen::Index i = 0; i < A.size(); ++i)
    y.data()[i] = gelu_one(A.data()[i]);
  Var out = push(std::move(y), rg(a));
  if (!nodes_[out.id].requires_grad) return out;
  nodes_[out.id].back = [this, a, out] {
    const auto& A2 = val(a);
    const auto& G = g(out);
    auto& GA = g(a);
    for (Eigen::Index i = 0; i < A2.size(); ++i) {
      double x = A2.data()[i];
      double u = kGeluC * (x + kGeluA * x * x * x);
      double th = std::tanh(u);
      double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      double d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      GA.data()[i] += G.data()[i] * d;
    }
  };
  return out;
}

Var Tape::tanh(Var a) {
  check(a, "tanh");
  Var out = push(val(a).array().tanh().matrix(), rg(a));
  if (!nodes_[out.id].requires_grad) return out;
  nodes_[out.id].back = [this, a, out] {
    g(a).array() += g(out).array() * (1.0 - val(out).array().square());
  };
  return out;
}

Var Tape::layernorm(Var x, Var gain, Var bias) {
  check(x, "layernorm");
  check(gain, "layernorm");
  check(bias, "layernorm");
  const auto& X = val(x);
  const auto& Gn = val(gain);
  const auto& Bs = val(bias);
  Eigen::Index D = X.cols();
  if (Gn.rows() != 1 || Gn.cols() != D || Bs.rows() != 1 || Bs.cols() != D)
    throw ValidationError("layernorm: gain/bias must be 1 x feature_dim");
  auto saved = std::make_shared<std::pair<Eigen::MatrixXd, Eigen::VectorXd>>();
  auto& xhat = saved->first;     // T x D
  auto& inv_sigma = saved->second;  // T
  xhat.resize(X.rows(), D);
  inv_sigma.resize(X.rows());
  Eigen::MatrixXd y(X.rows(), D);
  for (Eigen::Index t = 0; t < X.rows(); ++t) {
    double mu = X.row(t).mean();
    double var = (X.row(t).array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_sigma[t] = is;
    xhat.row(t) = ((X.row(t).array() - mu) * is).matrix();
    y.row(t) = (xhat.row(t).array() * Gn.row(0).array() + Bs.row(0).array())
                   .matrix();
  }
  Var out = push(std::move(y), rg(x) || rg(gain) || rg(bias));
  if (!nodes_[out.id].requires_grad) return out;
  nodes_[out.id].back = [this, x, gain, bias, out, saved] {
    const auto& G = g(out);
    const auto& Gn2 = val(gain);
    const auto& xhat2 = saved->first;
    const auto& inv_sigma2 = saved->second;
    Eigen::Index D2 = G.cols();
    if (rg(gain))
      g(gain).row(0) += (G.array() * xhat2.array()).colwise().sum().matrix();
    if (rg(bias)) g(bias).row(0) += G.colwise().sum();
    if (rg(x)) {
      auto& GX = g(x);
      for (Eigen::Index t = 0; t < G.rows(); ++t) {
        Eigen::ArrayXd xh = xhat2.row(t).transpose().array();
        Eigen::ArrayXd dxhat =
            G.row(t).transpose().array() * Gn2.row(0).transpose().array();
        double m1 = dxhat.mean();
        double m2 = (dxhat * xh).mean();
        GX.row(t) +=
            (inv_sigma2[t] * (dxhat - m1 - xh * m2)).matrix().transpose();
      }
    }
  };
  return out;
}

Var Tape::causal_conv1d(Var x, Var weight, Var bias, int kernel) {
  check(x, "causal_conv1d");
  check(weight, "causal_conv1d");
  check(bias, "causal_conv1d");
  const auto& X = val(x);
  const auto& W = val(weight);
  const auto& B = val(bias);
  if (kernel < 1) throw ValidationError("causal_conv1d: kernel must be >= 1");
  Eigen::Index c_in = X.cols();
  if (W.rows() != kernel * c_in)
    throw ValidationError("causal_conv1d: weight rows must be kernel*c_in");
  Eigen::Index c_out = W.cols();
  if (B.rows() != 1 || B.cols() != c_out)
    throw ValidationError("causal_conv1d: bias must be 1 x c_out");
  Eigen::Index T = X.rows();
  Eigen::MatrixXd y(T, c_out);
  y.rowwise() = B.row(0);
  for (int k = 0; k < kernel; ++k) {
    Eigen::Index span = T - k;
    if (span <= 0) break;
    y.bottomRows(span).noalias() +=
        X.topRows(span) * W.middleRows(k * c_in, c_in);
  }
  Var out = push(std::move(y), rg(x) || rg(weight) || rg(bias));
  if (!nodes_[out.id].requires_grad) return out;
  nodes_[out.id].back = [this, x, weight, bias, out, kernel] {
    const auto& G = g(out);
    const auto& X2 = val(x);
    const auto& W2 = val(weight);
    Eigen::Index T2 = X2.rows(), ci = X2.cols();
    if (rg(bias)) g(bias).row(0) += G.colwise().sum();
    for (int k = 0; k < kernel; ++k) {
      Eigen::Index span = T2 - k;
      if (span <= 0) break;
      if (rg(x))
        g(x).topRows(span).noalias() +=
            G.bottomRows(span) * W2.middleRows(k * ci, ci).transpose();
      if (rg(weight))
        g(weight).middleRows(k * ci, ci).noalias() +=
            X2.topRows(span).transpose() * G.bottomRows(span);
    }
  };
  return out;
}

Var Tape::fsq_ste(Var z, const FsqConfig& cfg) {
  check(z, "fsq_ste");
  const auto& Z = val(z);
  Var out = push(fsq_ste_value(cfg, Z), rg(z));
  if (!nodes_[out.id].requires_grad) return out;
  nodes_[out.id].back = [this, z, out, cfg] {
    g(z).array() += g(out).array() * fsq_ste_grad(cfg, val(z)).array();
  };
  return out;
}

Var Tape::causal_self_attention(Var x, Var wq, Var bq, Var wk, Var bk, Var wv,
                                Var bv, Var wo, Var bo, int n_heads) {
  check(x, "attention");
  const auto& X = val(x);
  Eigen::Index T = X.rows(), D = X.cols();
  if (n_heads < 1 || D % n_heads != 0)
    throw ValidationError("attention: model dim not divisible by heads");
  for (Var w : {wq, wk, wv, wo}) {
    check(w, "attention");
    if (val(w).rows() != D || val(w).cols() != D)
      throw ValidationError("attention: weights must be D x D");
  }
  for (Var b : {bq, bk, bv, bo}) {
    check(b, "attention");
    if (val(b).rows() != 1 || val(b).cols() != D)
      throw ValidationError("attention: biases must be 1 x D");
  }
  Eigen::Index dh = D / n_heads;
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  struct Saved {
    Eigen::MatrixXd Q, K, V, O;          // T x D
    std::vector<Eigen::MatrixXd> P;      // per head, T x T
  };
  auto sv = std::make_shared<Saved>();
  sv->Q = (X * val(wq)).rowwise() + val(bq).row(0);
  sv->K = (X * val(wk)).rowwise() + val(bk).row(0);
  sv->V = (X * val(wv)).rowwise() + val(bv).row(0);
  sv->O.resize(T, D);
  sv->P.resize(n_heads);
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (int h = 0; h < n_heads; ++h) {
    auto Qh = sv->Q.middleCols(h * dh, dh);
    auto Kh = sv->K.middleCols(h * dh, dh);
    auto Vh = sv->V.middleCols(h * dh, dh);
    Eigen::MatrixXd S = (Qh * Kh.transpose()) * inv_sqrt;
    for (Eigen::Index i = 0; i < T; ++i)
      for (Eigen::Index j = i + 1; j < T; ++j) S(i, j) = neg_inf;
    sv->P[h] = softmax_rows(S);
    sv->O.middleCols(h * dh, dh).noalias() = sv->P[h] * Vh;
  }
  Eigen::MatrixXd y = (sv->O * val(wo)).rowwise() + val(bo).row(0);

  bool needs = rg(x) || rg(wq) || rg(bq) || rg(wk) || rg(bk) || rg(wv) ||
               rg(bv) || rg(wo) || rg(bo);
  Var out = push(std::move(y), needs);
  if (!needs) return out;
  nodes_[out.id].back = [this, x, wq, bq, wk, bk, wv, bv, wo, bo, out, sv,
                         n_heads, dh, inv_sqrt] {
    const auto& G = g(out);
    const auto& X2 = val(x);
    Eigen::Index T2 = X2.rows();
    if (rg(wo)) g(wo).noalias() += sv->O.transpose() * G;
    if (rg(bo)) g(bo).row(0) += G.colwise().sum();
    Eigen::MatrixXd dO = G * val(wo).transpose();
    Eigen::MatrixXd dQ = Eigen::MatrixXd::Zero(T2, sv->Q.cols());
    Eigen::MatrixXd dK = Eigen::MatrixXd::Zero(T2, sv->Q.cols());
    Eigen::MatrixXd dV = Eigen::MatrixXd::Zero(T2, sv->Q.cols());
    for (int h = 0; h < n_heads; ++h) {
      auto Qh = sv->Q.middleCols(h * dh, dh);
      auto Kh = sv->K.middleCols(h * dh, dh);
      auto Vh = sv->V.middleCols(h * dh, dh);
      const auto& P = sv->P[h];
      Eigen::MatrixXd dOh = dO.middleCols(h * dh, dh);
      dV.middleCols(h * dh, dh).noalias() = P.transpose() * dOh;
      Eigen::MatrixXd dP = dOh * Vh.transpose();
      Eigen::ArrayXd rowsum = (P.array() * dP.array()).rowwise().sum();
      Eigen::ArrayXXd dS = P.array() * (dP.array().colwise() - rowsum);
      Eigen::MatrixXd dSm = dS.matrix() * inv_sqrt;
      dQ.middleCols(h * dh, dh).noalias() = dSm * Kh;
      dK.middleCols(h * dh, dh).noalias() = dSm.transpose() * Qh;
    }
    if (rg(wq)) g(wq).noalias() += X2.transpose() * dQ;
    if (rg(bq)) g(bq).row(0) += dQ.colwise().sum();
    if (rg(wk)) g(wk).noalias() += X2.transpose() * dK;
    if (rg(bk)) g(bk).row(0) += dK.colwise().sum();
    if (rg(wv)) g(wv).noalias() += X2.transpose() * dV;
    if (rg(bv)) g(bv).row(0) += dV.colwise().sum();
    if (rg(x)) {
      g(x).noalias() += dQ * val(wq).transpose();
      g(x).noalias() += dK * val(wk).transpose();
      g(x).noalias() += dV * val(wv).transpose();
    }
  };
  return out;
}

Var Tape::mixed_embed(const std::vector<EmbedSlot>& slots, Var embed, Var pos,
                      Var vec_proj) {
  check(embed, "mixed_embed");
  check(pos, "mixed_embed");
  check(vec_proj, "mixed_embed");
  const auto& E = val(embed);
  const auto& Pos = val(pos);
  const auto& Wv = val(vec_proj);
  Eigen::Index D = E.cols();
  if (Pos.cols() != D || Wv.cols() != D)
    throw ValidationError("mixed_embed: feature dims disagree");
  Eigen::Index T = static_cast<Eigen::Index>(slots.size());
  if (T == 0) throw ValidationError("mixed_embed: empty slot list");
  if (T > Pos.rows())
    throw ValidationError(
        "mixed_embed: sequence length " + std::to_string(T) +
        " exceeds positional table " + std::to_string(Pos.rows()));
  Eigen::MatrixXd y(T, D);
  for (Eigen::Index t = 0; t < T; ++t) {
    const EmbedSlot& s = slots[t];
    if (s.token_id >= 0) {
      if (s.token_id >= E.rows())
        throw ValidationError("mixed_embed: token id " +
                              std::to_string(s.token_id) + " outside table");
      y.row(t) = E.row(s.token_id) + Pos.row(t);
    } else {
      if (s.vec.size() != Wv.rows())
        throw ValidationError("mixed_embed: vector length " +
                              std::to_string(s.vec.size()) + " vs projection " +
                              std::to_string(Wv.rows()));
      y.row(t) = s.vec.transpose() * Wv + Pos.row(t);
    }
  }
  bool needs = rg(embed) || rg(pos) || rg(vec_proj);
  Var out = push(std::move(y), needs);
  if (!needs) return out;
  auto slots_copy = std::make_shared<std::vector<EmbedSlot>>(slots);
  nodes_[out.id].back = [this, embed, pos, vec_proj, out, slots_copy] {
    const auto& G = g(out);
    for (Eigen::Index t = 0; t < G.rows(); ++t) {
      const EmbedSlot& s = (*slots_copy)[t];
      if (rg(pos)) g(pos).row(t) += G.row(t);
      if (s.token_id >= 0) {
        if (rg(embed)) g(embed).row(s.token_id) += G.row(t);
      } else if (rg(vec_proj)) {
        g(vec_proj).noalias() += s.vec * G.row(t);
      }
    }
  };
  return out;
}

Var Tape::mse_loss(Var pred, Var target) {
  check(pred, "mse_loss");
  check(target, "mse_loss");
  const auto& P = val(pred);
  const auto& Tg = val(target);
  if (P.rows() != Tg.rows() || P.cols() != Tg.cols())
    throw ValidationError("mse_loss: shape mismatch");
  if (P.size() == 0) throw ValidationError("mse_loss: empty input");
  double n = static_cast<double>(P.size());
  Eigen::MatrixXd loss(1, 1);
  loss(0, 0) = (P - Tg).squaredNorm() / n;
  Var out = push(std::move(loss), rg(pred) || rg(target));
  if (!nodes_[out.id].requires_grad) return out;
  nodes_[out.id].back = [this, pred, target, out, n] {
    double s = g(out)(0, 0) * 2.0 / n;
    Eigen::MatrixXd d = s * (val(pred) - val(target));
    if (rg(pred)) g(pred) += d;
    if (rg(target)) g(target) -= d;
  };
  return out;
}

Var Tape::ce_loss_sum(Var logits,
                      const std::vector<std::pair<int, int>>& targets) {
  check(logits, "ce_loss_sum");
  const auto& L = val(logits);
  if (targets.empty()) throw ValidationError("ce_loss_sum: no targets");
  for (auto [r, c] : targets)
    if (r < 0 || r >= L.rows() || c < 0 || c >= L.cols())
      throw ValidationError("ce_loss_sum: target (" + std::to_string(r) + "," +
                            std::to_string(c) + ") outside logits " +
                            std::to_string(L.rows()) + "x" +
                            std::to_string(L.cols()));
  double total = 0.0;
  for (auto [r, c] : targets) {
    double m = L.row(r).maxCoeff();
    double lse = m + std::log((L.row(r).array() - m).exp().sum());
    total += lse - L(r, c);
  }
  if (!std::isfinite(total)) throw NumericError("ce_loss_sum: non-finite loss");
  Eigen::MatrixXd loss(1, 1);
  loss(0, 0) = total;
  Var out = push(std::move(loss), rg(logits));
  if (!nodes_[out.id].requires_grad) return out;
  auto tg = std::make_shared<std::vector<std::pair<int, int>>>(targets);
  nodes_[out.id].back = [this, logits, out, tg] {
    double s = g(out)(0, 0);
    const auto& L2 = val(logits);
    auto& GL = g(logits);
    for (auto [r, c] : *tg) {
      double m = L2.row(r).maxCoeff();
      Eigen::RowVectorXd p = (L2.row(r).array() - m).exp().matrix();
      GL.row(r) += s * (p / p.sum());
      GL(r, c) -= s;
    }
  };
  return out;
}

void Tape::backward(Var loss) {
  check(loss, "backward");
  const auto& L = val(loss);
  if (L.rows() != 1 || L.cols() != 1)
    throw ValidationError("backward: loss must be 1 x 1");
  if (!nodes_[loss.id].requires_grad)
    throw ValidationError("backward: loss does not require grad");
  for (auto& n : nodes_)
    if (n.requires_grad)
      n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
  nodes_[loss.id].grad(0, 0) = 1.0;
  for (int i = loss.id; i >= 0; --i)
    if (nodes_[i].requires_grad && nodes_[i].back) nodes_[i].back();
}

}  // namespace avtok
