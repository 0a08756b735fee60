#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "avtok/errors.hpp"

namespace avtok {

/// Finite scalar quantization over a per-dimension level vector.
///
/// Dimension d with L_d levels has half-width h_d = (L_d - 1) / 2.  The
/// bounding map squashes an unconstrained latent into the closed interval
/// [-h_d, h_d]; quantization rounds on a unit grid shifted so codes are
/// 0..L_d-1; dequantization rescales codes to [-1, 1].
struct FsqConfig {
  std::vector<int> levels;

  static FsqConfig face() { return FsqConfig{{8, 5, 5, 5}}; }
  static FsqConfig speech() { return FsqConfig{{3, 3, 3, 3, 3, 3, 3, 3}}; }

  int dims() const { return static_cast<int>(levels.size()); }

  void validate() const {
    if (levels.empty())
      throw ValidationError("fsq: levels must be non-empty");
    for (int L : levels)
      if (L < 2)
        throw ValidationError("fsq: every level must be >= 2, got " +
                              std::to_string(L));
    (void)vocab();
  }

  /// Product of levels.  Throws if it would not fit a token id.
  std::int64_t vocab() const {
    std::int64_t v = 1;
    for (int L : levels) {
      v *= L;
      if (v > (std::int64_t{1} << 31))
        throw ValidationError("fsq: vocab overflows 2^31");
    }
    return v;
  }

  double half(int d) const { return (levels[d] - 1) * 0.5; }

  bool operator==(const FsqConfig& o) const { return levels == o.levels; }
};

template <typename Scalar>
Scalar fsq_bound_one(Scalar z, int level) {
  Scalar h = Scalar(level - 1) / Scalar(2);
  return h * std::tanh(z);
}

/// Code for one latent value: round the shifted bounded value.  The shifted
/// value y + h is non-negative, so round-half-away-from-zero means ties go up.
inline int fsq_quantize_one(double z, int level) {
  double h = (level - 1) * 0.5;
  double y = h * std::tanh(z);
  double c = std::round(y + h);
  if (c < 0) c = 0;
  if (c > level - 1) c = level - 1;
  return static_cast<int>(c);
}

template <typename Scalar>
Scalar fsq_dequantize_one(int code, int level) {
  Scalar h = Scalar(level - 1) / Scalar(2);
  return (Scalar(code) - h) / h;
}

/// Canonical latent that quantizes to `code`: the exact preimage of the
/// dequantized value under the bounding map.  Edge codes map to +/-1, whose
/// preimage is infinite, so the argument is pulled just inside (-1, 1).
inline double fsq_preimage_one(int code, int level) {
  double v = fsq_dequantize_one<double>(code, level);
  const double eps = 1e-12;
  if (v > 1.0 - eps) v = 1.0 - eps;
  if (v < -1.0 + eps) v = -1.0 + eps;
  return std::atanh(v);
}

inline void fsq_check_dims(const FsqConfig& cfg, Eigen::Index n,
                           const char* what) {
  if (n != cfg.dims())
    throw ValidationError(std::string("fsq: ") + what + " has " +
                          std::to_string(n) + " entries, config has " +
                          std::to_string(cfg.dims()) + " dims");
}

inline Eigen::VectorXd fsq_bound(const FsqConfig& cfg,
                                 const Eigen::Ref<const Eigen::VectorXd>& z) {
  fsq_check_dims(cfg, z.size(), "latent");
  if (!z.allFinite()) throw NumericError("fsq_bound: non-finite latent");
  Eigen::VectorXd y(z.size());
  for (int d = 0; d < cfg.dims(); ++d)
    y[d] = fsq_bound_one(z[d], cfg.levels[d]);
  return y;
}

inline std::vector<int> fsq_quantize(
    const FsqConfig& cfg, const Eigen::Ref<const Eigen::VectorXd>& z) {
  fsq_check_dims(cfg, z.size(), "latent");
  if (!z.allFinite()) throw NumericError("fsq_quantize: non-finite latent");
  std::vector<int> c(cfg.levels.size());
  for (int d = 0; d < cfg.dims(); ++d)
    c[d] = fsq_quantize_one(z[d], cfg.levels[d]);
  return c;
}

inline void fsq_check_code(const FsqConfig& cfg, const std::vector<int>& code) {
  fsq_check_dims(cfg, static_cast<Eigen::Index>(code.size()), "code");
  for (int d = 0; d < cfg.dims(); ++d)
    if (code[d] < 0 || code[d] >= cfg.levels[d])
      throw ValidationError("fsq: code[" + std::to_string(d) + "]=" +
                            std::to_string(code[d]) + " outside [0, " +
                            std::to_string(cfg.levels[d]) + ")");
}

inline Eigen::VectorXd fsq_dequantize(const FsqConfig& cfg,
                                      const std::vector<int>& code) {
  fsq_check_code(cfg, code);
  Eigen::VectorXd v(cfg.dims());
  for (int d = 0; d < cfg.dims(); ++d)
    v[d] = fsq_dequantize_one<double>(code[d], cfg.levels[d]);
  return v;
}

inline Eigen::VectorXd fsq_preimage(const FsqConfig& cfg,
                                    const std::vector<int>& code) {
  fsq_check_code(cfg, code);
  Eigen::VectorXd z(cfg.dims());
  for (int d = 0; d < cfg.dims(); ++d)
    z[d] = fsq_preimage_one(code[d], cfg.levels[d]);
  return z;
}

/// Little-endian mixed radix: dimension 0 is the least significant digit.
inline std::int64_t fsq_code_to_index(const FsqConfig& cfg,
                                      const std::vector<int>& code) {
  fsq_check_code(cfg, code);
  std::int64_t index = 0;
  std::int64_t stride = 1;
  for (int d = 0; d < cfg.dims(); ++d) {
    index += stride * code[d];
    stride *= cfg.levels[d];
  }
  return index;
}

inline std::vector<int> fsq_index_to_code(const FsqConfig& cfg,
                                          std::int64_t index) {
  if (index < 0 || index >= cfg.vocab())
    throw ValidationError("fsq: index " + std::to_string(index) +
                          " outside [0, " + std::to_string(cfg.vocab()) + ")");
  std::vector<int> code(cfg.levels.size());
  for (int d = 0; d < cfg.dims(); ++d) {
    code[d] = static_cast<int>(index % cfg.levels[d]);
    index /= cfg.levels[d];
  }
  return code;
}

/// Straight-through value: quantize then dequantize, elementwise over a
/// frames-by-dims matrix whose columns follow the level vector.
inline Eigen::MatrixXd fsq_ste_value(const FsqConfig& cfg,
                                     const Eigen::Ref<const Eigen::MatrixXd>& Z) {
  fsq_check_dims(cfg, Z.cols(), "latent matrix column count");
  if (!Z.allFinite()) throw NumericError("fsq_ste: non-finite latent");
  Eigen::MatrixXd V(Z.rows(), Z.cols());
  for (int d = 0; d < cfg.dims(); ++d) {
    int L = cfg.levels[d];
    for (Eigen::Index t = 0; t < Z.rows(); ++t)
      V(t, d) = fsq_dequantize_one<double>(fsq_quantize_one(Z(t, d), L), L);
  }
  return V;
}

/// Straight-through gradient factor: derivative of the bounding map rescaled
/// by the dequantize normalization, i.e. d/dz [bound(z)/h] = 1 - tanh(z)^2.
inline Eigen::MatrixXd fsq_ste_grad(const FsqConfig& cfg,
                                    const Eigen::Ref<const Eigen::MatrixXd>& Z) {
  fsq_check_dims(cfg, Z.cols(), "latent matrix column count");
  Eigen::MatrixXd G = Z.array().tanh().square();
  return (1.0 - G.array()).matrix();
}

}  // namespace avtok
