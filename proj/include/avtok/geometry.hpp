#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "avtok/errors.hpp"

namespace avtok {

/// Landmark frames are rows of 2*N interleaved coordinates (x0, y0, x1, y1,
/// ...).  Point matrices are N x 2 with one row per point.

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 2> frame_to_points(
    const Eigen::MatrixBase<Derived>& frame) {
  if (frame.size() % 2 != 0)
    throw ValidationError("frame_to_points: frame length must be even, got " +
                          std::to_string(frame.size()));
  using Scalar = typename Derived::Scalar;
  Eigen::Index n = frame.size() / 2;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 2> pts(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    pts(i, 0) = frame(2 * i);
    pts(i, 1) = frame(2 * i + 1);
  }
  return pts;
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 1, Eigen::Dynamic> points_to_frame(
    const Eigen::MatrixBase<Derived>& pts) {
  if (pts.cols() != 2)
    throw ValidationError("points_to_frame: expected N x 2 points");
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> frame(2 * pts.rows());
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    frame(2 * i) = pts(i, 0);
    frame(2 * i + 1) = pts(i, 1);
  }
  return frame;
}

/// Mean Euclidean distance between corresponding points, averaged over every
/// frame and every point.  Inputs are frames-by-coordinates matrices with the
/// interleaved layout above.
template <typename DerivedA, typename DerivedB>
double lmd(const Eigen::MatrixBase<DerivedA>& a,
           const Eigen::MatrixBase<DerivedB>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValidationError("lmd: shape mismatch " + std::to_string(a.rows()) +
                          "x" + std::to_string(a.cols()) + " vs " +
                          std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()));
  if (a.rows() == 0 || a.cols() == 0 || a.cols() % 2 != 0)
    throw ValidationError("lmd: need at least one frame of even length");
  Eigen::Index n_points = a.cols() / 2;
  double total = 0.0;
  for (Eigen::Index t = 0; t < a.rows(); ++t) {
    for (Eigen::Index i = 0; i < n_points; ++i) {
      double dx = static_cast<double>(a(t, 2 * i)) - b(t, 2 * i);
      double dy = static_cast<double>(a(t, 2 * i + 1)) - b(t, 2 * i + 1);
      total += std::sqrt(dx * dx + dy * dy);
    }
  }
  double v = total / (static_cast<double>(a.rows()) * n_points);
  if (!std::isfinite(v)) throw NumericError("lmd: non-finite result");
  return v;
}

/// Similarity transform p -> s R(theta) p + t in the plane.
struct SimilarityTransform {
  double s = 1.0;
  double theta = 0.0;
  double tx = 0.0;
  double ty = 0.0;

  Eigen::Matrix2d rotation() const {
    double c = std::cos(theta), sn = std::sin(theta);
    Eigen::Matrix2d R;
    R << c, -sn, sn, c;
    return R;
  }
};

template <typename Derived>
Eigen::MatrixXd apply_similarity(const SimilarityTransform& T,
                                 const Eigen::MatrixBase<Derived>& pts) {
  if (pts.cols() != 2)
    throw ValidationError("apply_similarity: expected N x 2 points");
  Eigen::MatrixXd P = pts.template cast<double>();
  Eigen::Matrix2d M = T.s * T.rotation();
  Eigen::MatrixXd out = P * M.transpose();
  out.col(0).array() += T.tx;
  out.col(1).array() += T.ty;
  return out;
}

/// Least-squares similarity fit of dst ~ s R src + t.  Closed form via the
/// centered cross terms: theta = atan2(cross, dot), s = |(dot, cross)| over
/// the source variance.  Throws when every source point coincides.
template <typename DerivedA, typename DerivedB>
SimilarityTransform fit_similarity(const Eigen::MatrixBase<DerivedA>& src,
                                   const Eigen::MatrixBase<DerivedB>& dst) {
  if (src.cols() != 2 || dst.cols() != 2 || src.rows() != dst.rows())
    throw ValidationError("fit_similarity: need matching N x 2 point sets");
  if (src.rows() < 2)
    throw ValidationError("fit_similarity: need at least 2 points");
  Eigen::MatrixXd X = src.template cast<double>();
  Eigen::MatrixXd Y = dst.template cast<double>();
  Eigen::RowVector2d mx = X.colwise().mean();
  Eigen::RowVector2d my = Y.colwise().mean();
  X.rowwise() -= mx;
  Y.rowwise() -= my;
  double var = X.squaredNorm();
  if (var <= 0.0)
    throw NumericError("fit_similarity: degenerate source (zero variance)");
  double dot = (X.array() * Y.array()).sum();
  double cross = (X.col(0).array() * Y.col(1).array() -
                  X.col(1).array() * Y.col(0).array())
                     .sum();
  SimilarityTransform T;
  T.theta = (dot == 0.0 && cross == 0.0) ? 0.0 : std::atan2(cross, dot);
  T.s = std::sqrt(dot * dot + cross * cross) / var;
  Eigen::Vector2d t =
      my.transpose() - T.s * T.rotation() * mx.transpose();
  T.tx = t[0];
  T.ty = t[1];
  if (!std::isfinite(T.s) || !std::isfinite(T.theta) ||
      !std::isfinite(T.tx) || !std::isfinite(T.ty))
    throw NumericError("fit_similarity: non-finite fit");
  return T;
}

/// Full 6-parameter affine transform p -> A p + t.
struct AffineTransform {
  Eigen::Matrix2d A = Eigen::Matrix2d::Identity();
  Eigen::Vector2d t = Eigen::Vector2d::Zero();
};

template <typename Derived>
Eigen::MatrixXd apply_affine(const AffineTransform& T,
                             const Eigen::MatrixBase<Derived>& pts) {
  if (pts.cols() != 2)
    throw ValidationError("apply_affine: expected N x 2 points");
  Eigen::MatrixXd P = pts.template cast<double>();
  Eigen::MatrixXd out = P * T.A.transpose();
  out.col(0).array() += T.t[0];
  out.col(1).array() += T.t[1];
  return out;
}

/// Least-squares affine fit of dst ~ A src + t via homogeneous coordinates.
/// Throws when the design matrix is rank deficient (collinear source points).
template <typename DerivedA, typename DerivedB>
AffineTransform fit_affine(const Eigen::MatrixBase<DerivedA>& src,
                           const Eigen::MatrixBase<DerivedB>& dst) {
  if (src.cols() != 2 || dst.cols() != 2 || src.rows() != dst.rows())
    throw ValidationError("fit_affine: need matching N x 2 point sets");
  if (src.rows() < 3)
    throw ValidationError("fit_affine: need at least 3 points");
  Eigen::MatrixXd H(src.rows(), 3);
  H.leftCols<2>() = src.template cast<double>();
  H.col(2).setOnes();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(H);
  if (qr.rank() < 3)
    throw NumericError("fit_affine: rank-deficient source points");
  Eigen::MatrixXd sol = qr.solve(dst.template cast<double>());  // 3 x 2
  AffineTransform T;
  T.A = sol.topRows<2>().transpose();
  T.t = sol.row(2).transpose();
  if (!T.A.allFinite() || !T.t.allFinite())
    throw NumericError("fit_affine: non-finite fit");
  return T;
}

/// Fraction of the codebook that appears at least once.
inline double codebook_utilization(const std::vector<std::int64_t>& indices,
                                   std::int64_t vocab) {
  if (vocab <= 0)
    throw ValidationError("codebook_utilization: vocab must be positive");
  std::unordered_set<std::int64_t> seen;
  for (std::int64_t id : indices) {
    if (id < 0 || id >= vocab)
      throw ValidationError("codebook_utilization: index " +
                            std::to_string(id) + " outside [0, " +
                            std::to_string(vocab) + ")");
    seen.insert(id);
  }
  return static_cast<double>(seen.size()) / static_cast<double>(vocab);
}

}  // namespace avtok
