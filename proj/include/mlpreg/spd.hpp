#pragma once

// Small dense symmetric positive-definite matrices: Cholesky factor, log
// determinant, solves and inverse. Dimensions here are noise covariances
// (d of a few units), so everything is dense and double precision.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>

#include "mlpreg/errors.hpp"

namespace mlpreg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Immutable SPD matrix. The input is symmetrized as (M + M^T) / 2 and
/// factored at construction; a pivot <= 0 throws NotPositiveDefinite, where
/// "<= 0" means L_ii^2 <= d eps M_ii.
class SpdMatrix {
 public:
  explicit SpdMatrix(const Matrix& m) {
    detail::require_dims(m.rows() == m.cols() && m.rows() >= 1,
                         "SpdMatrix: expected a non-empty square matrix, got " +
                             std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()));
    if (!m.allFinite()) throw NotPositiveDefinite("SpdMatrix: non-finite entry");
    entries_ = 0.5 * (m + m.transpose());
    llt_.compute(entries_);
    if (llt_.info() != Eigen::Success)
      throw NotPositiveDefinite("SpdMatrix: Cholesky pivot <= 0");
    // A pivot that is only rounding noise relative to its diagonal entry means
    // the matrix is singular in double precision.
    const Matrix& l = llt_.matrixLLT();
    const double floor = static_cast<double>(l.rows()) * std::numeric_limits<double>::epsilon();
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
      if (!std::isfinite(l(i, i)) || !(l(i, i) * l(i, i) > floor * entries_(i, i)))
        throw NotPositiveDefinite("SpdMatrix: Cholesky pivot <= 0 at row " +
                                  std::to_string(i));
    }
  }

  static SpdMatrix identity(Eigen::Index d) {
    return SpdMatrix(Matrix::Identity(d, d));
  }

  Eigen::Index dim() const { return entries_.rows(); }
  const Matrix& entries() const { return entries_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return entries_(i, j); }

  /// Lower-triangular factor L with L L^T = M.
  Matrix chol() const { return llt_.matrixL(); }

  double logdet() const {
    const Matrix& l = llt_.matrixLLT();
    double s = 0.0;
    for (Eigen::Index i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
    return 2.0 * s;
  }

  /// X with M X = B.
  Matrix solve(const Matrix& b) const {
    detail::require_dims(b.rows() == dim(), "SpdMatrix::solve: B has " +
                                                std::to_string(b.rows()) +
                                                " rows, expected " +
                                                std::to_string(dim()));
    return llt_.solve(b);
  }

  /// L^{-1} B, the "whitening" half solve. (L^{-1}B)^T (L^{-1}C) = B^T M^{-1} C.
  Matrix half_solve(const Matrix& b) const {
    detail::require_dims(b.rows() == dim(), "SpdMatrix::half_solve: row mismatch");
    return llt_.matrixL().solve(b);
  }

  SpdMatrix inverse() const {
    return SpdMatrix(solve(Matrix::Identity(dim(), dim())));
  }

  double trace() const { return entries_.trace(); }

  SpdMatrix scaled(double c) const {
    if (!(c > 0.0)) throw NotPositiveDefinite("SpdMatrix::scaled: factor must be > 0");
    return SpdMatrix(c * entries_);
  }

 private:
  Matrix entries_;
  Eigen::LLT<Matrix> llt_;
};

/// Lower Cholesky factor of a symmetric matrix.
inline Matrix cholesky(const Matrix& m) { return SpdMatrix(m).chol(); }

inline double logdet(const SpdMatrix& m) { return m.logdet(); }

inline Matrix solve(const SpdMatrix& m, const Matrix& b) { return m.solve(b); }

inline SpdMatrix inverse(const SpdMatrix& m) { return m.inverse(); }

/// tr(AB) = sum_ij A_ij B_ji, without forming AB.
inline double trace_product(const Matrix& a, const Matrix& b) {
  detail::require_dims(a.rows() == a.cols() && b.rows() == b.cols() &&
                           a.rows() == b.rows(),
                       "trace_product: operands must be square and conformable");
  return a.cwiseProduct(b.transpose()).sum();
}

/// Relative Frobenius distance ||a - b||_F / ||ref||_F.
inline double rel_frobenius(const Matrix& a, const Matrix& b, const Matrix& ref) {
  return (a - b).norm() / ref.norm();
}

}  // namespace mlpreg
