#pragma once

#include <Eigen/Dense>

namespace trk {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace linalg {

/// Eigenvalues of a symmetric matrix below -tolerance are an error; those in
/// [-tolerance, 0) are clamped to zero.
inline constexpr double kPsdTolerance = 1e-8;

/// Default floor on the smallest eigenvalue of a matrix that must be inverted.
inline constexpr double kInvertibleFloor = 1e-10;

bool is_symmetric(const Matrix& m, double tol = 1e-9);

/// Throws NotPositiveSemidefinite when the symmetric part of `m` has an
/// eigenvalue below -tol.
void require_psd(const Matrix& m, const char* what, double tol = kPsdTolerance);

double min_eigenvalue(const Matrix& symmetric);

/// Principal square root of a symmetric PSD matrix through its
/// eigendecomposition. Throws NotPositiveSemidefinite on indefinite input.
Matrix sqrt_psd(const Matrix& symmetric, double tol = kPsdTolerance);

/// Cholesky-based solver that rejects matrices whose smallest eigenvalue is
/// below `floor`.
class SpdSolver {
public:
  explicit SpdSolver(const Matrix& spd, double floor = kInvertibleFloor, const char* what = "matrix");

  Vector solve(const Vector& rhs) const { return llt_.solve(rhs); }
  Matrix solve(const Matrix& rhs) const { return llt_.solve(rhs); }
  Matrix inverse() const;
  double log_det() const;

private:
  Eigen::LLT<Matrix> llt_;
  Eigen::Index n_;
};

/// Symmetrize (A + A^T) / 2; used after products that should be symmetric.
inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace linalg
}  // namespace trk
