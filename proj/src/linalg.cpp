#include "trk/linalg.hpp"

#include <cmath>
#include <string>

#include "trk/errors.hpp"

namespace trk::linalg {

bool is_symmetric(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

double min_eigenvalue(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(symmetric), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

void require_psd(const Matrix& m, const char* what, double tol) {
  if (m.rows() != m.cols()) throw DimensionMismatch(std::string(what) + " is not square");
  if (!is_symmetric(m)) throw NotPositiveSemidefinite(std::string(what) + " is not symmetric");
  if (m.size() == 0) return;
  const double lo = min_eigenvalue(m);
  if (lo < -tol)
    throw NotPositiveSemidefinite(std::string(what) + " has negative eigenvalue " + std::to_string(lo));
}

Matrix sqrt_psd(const Matrix& symmetric, double tol) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(symmetric));
  if (es.info() != Eigen::Success) throw NotPositiveSemidefinite("eigendecomposition failed");
  Vector ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -tol)
      throw NotPositiveSemidefinite("matrix square root of indefinite matrix (eigenvalue " +
                                    std::to_string(ev[i]) + ")");
    ev[i] = ev[i] < 0.0 ? 0.0 : std::sqrt(ev[i]);
  }
  const Matrix& q = es.eigenvectors();
  return symmetrize(q * ev.asDiagonal() * q.transpose());
}

SpdSolver::SpdSolver(const Matrix& spd, double floor, const char* what) : n_(spd.rows()) {
  if (spd.rows() != spd.cols()) throw DimensionMismatch(std::string(what) + " is not square");
  const double lo = min_eigenvalue(spd);
  if (!(lo > floor))
    throw SingularMatrix(std::string(what) + " is singular (smallest eigenvalue " + std::to_string(lo) + ")");
  llt_.compute(symmetrize(spd));
  if (llt_.info() != Eigen::Success) throw SingularMatrix(std::string(what) + ": Cholesky failed");
}

Matrix SpdSolver::inverse() const { return llt_.solve(Matrix::Identity(n_, n_)); }

double SpdSolver::log_det() const {
  const Matrix& l = llt_.matrixLLT();
  double s = 0.0;
  for (Eigen::Index i = 0; i < n_; ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

}  // namespace trk::linalg
