#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "trk/linalg.hpp"

namespace trk {

/// Weighted point cloud in R^d. Rows of `points()` are the atoms.
class EmpiricalDistribution {
public:
  /// Throws InvalidArgument unless there is at least one point, the weights
  /// are nonnegative and sum to one within 1e-9.
  EmpiricalDistribution(Matrix points, Vector weights);

  static EmpiricalDistribution uniform(Matrix points);
  static EmpiricalDistribution from_values(const std::vector<double>& values);
  static EmpiricalDistribution dirac(const Vector& at);

  Eigen::Index size() const { return points_.rows(); }
  Eigen::Index dim() const { return points_.cols(); }
  const Matrix& points() const { return points_; }
  const Vector& weights() const { return weights_; }
  Vector point(Eigen::Index i) const { return points_.row(i).transpose(); }

  Vector mean() const;
  Matrix covariance() const;

  /// Same weights, every atom translated by `shift`.
  EmpiricalDistribution translated(const Vector& shift) const;

private:
  Matrix points_;
  Vector weights_;
};

/// Multivariate normal N(mean, cov) with a PSD covariance.
class GaussianND {
public:
  GaussianND(Vector mean, Matrix cov);

  Eigen::Index dim() const { return mean_.size(); }
  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }

  /// Law of A X + b.
  GaussianND affine_pushforward(const Matrix& a, const Vector& b) const;

private:
  Vector mean_;
  Matrix cov_;
};

class Gaussian1D {
public:
  /// Throws InvalidArgument unless variance > 0.
  Gaussian1D(double mean, double variance);

  double mean() const { return mean_; }
  double variance() const { return variance_; }
  double stddev() const;
  GaussianND to_nd() const;
  /// Throws DimensionMismatch unless g is one dimensional.
  static Gaussian1D from_nd(const GaussianND& g);

private:
  double mean_;
  double variance_;
};

/// Jointly Gaussian (X, Y) kept in block form.
class GaussianJoint {
public:
  GaussianJoint(Vector mu_x, Vector mu_y, Matrix sigma_xx, Matrix sigma_xy, Matrix sigma_yy);

  /// Splits a full joint whose first `x_dim` coordinates are X.
  static GaussianJoint from_full(const GaussianND& full, Eigen::Index x_dim);

  Eigen::Index x_dim() const { return mu_x_.size(); }
  Eigen::Index y_dim() const { return mu_y_.size(); }

  const Vector& mu_x() const { return mu_x_; }
  const Vector& mu_y() const { return mu_y_; }
  const Matrix& sigma_xx() const { return sigma_xx_; }
  const Matrix& sigma_xy() const { return sigma_xy_; }
  Matrix sigma_yx() const { return sigma_xy_.transpose(); }
  const Matrix& sigma_yy() const { return sigma_yy_; }

  GaussianND x_marginal() const { return GaussianND(mu_x_, sigma_xx_); }
  GaussianND y_marginal() const { return GaussianND(mu_y_, sigma_yy_); }
  GaussianND full() const;

private:
  Vector mu_x_;
  Vector mu_y_;
  Matrix sigma_xx_;
  Matrix sigma_xy_;
  Matrix sigma_yy_;
};

/// KL(p || q). Throws SingularMatrix when q (or p) has a singular covariance.
double gaussian_kl(const GaussianND& p, const GaussianND& q);
double gaussian_kl(const Gaussian1D& p, const Gaussian1D& q);

/// Squared 2-Wasserstein distance: mean term plus the Bures term.
double gaussian_w2(const GaussianND& p, const GaussianND& q);
double gaussian_w2(const Gaussian1D& p, const Gaussian1D& q);

/// Bures term Tr(A + B - 2 (A^1/2 B A^1/2)^1/2) alone.
double bures_squared(const Matrix& a, const Matrix& b);

EmpiricalDistribution sample(const GaussianND& dist, std::size_t n, std::uint64_t seed);
EmpiricalDistribution sample(const Gaussian1D& dist, std::size_t n, std::uint64_t seed);
/// Points are the concatenation (x, y).
EmpiricalDistribution sample(const GaussianJoint& dist, std::size_t n, std::uint64_t seed);
/// Resamples atoms with replacement according to their weights.
EmpiricalDistribution sample(const EmpiricalDistribution& dist, std::size_t n, std::uint64_t seed);

}  // namespace trk
