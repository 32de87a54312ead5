#include "trk/distributions.hpp"

#include <cmath>
#include <string>

#include "trk/errors.hpp"
#include "trk/rng.hpp"

namespace trk {

namespace {

constexpr double kWeightSumTolerance = 1e-9;

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw InvalidArgument(std::string(what) + " has non-finite entries");
}

}  // namespace

EmpiricalDistribution::EmpiricalDistribution(Matrix points, Vector weights)
    : points_(std::move(points)), weights_(std::move(weights)) {
  if (points_.rows() < 1) throw InvalidArgument("empirical distribution needs at least one point");
  if (points_.cols() < 1) throw InvalidArgument("empirical distribution needs dimension >= 1");
  if (weights_.size() != points_.rows())
    throw DimensionMismatch("empirical distribution: " + std::to_string(points_.rows()) + " points but " +
                            std::to_string(weights_.size()) + " weights");
  require_finite(points_, "empirical points");
  if (!weights_.allFinite() || (weights_.array() < 0.0).any())
    throw InvalidArgument("empirical weights must be finite and nonnegative");
  const double total = weights_.sum();
  if (std::abs(total - 1.0) > kWeightSumTolerance)
    throw InvalidArgument("empirical weights sum to " + std::to_string(total) + ", expected 1");
}

EmpiricalDistribution EmpiricalDistribution::uniform(Matrix points) {
  const Eigen::Index n = points.rows();
  if (n < 1) throw InvalidArgument("empirical distribution needs at least one point");
  return EmpiricalDistribution(std::move(points), Vector::Constant(n, 1.0 / static_cast<double>(n)));
}

EmpiricalDistribution EmpiricalDistribution::from_values(const std::vector<double>& values) {
  Matrix pts(static_cast<Eigen::Index>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) pts(static_cast<Eigen::Index>(i), 0) = values[i];
  return uniform(std::move(pts));
}

EmpiricalDistribution EmpiricalDistribution::dirac(const Vector& at) {
  return EmpiricalDistribution(at.transpose(), Vector::Ones(1));
}

Vector EmpiricalDistribution::mean() const { return points_.transpose() * weights_; }

Matrix EmpiricalDistribution::covariance() const {
  const Vector m = mean();
  const Matrix centered = points_.rowwise() - m.transpose();
  return centered.transpose() * weights_.asDiagonal() * centered;
}

EmpiricalDistribution EmpiricalDistribution::translated(const Vector& shift) const {
  if (shift.size() != dim()) throw DimensionMismatch("translation vector has wrong dimension");
  Matrix moved = points_.rowwise() + shift.transpose();
  return EmpiricalDistribution(std::move(moved), weights_);
}

GaussianND::GaussianND(Vector mean, Matrix cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
  if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size())
    throw DimensionMismatch("gaussian covariance does not match mean dimension");
  if (mean_.size() < 1) throw InvalidArgument("gaussian needs dimension >= 1");
  require_finite(mean_, "gaussian mean");
  require_finite(cov_, "gaussian covariance");
  linalg::require_psd(cov_, "gaussian covariance");
  cov_ = linalg::symmetrize(cov_);
}

GaussianND GaussianND::affine_pushforward(const Matrix& a, const Vector& b) const {
  if (a.cols() != dim() || a.rows() != b.size()) throw DimensionMismatch("affine pushforward: shape mismatch");
  return GaussianND(a * mean_ + b, linalg::symmetrize(a * cov_ * a.transpose()));
}

Gaussian1D::Gaussian1D(double mean, double variance) : mean_(mean), variance_(variance) {
  if (!std::isfinite(mean)) throw InvalidArgument("gaussian mean must be finite");
  if (!(variance > 0.0) || !std::isfinite(variance))
    throw InvalidArgument("1-D gaussian variance must be positive, got " + std::to_string(variance));
}

double Gaussian1D::stddev() const { return std::sqrt(variance_); }

GaussianND Gaussian1D::to_nd() const { return GaussianND(Vector::Constant(1, mean_), Matrix::Constant(1, 1, variance_)); }

Gaussian1D Gaussian1D::from_nd(const GaussianND& g) {
  if (g.dim() != 1) throw DimensionMismatch("expected a one dimensional gaussian");
  return Gaussian1D(g.mean()[0], g.cov()(0, 0));
}

GaussianJoint::GaussianJoint(Vector mu_x, Vector mu_y, Matrix sigma_xx, Matrix sigma_xy, Matrix sigma_yy)
    : mu_x_(std::move(mu_x)),
      mu_y_(std::move(mu_y)),
      sigma_xx_(std::move(sigma_xx)),
      sigma_xy_(std::move(sigma_xy)),
      sigma_yy_(std::move(sigma_yy)) {
  const Eigen::Index d = mu_x_.size();
  const Eigen::Index k = mu_y_.size();
  if (d < 1 || k < 1) throw InvalidArgument("gaussian joint needs nonempty X and Y blocks");
  if (sigma_xx_.rows() != d || sigma_xx_.cols() != d) throw DimensionMismatch("sigma_xx must be d x d");
  if (sigma_xy_.rows() != d || sigma_xy_.cols() != k) throw DimensionMismatch("sigma_xy must be d x k");
  if (sigma_yy_.rows() != k || sigma_yy_.cols() != k) throw DimensionMismatch("sigma_yy must be k x k");
  require_finite(mu_x_, "mu_x");
  require_finite(mu_y_, "mu_y");
  // The full block matrix must be PSD, not just the diagonal blocks.
  linalg::require_psd(full().cov(), "joint covariance");
}

GaussianJoint GaussianJoint::from_full(const GaussianND& full, Eigen::Index x_dim) {
  const Eigen::Index n = full.dim();
  if (x_dim < 1 || x_dim >= n) throw DimensionMismatch("x_dim must split the joint into two nonempty blocks");
  const Eigen::Index k = n - x_dim;
  const Matrix& c = full.cov();
  return GaussianJoint(full.mean().head(x_dim), full.mean().tail(k), c.topLeftCorner(x_dim, x_dim),
                       c.topRightCorner(x_dim, k), c.bottomRightCorner(k, k));
}

GaussianND GaussianJoint::full() const {
  const Eigen::Index d = x_dim();
  const Eigen::Index k = y_dim();
  Vector mu(d + k);
  mu << mu_x_, mu_y_;
  Matrix cov(d + k, d + k);
  cov.topLeftCorner(d, d) = sigma_xx_;
  cov.topRightCorner(d, k) = sigma_xy_;
  cov.bottomLeftCorner(k, d) = sigma_xy_.transpose();
  cov.bottomRightCorner(k, k) = sigma_yy_;
  return GaussianND(std::move(mu), std::move(cov));
}

double gaussian_kl(const GaussianND& p, const GaussianND& q) {
  if (p.dim() != q.dim())
    throw DimensionMismatch("gaussian_kl: dimensions " + std::to_string(p.dim()) + " and " + std::to_string(q.dim()));
  const linalg::SpdSolver q_solver(q.cov(), linalg::kInvertibleFloor, "KL reference covariance");
  if (!(linalg::min_eigenvalue(p.cov()) > linalg::kInvertibleFloor))
    throw DegenerateDistribution("gaussian_kl: first argument has a singular covariance (KL is infinite)");
  const linalg::SpdSolver p_solver(p.cov(), linalg::kInvertibleFloor, "KL covariance");
  const Vector delta = p.mean() - q.mean();
  const double trace_term = q_solver.solve(p.cov()).trace();
  const double mahalanobis = delta.dot(q_solver.solve(delta));
  const double value =
      0.5 * (trace_term - p_solver.log_det() + q_solver.log_det() - static_cast<double>(p.dim()) + mahalanobis);
  return std::max(0.0, value);
}

double gaussian_kl(const Gaussian1D& p, const Gaussian1D& q) {
  const double ratio = p.variance() / q.variance();
  const double delta = p.mean() - q.mean();
  return std::max(0.0, 0.5 * (ratio - std::log(ratio) - 1.0 + delta * delta / q.variance()));
}

double bures_squared(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionMismatch("bures: shape mismatch");
  if (a == b) return 0.0;
  const Matrix a_half = linalg::sqrt_psd(a);
  const Matrix cross = linalg::sqrt_psd(linalg::symmetrize(a_half * b * a_half));
  return std::max(0.0, a.trace() + b.trace() - 2.0 * cross.trace());
}

double gaussian_w2(const GaussianND& p, const GaussianND& q) {
  if (p.dim() != q.dim())
    throw DimensionMismatch("gaussian_w2: dimensions " + std::to_string(p.dim()) + " and " + std::to_string(q.dim()));
  return (p.mean() - q.mean()).squaredNorm() + bures_squared(p.cov(), q.cov());
}

double gaussian_w2(const Gaussian1D& p, const Gaussian1D& q) {
  const double dm = p.mean() - q.mean();
  const double ds = p.stddev() - q.stddev();
  return dm * dm + ds * ds;
}

EmpiricalDistribution sample(const GaussianND& dist, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("sample size must be >= 1");
  Rng rng(seed);
  const Matrix root = linalg::sqrt_psd(dist.cov());
  const Matrix z = rng.normal_matrix(dist.dim(), static_cast<Eigen::Index>(n));
  Matrix pts = (root * z).colwise() + dist.mean();
  return EmpiricalDistribution::uniform(pts.transpose());
}

EmpiricalDistribution sample(const Gaussian1D& dist, std::size_t n, std::uint64_t seed) {
  return sample(dist.to_nd(), n, seed);
}

EmpiricalDistribution sample(const GaussianJoint& dist, std::size_t n, std::uint64_t seed) {
  return sample(dist.full(), n, seed);
}

EmpiricalDistribution sample(const EmpiricalDistribution& dist, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("sample size must be >= 1");
  Rng rng(seed);
  std::discrete_distribution<Eigen::Index> pick(dist.weights().data(), dist.weights().data() + dist.size());
  Matrix pts(static_cast<Eigen::Index>(n), dist.dim());
  for (Eigen::Index i = 0; i < pts.rows(); ++i) pts.row(i) = dist.points().row(pick(rng.engine()));
  return EmpiricalDistribution::uniform(std::move(pts));
}

}  // namespace trk
