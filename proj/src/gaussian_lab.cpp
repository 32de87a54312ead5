#include "trk/gaussian_lab.hpp"

#include <cmath>
#include <string>

#include "trk/errors.hpp"
#include "trk/linalg.hpp"

namespace trk::lab {

namespace {

constexpr double kEmbeddingTolerance = 1e-9;

void require_close(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidArgument(std::string("block embedding violated: ") + what + " has the wrong shape");
  const double scale = std::max(1.0, std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()));
  if ((a - b).cwiseAbs().maxCoeff() > kEmbeddingTolerance * scale)
    throw InvalidArgument(std::string("block embedding violated: ") + what + " differs from the source block");
}

void require_scalar_output(const GaussianTask& t, const char* who) {
  if (t.joint.y_dim() != 1) throw DimensionMismatch(std::string(who) + " needs a scalar output");
}

// d-vector of regression coefficients S_X^-1 S_XY for a scalar output.
Vector regression_vector(const GaussianJoint& j) {
  const linalg::SpdSolver sx(j.sigma_xx(), linalg::kInvertibleFloor, "Sigma_X");
  return sx.solve(Vector(j.sigma_xy().col(0)));
}

// E||Y - (W X + b)||^2 under the joint.
double affine_loss(const GaussianJoint& j, const Matrix& w, const Vector& b) {
  const Matrix cov = j.sigma_yy() - w * j.sigma_xy() - j.sigma_yx() * w.transpose() + w * j.sigma_xx() * w.transpose();
  const Vector mean_err = j.mu_y() - w * j.mu_x() - b;
  return cov.trace() + mean_err.squaredNorm();
}

}  // namespace

double h(double x) {
  if (!(x > 0.0)) throw InvalidArgument("h(x) needs x > 0");
  return 0.5 * (x - std::log(x) - 1.0);
}

AffineModel optimal_linear_model(const GaussianTask& task) {
  const GaussianJoint& j = task.joint;
  const linalg::SpdSolver sx(j.sigma_xx(), linalg::kInvertibleFloor, "Sigma_X");
  Matrix w = sx.solve(j.sigma_xy()).transpose();
  Vector b = j.mu_y() - w * j.mu_x();
  return AffineModel(std::move(w), std::move(b));
}

BasicCaseLaws basic_case_laws(const GaussianTask& source, const GaussianTask& target) {
  require_scalar_output(source, "basic case");
  require_scalar_output(target, "basic case");
  if (source.joint.x_dim() != target.joint.x_dim()) throw DimensionMismatch("basic case: input dimensions differ");
  const GaussianJoint& s = source.joint;
  const GaussianJoint& t = target.joint;
  const Vector w_s = regression_vector(s);
  const Vector w_t = regression_vector(t);
  const double b_s = s.mu_y()[0] - w_s.dot(s.mu_x());
  BasicCaseLaws laws{};
  laws.st_mean = w_s.dot(t.mu_x()) + b_s;
  laws.st_variance = w_s.dot(t.sigma_xx() * w_s);
  laws.t_mean = t.mu_y()[0];
  laws.t_variance = w_t.dot(t.sigma_xx() * w_t);
  laws.bias = t.mu_y()[0] - s.mu_y()[0] - w_s.dot(t.mu_x() - s.mu_x());
  return laws;
}

RiskDecomposition basic_case_kl(const GaussianTask& source, const GaussianTask& target) {
  const BasicCaseLaws l = basic_case_laws(source, target);
  if (!(l.st_variance > 0.0))
    throw DegenerateDistribution("pretrained model has zero predicted variance on the target (w_S' S_{T,X} w_S = 0)");
  if (!(l.t_variance > 0.0))
    throw DegenerateDistribution("optimal target model has zero predicted variance (w_T' S_{T,X} w_T = 0)");
  return RiskDecomposition::of(h(l.t_variance / l.st_variance), l.bias * l.bias / (2.0 * l.st_variance));
}

RiskDecomposition basic_case_w(const GaussianTask& source, const GaussianTask& target) {
  const BasicCaseLaws l = basic_case_laws(source, target);
  const double ds = std::sqrt(std::max(0.0, l.st_variance)) - std::sqrt(std::max(0.0, l.t_variance));
  return RiskDecomposition::of(ds * ds, l.bias * l.bias);
}

KlWRisks basic_case_risks(const GaussianTask& source, const GaussianTask& target) {
  return {basic_case_kl(source, target), basic_case_w(source, target)};
}

RiskDecomposition regret_decomposition(const GaussianTask& source, const GaussianTask& target) {
  require_scalar_output(source, "regret");
  require_scalar_output(target, "regret");
  if (source.joint.x_dim() != target.joint.x_dim()) throw DimensionMismatch("regret: input dimensions differ");
  const Vector w_s = regression_vector(source.joint);
  const Vector w_t = regression_vector(target.joint);
  const Vector dw = w_t - w_s;
  const double variance = std::max(0.0, dw.dot(target.joint.sigma_xx() * dw));
  const double bias = target.joint.mu_y()[0] - source.joint.mu_y()[0] -
                      w_s.dot(target.joint.mu_x() - source.joint.mu_x());
  return RiskDecomposition::of(variance, bias * bias);
}

double regret(const GaussianTask& source, const GaussianTask& target) {
  return regret_decomposition(source, target).total;
}

RiskRegret risk_regret_residual(const GaussianTask& source, const GaussianTask& target) {
  const double risk_w = basic_case_w(source, target).total;
  const double r = regret(source, target);
  const Matrix root = linalg::sqrt_psd(target.joint.sigma_xx());
  const Vector a = root * regression_vector(target.joint);
  const Vector b = root * regression_vector(source.joint);
  const double residual = 2.0 * (a.norm() * b.norm() - a.dot(b));
  return {risk_w, r, residual};
}

GaussianTask augment_features(const GaussianTask& source, const FeatureAugmentation& aug) {
  require_scalar_output(source, "feature augmentation");
  const GaussianJoint& s = source.joint;
  const Eigen::Index d = s.x_dim();
  const Eigen::Index k = aug.mu_a_x.size();
  if (aug.sigma_as_x.rows() != d || aug.sigma_as_x.cols() != k || aug.sigma_a_x.rows() != k ||
      aug.sigma_a_x.cols() != k || aug.sigma_a_xy.rows() != k || aug.sigma_a_xy.cols() != 1)
    throw DimensionMismatch("feature augmentation blocks have inconsistent shapes");
  Vector mu_x(d + k);
  mu_x << s.mu_x(), aug.mu_a_x;
  Matrix sxx(d + k, d + k);
  sxx << s.sigma_xx(), aug.sigma_as_x, aug.sigma_as_x.transpose(), aug.sigma_a_x;
  Matrix sxy(d + k, 1);
  sxy << s.sigma_xy(), aug.sigma_a_xy;
  return {GaussianJoint(std::move(mu_x), s.mu_y(), std::move(sxx), std::move(sxy), s.sigma_yy()), Role::target};
}

Matrix conditionally_independent_sigma_a_xy(const GaussianTask& source, const Matrix& sigma_as_x) {
  const linalg::SpdSolver sx(source.joint.sigma_xx(), linalg::kInvertibleFloor, "Sigma_{S,X}");
  return sigma_as_x.transpose() * sx.solve(source.joint.sigma_xy());
}

namespace {

void require_feature_embedding(const GaussianTask& source, const GaussianTask& target) {
  require_scalar_output(source, "feature augmentation");
  require_scalar_output(target, "feature augmentation");
  const GaussianJoint& s = source.joint;
  const GaussianJoint& t = target.joint;
  const Eigen::Index d = s.x_dim();
  if (t.x_dim() <= d) throw InvalidArgument("block embedding violated: target must have more input features");
  require_close(t.mu_x().head(d), s.mu_x(), "mu_{T,X}");
  require_close(t.sigma_xx().topLeftCorner(d, d), s.sigma_xx(), "Sigma_{T,X}");
  require_close(t.sigma_xy().topRows(d), s.sigma_xy(), "Sigma_{T,XY}");
  require_close(t.mu_y(), s.mu_y(), "mu_{T,Y}");
  require_close(t.sigma_yy(), s.sigma_yy(), "Sigma_{T,Y}");
}

}  // namespace

KlWRisks feature_augmentation_risks(const GaussianTask& source, const GaussianTask& target) {
  require_feature_embedding(source, target);
  const Vector w_s = regression_vector(source.joint);
  const Vector w_t = regression_vector(target.joint);
  // S_YX S_X^-1 S_XY for each task
  const double explained_t = std::max(0.0, target.joint.sigma_xy().col(0).dot(w_t));
  const double explained_s = std::max(0.0, source.joint.sigma_xy().col(0).dot(w_s));
  const double ds = std::sqrt(explained_t) - std::sqrt(explained_s);
  KlWRisks out;
  out.w = RiskDecomposition::of(ds * ds, 0.0);
  if (!(explained_s > 0.0)) throw DegenerateDistribution("pretrained model output is constant (w_S = 0)");
  if (!(explained_t > 0.0)) throw DegenerateDistribution("optimal augmented model output is constant");
  out.kl = RiskDecomposition::of(h(explained_t / explained_s), 0.0);
  return out;
}

AugmentationLosses feature_augmentation_losses(const GaussianTask& source, const GaussianTask& target) {
  require_feature_embedding(source, target);
  const AffineModel optimal = optimal_linear_model(target);
  const AffineModel pretrained = optimal_linear_model(source);
  const Eigen::Index d = source.joint.x_dim();
  Matrix projected = Matrix::Zero(1, target.joint.x_dim());
  projected.leftCols(d) = pretrained.weights;
  return {affine_loss(target.joint, optimal.weights, optimal.bias),
          affine_loss(target.joint, projected, pretrained.bias)};
}

namespace {

void require_output_embedding(const GaussianTask& source, const GaussianTask& target) {
  const GaussianJoint& s = source.joint;
  const GaussianJoint& t = target.joint;
  const Eigen::Index l = s.y_dim();
  if (t.y_dim() <= l) throw InvalidArgument("block embedding violated: target must have more outputs");
  require_close(t.mu_x(), s.mu_x(), "mu_{T,X}");
  require_close(t.sigma_xx(), s.sigma_xx(), "Sigma_{T,X}");
  require_close(t.sigma_xy().leftCols(l), s.sigma_xy(), "Sigma_{T,XY}");
  require_close(t.mu_y().head(l), s.mu_y(), "mu_{T,Y}");
  require_close(t.sigma_yy().topLeftCorner(l, l), s.sigma_yy(), "Sigma_{T,Y}");
}

}  // namespace

GaussianTask augment_outputs(const GaussianTask& source, const OutputAugmentation& aug) {
  const GaussianJoint& s = source.joint;
  const Eigen::Index d = s.x_dim();
  const Eigen::Index l = s.y_dim();
  const Eigen::Index k = aug.mu_a_y.size();
  if (aug.sigma_a_xy.rows() != d || aug.sigma_a_xy.cols() != k || aug.sigma_as_y.rows() != l ||
      aug.sigma_as_y.cols() != k || aug.sigma_a_y.rows() != k || aug.sigma_a_y.cols() != k)
    throw DimensionMismatch("output augmentation blocks have inconsistent shapes");
  Vector mu_y(l + k);
  mu_y << s.mu_y(), aug.mu_a_y;
  Matrix sxy(d, l + k);
  sxy << s.sigma_xy(), aug.sigma_a_xy;
  Matrix syy(l + k, l + k);
  syy << s.sigma_yy(), aug.sigma_as_y, aug.sigma_as_y.transpose(), aug.sigma_a_y;
  return {GaussianJoint(s.mu_x(), std::move(mu_y), s.sigma_xx(), std::move(sxy), std::move(syy)), Role::target};
}

AffineModel optimal_output_initializer(const GaussianTask& source, const GaussianTask& target) {
  require_output_embedding(source, target);
  const Eigen::Index l = source.joint.y_dim();
  const Eigen::Index k = target.joint.y_dim() - l;
  const AffineModel full = optimal_linear_model(target);
  return AffineModel(full.weights.bottomRows(k), full.bias.tail(k));
}

OutputAugmentationLaws output_augmentation_laws(const GaussianTask& source, const GaussianTask& target,
                                                const AffineModel& initializer) {
  require_output_embedding(source, target);
  const Eigen::Index d = source.joint.x_dim();
  const Eigen::Index l = source.joint.y_dim();
  const Eigen::Index k = target.joint.y_dim() - l;
  if (initializer.in_dim() != d || initializer.out_dim() != k)
    throw DimensionMismatch("initializer must map R^" + std::to_string(d) + " to R^" + std::to_string(k));
  const AffineModel f_t = optimal_linear_model(target);
  const AffineModel f_s = optimal_linear_model(source);
  Matrix w_st(l + k, d);
  w_st << f_s.weights, initializer.weights;
  Vector b_st(l + k);
  b_st << f_s.bias, initializer.bias;
  const GaussianND x = target.joint.x_marginal();
  return {x.affine_pushforward(f_t.weights, f_t.bias), x.affine_pushforward(w_st, b_st)};
}

double variance_term_eigen(const Matrix& sigma1, const Matrix& sigma2) {
  linalg::SpdSolver(sigma2, linalg::kInvertibleFloor, "Sigma_2");
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(linalg::symmetrize(sigma1), linalg::symmetrize(sigma2),
                                                       Eigen::EigenvaluesOnly | Eigen::Ax_lBx);
  if (ges.info() != Eigen::Success) throw SingularMatrix("generalized eigenproblem failed");
  double s = 0.0;
  for (Eigen::Index i = 0; i < ges.eigenvalues().size(); ++i) {
    const double lam = ges.eigenvalues()[i];
    if (!(lam > 0.0)) throw DegenerateDistribution("Sigma_1 is singular; the KL risk is infinite");
    s += lam - std::log(lam) - 1.0;
  }
  return 0.5 * s;
}

double variance_term_trace(const Matrix& sigma1, const Matrix& sigma2) {
  const linalg::SpdSolver s2(sigma2, linalg::kInvertibleFloor, "Sigma_2");
  if (!(linalg::min_eigenvalue(sigma1) > linalg::kInvertibleFloor))
    throw DegenerateDistribution("Sigma_1 is singular; the KL risk is infinite");
  const linalg::SpdSolver s1(sigma1, linalg::kInvertibleFloor, "Sigma_1");
  const double n = static_cast<double>(sigma1.rows());
  return 0.5 * (s2.solve(sigma1).trace() - (s1.log_det() - s2.log_det()) - n);
}

OutputAugmentationRisks output_augmentation_risks(const GaussianTask& source, const GaussianTask& target,
                                                  const AffineModel& initializer) {
  const OutputAugmentationLaws laws = output_augmentation_laws(source, target, initializer);
  const Matrix& s1 = laws.p_t.cov();
  const Matrix& s2 = laws.p_st.cov();
  const linalg::SpdSolver s2_solver(s2, linalg::kInvertibleFloor, "Sigma_2 (law of the initialized outputs)");
  const Vector delta = laws.p_t.mean() - laws.p_st.mean();
  const double variance = std::max(0.0, variance_term_trace(s1, s2));
  const double bias = std::max(0.0, 0.5 * delta.dot(s2_solver.solve(delta)));
  OutputAugmentationRisks r;
  r.kl_decomposition = RiskDecomposition::of(variance, bias);
  r.kl = r.kl_decomposition.total;
  r.w = gaussian_w2(laws.p_t, laws.p_st);
  return r;
}

GaussianJoint random_joint(const RandomInstanceParams& params, Rng& rng) {
  const Eigen::Index n = params.x_dim + params.y_dim;
  if (params.x_dim < 1 || params.y_dim < 1) throw InvalidArgument("random joint needs x_dim, y_dim >= 1");
  if (!(params.eig_min > 0.0) || params.eig_max < params.eig_min)
    throw InvalidArgument("random joint needs 0 < eig_min <= eig_max");
  Eigen::HouseholderQR<Matrix> qr(rng.normal_matrix(n, n));
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR();
  for (Eigen::Index i = 0; i < n; ++i)
    if (r(i, i) < 0.0) q.col(i) *= -1.0;
  Vector lambda(n);
  for (Eigen::Index i = 0; i < n; ++i) lambda[i] = rng.uniform(params.eig_min, params.eig_max);
  const Matrix cov = linalg::symmetrize(q * lambda.asDiagonal() * q.transpose());
  Vector mu(n);
  for (Eigen::Index i = 0; i < n; ++i) mu[i] = rng.uniform(-params.mean_scale, params.mean_scale);
  return GaussianJoint::from_full(GaussianND(std::move(mu), cov), params.x_dim);
}

GaussianTask random_task(const RandomInstanceParams& params, Role role, Rng& rng) {
  return {random_joint(params, rng), role};
}

}  // namespace trk::lab
