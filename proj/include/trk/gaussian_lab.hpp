#pragma once

#include <cstdint>

#include "trk/distributions.hpp"
#include "trk/rng.hpp"
#include "trk/transport_map.hpp"

namespace trk::lab {

enum class Role { source, target };

/// Linear-regression task with jointly gaussian data.
struct GaussianTask {
  GaussianJoint joint;
  Role role = Role::source;
};

struct RiskDecomposition {
  double variance_term = 0.0;
  double bias_term = 0.0;
  double total = 0.0;

  static RiskDecomposition of(double variance, double bias) { return {variance, bias, variance + bias}; }
};

struct KlWRisks {
  RiskDecomposition kl;
  RiskDecomposition w;
};

/// h(x) = (x - log x - 1) / 2; convex on (0, inf), zero only at x = 1.
double h(double x);

/// argmin over affine f of E||Y - f(X)||^2: W = S_YX S_X^-1, b = mu_Y - W mu_X.
/// Throws SingularMatrix when Sigma_X is not invertible.
AffineModel optimal_linear_model(const GaussianTask& task);

/// Closed-form output laws of the basic case (scalar output, T^X = T^Y = id).
struct BasicCaseLaws {
  double st_mean;  // w_S' mu_{T,X} + b_S
  double st_variance;  // w_S' Sigma_{T,X} w_S
  double t_mean;  // mu_{T,Y}
  double t_variance;  // w_T' Sigma_{T,X} w_T
  double bias;  // mu_{T,Y} - mu_{S,Y} - S_{S,YX} S_{S,X}^-1 (mu_{T,X} - mu_{S,X})
};

BasicCaseLaws basic_case_laws(const GaussianTask& source, const GaussianTask& target);

/// KL and Wasserstein output risks of the basic case, split into variance and
/// bias terms. Throws DegenerateDistribution when either predicted variance is
/// zero (the KL is undefined there; basic_case_w stays finite).
KlWRisks basic_case_risks(const GaussianTask& source, const GaussianTask& target);
RiskDecomposition basic_case_kl(const GaussianTask& source, const GaussianTask& target);
RiskDecomposition basic_case_w(const GaussianTask& source, const GaussianTask& target);

/// L_T(f_S*) - L_T(f_T*) in closed form, split into ||S_{T,X}^1/2 (w_T - w_S)||^2
/// and the squared bias.
RiskDecomposition regret_decomposition(const GaussianTask& source, const GaussianTask& target);
double regret(const GaussianTask& source, const GaussianTask& target);

struct RiskRegret {
  double risk_w;
  double regret;
  double residual;  // 2 (|a||b| - <a, b>) with a = S^1/2 w_T, b = S^1/2 w_S
};

/// regret = risk_w + residual; residual >= 0 by Cauchy-Schwarz.
RiskRegret risk_regret_residual(const GaussianTask& source, const GaussianTask& target);

/// Blocks describing k extra input features appended to a source task.
struct FeatureAugmentation {
  Vector mu_a_x;  // k
  Matrix sigma_as_x;  // d x k, Cov(X_S, X_A)
  Matrix sigma_a_x;  // k x k
  Matrix sigma_a_xy;  // k x 1, Cov(X_A, Y)
};

/// Target task of dimension d + k that embeds the source blocks exactly.
GaussianTask augment_features(const GaussianTask& source, const FeatureAugmentation& aug);

/// Cov(X_A, Y) forced by Y independent of X_A given X_S:
/// S_{AS,X}' S_{S,X}^-1 S_{S,XY}.
Matrix conditionally_independent_sigma_a_xy(const GaussianTask& source, const Matrix& sigma_as_x);

/// Output risks for f_ST = f_S* o (I_d | 0). Throws InvalidArgument when the
/// target does not embed the source blocks.
KlWRisks feature_augmentation_risks(const GaussianTask& source, const GaussianTask& target);

/// Target losses used by the no-harm statement: E(Y_T - f(X_T))^2 for the
/// optimal augmented model and for f_S* o projection.
struct AugmentationLosses {
  double optimal_augmented;
  double pretrained_projected;
};
AugmentationLosses feature_augmentation_losses(const GaussianTask& source, const GaussianTask& target);

/// Output laws of the augmented-output case: P_T = N(mu1, S1), P_ST = N(mu2, S2).
struct OutputAugmentationLaws {
  GaussianND p_t;
  GaussianND p_st;
};

/// `initializer` maps R^d to R^k (weights k x d) and predicts the extra outputs.
OutputAugmentationLaws output_augmentation_laws(const GaussianTask& source, const GaussianTask& target,
                                                const AffineModel& initializer);

struct OutputAugmentationRisks {
  double kl;
  double w;
  RiskDecomposition kl_decomposition;
};

/// Throws SingularMatrix when Sigma_2 (the law of the initialized outputs) is singular.
OutputAugmentationRisks output_augmentation_risks(const GaussianTask& source, const GaussianTask& target,
                                                  const AffineModel& initializer);

/// Half the sum of (lambda - log lambda - 1) over eigenvalues of S2^-1 S1.
double variance_term_eigen(const Matrix& sigma1, const Matrix& sigma2);
/// Half of Tr(S2^-1 S1) - log det S1 / det S2 - n.
double variance_term_trace(const Matrix& sigma1, const Matrix& sigma2);

/// Target built from a source with l outputs by appending k outputs.
struct OutputAugmentation {
  Vector mu_a_y;  // k
  Matrix sigma_a_xy;  // d x k, Cov(X, Y_A)
  Matrix sigma_as_y;  // l x k, Cov(Y_S, Y_A)
  Matrix sigma_a_y;  // k x k
};

GaussianTask augment_outputs(const GaussianTask& source, const OutputAugmentation& aug);

/// The initializer that predicts Y_A optimally: w0 = S_{A,YX} S_X^-1, b0 = mu_{A,Y} - w0 mu_X.
AffineModel optimal_output_initializer(const GaussianTask& source, const GaussianTask& target);

struct RandomInstanceParams {
  Eigen::Index x_dim = 2;
  Eigen::Index y_dim = 1;
  double eig_min = 0.5;
  double eig_max = 2.0;
  double mean_scale = 1.0;
};

/// Random joint with covariance Q diag(lambda) Q' (Q Haar-orthogonal, lambda
/// uniform in [eig_min, eig_max]) and mean entries uniform in +-mean_scale.
GaussianJoint random_joint(const RandomInstanceParams& params, Rng& rng);
GaussianTask random_task(const RandomInstanceParams& params, Role role, Rng& rng);

}  // namespace trk::lab
