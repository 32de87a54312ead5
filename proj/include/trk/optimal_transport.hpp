#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "trk/distributions.hpp"

namespace trk {

/// A transport plan between two weighted point clouds.
struct Coupling {
  Matrix plan;  // plan(i, j) = mass moved from source atom i to target atom j
  double cost = 0.0;  // sum_ij plan(i, j) * ||x_i - y_j||^p
};

enum class OtMethod { automatic, exact_1d, exact_lp, sinkhorn };

std::string to_string(OtMethod m);
OtMethod parse_ot_method(const std::string& s);

struct OtConfig {
  double order = 1.0;
  OtMethod method = OtMethod::automatic;
  /// Absolute entropic regularization; unset means 0.01 x mean pairwise cost.
  std::optional<double> sinkhorn_epsilon;
  std::size_t sinkhorn_max_iter = 2000;
  /// Stop when the largest marginal violation drops below this.
  double sinkhorn_tolerance = 1e-6;
  std::size_t lp_max_support = 400;
  bool want_coupling = false;

  void validate() const;
};

struct OtResult {
  double distance = 0.0;  // W_p, i.e. cost^(1/p)
  OtMethod method = OtMethod::automatic;  // the solver that actually ran
  std::optional<Coupling> coupling;
};

/// Dense cost matrix C(i, j) = ||a_i - b_j||^p.
Matrix cost_matrix(const EmpiricalDistribution& a, const EmpiricalDistribution& b, double p);

/// W_p between two empirical distributions. `automatic` picks exact_1d in one
/// dimension, the exact LP when both supports fit lp_max_support, and Sinkhorn
/// otherwise.
OtResult wasserstein(const EmpiricalDistribution& a, const EmpiricalDistribution& b, const OtConfig& cfg = {});

/// Quantile coupling on the real line; exact up to rounding.
double wasserstein_1d_exact(const EmpiricalDistribution& a, const EmpiricalDistribution& b, double p);

/// Monotone (north-west on sorted atoms) coupling of two 1-D distributions,
/// returned in the original atom order. Ties in the sort keep the lower index first.
Coupling quantile_coupling_1d(const EmpiricalDistribution& a, const EmpiricalDistribution& b, double p);

/// Minimum-cost transportation plan for an arbitrary dense cost matrix
/// (transportation simplex with Dantzig pricing, lowest index on ties).
Coupling transport_lp(const Vector& a, const Vector& b, const Matrix& cost);

struct SinkhornResult {
  Coupling coupling;  // coupling.cost is the unregularized <plan, cost>
  Vector f;  // dual potentials
  Vector g;
  double regularized_value = 0.0;  // <f, a> + <g, b> at convergence
  double epsilon = 0.0;
  std::size_t iterations = 0;
  double marginal_violation = 0.0;
};

/// Log-domain Sinkhorn with over-relaxed updates and epsilon scaling (potentials warm-started on a halving
/// schedule from max cost down to `epsilon`; max_iter bounds the final stage).
/// Throws ConvergenceError (carrying the last marginal violation) when max_iter
/// is reached, unless `strict` is false, in which case the last iterate is
/// returned with its violation.
SinkhornResult sinkhorn(const Vector& a, const Vector& b, const Matrix& cost, double epsilon,
                        std::size_t max_iter = 2000, double tolerance = 1e-6, bool strict = true);

/// Default regularization: 0.01 times the mean entry of the cost matrix.
double default_sinkhorn_epsilon(const Matrix& cost);

/// W_p^p between a 1-D gaussian and a 1-D empirical distribution through the
/// quantile coupling, evaluated in closed form per atom. p must be 1 or 2.
double wasserstein_pp_gaussian_empirical_1d(const Gaussian1D& g, const EmpiricalDistribution& e, double p);

/// W_1 between two 1-D gaussians: E|dm + ds Z| for standard normal Z.
double gaussian_w1_1d(const Gaussian1D& p, const Gaussian1D& q);

}  // namespace trk
