#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "trk/distributions.hpp"
#include "trk/optimal_transport.hpp"
#include "trk/transport_map.hpp"

namespace trk {

enum class DivergenceKind { kl, wasserstein };

std::string to_string(DivergenceKind k);
DivergenceKind parse_divergence(const std::string& s);

/// Which divergence to use and, for Wasserstein, the order (ot.order) and solver.
struct DivergenceConfig {
  DivergenceKind kind = DivergenceKind::wasserstein;
  OtConfig ot;
};

/// Probability mass function over K classes.
struct DiscreteDistribution {
  std::vector<double> probs;

  explicit DiscreteDistribution(std::vector<double> p);
  std::size_t size() const { return probs.size(); }
};

inline constexpr double kDefaultSmoothing = 1e-6;

/// (p + eps) / (1 + K eps).
DiscreteDistribution smooth(const DiscreteDistribution& d, double eps);

/// Divergence D(T^X # law_xt, law_xs). With the Wasserstein kind this is the
/// distance W_p (a metric), not its p-th power.
double input_risk(const TransportMap& t_x, const Law& law_xt, const Law& law_xs, const DivergenceConfig& cfg = {});

/// W_p(P_ST, target)^p with P_ST = f_ST # law_xt, p = ot.order. `target` is
/// either the optimal target output law or the Law(Y_T) proxy.
double output_risk_w(const TransportPair& f_st, const Law& law_xt, const Law& target, const OtConfig& cfg = {});

/// W_p(p_st, p_t)^p between two laws already in output space.
double output_risk_w(const Law& p_st, const Law& p_t, const OtConfig& cfg = {});

/// KL(P_T || P_ST). Gaussians must be nondegenerate, so the singular part of
/// the Lebesgue decomposition is empty.
double output_risk_kl(const Gaussian1D& p_st, const Gaussian1D& p_t);
double output_risk_kl(const GaussianND& p_st, const GaussianND& p_t);
/// Discrete version. Both are smoothed with `smoothing` first; if P_T still
/// puts mass where P_ST has none, throws SingularPartUnsupported.
double output_risk_kl(const DiscreteDistribution& p_st, const DiscreteDistribution& p_t,
                      double smoothing = kDefaultSmoothing);

/// C(E^I, E^O), nondecreasing in both arguments with C(0, 0) = 0.
class RiskCombiner {
public:
  struct Linear {
    double lambda;  // C = E^O + lambda E^I
  };
  struct Polynomial {
    double c_i;  // C = c_i E^I + c_o (E^O)^power
    double c_o;
    double power;
  };

  static RiskCombiner linear(double lambda);
  static RiskCombiner polynomial(double c_i, double c_o, double power);

  double operator()(double e_i, double e_o) const;
  std::string tag() const;
  const std::variant<Linear, Polynomial>& repr() const { return repr_; }

private:
  explicit RiskCombiner(std::variant<Linear, Polynomial> r) : repr_(r) {}
  std::variant<Linear, Polynomial> repr_;
};

/// Throws InvalidArgument on negative or non-finite risks.
double combine(const RiskCombiner& combiner, double e_i, double e_o);

struct RiskReport {
  double input_risk = 0.0;
  double output_risk = 0.0;
  double combined = 0.0;
  std::string combiner;
  DivergenceKind divergence = DivergenceKind::wasserstein;
  bool approximation = false;  // E^O measured against the Law(Y_T) proxy
};

struct TransferRiskConfig {
  DivergenceConfig input;
  DivergenceConfig output;
};

struct TransferRiskResult {
  RiskReport best;
  std::size_t index = 0;
  std::vector<RiskReport> reports;  // one per candidate, in order
};

/// Minimum combined risk over a finite candidate set; lowest index wins ties.
/// An empirical `target_out` is treated as the Law(Y_T) proxy.
TransferRiskResult transfer_risk(const std::vector<TransportPair>& candidates, const Law& law_xt, const Law& law_xs,
                                 const Law& target_out, const RiskCombiner& combiner,
                                 const TransferRiskConfig& cfg = {});

/// A learning task reduced to its input law and its (optimal) model.
struct TaskView {
  Law law;
  TransportMap model;
};

/// D(law_1, law_2) + min(cap, max over eval_points of ||f_1(x) - f_2(x)||).
/// The max over a finite sample is a lower bound for the true supremum.
double task_distance(const TaskView& s1, const TaskView& s2, double cap, const EmpiricalDistribution& eval_points,
                     const DivergenceConfig& cfg = {});

enum class BregmanGenerator { half_squared_norm };

BregmanGenerator parse_bregman_generator(const std::string& s);

/// phi(u) - phi(v) - <u - v, grad phi(v)>.
double bregman(BregmanGenerator phi, const Vector& u, const Vector& v);

struct Sandwich {
  double lower;
  double center;
  double upper;
};

/// (sum log p_ST, H(P_T, P_ST) - H(Law(Y_T), P_ST), -sum log p_ST) in nats.
Sandwich cross_entropy_sandwich(const DiscreteDistribution& p_st, const DiscreteDistribution& law_yt,
                                const DiscreteDistribution& p_t, double smoothing = 0.0);

}  // namespace trk
