#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "trk/errors.hpp"
#include "trk/optimal_transport.hpp"
#include "trk/transport_map.hpp"

namespace trk::ft {

struct TrainConfig {
  std::size_t epochs = 10;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
  /// Accuracy mode only: stop after this many epochs without improvement.
  bool plateau_stop = false;
  std::size_t plateau_patience = 10;
  double plateau_tolerance = 1e-6;

  void validate() const;

  /// Fixed ~10 epoch budget used when estimating the output risk.
  static TrainConfig risk_mode();
  /// Up to 100 epochs with a plateau stop.
  static TrainConfig accuracy_mode();
};

struct TrainTrace {
  double initial_objective = 0.0;
  std::vector<double> objective;  // one entry per epoch, after its update
  AffineModel final_params;
  std::size_t epochs_run = 0;
};

class TrainingDiverged : public Error {
public:
  TrainingDiverged(const std::string& what, TrainTrace trace) : Error(what), trace_(std::move(trace)) {}
  const char* kind() const noexcept override { return "training_diverged"; }
  const TrainTrace& trace() const noexcept { return trace_; }

private:
  TrainTrace trace_;
};

/// The trainable output map: either affine, or affine followed by softmax.
enum class HeadKind { affine, affine_softmax };

/// Weights uniform in (-0.1, 0.1), biases zero.
AffineModel random_affine_init(Eigen::Index in_dim, Eigen::Index out_dim, std::uint64_t seed);

/// Rows of the head output for inputs `z` (rows).
Matrix apply_head(const AffineModel& params, HeadKind kind, const Matrix& z);

struct ObjectiveValue {
  double value = 0.0;
  Matrix grad_weights;
  Vector grad_bias;
};

/// W_p(P_ST, proxy)^p for a scalar affine head through the exact quantile
/// coupling, with its subgradient (sign(0) = 0, sort ties by lowest index).
ObjectiveValue quantile_w_objective(const AffineModel& params, const Matrix& z, const Vector& z_weights,
                                    const EmpiricalDistribution& proxy, double p);

/// Entropic OT value between the head outputs and the proxy, differentiated
/// through the optimal plan. Used as the training surrogate for vector outputs;
/// if max_iter runs out the last iterate is used as is.
ObjectiveValue sinkhorn_objective(const AffineModel& params, HeadKind kind, const Matrix& z, const Vector& z_weights,
                                  const EmpiricalDistribution& proxy, double p, double epsilon,
                                  double tolerance = 1e-9, std::size_t max_iter = 20000);

/// Mean cross entropy of a softmax classifier.
ObjectiveValue cross_entropy_objective(const AffineModel& params, const Matrix& features, const std::vector<int>& labels);

/// Inputs for the output-risk minimization: T^Y inputs for each target sample.
struct OutputRiskProblem {
  Matrix inputs;
  Vector weights;
  EmpiricalDistribution proxy;  // Law(Y_T)
};

struct OutputRiskResult {
  double risk = 0.0;  // best W_p^p seen, including the initial map
  AffineModel best_params;
  HeadKind head = HeadKind::affine;
  TrainTrace trace;

  /// Only for affine heads.
  TransportMap best_map() const;
};

/// Surrogate settings for vector-valued outputs.
struct SurrogateConfig {
  /// Entropic regularization; unset means 0.05 x mean cost of the initial map.
  std::optional<double> epsilon;
  double tolerance = 1e-7;
  std::size_t max_iter = 20000;
};

/// Full-batch gradient descent for exactly cfg.epochs epochs. The objective
/// recorded per epoch is always the exact W_p^p (LP or quantile coupling), so
/// the returned risk never exceeds the initial one and is monotone in the budget.
OutputRiskResult minimize_output_risk(const AffineModel& init, HeadKind head, const OutputRiskProblem& problem,
                                      const OtConfig& ot, const TrainConfig& cfg, const SurrogateConfig& surrogate = {});

/// Same, with T^Y inputs built from a transport pair whose output map is affine;
/// the pair's output map is the starting point.
OutputRiskResult minimize_output_risk(const TransportPair& frame, const EmpiricalDistribution& law_xt,
                                      const EmpiricalDistribution& law_yt_proxy, const OtConfig& ot,
                                      const TrainConfig& cfg);

struct ClassifierResult {
  double accuracy = 0.0;
  AffineModel model;
  TrainTrace trace;
};

std::vector<int> predict_labels(const AffineModel& model, const Matrix& features);
double accuracy(const AffineModel& model, const Matrix& features, const std::vector<int>& labels);

/// Fits a softmax head (weights K x m) on the training half and scores it on
/// the held-out half. Throws InvalidArgument on a single-class training set.
ClassifierResult train_classifier(const AffineModel& init, const Matrix& train_features,
                                  const std::vector<int>& train_labels, const Matrix& test_features,
                                  const std::vector<int>& test_labels, const TrainConfig& cfg);

/// One-hot rows for labels in [0, K).
Matrix one_hot(const std::vector<int>& labels, int num_classes);

}  // namespace trk::ft
