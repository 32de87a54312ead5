#include "trk/finetune.hpp"

#include <cmath>
#include <set>
#include <string>

#include "trk/rng.hpp"

namespace trk::ft {

namespace {

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double hi = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - hi).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

// Pull dL/dy back through the head to dL/d(logits).
Matrix head_backward(HeadKind kind, const Matrix& y, const Matrix& grad_y) {
  if (kind == HeadKind::affine) return grad_y;
  Matrix g(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const double dot = y.row(i).dot(grad_y.row(i));
    g.row(i) = y.row(i).array() * (grad_y.row(i).array() - dot);
  }
  return g;
}

ObjectiveValue affine_gradient(double value, const Matrix& grad_logits, const Matrix& z) {
  return {value, grad_logits.transpose() * z, grad_logits.colwise().sum().transpose()};
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// d/dy of ||y - t||^p
Vector cost_gradient(const Vector& diff, double p) {
  const double n = diff.norm();
  if (n == 0.0) return Vector::Zero(diff.size());
  if (p == 1.0) return diff / n;
  return p * std::pow(n, p - 2.0) * diff;
}

void require_finite(const ObjectiveValue& v, const TrainTrace& trace, const char* what) {
  if (!std::isfinite(v.value) || !v.grad_weights.allFinite() || !v.grad_bias.allFinite())
    throw TrainingDiverged(std::string(what) + ": objective or gradient is not finite", trace);
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidArgument("learning_rate must be > 0");
  if (plateau_stop && plateau_patience < 1) throw InvalidArgument("plateau_patience must be >= 1");
}

TrainConfig TrainConfig::risk_mode() { return TrainConfig{}; }

TrainConfig TrainConfig::accuracy_mode() {
  TrainConfig c;
  c.epochs = 100;
  c.plateau_stop = true;
  return c;
}

AffineModel random_affine_init(Eigen::Index in_dim, Eigen::Index out_dim, std::uint64_t seed) {
  Rng rng(seed);
  Matrix w(out_dim, in_dim);
  for (Eigen::Index j = 0; j < in_dim; ++j)
    for (Eigen::Index i = 0; i < out_dim; ++i) w(i, j) = rng.uniform(-0.1, 0.1);
  return AffineModel(std::move(w), Vector::Zero(out_dim));
}

Matrix apply_head(const AffineModel& params, HeadKind kind, const Matrix& z) {
  Matrix logits = params.apply_rows(z);
  return kind == HeadKind::affine ? logits : softmax_rows(logits);
}

Matrix one_hot(const std::vector<int>& labels, int num_classes) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw InvalidArgument("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(num_classes) + ")");
    out(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return out;
}

ObjectiveValue quantile_w_objective(const AffineModel& params, const Matrix& z, const Vector& z_weights,
                                    const EmpiricalDistribution& proxy, double p) {
  if (params.out_dim() != 1 || proxy.dim() != 1) throw DimensionMismatch("quantile objective needs scalar outputs");
  const Matrix y = params.apply_rows(z);
  const EmpiricalDistribution p_st(y, z_weights);
  const Coupling c = quantile_coupling_1d(p_st, proxy, p);
  Matrix grad_y = Matrix::Zero(y.rows(), 1);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    double g = 0.0;
    for (Eigen::Index j = 0; j < proxy.size(); ++j) {
      const double mass = c.plan(i, j);
      if (mass == 0.0) continue;
      const double diff = y(i, 0) - proxy.points()(j, 0);
      g += mass * (p == 1.0 ? sign(diff) : p * std::pow(std::abs(diff), p - 1.0) * sign(diff));
    }
    grad_y(i, 0) = g;
  }
  return affine_gradient(c.cost, grad_y, z);
}

ObjectiveValue sinkhorn_objective(const AffineModel& params, HeadKind kind, const Matrix& z, const Vector& z_weights,
                                  const EmpiricalDistribution& proxy, double p, double epsilon, double tolerance,
                                  std::size_t max_iter) {
  const Matrix y = apply_head(params, kind, z);
  if (y.cols() != proxy.dim()) throw DimensionMismatch("sinkhorn objective: head output and proxy dimensions differ");
  const EmpiricalDistribution p_st(y, z_weights);
  const Matrix cost = cost_matrix(p_st, proxy, p);
  const SinkhornResult s = sinkhorn(z_weights, proxy.weights(), cost, epsilon, max_iter, tolerance, false);
  Matrix grad_y = Matrix::Zero(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index j = 0; j < proxy.size(); ++j)
      grad_y.row(i) +=
          s.coupling.plan(i, j) * cost_gradient((y.row(i) - proxy.points().row(j)).transpose(), p).transpose();
  return affine_gradient(s.regularized_value, head_backward(kind, y, grad_y), z);
}

ObjectiveValue cross_entropy_objective(const AffineModel& params, const Matrix& features,
                                       const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != features.rows())
    throw DimensionMismatch("cross entropy: label count differs from feature rows");
  const auto k = static_cast<int>(params.out_dim());
  const Matrix logits = params.apply_rows(features);
  const Matrix probs = softmax_rows(logits);
  const Matrix targets = one_hot(labels, k);
  const double n = static_cast<double>(features.rows());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Eigen::Index c = labels[static_cast<std::size_t>(i)];
    // log-softmax on max-shifted logits keeps tiny probabilities finite
    const double hi = logits.row(i).maxCoeff();
    loss -= logits(i, c) - hi - std::log((logits.row(i).array() - hi).exp().sum());
  }
  return affine_gradient(loss / n, (probs - targets) / n, features);
}

TransportMap OutputRiskResult::best_map() const {
  if (head != HeadKind::affine) throw InvalidArgument("softmax heads are not representable as a transport map");
  return TransportMap::affine(best_params);
}

OutputRiskResult minimize_output_risk(const AffineModel& init, HeadKind head, const OutputRiskProblem& problem,
                                      const OtConfig& ot, const TrainConfig& cfg, const SurrogateConfig& surrogate) {
  cfg.validate();
  ot.validate();
  const double p = ot.order;
  if (problem.inputs.rows() != problem.weights.size()) throw DimensionMismatch("output risk: inputs vs weights");
  if (init.in_dim() != problem.inputs.cols()) throw DimensionMismatch("output risk: head input dimension");
  if (init.out_dim() != problem.proxy.dim()) throw DimensionMismatch("output risk: head output vs proxy dimension");
  if (head == HeadKind::affine_softmax && init.out_dim() < 2)
    throw InvalidArgument("softmax head needs at least two outputs");

  auto exact = [&](const AffineModel& params) {
    const EmpiricalDistribution p_st(apply_head(params, head, problem.inputs), problem.weights);
    return std::pow(wasserstein(p_st, problem.proxy, ot).distance, p);
  };
  const bool scalar = head == HeadKind::affine && init.out_dim() == 1;

  OutputRiskResult result;
  result.head = head;
  result.best_params = init;
  result.trace.initial_objective = exact(init);
  result.risk = result.trace.initial_objective;
  if (!std::isfinite(result.risk)) throw TrainingDiverged("output risk: initial objective is not finite", result.trace);

  double epsilon = 0.0;
  if (!scalar) {
    if (surrogate.epsilon) {
      epsilon = *surrogate.epsilon;
    } else {
      const EmpiricalDistribution p0(apply_head(init, head, problem.inputs), problem.weights);
      epsilon = 0.05 * cost_matrix(p0, problem.proxy, p).mean();
    }
    if (!(epsilon > 0.0)) epsilon = 1e-3;
  }

  AffineModel params = init;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const ObjectiveValue g =
        scalar ? quantile_w_objective(params, problem.inputs, problem.weights, problem.proxy, p)
               : sinkhorn_objective(params, head, problem.inputs, problem.weights, problem.proxy, p, epsilon,
                                    surrogate.tolerance, surrogate.max_iter);
    require_finite(g, result.trace, "output risk");
    params.weights -= cfg.learning_rate * g.grad_weights;
    params.bias -= cfg.learning_rate * g.grad_bias;
    const double obj = exact(params);
    result.trace.objective.push_back(obj);
    result.trace.epochs_run = e + 1;
    if (!std::isfinite(obj)) throw TrainingDiverged("output risk: objective is not finite", result.trace);
    if (obj < result.risk) {
      result.risk = obj;
      result.best_params = params;
    }
  }
  result.trace.final_params = params;
  return result;
}

OutputRiskResult minimize_output_risk(const TransportPair& frame, const EmpiricalDistribution& law_xt,
                                      const EmpiricalDistribution& law_yt_proxy, const OtConfig& ot,
                                      const TrainConfig& cfg) {
  const auto init = frame.output_map().as_affine();
  if (!init) throw InvalidArgument("output map must be affine to be trained");
  OutputRiskProblem problem{frame.output_map_inputs(law_xt.points()), law_xt.weights(), law_yt_proxy};
  return minimize_output_risk(*init, HeadKind::affine, problem, ot, cfg);
}

std::vector<int> predict_labels(const AffineModel& model, const Matrix& features) {
  const Matrix logits = model.apply_rows(features);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

double accuracy(const AffineModel& model, const Matrix& features, const std::vector<int>& labels) {
  if (labels.empty()) throw InvalidArgument("accuracy of an empty set");
  const auto pred = predict_labels(model, features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

ClassifierResult train_classifier(const AffineModel& init, const Matrix& train_features,
                                  const std::vector<int>& train_labels, const Matrix& test_features,
                                  const std::vector<int>& test_labels, const TrainConfig& cfg) {
  cfg.validate();
  const auto k = static_cast<int>(init.out_dim());
  if (k < 2) throw InvalidArgument("classifier needs at least two classes");
  if (train_features.cols() != init.in_dim() || test_features.cols() != init.in_dim())
    throw DimensionMismatch("classifier: feature dimension differs from the head input");
  one_hot(train_labels, k);  // range check
  one_hot(test_labels, k);
  if (std::set<int>(train_labels.begin(), train_labels.end()).size() < 2)
    throw InvalidArgument("training set contains a single class");

  ClassifierResult res;
  AffineModel params = init;
  res.trace.initial_objective = cross_entropy_objective(params, train_features, train_labels).value;
  double best = res.trace.initial_objective;
  std::size_t stall = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const ObjectiveValue g = cross_entropy_objective(params, train_features, train_labels);
    require_finite(g, res.trace, "classifier");
    params.weights -= cfg.learning_rate * g.grad_weights;
    params.bias -= cfg.learning_rate * g.grad_bias;
    const double loss = cross_entropy_objective(params, train_features, train_labels).value;
    res.trace.objective.push_back(loss);
    res.trace.epochs_run = e + 1;
    if (!std::isfinite(loss)) throw TrainingDiverged("classifier: loss is not finite", res.trace);
    if (loss < best - cfg.plateau_tolerance) {
      best = loss;
      stall = 0;
    } else if (cfg.plateau_stop && ++stall >= cfg.plateau_patience) {
      break;
    }
  }
  res.trace.final_params = params;
  res.model = params;
  res.accuracy = accuracy(params, test_features, test_labels);
  return res;
}

}  // namespace trk::ft
