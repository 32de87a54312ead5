#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "trk/errors.hpp"
#include "trk/finetune.hpp"
#include "trk/gaussian_lab.hpp"
#include "trk/rng.hpp"
#include "trk/synthetic_office.hpp"

using namespace trk;
using namespace trk::ft;

namespace {

std::vector<double> col(const Matrix& m) { return std::vector<double>(m.data(), m.data() + m.rows()); }

// 1-D inputs from N(0,1) and a skewed label sample, so no affine map reaches zero risk.
struct ScalarProblem {
  Matrix x;
  Matrix labels;
  OutputRiskProblem problem() const {
    return {x, Vector::Constant(x.rows(), 1.0 / static_cast<double>(x.rows())), EmpiricalDistribution::uniform(labels)};
  }
};

ScalarProblem scalar_problem(std::uint64_t seed, int n = 80) {
  Rng rng(seed);
  ScalarProblem p{rng.normal_matrix(n, 1), Matrix(n, 1)};
  std::exponential_distribution<double> expo(1.0);
  for (int i = 0; i < n; ++i) p.labels(i, 0) = 1.0 + 1.5 * expo(rng.engine());
  return p;
}

Vector flatten(const AffineModel& m) {
  Vector v(m.weights.size() + m.bias.size());
  v << Eigen::Map<const Vector>(m.weights.data(), m.weights.size()), m.bias;
  return v;
}

AffineModel unflatten(const Vector& v, Eigen::Index out, Eigen::Index in) {
  return AffineModel(Eigen::Map<const Matrix>(v.data(), out, in), v.tail(out));
}

void check_gradient(const std::function<ObjectiveValue(const AffineModel&)>& f, const AffineModel& at) {
  const ObjectiveValue g = f(at);
  AffineModel shape(g.grad_weights, g.grad_bias);
  const Vector analytic = flatten(shape);
  const Vector numeric = oracle::central_difference(
      [&](const Vector& v) { return f(unflatten(v, at.out_dim(), at.in_dim())).value; }, flatten(at), 1e-5);
  const double rel = (analytic - numeric).norm() / std::max(1e-8, numeric.norm());
  CHECK(rel < 1e-4);
}

std::vector<Domain> blobs(std::uint64_t seed, int k, double spread, int per_class, double radius) {
  SyntheticOfficeParams p;
  p.num_classes = k;
  p.points_per_class = per_class;
  p.class_radius = radius;
  p.domains = {{"train", 0.0, spread}, {"test", 0.0, spread}};
  p.seed = seed;
  return make_synthetic_domains(p);
}

}  // namespace

TEST_CASE("train config defaults and validation") {
  const auto r = TrainConfig::risk_mode();
  CHECK(r.epochs == 10);
  CHECK(r.learning_rate == 0.05);
  const auto a = TrainConfig::accuracy_mode();
  CHECK(a.epochs == 100);
  CHECK(a.plateau_stop);
  CHECK(a.plateau_patience == 10);
  TrainConfig bad;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad.epochs = 3;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("random init is seeded and bounded") {
  const auto a = random_affine_init(3, 4, 9);
  const auto b = random_affine_init(3, 4, 9);
  CHECK(a.weights == b.weights);
  CHECK(a.weights.cwiseAbs().maxCoeff() < 0.1);
  CHECK(a.bias.isZero());
}

TEST_CASE("output risk: a map that already matches has zero risk") {
  Rng rng(1);
  const Matrix x = rng.normal_matrix(40, 1);
  const AffineModel f(Matrix::Constant(1, 1, 1.7), Vector::Constant(1, -0.2));
  const OutputRiskProblem prob{x, Vector::Constant(40, 1.0 / 40), EmpiricalDistribution::uniform(f.apply_rows(x))};
  OtConfig ot;
  const auto r = minimize_output_risk(f, HeadKind::affine, prob, ot, TrainConfig::risk_mode());
  CHECK(r.risk == doctest::Approx(0.0).scale(1.0));
  CHECK(r.trace.epochs_run == 10);
  CHECK(r.trace.objective.size() == 10);
}

TEST_CASE("output risk: ten epochs get close to the grid optimum") {
  const auto sp = scalar_problem(3);
  // exhaustive 100 x 100 grid over (w, b)
  double grid_best = std::numeric_limits<double>::infinity();
  const auto xs = col(sp.x), ys = col(sp.labels);
  for (int i = 0; i < 100; ++i) {
    for (int j = 0; j < 100; ++j) {
      const double w = -4.0 + 8.0 * i / 99.0, b = -4.0 + 8.0 * j / 99.0;
      std::vector<double> pred(xs.size());
      for (std::size_t n = 0; n < xs.size(); ++n) pred[n] = w * xs[n] + b;
      grid_best = std::min(grid_best, oracle::wpp_sorted_equal_size(pred, ys, 1.0));
    }
  }
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.learning_rate = 0.5;
  const auto init = random_affine_init(1, 1, 5);
  const auto r = minimize_output_risk(init, HeadKind::affine, sp.problem(), OtConfig{}, cfg);
  MESSAGE("grid optimum " << grid_best << ", trained " << r.risk << ", initial " << r.trace.initial_objective);
  CHECK(r.risk <= 1.1 * grid_best);
  CHECK(r.risk <= r.trace.initial_objective);
}

TEST_CASE("output risk: a larger budget never does worse") {
  const auto sp = scalar_problem(4);
  const auto init = random_affine_init(1, 1, 6);
  TrainConfig ten;
  ten.epochs = 10;
  TrainConfig fifty = ten;
  fifty.epochs = 50;
  const auto r10 = minimize_output_risk(init, HeadKind::affine, sp.problem(), OtConfig{}, ten);
  const auto r50 = minimize_output_risk(init, HeadKind::affine, sp.problem(), OtConfig{}, fifty);
  CHECK(r50.risk <= r10.risk + 1e-9);
  CHECK(r50.trace.epochs_run == 50);
  // same trace prefix: deterministic, full batch
  for (std::size_t e = 0; e < 10; ++e) CHECK(r50.trace.objective[e] == r10.trace.objective[e]);
}

TEST_CASE("output risk: vector head through the sinkhorn surrogate") {
  Rng rng(8);
  const Matrix x = rng.normal_matrix(30, 2);
  std::vector<int> labels;
  for (int i = 0; i < 30; ++i) labels.push_back(x(i, 0) > 0 ? 1 : 0);
  const OutputRiskProblem prob{x, Vector::Constant(30, 1.0 / 30), EmpiricalDistribution::uniform(one_hot(labels, 2))};
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.learning_rate = 0.5;
  const auto r = minimize_output_risk(random_affine_init(2, 2, 1), HeadKind::affine_softmax, prob, OtConfig{}, cfg);
  CHECK(r.risk < r.trace.initial_objective);
  CHECK_THROWS_AS(r.best_map(), InvalidArgument);
}

TEST_CASE("output risk: divergence carries the trace") {
  const auto sp = scalar_problem(5);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.learning_rate = 1e3;
  OtConfig p2;
  p2.order = 2.0;
  try {
    minimize_output_risk(random_affine_init(1, 1, 1), HeadKind::affine, sp.problem(), p2, cfg);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.trace().epochs_run >= 1);
    CHECK(e.trace().epochs_run < 200);
  }
}

TEST_CASE("gradients match central differences") {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    // cross entropy, 3 classes in 2-D
    const Matrix f = rng.normal_matrix(25, 2);
    std::vector<int> y;
    for (int i = 0; i < 25; ++i) y.push_back(static_cast<int>(rng.index(3)));
    const AffineModel at(rng.normal_matrix(3, 2), rng.normal_vector(3));
    check_gradient([&](const AffineModel& m) { return cross_entropy_objective(m, f, y); }, at);

    // entropic OT through a softmax head
    const Matrix z = rng.normal_matrix(12, 2);
    const Vector zw = Vector::Constant(12, 1.0 / 12);
    std::vector<int> lab;
    for (int i = 0; i < 10; ++i) lab.push_back(static_cast<int>(rng.index(3)));
    const auto proxy = EmpiricalDistribution::uniform(one_hot(lab, 3));
    const AffineModel h(rng.normal_matrix(3, 2), rng.normal_vector(3));
    check_gradient(
        [&](const AffineModel& m) {
          return sinkhorn_objective(m, HeadKind::affine_softmax, z, zw, proxy, 1.0, 0.05, 1e-12, 100000);
        },
        h);

    // quantile objective, p = 2 (smooth away from ties)
    const Matrix z1 = rng.normal_matrix(15, 2);
    const auto proxy1 = EmpiricalDistribution::uniform(rng.normal_matrix(15, 1));
    const AffineModel s(rng.normal_matrix(1, 2), rng.normal_vector(1));
    check_gradient([&](const AffineModel& m) { return quantile_w_objective(m, z1, Vector::Constant(15, 1.0 / 15), proxy1, 2.0); },
                   s);
  }
}

TEST_CASE("classifier: separable blobs") {
  const auto d = blobs(1, 2, 0.4, 60, 2.0);
  std::vector<int> pm;
  for (int l : d[0].labels) pm.push_back(l == 0 ? -1 : 1);
  REQUIRE(oracle::perceptron_separates(d[0].features, pm));
  const auto r = train_classifier(random_affine_init(2, 2, 1), d[0].features, d[0].labels, d[1].features, d[1].labels,
                                  TrainConfig::accuracy_mode());
  CHECK(r.accuracy >= 0.95);
  CHECK(r.trace.objective.back() < r.trace.initial_objective);
}

TEST_CASE("classifier: shuffled labels stay at chance") {
  const auto d = blobs(2, 2, 1.0, 200, 2.0);
  Rng rng(3);
  std::vector<int> noise_train, noise_test;
  for (std::size_t i = 0; i < d[0].labels.size(); ++i) noise_train.push_back(static_cast<int>(rng.index(2)));
  for (std::size_t i = 0; i < d[1].labels.size(); ++i) noise_test.push_back(static_cast<int>(rng.index(2)));
  const auto r = train_classifier(random_affine_init(2, 2, 1), d[0].features, noise_train, d[1].features, noise_test,
                                  TrainConfig::accuracy_mode());
  CHECK(std::abs(r.accuracy - 0.5) <= 0.1);
}

TEST_CASE("classifier: overlapping blobs match a logistic regression reference") {
  const auto d = blobs(4, 3, 1.3, 80, 2.0);
  TrainConfig cfg;
  cfg.epochs = 500;
  cfg.learning_rate = 0.5;
  const auto r = train_classifier(random_affine_init(2, 3, 2), d[0].features, d[0].labels, d[1].features, d[1].labels,
                                  cfg);
  const auto ref = oracle::irls_multinomial_predict(d[0].features, d[0].labels, 3, d[1].features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) hits += ref[i] == d[1].labels[i];
  const double ref_acc = static_cast<double>(hits) / static_cast<double>(ref.size());
  MESSAGE("gradient descent " << r.accuracy << ", reference " << ref_acc);
  CHECK(std::abs(r.accuracy - ref_acc) <= 0.05);
}

TEST_CASE("classifier: errors, plateau stop and determinism") {
  const auto d = blobs(5, 2, 0.5, 20, 2.0);
  std::vector<int> one(d[0].labels.size(), 0);
  CHECK_THROWS_AS(train_classifier(random_affine_init(2, 2, 1), d[0].features, one, d[1].features, d[1].labels,
                                   TrainConfig::accuracy_mode()),
                  InvalidArgument);
  std::vector<int> bad = d[0].labels;
  bad[0] = 7;
  CHECK_THROWS_AS(train_classifier(random_affine_init(2, 2, 1), d[0].features, bad, d[1].features, d[1].labels,
                                   TrainConfig::accuracy_mode()),
                  InvalidArgument);

  TrainConfig plateau;
  plateau.epochs = 1000;
  plateau.learning_rate = 1e-9;  // no measurable progress
  plateau.plateau_stop = true;
  plateau.plateau_patience = 7;
  plateau.plateau_tolerance = 1e-6;
  const auto stalled = train_classifier(random_affine_init(2, 2, 1), d[0].features, d[0].labels, d[1].features,
                                        d[1].labels, plateau);
  CHECK(stalled.trace.epochs_run == 7);

  const auto a = train_classifier(random_affine_init(2, 2, 3), d[0].features, d[0].labels, d[1].features, d[1].labels,
                                  TrainConfig::accuracy_mode());
  const auto b = train_classifier(random_affine_init(2, 2, 3), d[0].features, d[0].labels, d[1].features, d[1].labels,
                                  TrainConfig::accuracy_mode());
  CHECK(a.trace.objective == b.trace.objective);
  CHECK(a.model.weights == b.model.weights);
  CHECK(a.trace.epochs_run <= 100);
}

TEST_CASE("the label-law proxy bounds the true output risk") {
  Rng rng(13);
  for (int t = 0; t < 100; ++t) {
    lab::RandomInstanceParams p;
    p.x_dim = 2;
    const auto s = lab::random_task(p, lab::Role::source, rng);
    const auto g = lab::random_task(p, lab::Role::target, rng);
    const auto laws = lab::basic_case_laws(s, g);
    const Gaussian1D p_st(laws.st_mean, laws.st_variance);
    const Gaussian1D p_t(laws.t_mean, laws.t_variance);
    const Gaussian1D law_y(g.joint.mu_y()(0), g.joint.sigma_yy()(0, 0));
    // p = 2
    CHECK(2.0 * (gaussian_w2(p_st, law_y) + gaussian_w2(p_t, law_y)) >= gaussian_w2(p_st, p_t) - 1e-12);
    // p = 1
    CHECK(gaussian_w1_1d(p_st, law_y) + gaussian_w1_1d(p_t, law_y) >= gaussian_w1_1d(p_st, p_t) - 1e-12);
  }
}

TEST_CASE("risk-accuracy table on small synthetic domains") {
  SyntheticOfficeParams params;
  params.points_per_class = 16;
  params.seed = 3;
  const auto domains = make_synthetic_domains(params);
  PairEvaluationConfig cfg;
  cfg.seed = 3;
  cfg.source_training.epochs = 60;
  const auto combiner = RiskCombiner::polynomial(0.31, 0.92, 2.0);
  const auto rows = evaluate_risk_accuracy_pairs(domains, combiner, cfg);
  REQUIRE(rows.size() == 6);
  for (const auto& r : rows) {
    CHECK(r.source != r.target);
    CHECK(r.transfer_risk == doctest::Approx(combine(combiner, r.input_risk, r.output_risk)).epsilon(1e-12));
    CHECK(r.accuracy >= 0.0);
    CHECK(r.accuracy <= 1.0);
  }

  // an exact copy of a domain: zero input risk and the best accuracy in the table
  std::vector<Domain> with_copy = {domains[1], domains[1], domains[0]};
  with_copy[1].name = "D_copy";
  const auto copy_rows = evaluate_risk_accuracy_pairs(with_copy, combiner, cfg);
  REQUIRE(copy_rows.size() == 6);
  double best_acc = 0.0;
  for (const auto& r : copy_rows) best_acc = std::max(best_acc, r.accuracy);
  for (const auto& r : copy_rows) {
    if ((r.source == "D" && r.target == "D_copy") || (r.source == "D_copy" && r.target == "D")) {
      CHECK(r.input_risk == doctest::Approx(0.0).scale(1.0));
      CHECK(r.accuracy == best_acc);
    }
  }
  CHECK_THROWS_AS(evaluate_risk_accuracy_pairs({domains[0]}, combiner, cfg), InvalidArgument);
}
