#include <doctest.h>

#include "oracles.hpp"
#include "trk/errors.hpp"
#include "trk/rng.hpp"
#include "trk/transfer_core.hpp"

using namespace trk;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

DivergenceConfig w_order(double p) {
  DivergenceConfig c;
  c.ot.order = p;
  return c;
}

TransferRiskConfig gaussian_cfg() { return {w_order(2.0), w_order(2.0)}; }

TransportPair affine_pair(const AffineModel& head) { return TransportPair::plain(TransportMap::affine(head)); }

std::vector<double> column(const Matrix& m, Eigen::Index c) {
  return std::vector<double>(m.col(c).data(), m.col(c).data() + m.rows());
}

}  // namespace

TEST_CASE("input risk basics") {
  Rng rng(1);
  const auto cloud = EmpiricalDistribution::uniform(rng.normal_matrix(15, 2));
  CHECK(input_risk(TransportMap::identity(2), cloud, cloud) == doctest::Approx(0.0).scale(1.0));

  const GaussianND xt(vec({0}), Matrix::Identity(1, 1));
  const GaussianND xs(vec({1}), Matrix::Identity(1, 1));
  CHECK(input_risk(TransportMap::identity(1), xt, xs, w_order(2.0)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(input_risk(TransportMap::identity(1), xt, xs, w_order(1.0)) == doctest::Approx(1.0).epsilon(1e-12));
  DivergenceConfig kl;
  kl.kind = DivergenceKind::kl;
  CHECK(input_risk(TransportMap::identity(1), xt, xs, kl) == doctest::Approx(0.5));
  CHECK(input_risk(TransportMap::identity(1), xt, xt, kl) == doctest::Approx(0.0));
  CHECK_THROWS_AS(input_risk(TransportMap::identity(2), cloud, cloud, kl), InvalidArgument);
  CHECK_THROWS_AS(input_risk(TransportMap::identity(1), xt, cloud), DimensionMismatch);
}

TEST_CASE("input risk through an affine map matches an assignment oracle") {
  Rng rng(7);
  for (int t = 0; t < 5; ++t) {
    const Matrix xt = rng.normal_matrix(20, 2);
    const Matrix xs = rng.normal_matrix(20, 2) * 1.5;
    const AffineModel map(rng.normal_matrix(2, 2), rng.normal_vector(2));
    const double got = input_risk(TransportMap::affine(map), EmpiricalDistribution::uniform(xt),
                                  EmpiricalDistribution::uniform(xs));
    const auto pushed = EmpiricalDistribution::uniform(map.apply_rows(xt));
    const double expect = oracle::assignment_hungarian(cost_matrix(pushed, EmpiricalDistribution::uniform(xs), 1.0));
    CHECK(got == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("output risk w") {
  Rng rng(9);
  const Matrix x = rng.normal_matrix(30, 2);
  const auto law_xt = EmpiricalDistribution::uniform(x);
  const AffineModel head(Matrix::Constant(1, 2, 0.7), vec({0.1}));
  const auto pair = affine_pair(head);

  const auto exact_target = EmpiricalDistribution::uniform(head.apply_rows(x));
  CHECK(output_risk_w(pair, law_xt, exact_target) == doctest::Approx(0.0).scale(1.0));

  const Matrix labels = rng.normal_matrix(30, 1);
  const double got = output_risk_w(pair, law_xt, EmpiricalDistribution::uniform(labels));
  const double expect = oracle::wpp_sorted_equal_size(column(head.apply_rows(x), 0), column(labels, 0), 1.0);
  CHECK(got == doctest::Approx(expect).epsilon(1e-12));
  const double via_lp =
      oracle::assignment_hungarian(cost_matrix(exact_target, EmpiricalDistribution::uniform(labels), 1.0));
  CHECK(got == doctest::Approx(via_lp).epsilon(1e-9));

  OtConfig p2;
  p2.order = 2.0;
  const double got2 = output_risk_w(pair, law_xt, EmpiricalDistribution::uniform(labels), p2);
  CHECK(got2 == doctest::Approx(oracle::wpp_sorted_equal_size(column(head.apply_rows(x), 0), column(labels, 0), 2.0))
                     .epsilon(1e-12));

  // gaussian inputs with a gaussian target: closed form
  const GaussianND gx(vec({0, 0}), Matrix::Identity(2, 2));
  const GaussianND gt(vec({0.1}), Matrix::Constant(1, 1, 0.98));
  CHECK(output_risk_w(pair, gx, gt, p2) == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("output risk kl") {
  const Gaussian1D a(0.3, 1.4), b(-0.2, 0.6);
  CHECK(output_risk_kl(a, a) == doctest::Approx(0.0));
  CHECK(output_risk_kl(a, b) == doctest::Approx(gaussian_kl(b, a)).epsilon(1e-15));

  const DiscreteDistribution p_st({0.9, 0.1});
  const DiscreteDistribution p_t({0.5, 0.5});
  const double expect = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
  CHECK(output_risk_kl(p_st, p_t, 0.0) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(output_risk_kl(p_t, p_t) == doctest::Approx(0.0));

  const DiscreteDistribution point({1.0, 0.0});
  CHECK_THROWS_AS(output_risk_kl(point, p_t, 0.0), SingularPartUnsupported);
  const double smoothed = output_risk_kl(point, p_t);
  CHECK(std::isfinite(smoothed));
  CHECK(smoothed > 0.0);
  CHECK_THROWS_AS(DiscreteDistribution({0.5, 0.6}), InvalidArgument);
}

TEST_CASE("combiner: table values, origin, validation, monotonicity") {
  const auto published = RiskCombiner::polynomial(0.31, 0.92, 2.0);
  CHECK(combine(published, 0.181, 0.428) == doctest::Approx(0.224).epsilon(0.001 / 0.224));
  CHECK(std::abs(combine(published, 0.148, 0.084) - 0.052) <= 0.001);
  CHECK(combine(published, 0, 0) == 0.0);
  CHECK(combine(RiskCombiner::linear(3.0), 0, 0) == 0.0);
  CHECK_THROWS_AS(combine(published, -0.1, 0.2), InvalidArgument);
  CHECK_THROWS_AS(combine(published, 0.1, std::nan("")), InvalidArgument);
  CHECK_THROWS_AS(RiskCombiner::linear(-1.0), InvalidArgument);
  CHECK_THROWS_AS(RiskCombiner::polynomial(0.3, 0.9, 0.5), InvalidArgument);
  CHECK_THROWS_AS(RiskCombiner::polynomial(-0.3, 0.9, 2.0), InvalidArgument);

  Rng rng(4);
  for (int t = 0; t < 500; ++t) {
    const auto c = t % 2 ? RiskCombiner::linear(rng.uniform(0, 3))
                         : RiskCombiner::polynomial(rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(1, 3));
    const double ei = rng.uniform(0, 2), eo = rng.uniform(0, 2), d = rng.uniform(0, 1);
    CHECK(combine(c, ei, eo + d) >= combine(c, ei, eo));
    CHECK(combine(c, ei + d, eo) >= combine(c, ei, eo));
  }
}

TEST_CASE("transfer risk over finite candidate sets") {
  Rng rng(12);
  const GaussianND law_x(vec({0.2, -0.1}), Matrix::Identity(2, 2));
  const AffineModel truth(Matrix::Constant(1, 2, 0.5), vec({0.3}));
  const GaussianND p_t = law_x.affine_pushforward(truth.weights, truth.bias);
  const auto combiner = RiskCombiner::linear(1.0);

  CHECK_THROWS_AS(transfer_risk({}, law_x, law_x, p_t, combiner, gaussian_cfg()), InvalidArgument);

  const AffineModel off(Matrix::Constant(1, 2, -0.4), vec({1.0}));
  const auto single = transfer_risk({affine_pair(off)}, law_x, law_x, p_t, combiner, gaussian_cfg());
  CHECK(single.index == 0);
  CHECK(single.best.output_risk > 0.0);
  CHECK_FALSE(single.best.approximation);

  const auto two = transfer_risk({affine_pair(off), affine_pair(truth)}, law_x, law_x, p_t, combiner, gaussian_cfg());
  CHECK(two.index == 1);
  CHECK(two.best.combined == doctest::Approx(combine(combiner, two.best.input_risk, 0.0)).scale(1.0));
  CHECK(two.best.combined == doctest::Approx(0.0).scale(1.0));

  // duplicate candidates: the lower index wins
  const auto tie = transfer_risk({affine_pair(off), affine_pair(off)}, law_x, law_x, p_t, combiner, gaussian_cfg());
  CHECK(tie.index == 0);

  for (int t = 0; t < 20; ++t) {
    std::vector<TransportPair> cands;
    for (int k = 0; k < 5; ++k) cands.push_back(affine_pair(AffineModel(rng.normal_matrix(1, 2), rng.normal_vector(1))));
    const auto poly = RiskCombiner::polynomial(0.31, 0.92, 2.0);
    const auto r = transfer_risk(cands, law_x, law_x, p_t, poly, gaussian_cfg());
    std::size_t best = 0;
    double best_val = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < cands.size(); ++k) {
      const auto aff = *cands[k].as_affine();
      const auto p_st = law_x.affine_pushforward(aff.weights, aff.bias);
      const double eo = (p_st.mean() - p_t.mean()).squaredNorm() +
                        std::pow(std::sqrt(p_st.cov()(0, 0)) - std::sqrt(p_t.cov()(0, 0)), 2);
      const double c = 0.92 * eo * eo;  // identity T^X on equal laws: E^I = 0
      if (c < best_val) {
        best_val = c;
        best = k;
      }
      CHECK(r.reports[k].combined == doctest::Approx(c).epsilon(1e-9));
      CHECK(r.reports[k].combined == doctest::Approx(combine(poly, r.reports[k].input_risk, r.reports[k].output_risk))
                                         .epsilon(1e-12));
    }
    CHECK(r.index == best);
  }
}

TEST_CASE("argmin invariance and the zero-risk degenerate case") {
  Rng rng(5);
  const Matrix xt = rng.normal_matrix(25, 1);
  const Matrix xs = rng.normal_matrix(25, 1) + Matrix::Constant(25, 1, 0.4);
  const auto law_xt = EmpiricalDistribution::uniform(xt);
  const auto law_xs = EmpiricalDistribution::uniform(xs);
  const auto proxy = EmpiricalDistribution::uniform(rng.normal_matrix(25, 1));
  std::vector<TransportPair> cands;
  for (int k = 0; k < 6; ++k) cands.push_back(affine_pair(AffineModel(rng.normal_matrix(1, 1), rng.normal_vector(1))));
  const auto r = transfer_risk(cands, law_xt, law_xs, proxy, RiskCombiner::polynomial(0.7, 1.3, 2.0));
  CHECK(r.best.approximation);
  std::size_t by_eo = 0;
  for (std::size_t k = 1; k < cands.size(); ++k)
    if (r.reports[k].output_risk < r.reports[by_eo].output_risk) by_eo = k;
  CHECK(r.index == by_eo);

  // source = target with identity maps
  const AffineModel f(Matrix::Constant(1, 1, 1.2), vec({-0.3}));
  const auto law_y = EmpiricalDistribution::uniform(f.apply_rows(xt));
  const auto zero = transfer_risk({affine_pair(f)}, law_xt, law_xt, law_y, RiskCombiner::linear(2.0));
  CHECK(zero.best.combined == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("talagrand instance: W2^2 <= 2 KL against a standard normal") {
  Rng rng(17);
  const Gaussian1D p_st(0.0, 1.0);
  OtConfig p2;
  p2.order = 2.0;
  for (int t = 0; t < 200; ++t) {
    const Gaussian1D p_t(rng.uniform(-3, 3), rng.uniform(0.05, 5));
    const double w = output_risk_w(p_st.to_nd(), p_t.to_nd(), p2);
    const double kl = output_risk_kl(p_st, p_t);
    CHECK(w <= 2.0 * kl + 1e-12);
  }
}

TEST_CASE("task distance") {
  Rng rng(3);
  const auto law = EmpiricalDistribution::uniform(rng.normal_matrix(12, 2));
  const auto eval = EmpiricalDistribution::uniform(rng.normal_matrix(30, 2));
  const AffineModel f(rng.normal_matrix(2, 2), rng.normal_vector(2));
  const TaskView s{law, TransportMap::affine(f)};
  CHECK(task_distance(s, s, 5.0, eval) == doctest::Approx(0.0).scale(1.0));

  const Vector c = vec({0.3, 0.4});
  const TaskView shifted{law, TransportMap::affine(AffineModel(f.weights, f.bias + c))};
  CHECK(task_distance(s, shifted, 5.0, eval) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(task_distance(s, shifted, 0.2, eval) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK_THROWS_AS(task_distance(s, shifted, 0.0, eval), InvalidArgument);

  for (int t = 0; t < 30; ++t) {
    std::vector<TaskView> v;
    for (int k = 0; k < 3; ++k)
      v.push_back({EmpiricalDistribution::uniform(rng.normal_matrix(8, 2)),
                   TransportMap::affine(AffineModel(rng.normal_matrix(2, 2), rng.normal_vector(2)))});
    const double ab = task_distance(v[0], v[1], 2.0, eval);
    const double bc = task_distance(v[1], v[2], 2.0, eval);
    const double ac = task_distance(v[0], v[2], 2.0, eval);
    CHECK(ab >= 0.0);
    CHECK(ab == doctest::Approx(task_distance(v[1], v[0], 2.0, eval)).epsilon(1e-9));
    CHECK(ac <= ab + bc + 1e-9);
  }
}

TEST_CASE("bregman divergence of the half squared norm") {
  const auto phi = parse_bregman_generator("half_squared_norm");
  CHECK(bregman(phi, vec({1, 2}), vec({1, 2})) == 0.0);
  CHECK(bregman(phi, vec({1, 0}), vec({0, 0})) == doctest::Approx(0.5));
  CHECK(bregman(phi, vec({3, 4}), vec({0, 0})) == doctest::Approx(12.5));
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const Vector u = rng.normal_vector(4), v = rng.normal_vector(4);
    CHECK(bregman(phi, u, v) == doctest::Approx(0.5 * (u - v).squaredNorm()).epsilon(1e-12));
  }
  CHECK_THROWS_AS(parse_bregman_generator("negative_entropy"), InvalidArgument);
  CHECK_THROWS_AS(bregman(phi, vec({1}), vec({1, 2})), DimensionMismatch);
}

TEST_CASE("cross entropy sandwich") {
  const DiscreteDistribution half({0.5, 0.5});
  const auto s = cross_entropy_sandwich(half, DiscreteDistribution({0.2, 0.8}), DiscreteDistribution({0.2, 0.8}));
  CHECK(s.center == doctest::Approx(0.0).scale(1.0));
  CHECK(s.lower == doctest::Approx(-1.386).epsilon(1e-3));
  CHECK(s.upper == doctest::Approx(1.386).epsilon(1e-3));
  CHECK(s.lower == doctest::Approx(2 * std::log(0.5)).epsilon(1e-14));

  Rng rng(6);
  auto random_pmf = [&](std::size_t k) {
    std::vector<double> p(k);
    double sum = 0;
    for (auto& x : p) sum += (x = rng.uniform(0.01, 1.0));
    for (auto& x : p) x /= sum;
    return DiscreteDistribution(p);
  };
  for (int t = 0; t < 100; ++t) {
    const auto a = random_pmf(4), b = random_pmf(4), c = random_pmf(4);
    const auto r = cross_entropy_sandwich(a, b, c);
    double center = 0;
    for (int i = 0; i < 4; ++i) center += (b.probs[i] - c.probs[i]) * std::log(a.probs[i]);
    CHECK(r.center == doctest::Approx(center).epsilon(1e-12));
    CHECK(r.lower <= r.center);
    CHECK(r.center <= r.upper);
  }
  CHECK_THROWS_AS(cross_entropy_sandwich(DiscreteDistribution({1.0, 0.0}), half, half), InvalidArgument);
  CHECK_NOTHROW(cross_entropy_sandwich(DiscreteDistribution({1.0, 0.0}), half, half, 1e-6));
}

TEST_CASE("continuity in the source law") {
  Rng rng(10);
  const Matrix xt = rng.normal_matrix(40, 1);
  const Matrix xs = rng.normal_matrix(40, 1);
  const auto law_xt = EmpiricalDistribution::uniform(xt);
  const auto proxy = EmpiricalDistribution::uniform(rng.normal_matrix(40, 1));
  const auto pair = affine_pair(AffineModel(Matrix::Constant(1, 1, 0.8), vec({0.1})));
  const auto combiner = RiskCombiner::polynomial(0.31, 0.92, 2.0);
  const double base = transfer_risk({pair}, law_xt, EmpiricalDistribution::uniform(xs), proxy, combiner).best.combined;
  double prev = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 10; ++k) {
    const double delta = std::ldexp(1.0, -k);
    const auto shifted = EmpiricalDistribution::uniform(xs).translated(Vector::Constant(1, delta));
    const double dev = std::abs(transfer_risk({pair}, law_xt, shifted, proxy, combiner).best.combined - base);
    CHECK(dev <= 0.31 * delta + 1e-12);  // W1 moves by at most delta
    CHECK(dev <= prev + 1e-12);
    prev = dev;
  }
}
