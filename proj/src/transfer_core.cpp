#include "trk/transfer_core.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "trk/errors.hpp"

namespace trk {

namespace {

constexpr double kProbabilitySumTolerance = 1e-9;

// W_p(a, b)^p for any pairing of laws we can evaluate exactly.
double wasserstein_pp(const Law& a, const Law& b, const OtConfig& cfg) {
  cfg.validate();
  const double p = cfg.order;
  if (law_dim(a) != law_dim(b))
    throw DimensionMismatch("wasserstein: dimensions " + std::to_string(law_dim(a)) + " and " +
                            std::to_string(law_dim(b)));
  const auto* ea = std::get_if<EmpiricalDistribution>(&a);
  const auto* eb = std::get_if<EmpiricalDistribution>(&b);
  const auto* ga = std::get_if<GaussianND>(&a);
  const auto* gb = std::get_if<GaussianND>(&b);
  if (ea && eb) return std::pow(wasserstein(*ea, *eb, cfg).distance, p);
  if (ga && gb) {
    if (p == 2.0) return gaussian_w2(*ga, *gb);
    if (p == 1.0 && ga->dim() == 1) return gaussian_w1_1d(Gaussian1D::from_nd(*ga), Gaussian1D::from_nd(*gb));
    throw InvalidArgument("closed-form gaussian Wasserstein needs p = 2 (or p = 1 in one dimension)");
  }
  const GaussianND& g = ga ? *ga : *gb;
  const EmpiricalDistribution& e = ea ? *ea : *eb;
  if (g.dim() == 1 && (p == 1.0 || p == 2.0))
    return wasserstein_pp_gaussian_empirical_1d(Gaussian1D::from_nd(g), e, p);
  throw InvalidArgument("gaussian-to-empirical Wasserstein is only supported in one dimension with p = 1 or 2");
}

void require_nonnegative(double v, const char* what) {
  if (!std::isfinite(v) || v < 0.0) throw InvalidArgument(std::string(what) + " must be finite and >= 0");
}

}  // namespace

std::string to_string(DivergenceKind k) { return k == DivergenceKind::kl ? "kl" : "wasserstein"; }

DivergenceKind parse_divergence(const std::string& s) {
  if (s == "kl") return DivergenceKind::kl;
  if (s == "wasserstein") return DivergenceKind::wasserstein;
  throw InvalidArgument("unknown divergence '" + s + "'");
}

DiscreteDistribution::DiscreteDistribution(std::vector<double> p) : probs(std::move(p)) {
  if (probs.empty()) throw InvalidArgument("discrete distribution needs at least one class");
  double total = 0.0;
  for (double v : probs) {
    if (!std::isfinite(v) || v < 0.0) throw InvalidArgument("discrete probabilities must be finite and >= 0");
    total += v;
  }
  if (std::abs(total - 1.0) > kProbabilitySumTolerance)
    throw InvalidArgument("discrete probabilities sum to " + std::to_string(total));
}

DiscreteDistribution smooth(const DiscreteDistribution& d, double eps) {
  if (!(eps >= 0.0)) throw InvalidArgument("smoothing must be >= 0");
  if (eps == 0.0) return d;
  const double denom = 1.0 + eps * static_cast<double>(d.size());
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = (d.probs[i] + eps) / denom;
  return DiscreteDistribution(std::move(out));
}

double input_risk(const TransportMap& t_x, const Law& law_xt, const Law& law_xs, const DivergenceConfig& cfg) {
  const Law pushed = pushforward(t_x, law_xt);
  if (law_dim(pushed) != law_dim(law_xs))
    throw DimensionMismatch("input transport map lands in dimension " + std::to_string(law_dim(pushed)) +
                            " but the source input space has dimension " + std::to_string(law_dim(law_xs)));
  if (cfg.kind == DivergenceKind::kl) {
    const auto* gp = std::get_if<GaussianND>(&pushed);
    const auto* gs = std::get_if<GaussianND>(&law_xs);
    if (!gp || !gs) throw InvalidArgument("KL input risk needs closed-form gaussian laws");
    return gaussian_kl(*gp, *gs);
  }
  const double pp = wasserstein_pp(pushed, law_xs, cfg.ot);
  return cfg.ot.order == 1.0 ? pp : std::pow(pp, 1.0 / cfg.ot.order);
}

double output_risk_w(const Law& p_st, const Law& p_t, const OtConfig& cfg) { return wasserstein_pp(p_st, p_t, cfg); }

double output_risk_w(const TransportPair& f_st, const Law& law_xt, const Law& target, const OtConfig& cfg) {
  const Law p_st = pushforward(f_st, law_xt);
  if (law_dim(p_st) != law_dim(target))
    throw DimensionMismatch("intermediate model outputs dimension " + std::to_string(law_dim(p_st)) +
                            " but the target output has dimension " + std::to_string(law_dim(target)));
  return wasserstein_pp(p_st, target, cfg);
}

double output_risk_kl(const Gaussian1D& p_st, const Gaussian1D& p_t) { return gaussian_kl(p_t, p_st); }

double output_risk_kl(const GaussianND& p_st, const GaussianND& p_t) { return gaussian_kl(p_t, p_st); }

double output_risk_kl(const DiscreteDistribution& p_st, const DiscreteDistribution& p_t, double smoothing) {
  if (p_st.size() != p_t.size()) throw DimensionMismatch("discrete KL: class counts differ");
  const DiscreteDistribution q = smooth(p_st, smoothing);
  const DiscreteDistribution p = smooth(p_t, smoothing);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.probs[i] == 0.0) continue;
    if (q.probs[i] == 0.0)
      throw SingularPartUnsupported("P_T has mass on class " + std::to_string(i) +
                                    " where P_ST has none; use smoothing > 0");
    kl += p.probs[i] * std::log(p.probs[i] / q.probs[i]);
  }
  return std::max(0.0, kl);
}

RiskCombiner RiskCombiner::linear(double lambda) {
  if (!std::isfinite(lambda) || lambda < 0.0) throw InvalidArgument("linear combiner needs lambda >= 0");
  return RiskCombiner(Linear{lambda});
}

RiskCombiner RiskCombiner::polynomial(double c_i, double c_o, double power) {
  if (!std::isfinite(c_i) || !std::isfinite(c_o) || c_i < 0.0 || c_o < 0.0)
    throw InvalidArgument("polynomial combiner needs c_i, c_o >= 0");
  if (!std::isfinite(power) || power < 1.0) throw InvalidArgument("polynomial combiner needs power >= 1");
  return RiskCombiner(Polynomial{c_i, c_o, power});
}

double RiskCombiner::operator()(double e_i, double e_o) const {
  require_nonnegative(e_i, "input risk");
  require_nonnegative(e_o, "output risk");
  if (const auto* lin = std::get_if<Linear>(&repr_)) return e_o + lin->lambda * e_i;
  const auto& poly = std::get<Polynomial>(repr_);
  const double eo_pow = poly.power == 2.0 ? e_o * e_o : (poly.power == 1.0 ? e_o : std::pow(e_o, poly.power));
  return poly.c_i * e_i + poly.c_o * eo_pow;
}

std::string RiskCombiner::tag() const { return std::holds_alternative<Linear>(repr_) ? "linear" : "polynomial"; }

double combine(const RiskCombiner& combiner, double e_i, double e_o) { return combiner(e_i, e_o); }

TransferRiskResult transfer_risk(const std::vector<TransportPair>& candidates, const Law& law_xt, const Law& law_xs,
                                 const Law& target_out, const RiskCombiner& combiner, const TransferRiskConfig& cfg) {
  if (candidates.empty()) throw InvalidArgument("transfer_risk: empty candidate set");
  const bool proxy = std::holds_alternative<EmpiricalDistribution>(target_out);
  TransferRiskResult result;
  result.reports.reserve(candidates.size());
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const TransportPair& cand = candidates[k];
    RiskReport r;
    r.input_risk = input_risk(cand.input_map(), law_xt, law_xs, cfg.input);
    if (cfg.output.kind == DivergenceKind::kl) {
      const Law p_st = pushforward(cand, law_xt);
      const auto* g_st = std::get_if<GaussianND>(&p_st);
      const auto* g_t = std::get_if<GaussianND>(&target_out);
      if (!g_st || !g_t) throw InvalidArgument("KL output risk needs closed-form gaussian P_ST and P_T");
      r.output_risk = output_risk_kl(*g_st, *g_t);
    } else {
      r.output_risk = output_risk_w(cand, law_xt, target_out, cfg.output.ot);
    }
    r.combined = combiner(r.input_risk, r.output_risk);
    r.combiner = combiner.tag();
    r.divergence = cfg.output.kind;
    r.approximation = proxy;
    if (k == 0 || r.combined < result.best.combined) {
      result.best = r;
      result.index = k;
    }
    result.reports.push_back(std::move(r));
  }
  return result;
}

double task_distance(const TaskView& s1, const TaskView& s2, double cap, const EmpiricalDistribution& eval_points,
                     const DivergenceConfig& cfg) {
  if (!(cap > 0.0)) throw InvalidArgument("task distance cap M must be > 0");
  if (s1.model.in_dim() != s2.model.in_dim() || s1.model.out_dim() != s2.model.out_dim())
    throw DimensionMismatch("task distance: models do not share input/output spaces");
  if (eval_points.dim() != s1.model.in_dim()) throw DimensionMismatch("task distance: eval points dimension");

  double law_term = 0.0;
  if (cfg.kind == DivergenceKind::kl) {
    const auto* g1 = std::get_if<GaussianND>(&s1.law);
    const auto* g2 = std::get_if<GaussianND>(&s2.law);
    if (!g1 || !g2) throw InvalidArgument("KL task distance needs gaussian laws");
    law_term = gaussian_kl(*g1, *g2);
  } else {
    const double pp = wasserstein_pp(s1.law, s2.law, cfg.ot);
    law_term = std::pow(pp, 1.0 / cfg.ot.order);
  }
  const Matrix diff = s1.model.apply_rows(eval_points.points()) - s2.model.apply_rows(eval_points.points());
  const double sup = diff.rowwise().norm().maxCoeff();
  return law_term + std::min(cap, sup);
}

BregmanGenerator parse_bregman_generator(const std::string& s) {
  if (s == "half_squared_norm") return BregmanGenerator::half_squared_norm;
  throw InvalidArgument("unsupported Bregman generator '" + s + "'");
}

double bregman(BregmanGenerator phi, const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw DimensionMismatch("bregman: u and v differ in dimension");
  switch (phi) {
    case BregmanGenerator::half_squared_norm: {
      // phi(x) = ||x||^2 / 2, grad phi(v) = v
      const double value = 0.5 * u.squaredNorm() - 0.5 * v.squaredNorm() - (u - v).dot(v);
      return std::max(0.0, value);
    }
  }
  throw InvalidArgument("unsupported Bregman generator");
}

Sandwich cross_entropy_sandwich(const DiscreteDistribution& p_st_raw, const DiscreteDistribution& law_yt_raw,
                                const DiscreteDistribution& p_t_raw, double smoothing) {
  const std::size_t k = p_st_raw.size();
  if (law_yt_raw.size() != k || p_t_raw.size() != k) throw DimensionMismatch("sandwich: class counts differ");
  const DiscreteDistribution p_st = smooth(p_st_raw, smoothing);
  const DiscreteDistribution law_yt = smooth(law_yt_raw, smoothing);
  const DiscreteDistribution p_t = smooth(p_t_raw, smoothing);
  for (const auto* d : {&p_st, &law_yt, &p_t})
    for (std::size_t i = 0; i < k; ++i)
      if (!(d->probs[i] > 0.0))
        throw InvalidArgument("sandwich: class " + std::to_string(i) + " has zero mass; use smoothing > 0");

  double log_sum = 0.0;
  double cross_t = 0.0;
  double cross_y = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double lq = std::log(p_st.probs[i]);
    log_sum += lq;
    cross_t -= p_t.probs[i] * lq;
    cross_y -= law_yt.probs[i] * lq;
  }
  Sandwich s{log_sum, cross_t - cross_y, -log_sum};
  if (!(s.lower <= s.center + 1e-12 && s.center <= s.upper + 1e-12))
    throw Error("cross-entropy sandwich violated; inputs are not probability vectors");
  return s;
}

}  // namespace trk
