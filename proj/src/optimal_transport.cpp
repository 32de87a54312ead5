#include "trk/optimal_transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "trk/errors.hpp"

namespace trk {

namespace {

double ground_cost(double dist, double p) {
  if (p == 1.0) return dist;
  if (p == 2.0) return dist * dist;
  return std::pow(dist, p);
}

double root(double cost, double p) {
  cost = std::max(0.0, cost);
  if (p == 1.0) return cost;
  if (p == 2.0) return std::sqrt(cost);
  return std::pow(cost, 1.0 / p);
}

void require_same_dim(const EmpiricalDistribution& a, const EmpiricalDistribution& b) {
  if (a.dim() != b.dim())
    throw DimensionMismatch("wasserstein: dimensions " + std::to_string(a.dim()) + " and " + std::to_string(b.dim()));
}

std::vector<Eigen::Index> sorted_order(const EmpiricalDistribution& d) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(d.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  const Matrix& pts = d.points();
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index l, Eigen::Index r) { return pts(l, 0) < pts(r, 0); });
  return idx;
}

// Indices of atoms carrying positive mass; zero-weight atoms only add degeneracy.
std::vector<Eigen::Index> support(const Vector& w) {
  std::vector<Eigen::Index> s;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w[i] > 0.0) s.push_back(i);
  return s;
}

double log_sum_exp(const double* v, Eigen::Index n, Eigen::Index stride) {
  double hi = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < n; ++k) hi = std::max(hi, v[k * stride]);
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) s += std::exp(v[k * stride] - hi);
  return hi + std::log(s);
}

}  // namespace

std::string to_string(OtMethod m) {
  switch (m) {
    case OtMethod::automatic: return "auto";
    case OtMethod::exact_1d: return "exact_1d";
    case OtMethod::exact_lp: return "exact_lp";
    case OtMethod::sinkhorn: return "sinkhorn";
  }
  return "auto";
}

OtMethod parse_ot_method(const std::string& s) {
  if (s == "auto") return OtMethod::automatic;
  if (s == "exact_1d") return OtMethod::exact_1d;
  if (s == "exact_lp") return OtMethod::exact_lp;
  if (s == "sinkhorn") return OtMethod::sinkhorn;
  throw InvalidArgument("unknown OT method '" + s + "'");
}

void OtConfig::validate() const {
  if (!(order >= 1.0) || !std::isfinite(order)) throw InvalidArgument("OT order p must be >= 1");
  if (sinkhorn_epsilon && !(*sinkhorn_epsilon > 0.0)) throw InvalidArgument("sinkhorn epsilon must be > 0");
  if (sinkhorn_max_iter < 1) throw InvalidArgument("sinkhorn_max_iter must be >= 1");
  if (!(sinkhorn_tolerance > 0.0)) throw InvalidArgument("sinkhorn tolerance must be > 0");
}

Matrix cost_matrix(const EmpiricalDistribution& a, const EmpiricalDistribution& b, double p) {
  require_same_dim(a, b);
  Matrix c(a.size(), b.size());
  for (Eigen::Index j = 0; j < b.size(); ++j)
    for (Eigen::Index i = 0; i < a.size(); ++i)
      c(i, j) = ground_cost((a.points().row(i) - b.points().row(j)).norm(), p);
  return c;
}

Coupling quantile_coupling_1d(const EmpiricalDistribution& a, const EmpiricalDistribution& b, double p) {
  if (a.dim() != 1 || b.dim() != 1) throw DimensionMismatch("exact 1-D wasserstein needs one dimensional inputs");
  const auto ia = sorted_order(a);
  const auto ib = sorted_order(b);
  const Vector& wa = a.weights();
  const Vector& wb = b.weights();
  Coupling out{Matrix::Zero(a.size(), b.size()), 0.0};
  std::size_t i = 0;
  std::size_t j = 0;
  double ra = wa[ia[0]];
  double rb = wb[ib[0]];
  while (i < ia.size() && j < ib.size()) {
    const double m = std::min(ra, rb);
    if (m > 0.0) {
      out.plan(ia[i], ib[j]) += m;
      out.cost += m * ground_cost(std::abs(a.points()(ia[i], 0) - b.points()(ib[j], 0)), p);
    }
    ra -= m;
    rb -= m;
    // Advance whichever side ran out; on an exact tie advance both.
    const bool a_done = ra <= 0.0;
    const bool b_done = rb <= 0.0;
    if (a_done && ++i < ia.size()) ra = wa[ia[i]];
    if (b_done && ++j < ib.size()) rb = wb[ib[j]];
  }
  return out;
}

double wasserstein_1d_exact(const EmpiricalDistribution& a, const EmpiricalDistribution& b, double p) {
  if (!(p >= 1.0)) throw InvalidArgument("order p must be >= 1");
  return root(quantile_coupling_1d(a, b, p).cost, p);
}

// Transportation simplex. Basic cells form a spanning tree on the bipartite
// graph of rows and columns; potentials come from the tree, entering cells
// from the most negative reduced cost.
Coupling transport_lp(const Vector& a_in, const Vector& b_in, const Matrix& cost) {
  const Eigen::Index n = a_in.size();
  const Eigen::Index m = b_in.size();
  if (cost.rows() != n || cost.cols() != m) throw DimensionMismatch("transport_lp: cost matrix shape");
  if (n == 0 || m == 0) throw InvalidArgument("transport_lp: empty marginal");
  const Vector a = a_in / a_in.sum();
  const Vector b = b_in / b_in.sum();

  struct Cell {
    Eigen::Index row;
    Eigen::Index col;
    double flow;
  };
  std::vector<Cell> basis;
  basis.reserve(static_cast<std::size_t>(n + m - 1));
  std::vector<std::vector<std::size_t>> by_row(static_cast<std::size_t>(n)), by_col(static_cast<std::size_t>(m));
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> is_basic =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, m, false);

  auto add_cell = [&](Eigen::Index r, Eigen::Index c, double flow) {
    by_row[static_cast<std::size_t>(r)].push_back(basis.size());
    by_col[static_cast<std::size_t>(c)].push_back(basis.size());
    basis.push_back({r, c, flow});
    is_basic(r, c) = true;
  };

  // North-west corner start: n + m - 1 cells forming a tree.
  {
    Vector supply = a;
    Vector demand = b;
    Eigen::Index i = 0;
    Eigen::Index j = 0;
    while (true) {
      const double q = std::max(0.0, std::min(supply[i], demand[j]));
      add_cell(i, j, q);
      supply[i] -= q;
      demand[j] -= q;
      if (i == n - 1 && j == m - 1) break;
      if ((supply[i] <= demand[j] && i < n - 1) || j == m - 1)
        ++i;
      else
        ++j;
    }
  }

  const double scale = std::max(1.0, cost.cwiseAbs().maxCoeff());
  const double reduced_tol = 1e-12 * scale;
  Vector u(n), v(m);
  std::vector<char> seen(static_cast<std::size_t>(n + m));
  std::vector<std::ptrdiff_t> parent_cell(static_cast<std::size_t>(n + m));
  std::vector<Eigen::Index> queue;
  queue.reserve(static_cast<std::size_t>(n + m));

  // Node ids: rows 0..n-1, columns n..n+m-1.
  auto bfs_from = [&](Eigen::Index root_node, bool fill_potentials) {
    std::fill(seen.begin(), seen.end(), 0);
    queue.clear();
    queue.push_back(root_node);
    seen[static_cast<std::size_t>(root_node)] = 1;
    parent_cell[static_cast<std::size_t>(root_node)] = -1;
    if (fill_potentials) u[root_node] = 0.0;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const Eigen::Index node = queue[head];
      const bool is_row = node < n;
      const auto& cells = is_row ? by_row[static_cast<std::size_t>(node)] : by_col[static_cast<std::size_t>(node - n)];
      for (std::size_t ci : cells) {
        const Cell& cell = basis[ci];
        const Eigen::Index next = is_row ? n + cell.col : cell.row;
        if (seen[static_cast<std::size_t>(next)]) continue;
        seen[static_cast<std::size_t>(next)] = 1;
        parent_cell[static_cast<std::size_t>(next)] = static_cast<std::ptrdiff_t>(ci);
        if (fill_potentials) {
          if (is_row)
            v[cell.col] = cost(cell.row, cell.col) - u[cell.row];
          else
            u[cell.row] = cost(cell.row, cell.col) - v[cell.col];
        }
        queue.push_back(next);
      }
    }
  };

  const std::size_t max_pivots = 50 * static_cast<std::size_t>(n * m) + 1000;
  std::size_t pivots = 0;
  while (true) {
    bfs_from(0, true);
    double best = -reduced_tol;
    Eigen::Index enter_r = -1;
    Eigen::Index enter_c = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < m; ++j) {
        if (is_basic(i, j)) continue;
        const double r = cost(i, j) - u[i] - v[j];
        if (r < best) {
          best = r;
          enter_r = i;
          enter_c = j;
        }
      }
    }
    if (enter_r < 0) break;
    if (++pivots > max_pivots) throw ConvergenceError("transport_lp: pivot limit reached", best);

    // Tree path from row enter_r to column enter_c closes the cycle.
    bfs_from(enter_r, false);
    std::vector<std::size_t> path;
    for (Eigen::Index node = n + enter_c; node != enter_r;) {
      const auto ci = static_cast<std::size_t>(parent_cell[static_cast<std::size_t>(node)]);
      path.push_back(ci);
      const Cell& cell = basis[ci];
      node = node < n ? n + cell.col : cell.row;
    }
    // path[0] touches column enter_c and loses flow; signs alternate from there.
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leave = path[0];
    for (std::size_t k = 0; k < path.size(); k += 2) {
      const Cell& c = basis[path[k]];
      const Cell& l = basis[leave];
      if (c.flow < theta || (c.flow == theta && (c.row < l.row || (c.row == l.row && c.col < l.col)))) {
        theta = c.flow;
        leave = path[k];
      }
    }
    for (std::size_t k = 0; k < path.size(); ++k) {
      Cell& c = basis[path[k]];
      c.flow += (k % 2 == 0) ? -theta : theta;
      if (c.flow < 0.0) c.flow = 0.0;
    }

    // Replace the leaving cell in place by the entering one.
    Cell& out = basis[leave];
    auto drop = [leave](std::vector<std::size_t>& list) { list.erase(std::find(list.begin(), list.end(), leave)); };
    drop(by_row[static_cast<std::size_t>(out.row)]);
    drop(by_col[static_cast<std::size_t>(out.col)]);
    is_basic(out.row, out.col) = false;
    out = {enter_r, enter_c, theta};
    by_row[static_cast<std::size_t>(enter_r)].push_back(leave);
    by_col[static_cast<std::size_t>(enter_c)].push_back(leave);
    is_basic(enter_r, enter_c) = true;
  }

  Coupling result{Matrix::Zero(n, m), 0.0};
  for (const Cell& c : basis) {
    result.plan(c.row, c.col) = c.flow;
    result.cost += c.flow * cost(c.row, c.col);
  }
  return result;
}

double default_sinkhorn_epsilon(const Matrix& cost) { return 0.01 * cost.mean(); }

namespace {
constexpr std::size_t kSinkhornStageIter = 500;
constexpr double kSinkhornRelaxation = 1.5;
}  // namespace

SinkhornResult sinkhorn(const Vector& a, const Vector& b, const Matrix& cost, double epsilon, std::size_t max_iter,
                        double tolerance, bool strict) {
  const Eigen::Index n = a.size();
  const Eigen::Index m = b.size();
  if (cost.rows() != n || cost.cols() != m) throw DimensionMismatch("sinkhorn: cost matrix shape");
  if (!(epsilon > 0.0)) throw InvalidArgument("sinkhorn: epsilon must be > 0");
  if ((a.array() <= 0.0).any() || (b.array() <= 0.0).any())
    throw InvalidArgument("sinkhorn: marginals must be strictly positive");
  const Vector log_a = a.array().log();
  const Vector log_b = b.array().log();

  SinkhornResult res;
  res.epsilon = epsilon;
  res.f = Vector::Zero(n);
  res.g = Vector::Zero(m);
  Matrix scratch(n, m);

  // Over-relaxed log-domain updates at regularization `eps`; returns the larger marginal violation.
  auto run = [&](double eps, std::size_t budget, double tol, std::size_t& used) {
    double violation = std::numeric_limits<double>::infinity();
    used = 0;
    const double w = kSinkhornRelaxation;
    while (used < budget) {
      ++used;
      scratch = (-cost).rowwise() + res.g.transpose();
      scratch /= eps;
      for (Eigen::Index i = 0; i < n; ++i)
        res.f[i] = (1.0 - w) * res.f[i] + w * eps * (log_a[i] - log_sum_exp(&scratch(i, 0), m, scratch.outerStride()));
      scratch = (-cost).colwise() + res.f;
      scratch /= eps;
      for (Eigen::Index j = 0; j < m; ++j)
        res.g[j] = (1.0 - w) * res.g[j] + w * eps * (log_b[j] - log_sum_exp(&scratch(0, j), n, 1));
      scratch = ((-cost).colwise() + res.f).rowwise() + res.g.transpose();
      scratch = (scratch / eps).array().exp();
      violation = std::max((scratch.rowwise().sum() - a).cwiseAbs().maxCoeff(),
                           (scratch.colwise().sum().transpose() - b).cwiseAbs().maxCoeff());
      if (violation < tol) break;
    }
    return violation;
  };

  // Epsilon scaling: warm-start the potentials on a halving schedule that ends at `epsilon`.
  std::size_t used = 0;
  for (double eps = cost.maxCoeff(); eps > 2.0 * epsilon; eps *= 0.5) run(eps, kSinkhornStageIter, 10.0 * tolerance, used);
  const double violation = run(epsilon, max_iter, tolerance, used);
  const std::size_t it = used;
  res.iterations = it;
  res.marginal_violation = violation;
  if (strict && !(violation < tolerance))
    throw ConvergenceError("sinkhorn did not converge in " + std::to_string(max_iter) +
                               " iterations (marginal violation " + std::to_string(violation) + ")",
                           violation);
  res.coupling.plan.resize(n, m);
  res.coupling.cost = 0.0;
  double mass = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double pij = std::exp((res.f[i] + res.g[j] - cost(i, j)) / epsilon);
      res.coupling.plan(i, j) = pij;
      res.coupling.cost += pij * cost(i, j);
      mass += pij;
    }
  }
  res.regularized_value = res.f.dot(a) + res.g.dot(b) - epsilon * mass;
  return res;
}

OtResult wasserstein(const EmpiricalDistribution& a, const EmpiricalDistribution& b, const OtConfig& cfg) {
  cfg.validate();
  require_same_dim(a, b);
  const double p = cfg.order;

  OtMethod method = cfg.method;
  if (method == OtMethod::automatic) {
    if (a.dim() == 1)
      method = OtMethod::exact_1d;
    else if (static_cast<std::size_t>(a.size()) <= cfg.lp_max_support &&
             static_cast<std::size_t>(b.size()) <= cfg.lp_max_support)
      method = OtMethod::exact_lp;
    else
      method = OtMethod::sinkhorn;
  }

  OtResult out;
  out.method = method;
  if (method == OtMethod::exact_1d) {
    Coupling c = quantile_coupling_1d(a, b, p);
    out.distance = root(c.cost, p);
    if (cfg.want_coupling) out.coupling = std::move(c);
    return out;
  }
  if (method == OtMethod::exact_lp &&
      (static_cast<std::size_t>(a.size()) > cfg.lp_max_support ||
       static_cast<std::size_t>(b.size()) > cfg.lp_max_support))
    throw InvalidArgument("exact_lp: support exceeds lp_max_support (" + std::to_string(cfg.lp_max_support) + ")");

  const auto sa = support(a.weights());
  const auto sb = support(b.weights());
  Vector wa(static_cast<Eigen::Index>(sa.size())), wb(static_cast<Eigen::Index>(sb.size()));
  Matrix cost(wa.size(), wb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) wa[static_cast<Eigen::Index>(i)] = a.weights()[sa[i]];
  for (std::size_t j = 0; j < sb.size(); ++j) wb[static_cast<Eigen::Index>(j)] = b.weights()[sb[j]];
  for (std::size_t j = 0; j < sb.size(); ++j)
    for (std::size_t i = 0; i < sa.size(); ++i)
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          ground_cost((a.points().row(sa[i]) - b.points().row(sb[j])).norm(), p);

  Coupling reduced;
  if (method == OtMethod::exact_lp) {
    reduced = transport_lp(wa, wb, cost);
  } else {
    const double mean_cost = cost.mean();
    if (mean_cost == 0.0) {
      reduced = transport_lp(wa, wb, cost);  // every atom coincides; plan is trivially optimal
    } else {
      const double eps = cfg.sinkhorn_epsilon ? *cfg.sinkhorn_epsilon : default_sinkhorn_epsilon(cost);
      reduced = sinkhorn(wa, wb, cost, eps, cfg.sinkhorn_max_iter, cfg.sinkhorn_tolerance).coupling;
    }
  }
  out.distance = root(reduced.cost, p);
  if (cfg.want_coupling) {
    Coupling full{Matrix::Zero(a.size(), b.size()), reduced.cost};
    for (std::size_t i = 0; i < sa.size(); ++i)
      for (std::size_t j = 0; j < sb.size(); ++j)
        full.plan(sa[i], sb[j]) = reduced.plan(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    out.coupling = std::move(full);
  }
  return out;
}

namespace {

struct NormalEdge {
  double z;
  double pdf;
  double cdf;
  double z_pdf;  // z * pdf, zero at infinity
};

NormalEdge normal_edge(double z) {
  if (std::isinf(z)) return {z, 0.0, z > 0 ? 1.0 : 0.0, 0.0};
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return {z, pdf, 0.5 * std::erfc(-z / std::numbers::sqrt2), z * pdf};
}

// integral over [lo, hi] of (a + s z)^2 phi(z) dz
double quadratic_moment(double a, double s, const NormalEdge& lo, const NormalEdge& hi) {
  const double m0 = hi.cdf - lo.cdf;
  const double m1 = -(hi.pdf - lo.pdf);
  const double m2 = m0 - (hi.z_pdf - lo.z_pdf);
  return a * a * m0 + 2.0 * a * s * m1 + s * s * m2;
}

// integral over [lo, hi] of (a + s z) phi(z) dz, s > 0
double linear_moment(double a, double s, const NormalEdge& lo, const NormalEdge& hi) {
  return a * (hi.cdf - lo.cdf) - s * (hi.pdf - lo.pdf);
}

}  // namespace

double wasserstein_pp_gaussian_empirical_1d(const Gaussian1D& g, const EmpiricalDistribution& e, double p) {
  if (e.dim() != 1) throw DimensionMismatch("expected a one dimensional empirical distribution");
  if (p != 1.0 && p != 2.0) throw InvalidArgument("gaussian-to-empirical W_p supports p = 1 or 2");
  const boost::math::normal_distribution<double> std_normal;
  const auto order = sorted_order(e);
  const double mu = g.mean();
  const double s = g.stddev();
  double total = 0.0;
  double cum = 0.0;
  NormalEdge lo = normal_edge(-std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const double w = e.weights()[order[k]];
    cum += w;
    const bool last = k + 1 == order.size();
    double z_hi = std::numeric_limits<double>::infinity();
    if (!last && cum < 1.0) z_hi = boost::math::quantile(std_normal, std::max(cum, 0.0));
    const NormalEdge hi = normal_edge(z_hi);
    if (w > 0.0) {
      const double a = mu - e.points()(order[k], 0);
      if (p == 2.0) {
        total += quadratic_moment(a, s, lo, hi);
      } else {
        // sign change of a + s z at z* = -a / s
        const NormalEdge mid = normal_edge(std::clamp(-a / s, lo.z, hi.z));
        total += linear_moment(a, s, mid, hi) - linear_moment(a, s, lo, mid);
      }
    }
    lo = hi;
  }
  return std::max(0.0, total);
}

double gaussian_w1_1d(const Gaussian1D& p, const Gaussian1D& q) {
  const double dm = p.mean() - q.mean();
  const double ds = std::abs(p.stddev() - q.stddev());
  if (ds == 0.0) return std::abs(dm);
  const double t = dm / ds;
  return ds * std::sqrt(2.0 / std::numbers::pi) * std::exp(-0.5 * t * t) + dm * std::erf(t / std::numbers::sqrt2);
}

}  // namespace trk
