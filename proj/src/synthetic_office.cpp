#include "trk/synthetic_office.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "trk/rng.hpp"

namespace trk::ft {

std::vector<Domain> make_synthetic_domains(const SyntheticOfficeParams& params) {
  if (params.num_classes < 2) throw InvalidArgument("synthetic domains need at least two classes");
  if (params.dim < 2) throw InvalidArgument("synthetic domains need dimension >= 2");
  if (params.points_per_class < 2) throw InvalidArgument("synthetic domains need >= 2 points per class");
  if (params.domains.size() < 2) throw InvalidArgument("synthetic office analog needs >= 2 domains");

  Rng rng(params.seed);
  const Vector shift_dir = Vector::Ones(params.dim) / std::sqrt(static_cast<double>(params.dim));
  std::vector<Domain> out;
  for (const DomainStyle& style : params.domains) {
    if (!(style.noise > 0.0)) throw InvalidArgument("domain noise must be > 0");
    Domain d;
    d.name = style.name;
    d.num_classes = params.num_classes;
    const Eigen::Index n = static_cast<Eigen::Index>(params.num_classes) * params.points_per_class;
    d.features.resize(n, params.dim);
    Eigen::Index row = 0;
    for (int c = 0; c < params.num_classes; ++c) {
      const double angle = 2.0 * std::numbers::pi * c / params.num_classes;
      Vector mean = Vector::Zero(params.dim);
      mean[0] = params.class_radius * std::cos(angle);
      mean[1] = params.class_radius * std::sin(angle);
      mean += style.shift * shift_dir;
      for (int k = 0; k < params.points_per_class; ++k, ++row) {
        d.features.row(row) = (mean + style.noise * rng.normal_vector(params.dim)).transpose();
        d.labels.push_back(c);
      }
    }
    out.push_back(std::move(d));
  }
  return out;
}

namespace {

Matrix take_rows(const Matrix& m, const std::vector<Eigen::Index>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

std::vector<int> take(const std::vector<int>& v, const std::vector<Eigen::Index>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (Eigen::Index i : idx) out.push_back(v[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

std::vector<PairRow> evaluate_risk_accuracy_pairs(const std::vector<Domain>& domains, const RiskCombiner& combiner,
                                                  const PairEvaluationConfig& cfg) {
  if (domains.size() < 2) throw InvalidArgument("need at least two domains");
  const int k = domains.front().num_classes;
  const Eigen::Index dim = domains.front().features.cols();
  for (const Domain& d : domains) {
    if (d.num_classes != k || d.features.cols() != dim)
      throw DimensionMismatch("domains must share the feature dimension and class count");
    if (static_cast<std::size_t>(d.features.rows()) != d.labels.size() || d.labels.size() < 4)
      throw InvalidArgument("domain '" + d.name + "' needs at least four labelled samples");
  }

  // Pretrained heads, one per source domain.
  std::vector<AffineModel> heads;
  for (std::size_t s = 0; s < domains.size(); ++s) {
    const Domain& d = domains[s];
    const AffineModel init = random_affine_init(dim, k, cfg.seed + s);
    heads.push_back(train_classifier(init, d.features, d.labels, d.features, d.labels, cfg.source_training).model);
  }

  std::vector<PairRow> rows;
  std::size_t pair_index = 0;
  for (std::size_t s = 0; s < domains.size(); ++s) {
    for (std::size_t t = 0; t < domains.size(); ++t) {
      if (s == t) continue;
      const Domain& src = domains[s];
      const Domain& tgt = domains[t];
      Rng rng(cfg.seed + pair_index);
      std::vector<Eigen::Index> idx(tgt.labels.size());
      std::iota(idx.begin(), idx.end(), Eigen::Index{0});
      std::shuffle(idx.begin(), idx.end(), rng.engine());
      const std::size_t half = idx.size() / 2;
      const std::vector<Eigen::Index> train_idx(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(half));
      const std::vector<Eigen::Index> test_idx(idx.begin() + static_cast<std::ptrdiff_t>(half), idx.end());
      const Matrix x_train = take_rows(tgt.features, train_idx);
      const std::vector<int> y_train = take(tgt.labels, train_idx);

      PairRow row;
      row.source = src.name;
      row.target = tgt.name;
      row.input_risk = cfg.input_rescale * wasserstein(EmpiricalDistribution::uniform(src.features),
                                                       EmpiricalDistribution::uniform(tgt.features), cfg.input_ot)
                                               .distance;
      const OutputRiskProblem problem{x_train, Vector::Constant(x_train.rows(), 1.0 / static_cast<double>(half)),
                                      EmpiricalDistribution::uniform(one_hot(y_train, k))};
      row.output_risk =
          minimize_output_risk(heads[s], HeadKind::affine_softmax, problem, cfg.output_ot, cfg.risk_training).risk;
      row.accuracy = train_classifier(heads[s], x_train, y_train, take_rows(tgt.features, test_idx),
                                      take(tgt.labels, test_idx), cfg.accuracy_training)
                         .accuracy;
      row.transfer_risk = combine(combiner, row.input_risk, row.output_risk);
      rows.push_back(std::move(row));
      ++pair_index;
    }
  }
  return rows;
}

}  // namespace trk::ft
