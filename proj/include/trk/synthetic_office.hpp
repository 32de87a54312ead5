#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trk/finetune.hpp"
#include "trk/transfer_core.hpp"

namespace trk::ft {

/// Labelled feature cloud standing in for one image domain.
struct Domain {
  std::string name;
  Matrix features;  // one row per sample
  std::vector<int> labels;
  int num_classes = 0;
};

/// Per-domain knobs: a translation of every class mean and the within-class spread.
struct DomainStyle {
  std::string name;
  double shift = 0.0;
  double noise = 0.5;
};

struct SyntheticOfficeParams {
  int num_classes = 3;
  Eigen::Index dim = 2;
  int points_per_class = 40;
  double class_radius = 2.0;  // class means sit on a circle of this radius
  std::vector<DomainStyle> domains = {{"A", 1.0, 1.2}, {"D", 0.0, 0.45}, {"W", 0.25, 0.55}};
  std::uint64_t seed = 0;
};

std::vector<Domain> make_synthetic_domains(const SyntheticOfficeParams& params);

struct PairEvaluationConfig {
  TrainConfig source_training{200, 0.5, 0, false, 10, 1e-6};
  TrainConfig risk_training = TrainConfig::risk_mode();
  TrainConfig accuracy_training = TrainConfig::accuracy_mode();
  OtConfig input_ot;  // W_1 on raw features by default
  OtConfig output_ot;
  double input_rescale = 1.0;
  std::uint64_t seed = 0;
};

struct PairRow {
  std::string source;
  std::string target;
  double accuracy = 0.0;
  double input_risk = 0.0;
  double output_risk = 0.0;
  double transfer_risk = 0.0;
};

/// One row per ordered (source, target) pair. Per pair: the source head is fit
/// on the full source domain, the target is split in half, E^I is W_1 between
/// the feature clouds (times input_rescale), E^O is the early-stopped minimum
/// of W_1(P_ST, Law(Y_T)) over fine-tuned heads, and accuracy comes from
/// fine-tuning on one half and scoring on the other.
std::vector<PairRow> evaluate_risk_accuracy_pairs(const std::vector<Domain>& domains, const RiskCombiner& combiner,
                                                  const PairEvaluationConfig& cfg);

}  // namespace trk::ft
