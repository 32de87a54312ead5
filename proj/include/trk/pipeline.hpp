#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "trk/finetune.hpp"
#include "trk/gaussian_lab.hpp"
#include "trk/synthetic_office.hpp"
#include "trk/transfer_core.hpp"

namespace trk::pipeline {

using Json = nlohmann::ordered_json;

inline constexpr const char* kToolVersion = "0.3.0";

enum class DataFormat { csv, json };

DataFormat parse_format(const std::string& s);

struct Dataset {
  EmpiricalDistribution x;
  std::vector<double> targets;  // label column, one per row
  std::vector<std::string> feature_names;
};

/// Reads a table with a header row. Every column other than `label_column`
/// and (when present) `weight_column` is a numeric feature. Without a weight
/// column the rows are uniformly weighted; with one, weights must sum to 1.
/// Errors name the offending line (CSV) or row index (JSON) and column.
Dataset ingest_dataset(const std::filesystem::path& path, DataFormat format, const std::string& label_column,
                       const std::string& weight_column = "weight");

enum class Mode { empirical, gaussian_lab, synthetic_office };

std::string to_string(Mode m);

struct DomainSource {
  std::string name;
  std::string path;
  DataFormat format = DataFormat::csv;
  std::string label_column = "label";
};

struct GaussianLabSettings {
  std::size_t instances = 1;
  lab::RandomInstanceParams random;
  bool identical = false;  // target = source
  std::optional<GaussianJoint> source;
  std::optional<GaussianJoint> target;
};

struct FitGrid {
  std::size_t grid_points = 50;
  double max_coeff = 2.0;
};

struct PipelineConfig {
  Mode mode = Mode::synthetic_office;
  std::uint64_t seed = 0;
  std::string output_dir = "trk_out";
  RiskCombiner combiner = RiskCombiner::polynomial(0.31, 0.92, 2.0);
  DivergenceConfig divergence;
  ft::TrainConfig risk_training = ft::TrainConfig::risk_mode();
  ft::TrainConfig accuracy_training = ft::TrainConfig::accuracy_mode();
  ft::TrainConfig source_training{200, 0.5, 0, false, 10, 1e-6};
  double input_rescale = 1.0;
  std::vector<DomainSource> domains;
  GaussianLabSettings gaussian_lab;
  ft::SyntheticOfficeParams synthetic;
  FitGrid fit;
  std::optional<std::string> override_risks;
  Json echo;  // the parsed document, normalized

  /// Throws ParseError on unknown keys, wrong types, or out-of-range values.
  static PipelineConfig from_json(const Json& doc);
  static PipelineConfig load(const std::filesystem::path& path);
};

struct ReportRow {
  std::string source;
  std::string target;
  std::optional<double> accuracy;
  double input_risk = 0.0;
  double output_risk = 0.0;
  double transfer_risk = 0.0;
};

struct LabRow {
  std::string name;
  lab::RiskDecomposition kl;
  bool kl_defined = true;
  lab::RiskDecomposition w;
  double regret = 0.0;
  double residual = 0.0;
};

struct ReportDocument {
  Json config;
  Json combiner;
  std::vector<ReportRow> rows;
  std::vector<LabRow> lab_rows;
  std::optional<double> spearman;  // accuracy vs transfer risk
  std::optional<double> pearson;
  std::string tool_version = kToolVersion;
  std::vector<std::pair<std::string, double>> stage_ms;

  Json to_json() const;
};

Json combiner_to_json(const RiskCombiner& c);
RiskCombiner combiner_from_json(const Json& j);

/// Rows supplied directly: source,target,input_risk,output_risk[,accuracy].
std::vector<ReportRow> read_override_risks(const std::filesystem::path& path, const RiskCombiner& combiner);

/// Runs the configured mode; deterministic given the config and seed.
ReportDocument run(const PipelineConfig& config);

/// Writes report.json and pairs.csv into `dir` (created if missing).
void write_report(const ReportDocument& doc, const std::filesystem::path& dir);

/// CSV with columns source,target,accuracy,input_risk,output_risk,transfer_risk.
std::string pairs_csv(const std::vector<ReportRow>& rows);

/// Parses a pairs.csv; accuracy may be empty.
std::vector<ReportRow> read_pairs_csv(const std::filesystem::path& path);

enum class CombinerForm { linear, polynomial2 };
CombinerForm parse_combiner_form(const std::string& s);

struct FitRow {
  double input_risk;
  double output_risk;
  double accuracy;
};

struct FitResult {
  RiskCombiner combiner;
  double correlation;  // Pearson of combined risk vs accuracy
};

/// Grid search maximizing |Pearson(C, accuracy)|. Linear scans lambda; the
/// polynomial form scans (c_i, c_o) with power 2. Earlier grid points win ties.
FitResult fit_combiner(const std::vector<FitRow>& rows, CombinerForm form, const FitGrid& grid = {});

}  // namespace trk::pipeline
