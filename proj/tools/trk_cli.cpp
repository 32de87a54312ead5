// trk: transfer-risk experiments from the command line.
#include <cstdlib>
#include <fstream>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "trk/errors.hpp"
#include "trk/pipeline.hpp"

namespace fs = std::filesystem;
namespace pl = trk::pipeline;

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("trk");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* lvl = std::getenv("TRK_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));
}

int report_error(const std::string& kind, const std::string& message, const std::optional<fs::path>& out_dir) {
  pl::Json err;
  err["error"] = pl::Json{{"kind", kind}, {"message", message}};
  std::cerr << err.dump(2) << "\n";
  if (out_dir) {
    std::error_code ec;
    fs::create_directories(*out_dir, ec);
    std::ofstream f(*out_dir / "error.json");
    if (f) f << err.dump(2) << "\n";
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Transfer risk toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, override_path;
  std::uint64_t seed = 0;
  auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
  run->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  auto* seed_opt = run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out", out_dir, "Output directory (overrides config)");
  run->add_option("--override-risks", override_path, "CSV of source,target,input_risk,output_risk[,accuracy]")
      ->check(CLI::ExistingFile);

  std::string rows_path, form = "polynomial2", fit_out;
  std::size_t grid_points = 50;
  double max_coeff = 2.0;
  auto* fit = app.add_subcommand("fit-combiner", "Grid-fit a combiner to (E^I, E^O, accuracy) rows");
  fit->add_option("--rows", rows_path, "pairs.csv with an accuracy column")->required()->check(CLI::ExistingFile);
  fit->add_option("--form", form, "linear | polynomial2")->capture_default_str();
  fit->add_option("--grid-points", grid_points, "Grid points per coefficient")->capture_default_str();
  fit->add_option("--max-coeff", max_coeff, "Upper end of the coefficient grid")->capture_default_str();
  fit->add_option("--out", fit_out, "Write fit.json into this directory");

  std::string data_path, data_format = "csv", label = "label", weight = "weight";
  auto* ingest = app.add_subcommand("ingest-check", "Validate a dataset file and print a summary");
  ingest->add_option("--data", data_path, "Dataset file")->required()->check(CLI::ExistingFile);
  ingest->add_option("--format", data_format, "csv | json")->capture_default_str();
  ingest->add_option("--label", label, "Label column")->capture_default_str();
  ingest->add_option("--weight", weight, "Optional weight column")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  std::optional<fs::path> err_dir;
  try {
    if (*run) {
      if (!out_dir.empty()) err_dir = out_dir;
      auto cfg = pl::PipelineConfig::load(config_path);
      if (*seed_opt) cfg.seed = seed;
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      if (!override_path.empty()) {
        if (cfg.mode != pl::Mode::empirical) throw trk::ParseError("--override-risks needs mode 'empirical'");
        cfg.override_risks = override_path;
      }
      cfg.echo = pl::PipelineConfig::from_json(cfg.echo).echo;
      cfg.echo["seed"] = cfg.seed;
      cfg.echo["output_dir"] = cfg.output_dir;
      if (cfg.override_risks) cfg.echo["override_risks"] = *cfg.override_risks;
      err_dir = cfg.output_dir;
      const auto doc = pl::run(cfg);
      pl::write_report(doc, cfg.output_dir);
      std::cout << pl::pairs_csv(doc.rows);
      return 0;
    }
    if (*fit) {
      if (!fit_out.empty()) err_dir = fit_out;
      std::vector<pl::FitRow> rows;
      for (const auto& r : pl::read_pairs_csv(rows_path)) {
        if (!r.accuracy) throw trk::ParseError(rows_path + ": row " + r.source + "-" + r.target + " has no accuracy");
        rows.push_back({r.input_risk, r.output_risk, *r.accuracy});
      }
      const auto res = pl::fit_combiner(rows, pl::parse_combiner_form(form), {grid_points, max_coeff});
      pl::Json j;
      j["combiner"] = pl::combiner_to_json(res.combiner);
      j["pearson"] = res.correlation;
      j["rows"] = rows.size();
      std::cout << j.dump(2) << "\n";
      if (!fit_out.empty()) {
        fs::create_directories(fit_out);
        std::ofstream(fs::path(fit_out) / "fit.json") << j.dump(2) << "\n";
      }
      return 0;
    }
    if (*ingest) {
      const auto ds = pl::ingest_dataset(data_path, pl::parse_format(data_format), label, weight);
      pl::Json j;
      j["rows"] = ds.x.size();
      j["features"] = ds.feature_names;
      j["weight_sum"] = ds.x.weights().sum();
      std::cout << j.dump(2) << "\n";
      return 0;
    }
  } catch (const trk::Error& e) {
    return report_error(e.kind(), e.what(), err_dir);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), err_dir);
  }
  return 0;
}
