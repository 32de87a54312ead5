#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "oracles.hpp"
#include "trk/errors.hpp"
#include "trk/pipeline.hpp"

namespace fs = std::filesystem;
using namespace trk;
using namespace trk::pipeline;

namespace {

const bool quiet_logs = [] {
  spdlog::set_level(spdlog::level::warn);
  return true;
}();

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = fs::temp_directory_path() / ("trk_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  fs::path write(const std::string& name, const std::string& body) const {
    std::ofstream(path / name) << body;
    return path / name;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kPublishedRows =
    "source,target,input_risk,output_risk,accuracy\n"
    "A,W,0.181,0.428,80.9\n"
    "A,D,0.263,0.380,83.1\n"
    "W,A,0.181,0.545,66.9\n"
    "W,D,0.148,0.084,94.5\n"
    "D,A,0.263,0.543,66.6\n"
    "D,W,0.148,0.412,87.8\n";

std::string error_message(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TRK_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Json small_synthetic_config(std::uint64_t seed) {
  return Json::parse(R"({
    "mode": "synthetic_office",
    "seed": )" + std::to_string(seed) + R"(,
    "training": {"source": {"epochs": 30}, "accuracy": {"epochs": 20}},
    "synthetic_office": {"points_per_class": 6, "num_classes": 3,
      "domains": [{"name": "P", "shift": 0.0, "noise": 0.4}, {"name": "Q", "shift": 1.0, "noise": 0.6},
                  {"name": "R", "shift": 2.5, "noise": 0.5}]}
  })");
}

}  // namespace

TEST_CASE("ingest: small CSV") {
  TempDir dir("csv");
  const auto p = dir.write("d.csv", "f1,f2,label\n1,2,0\n3,4,1\n5,6.5,1\n");
  const auto d = ingest_dataset(p, DataFormat::csv, "label");
  CHECK(d.x.size() == 3);
  CHECK(d.x.dim() == 2);
  CHECK(d.x.points()(2, 1) == 6.5);
  CHECK(d.targets == std::vector<double>{0, 1, 1});
  CHECK(d.feature_names == std::vector<std::string>{"f1", "f2"});
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(d.x.weights()(i) == doctest::Approx(1.0 / 3));
}

TEST_CASE("ingest: errors name the line and column") {
  TempDir dir("bad");
  const auto bad = dir.write("bad.csv", "f1,f2,label\n1,2,0\n3,abc,1\n");
  const auto msg = error_message([&] { ingest_dataset(bad, DataFormat::csv, "label"); });
  CHECK(msg.find("line 3") != std::string::npos);
  CHECK(msg.find("f2") != std::string::npos);
  CHECK_THROWS_AS(ingest_dataset(bad, DataFormat::csv, "label"), ParseError);

  const auto missing = dir.write("missing.csv", "f1,f2,label\n1,,0\n");
  CHECK_THROWS_AS(ingest_dataset(missing, DataFormat::csv, "label"), ParseError);
  const auto ragged = dir.write("ragged.csv", "f1,f2,label\n1,2,0\n1,2\n");
  CHECK(error_message([&] { ingest_dataset(ragged, DataFormat::csv, "label"); }).find("line 3") != std::string::npos);
  CHECK_THROWS_AS(ingest_dataset(dir.write("empty.csv", ""), DataFormat::csv, "label"), ParseError);
  CHECK_THROWS_AS(ingest_dataset(dir.write("hdr.csv", "f1,label\n"), DataFormat::csv, "label"), ParseError);
  CHECK_THROWS_AS(ingest_dataset(dir.write("nolabel.csv", "f1,f2\n1,2\n"), DataFormat::csv, "label"), ParseError);
  CHECK_THROWS(ingest_dataset(dir.path / "absent.csv", DataFormat::csv, "label"));
  CHECK_THROWS_AS(parse_format("xml"), ParseError);
}

TEST_CASE("ingest: JSON rows with weights") {
  TempDir dir("json");
  const auto p = dir.write("d.json", R"([{"x": 0.5, "y": 2, "w": 0.2}, {"x": 1.5, "y": 3, "w": 0.3},
                                         {"x": -1.0, "y": 1, "w": 0.5}])");
  const auto d = ingest_dataset(p, DataFormat::json, "y", "w");
  CHECK(d.x.dim() == 1);
  CHECK(d.x.weights()(1) == 0.3);
  double total = 0.0;
  for (Eigen::Index i = 0; i < d.x.size(); ++i) total += d.x.weights()(i);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(d.x.mean()(0) == doctest::Approx(0.2 * 0.5 + 0.3 * 1.5 - 0.5));

  const auto off = dir.write("off.json", R"([{"x": 0.5, "y": 2, "w": 0.2}, {"x": 1.5, "y": 3, "w": 0.3}])");
  CHECK_THROWS_AS(ingest_dataset(off, DataFormat::json, "y", "w"), ParseError);
  const auto str = dir.write("str.json", R"([{"x": "a", "y": 2}])");
  CHECK(error_message([&] { ingest_dataset(str, DataFormat::json, "y"); }).find("row 0, column 'x'") !=
        std::string::npos);
  CHECK_THROWS_AS(ingest_dataset(dir.write("e.json", "[]"), DataFormat::json, "y"), ParseError);
}

TEST_CASE("config: unknown keys and misplaced sections are rejected") {
  CHECK_THROWS_AS(PipelineConfig::from_json(Json::parse(R"({"mode": "gaussian_lab", "sed": 3})")), ParseError);
  CHECK_THROWS_AS(PipelineConfig::from_json(Json::parse(R"({"seed": 3})")), ParseError);
  CHECK_THROWS_AS(PipelineConfig::from_json(Json::parse(R"({"mode": "nope"})")), ParseError);
  CHECK_THROWS_AS(PipelineConfig::from_json(Json::parse(R"({"mode": "gaussian_lab", "synthetic_office": {}})")),
                  ParseError);
  CHECK_THROWS_AS(PipelineConfig::from_json(Json::parse(R"({"mode": "empirical"})")), ParseError);
  CHECK_THROWS_AS(PipelineConfig::from_json(Json::parse(R"({"mode": "gaussian_lab", "input_risk_rescale": 0})")),
                  ParseError);
  CHECK_THROWS_AS(
      PipelineConfig::from_json(Json::parse(R"({"mode": "gaussian_lab", "training": {"risk": {"epochs": -1}}})")),
      ParseError);
  CHECK_THROWS_AS(PipelineConfig::from_json(
                      Json::parse(R"({"mode": "gaussian_lab", "combiner": {"form": "linear", "lambda": -1}})")),
                  Error);

  const auto c = PipelineConfig::from_json(Json::parse(R"({"mode": "gaussian_lab", "seed": 12,
      "combiner": {"form": "linear", "lambda": 0.25}, "gaussian_lab": {"instances": 3, "x_dim": 2}})"));
  CHECK(c.mode == Mode::gaussian_lab);
  CHECK(c.seed == 12);
  CHECK(c.gaussian_lab.instances == 3);
  CHECK(combine(c.combiner, 2.0, 4.0) == doctest::Approx(4.0 + 0.25 * 2.0));
  // the echo parses back to the same config
  const auto again = PipelineConfig::from_json(c.echo);
  CHECK(again.echo == c.echo);
}

TEST_CASE("gaussian lab mode: identical source and target give zero risk") {
  const auto c = PipelineConfig::from_json(Json::parse(R"({"mode": "gaussian_lab", "seed": 5,
      "gaussian_lab": {"instances": 4, "x_dim": 3, "identical": true}})"));
  const auto doc = run(c);
  REQUIRE(doc.rows.size() == 4);
  for (const auto& r : doc.rows) {
    CHECK(r.input_risk == 0.0);
    CHECK(r.output_risk == doctest::Approx(0.0).scale(1.0));
    CHECK(r.transfer_risk == doctest::Approx(0.0).scale(1.0));
  }
  for (const auto& l : doc.lab_rows) {
    CHECK(l.regret == doctest::Approx(0.0).scale(1.0));
    CHECK(l.kl.total == doctest::Approx(0.0).scale(1.0));
  }
  CHECK_FALSE(doc.spearman.has_value());
}

TEST_CASE("override stub reproduces the published transfer-risk column") {
  TempDir dir("override");
  const auto stub = dir.write("published.csv", kPublishedRows);
  auto c = PipelineConfig::from_json(Json::parse(R"({"mode": "empirical", "override_risks": "x"})"));
  c.override_risks = stub.string();
  const auto doc = run(c);
  const std::vector<double> expected = {0.224, 0.214, 0.330, 0.052, 0.353, 0.201};
  REQUIRE(doc.rows.size() == expected.size());
  int within = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& r = doc.rows[i];
    within += std::abs(r.transfer_risk - expected[i]) <= 1e-3;
    // the published inputs carry three decimals and the coefficients two; C is increasing in all four
    const double lo = 0.305 * (r.input_risk - 5e-4) + 0.915 * std::pow(r.output_risk - 5e-4, 2);
    const double hi = 0.315 * (r.input_risk + 5e-4) + 0.925 * std::pow(r.output_risk + 5e-4, 2);
    CHECK(expected[i] >= lo - 5e-4);
    CHECK(expected[i] <= hi + 5e-4);
  }
  // D-W lands at 0.20204 from the rounded inputs, just outside 1e-3 of the printed 0.201
  CHECK(within == 5);
  CHECK(doc.rows[5].transfer_risk == doctest::Approx(0.31 * 0.148 + 0.92 * 0.412 * 0.412).epsilon(1e-15));
  REQUIRE(doc.spearman.has_value());
  CHECK(*doc.spearman < 0.0);

  const auto bad = dir.write("bad.csv", "source,target,input_risk\nA,W,0.1\n");
  CHECK_THROWS_AS(read_override_risks(bad, c.combiner), ParseError);
}

TEST_CASE("report round-trip reproduces combined values exactly") {
  TempDir dir("roundtrip");
  auto c = PipelineConfig::from_json(Json::parse(R"({"mode": "gaussian_lab", "seed": 9,
      "combiner": {"form": "polynomial", "c_i": 0.4, "c_o": 1.3, "power": 2},
      "gaussian_lab": {"instances": 5, "x_dim": 2}})"));
  const auto doc = run(c);
  write_report(doc, dir.path);
  const auto report = Json::parse(slurp(dir.path / "report.json"));
  const auto combiner = combiner_from_json(report["combiner"]);
  const auto rows = read_pairs_csv(dir.path / "pairs.csv");
  REQUIRE(rows.size() == 5);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(combine(combiner, rows[i].input_risk, rows[i].output_risk) == rows[i].transfer_risk);
    CHECK(rows[i].transfer_risk == doc.rows[i].transfer_risk);
    const auto& jr = report["pairs"][i];
    CHECK(combine(combiner, jr["input_risk"].get<double>(), jr["output_risk"].get<double>()) ==
          jr["transfer_risk"].get<double>());
  }
  std::vector<std::string> keys;
  for (const auto& [k, _] : report.items()) keys.push_back(k);
  CHECK(keys.front() == "tool_version");
  CHECK(report.contains("plot_data"));
  CHECK(report["gaussian_lab"].size() == 5);
}

TEST_CASE("rescaling constant input risk leaves the ordering unchanged") {
  TempDir dir("rescale");
  const auto stub = dir.write("rows.csv",
                              "source,target,input_risk,output_risk\n"
                              "a,b,0.3,0.9\nb,a,0.3,0.1\nc,a,0.3,0.5\na,c,0.3,0.2\n");
  auto order = [&](double rescale) {
    const auto combiner = RiskCombiner::linear(0.4);
    auto rows = read_override_risks(stub, combiner);
    std::vector<double> c;
    for (auto& r : rows) c.push_back(combine(combiner, rescale * r.input_risk, r.output_risk));
    return std::pair{oracle::ranks_by_counting(c), c};
  };
  const auto [r1, c1] = order(1.0);
  const auto [r7, c7] = order(7.0);
  CHECK(r1 == r7);
  CHECK(c1 != c7);
}

TEST_CASE("combiner fit: a perfect linear relation") {
  std::vector<FitRow> rows;
  for (int i = 0; i < 8; ++i) {
    const double ei = 0.1 * i;
    rows.push_back({ei, 0.25, 1.0 - ei});
  }
  const auto fit = fit_combiner(rows, CombinerForm::linear);
  CHECK(std::abs(fit.correlation) >= 0.999);
  CHECK(combine(fit.combiner, 1.0, 0.0) > 0.0);
}

TEST_CASE("combiner fit: published rows fit at least as well as the published coefficients") {
  const std::vector<FitRow> rows = {{0.181, 0.428, 80.9}, {0.263, 0.380, 83.1}, {0.181, 0.545, 66.9},
                                    {0.148, 0.084, 94.5}, {0.263, 0.543, 66.6}, {0.148, 0.412, 87.8}};
  std::vector<double> acc, published;
  for (const auto& r : rows) {
    acc.push_back(r.accuracy);
    published.push_back(0.31 * r.input_risk + 0.92 * r.output_risk * r.output_risk);
  }
  const double ref = std::abs(oracle::pearson_naive(published, acc));
  const auto fit = fit_combiner(rows, CombinerForm::polynomial2);
  MESSAGE("fitted |corr| " << std::abs(fit.correlation) << ", published |corr| " << ref);
  CHECK(std::abs(fit.correlation) >= ref - 1e-12);
  std::vector<double> fitted;
  for (const auto& r : rows) fitted.push_back(combine(fit.combiner, r.input_risk, r.output_risk));
  CHECK(std::abs(oracle::pearson_naive(fitted, acc) - fit.correlation) <= 1e-12);
}

TEST_CASE("combiner fit: constant input risk reduces to the output risk ordering") {
  const std::vector<FitRow> rows = {{0.2, 0.50, 70.0}, {0.2, 0.10, 91.0}, {0.2, 0.30, 80.0},
                                    {0.2, 0.45, 74.0}, {0.2, 0.05, 88.0}};
  for (auto form : {CombinerForm::linear, CombinerForm::polynomial2}) {
    const auto fit = fit_combiner(rows, form, FitGrid{21, 2.0});
    // brute force over the same rows: the highest combined risk sits on the largest output risk
    std::size_t argmax = 0, argmax_eo = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (combine(fit.combiner, rows[i].input_risk, rows[i].output_risk) >
          combine(fit.combiner, rows[argmax].input_risk, rows[argmax].output_risk))
        argmax = i;
      if (rows[i].output_risk > rows[argmax_eo].output_risk) argmax_eo = i;
    }
    CHECK(argmax == argmax_eo);
  }
}

TEST_CASE("combiner fit: degenerate rows") {
  CHECK_THROWS_AS(fit_combiner({{0.1, 0.2, 1.0}, {0.2, 0.3, 2.0}}, CombinerForm::linear), InvalidArgument);
  CHECK_THROWS_AS(fit_combiner({{0.1, 0.2, 1.0}, {0.2, 0.3, 1.0}, {0.3, 0.1, 1.0}}, CombinerForm::polynomial2),
                  InvalidArgument);
  CHECK_THROWS_AS(parse_combiner_form("cubic"), Error);
}

TEST_CASE("cli: repeated runs write byte-identical pair tables") {
  TempDir dir("cli");
  const auto cfg = dir.write("cfg.json", small_synthetic_config(7).dump(2));
  REQUIRE(run_cli("run --config " + cfg.string() + " --out " + (dir.path / "a").string()) == 0);
  REQUIRE(run_cli("run --config " + cfg.string() + " --out " + (dir.path / "b").string()) == 0);
  const auto a = slurp(dir.path / "a" / "pairs.csv");
  CHECK(a.size() > 0);
  CHECK(a == slurp(dir.path / "b" / "pairs.csv"));
  REQUIRE(run_cli("run --config " + cfg.string() + " --seed 8 --out " + (dir.path / "c").string()) == 0);
  CHECK(a != slurp(dir.path / "c" / "pairs.csv"));
  const auto report = Json::parse(slurp(dir.path / "a" / "report.json"));
  CHECK(report["pairs"].size() == 6);
}

TEST_CASE("cli: failures exit nonzero with a structured error") {
  TempDir dir("clierr");
  const auto cfg = dir.write("cfg.json", R"({"mode": "gaussian_lab", "bogus": 1})");
  CHECK(run_cli("run --config " + cfg.string() + " --out " + (dir.path / "o").string()) == 1);
  const auto err = Json::parse(slurp(dir.path / "o" / "error.json"));
  CHECK(err["error"]["kind"] == "parse");
  CHECK(err["error"]["message"].get<std::string>().find("bogus") != std::string::npos);

  const auto data = dir.write("d.csv", "f,label\n1,0\nx,1\n");
  CHECK(run_cli("ingest-check --data " + data.string()) == 1);
  CHECK(run_cli("ingest-check --data " + dir.write("ok.csv", "f,label\n1,0\n2,1\n").string()) == 0);

  const auto stub = dir.write("t1.csv", kPublishedRows);
  const auto rows = dir.write("pairs.csv", pairs_csv(read_override_risks(stub, RiskCombiner::polynomial(0.31, 0.92, 2))));
  CHECK(run_cli("fit-combiner --rows " + stub.string()) == 1);
  CHECK(run_cli("fit-combiner --rows " + rows.string() + " --out " + (dir.path / "fit").string()) == 0);
  CHECK(fs::exists(dir.path / "fit" / "fit.json"));
  CHECK(run_cli("frobnicate") != 0);
}
