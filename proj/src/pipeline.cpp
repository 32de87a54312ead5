#include "trk/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "trk/errors.hpp"
#include "trk/rng.hpp"
#include "trk/stats.hpp"

namespace trk::pipeline {

namespace {

// ---------------------------------------------------------------- text tables

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // 1-based source line of each row
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  std::string out = s.substr(b, e - b + 1);
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') quoted = !quoted;
    if (c == ',' && !quoted) {
      cells.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(trim(cur));
  return cells;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Table read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  Table t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw ParseError(path.string() + ": line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
    t.lines.push_back(lineno);
  }
  if (t.header.empty()) throw ParseError(path.string() + ": empty file");
  return t;
}

std::optional<double> to_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

double cell_number(const std::string& cell, const std::string& where, const std::string& column) {
  if (cell.empty()) throw ParseError(where + ", column '" + column + "': missing value");
  auto v = to_double(cell);
  if (!v) throw ParseError(where + ", column '" + column + "': not a finite number: '" + cell + "'");
  return *v;
}

std::ptrdiff_t column_index(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : it - header.begin();
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// --------------------------------------------------------------- json helpers

void allow_keys(const Json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ParseError(where + ": expected an object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* a : keys) ok = ok || k == a;
    if (!ok) throw ParseError(where + ": unknown key '" + k + "'");
  }
}

template <typename T>
T get_or(const Json& j, const char* key, const std::string& where, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(where + "." + key + ": wrong type");
  }
}

double get_number(const Json& j, const char* key, const std::string& where, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw ParseError(where + "." + key + ": expected a number");
  const double v = j.at(key).get<double>();
  if (!std::isfinite(v)) throw ParseError(where + "." + key + ": not finite");
  return v;
}

std::size_t get_count(const Json& j, const char* key, const std::string& where, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_unsigned() && !(j.at(key).is_number_integer() && j.at(key).get<long long>() >= 0))
    throw ParseError(where + "." + key + ": expected a nonnegative integer");
  return j.at(key).get<std::size_t>();
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ParseError(msg);
}

Vector vector_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ParseError(where + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ParseError(where + "[" + std::to_string(i) + "]: expected a number");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

Matrix matrix_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ParseError(where + ": expected a nonempty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Vector row = vector_from_json(j[r], where + "[" + std::to_string(r) + "]");
    if (static_cast<std::size_t>(row.size()) != cols) throw ParseError(where + ": ragged rows");
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

Json to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Json to_json(const Matrix& m) {
  Json a = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(to_json(Vector(m.row(r).transpose())));
  return a;
}

GaussianJoint joint_from_json(const Json& j, const std::string& where) {
  allow_keys(j, where, {"mu_x", "mu_y", "sigma_xx", "sigma_xy", "sigma_yy"});
  for (const char* k : {"mu_x", "mu_y", "sigma_xx", "sigma_xy", "sigma_yy"})
    require(j.contains(k), where + ": missing '" + k + "'");
  try {
    return GaussianJoint(vector_from_json(j["mu_x"], where + ".mu_x"), vector_from_json(j["mu_y"], where + ".mu_y"),
                         matrix_from_json(j["sigma_xx"], where + ".sigma_xx"),
                         matrix_from_json(j["sigma_xy"], where + ".sigma_xy"),
                         matrix_from_json(j["sigma_yy"], where + ".sigma_yy"));
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
}

Json joint_to_json(const GaussianJoint& g) {
  Json j;
  j["mu_x"] = to_json(g.mu_x());
  j["mu_y"] = to_json(g.mu_y());
  j["sigma_xx"] = to_json(g.sigma_xx());
  j["sigma_xy"] = to_json(g.sigma_xy());
  j["sigma_yy"] = to_json(g.sigma_yy());
  return j;
}

ft::TrainConfig train_from_json(const Json& j, const std::string& where, ft::TrainConfig base) {
  allow_keys(j, where, {"epochs", "learning_rate", "plateau_stop", "plateau_patience", "plateau_tolerance"});
  base.epochs = get_count(j, "epochs", where, base.epochs);
  base.learning_rate = get_number(j, "learning_rate", where, base.learning_rate);
  base.plateau_stop = get_or<bool>(j, "plateau_stop", where, base.plateau_stop);
  base.plateau_patience = get_count(j, "plateau_patience", where, base.plateau_patience);
  base.plateau_tolerance = get_number(j, "plateau_tolerance", where, base.plateau_tolerance);
  try {
    base.validate();
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
  return base;
}

Json train_to_json(const ft::TrainConfig& t) {
  Json j;
  j["epochs"] = t.epochs;
  j["learning_rate"] = t.learning_rate;
  j["plateau_stop"] = t.plateau_stop;
  j["plateau_patience"] = t.plateau_patience;
  j["plateau_tolerance"] = t.plateau_tolerance;
  return j;
}

DivergenceConfig divergence_from_json(const Json& j) {
  const std::string where = "divergence";
  allow_keys(j, where, {"kind", "p", "method", "sinkhorn_epsilon", "sinkhorn_max_iter", "sinkhorn_tolerance",
                        "lp_max_support"});
  DivergenceConfig d;
  try {
    d.kind = parse_divergence(get_or<std::string>(j, "kind", where, "wasserstein"));
    d.ot.method = parse_ot_method(get_or<std::string>(j, "method", where, "auto"));
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
  d.ot.order = get_number(j, "p", where, d.ot.order);
  if (j.contains("sinkhorn_epsilon")) d.ot.sinkhorn_epsilon = get_number(j, "sinkhorn_epsilon", where, 0.0);
  d.ot.sinkhorn_max_iter = get_count(j, "sinkhorn_max_iter", where, d.ot.sinkhorn_max_iter);
  d.ot.sinkhorn_tolerance = get_number(j, "sinkhorn_tolerance", where, d.ot.sinkhorn_tolerance);
  d.ot.lp_max_support = get_count(j, "lp_max_support", where, d.ot.lp_max_support);
  try {
    d.ot.validate();
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
  return d;
}

Json divergence_to_json(const DivergenceConfig& d) {
  Json j;
  j["kind"] = to_string(d.kind);
  j["p"] = d.ot.order;
  j["method"] = to_string(d.ot.method);
  if (d.ot.sinkhorn_epsilon) j["sinkhorn_epsilon"] = *d.ot.sinkhorn_epsilon;
  j["sinkhorn_max_iter"] = d.ot.sinkhorn_max_iter;
  j["sinkhorn_tolerance"] = d.ot.sinkhorn_tolerance;
  j["lp_max_support"] = d.ot.lp_max_support;
  return j;
}

Json config_to_json(const PipelineConfig& c) {
  Json j;
  j["mode"] = to_string(c.mode);
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["combiner"] = combiner_to_json(c.combiner);
  j["divergence"] = divergence_to_json(c.divergence);
  Json t;
  t["risk"] = train_to_json(c.risk_training);
  t["accuracy"] = train_to_json(c.accuracy_training);
  t["source"] = train_to_json(c.source_training);
  j["training"] = t;
  j["input_risk_rescale"] = c.input_rescale;
  switch (c.mode) {
    case Mode::empirical: {
      Json ds = Json::array();
      for (const auto& d : c.domains) {
        Json e;
        e["name"] = d.name;
        e["path"] = d.path;
        e["format"] = d.format == DataFormat::csv ? "csv" : "json";
        e["label_column"] = d.label_column;
        ds.push_back(e);
      }
      j["empirical"] = Json{{"domains", ds}};
      break;
    }
    case Mode::gaussian_lab: {
      const auto& g = c.gaussian_lab;
      Json e;
      e["instances"] = g.instances;
      e["x_dim"] = g.random.x_dim;
      e["eig_min"] = g.random.eig_min;
      e["eig_max"] = g.random.eig_max;
      e["mean_scale"] = g.random.mean_scale;
      e["identical"] = g.identical;
      if (g.source) e["source"] = joint_to_json(*g.source);
      if (g.target) e["target"] = joint_to_json(*g.target);
      j["gaussian_lab"] = e;
      break;
    }
    case Mode::synthetic_office: {
      const auto& s = c.synthetic;
      Json e;
      e["num_classes"] = s.num_classes;
      e["dim"] = s.dim;
      e["points_per_class"] = s.points_per_class;
      e["class_radius"] = s.class_radius;
      Json ds = Json::array();
      for (const auto& d : s.domains) ds.push_back(Json{{"name", d.name}, {"shift", d.shift}, {"noise", d.noise}});
      e["domains"] = ds;
      j["synthetic_office"] = e;
      break;
    }
  }
  j["fit"] = Json{{"grid_points", c.fit.grid_points}, {"max_coeff", c.fit.max_coeff}};
  if (c.override_risks) j["override_risks"] = *c.override_risks;
  return j;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

// ----------------------------------------------------------------- run modes

AffineModel least_squares_head(const Matrix& x, const std::vector<double>& y) {
  Matrix design(x.rows(), x.cols() + 1);
  design << x, Matrix::Ones(x.rows(), 1);
  const Vector target = Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(y.size()));
  const Vector coef = design.colPivHouseholderQr().solve(target);
  return AffineModel(coef.head(x.cols()).transpose(), coef.tail(1));
}

std::vector<ReportRow> run_empirical(const PipelineConfig& c) {
  if (c.divergence.kind != DivergenceKind::wasserstein)
    throw InvalidArgument("empirical mode needs the wasserstein divergence; KL is undefined between point clouds");
  std::vector<Dataset> data;
  for (const auto& d : c.domains) data.push_back(ingest_dataset(d.path, d.format, d.label_column));
  std::vector<AffineModel> heads;
  for (const auto& d : data) heads.push_back(least_squares_head(d.x.points(), d.targets));

  std::vector<ReportRow> rows;
  for (std::size_t s = 0; s < data.size(); ++s) {
    for (std::size_t t = 0; t < data.size(); ++t) {
      if (s == t) continue;
      if (data[s].x.dim() != data[t].x.dim())
        throw DimensionMismatch("domains '" + c.domains[s].name + "' and '" + c.domains[t].name +
                                "' have different feature counts");
      spdlog::info("empirical pair {} -> {}", c.domains[s].name, c.domains[t].name);
      const auto dim = data[t].x.dim();
      ReportRow r;
      r.source = c.domains[s].name;
      r.target = c.domains[t].name;
      r.input_risk = c.input_rescale * input_risk(TransportMap::identity(dim), data[t].x, data[s].x, c.divergence);
      const TransportPair frame(TransportMap::identity(dim), TransportMap::affine(heads[s]),
                                TransportMap::affine(AffineModel(Matrix::Identity(1, 1), Vector::Zero(1))),
                                OutputMode::y_only);
      ft::TrainConfig train = c.risk_training;
      train.seed = c.seed;
      const auto proxy = EmpiricalDistribution::from_values(data[t].targets);
      r.output_risk = ft::minimize_output_risk(frame, data[t].x, proxy, c.divergence.ot, train).risk;
      r.transfer_risk = combine(c.combiner, r.input_risk, r.output_risk);
      rows.push_back(r);
    }
  }
  return rows;
}

void run_gaussian_lab(const PipelineConfig& c, std::vector<ReportRow>& rows, std::vector<LabRow>& lab_rows) {
  const auto& g = c.gaussian_lab;
  Rng rng(c.seed);
  std::vector<std::pair<GaussianJoint, GaussianJoint>> instances;
  if (g.source) {
    const GaussianJoint target = g.identical ? *g.source : *g.target;
    instances.emplace_back(*g.source, target);
  } else {
    for (std::size_t i = 0; i < g.instances; ++i) {
      GaussianJoint s = lab::random_joint(g.random, rng);
      GaussianJoint t = g.identical ? s : lab::random_joint(g.random, rng);
      instances.emplace_back(std::move(s), std::move(t));
    }
  }
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const lab::GaussianTask source{instances[i].first, lab::Role::source};
    const lab::GaussianTask target{instances[i].second, lab::Role::target};
    LabRow lr;
    lr.name = "instance_" + std::to_string(i);
    lr.w = lab::basic_case_w(source, target);
    try {
      lr.kl = lab::basic_case_kl(source, target);
    } catch (const DegenerateDistribution&) {
      lr.kl_defined = false;
    }
    const auto rr = lab::risk_regret_residual(source, target);
    lr.regret = rr.regret;
    lr.residual = rr.residual;

    ReportRow r;
    r.source = "S" + std::to_string(i);
    r.target = "T" + std::to_string(i);
    r.input_risk = c.input_rescale * std::sqrt(std::max(
                                         0.0, gaussian_w2(target.joint.x_marginal(), source.joint.x_marginal())));
    r.output_risk = c.divergence.kind == DivergenceKind::kl ? (lr.kl_defined ? lr.kl.total : INFINITY) : lr.w.total;
    if (!std::isfinite(r.output_risk))
      throw DegenerateDistribution(lr.name + ": KL output risk undefined for a degenerate output law");
    r.transfer_risk = combine(c.combiner, r.input_risk, r.output_risk);
    rows.push_back(r);
    lab_rows.push_back(lr);
  }
}

std::vector<ReportRow> run_synthetic_office(const PipelineConfig& c) {
  if (c.divergence.kind != DivergenceKind::wasserstein)
    throw InvalidArgument("synthetic_office mode needs the wasserstein divergence");
  ft::SyntheticOfficeParams params = c.synthetic;
  params.seed = c.seed;
  const auto domains = ft::make_synthetic_domains(params);
  ft::PairEvaluationConfig pc;
  pc.source_training = c.source_training;
  pc.risk_training = c.risk_training;
  pc.accuracy_training = c.accuracy_training;
  pc.input_ot = c.divergence.ot;
  pc.output_ot = c.divergence.ot;
  pc.input_rescale = c.input_rescale;
  pc.seed = c.seed;
  std::vector<ReportRow> rows;
  for (const auto& p : ft::evaluate_risk_accuracy_pairs(domains, c.combiner, pc))
    rows.push_back({p.source, p.target, p.accuracy, p.input_risk, p.output_risk, p.transfer_risk});
  return rows;
}

}  // namespace

// ------------------------------------------------------------------ public

DataFormat parse_format(const std::string& s) {
  if (s == "csv") return DataFormat::csv;
  if (s == "json") return DataFormat::json;
  throw ParseError("unknown data format '" + s + "' (expected csv or json)");
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::empirical: return "empirical";
    case Mode::gaussian_lab: return "gaussian_lab";
    case Mode::synthetic_office: return "synthetic_office";
  }
  return "empirical";
}

Dataset ingest_dataset(const std::filesystem::path& path, DataFormat format, const std::string& label_column,
                       const std::string& weight_column) {
  std::vector<std::string> header;
  std::vector<std::vector<double>> values;  // per row, header order
  const std::string name = path.string();

  if (format == DataFormat::csv) {
    const Table t = read_csv(path);
    header = t.header;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      std::vector<double> row;
      for (std::size_t c = 0; c < header.size(); ++c)
        row.push_back(cell_number(t.rows[r][c], name + ": line " + std::to_string(t.lines[r]), header[c]));
      values.push_back(std::move(row));
    }
  } else {
    Json doc;
    try {
      doc = Json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(name + ": " + e.what());
    }
    if (!doc.is_array()) throw ParseError(name + ": expected an array of row objects");
    for (std::size_t r = 0; r < doc.size(); ++r) {
      const Json& obj = doc[r];
      const std::string where = name + ": row " + std::to_string(r);
      if (!obj.is_object()) throw ParseError(where + ": expected an object");
      if (r == 0)
        for (const auto& [k, _] : obj.items()) header.push_back(k);
      if (obj.size() != header.size()) throw ParseError(where + ": has " + std::to_string(obj.size()) +
                                                        " columns, first row has " + std::to_string(header.size()));
      std::vector<double> row;
      for (const auto& col : header) {
        if (!obj.contains(col)) throw ParseError(where + ", column '" + col + "': missing value");
        const Json& v = obj[col];
        if (!v.is_number() || !std::isfinite(v.get<double>()))
          throw ParseError(where + ", column '" + col + "': not a finite number");
        row.push_back(v.get<double>());
      }
      values.push_back(std::move(row));
    }
  }
  if (values.empty()) throw ParseError(name + ": no data rows");

  const auto label_idx = column_index(header, label_column);
  if (label_idx < 0) throw ParseError(name + ": no label column '" + label_column + "'");
  const auto weight_idx = column_index(header, weight_column);

  std::vector<std::size_t> feature_cols;
  std::vector<std::string> feature_names;
  std::vector<double> targets;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (static_cast<std::ptrdiff_t>(c) == label_idx || static_cast<std::ptrdiff_t>(c) == weight_idx) continue;
    feature_cols.push_back(c);
    feature_names.push_back(header[c]);
  }
  if (feature_cols.empty()) throw ParseError(name + ": no feature columns");

  const auto n = static_cast<Eigen::Index>(values.size());
  Matrix pts(n, static_cast<Eigen::Index>(feature_cols.size()));
  Vector w = Vector::Constant(n, 1.0 / static_cast<double>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = values[static_cast<std::size_t>(r)];
    for (std::size_t c = 0; c < feature_cols.size(); ++c) pts(r, static_cast<Eigen::Index>(c)) = row[feature_cols[c]];
    targets.push_back(row[static_cast<std::size_t>(label_idx)]);
    if (weight_idx >= 0) w(r) = row[static_cast<std::size_t>(weight_idx)];
  }
  try {
    return Dataset{EmpiricalDistribution(std::move(pts), std::move(w)), std::move(targets), std::move(feature_names)};
  } catch (const InvalidArgument& e) {
    throw ParseError(name + ": " + e.what());
  }
}

Json combiner_to_json(const RiskCombiner& c) {
  Json j;
  if (const auto* l = std::get_if<RiskCombiner::Linear>(&c.repr())) {
    j["form"] = "linear";
    j["lambda"] = l->lambda;
  } else {
    const auto& p = std::get<RiskCombiner::Polynomial>(c.repr());
    j["form"] = "polynomial";
    j["c_i"] = p.c_i;
    j["c_o"] = p.c_o;
    j["power"] = p.power;
  }
  return j;
}

RiskCombiner combiner_from_json(const Json& j) {
  const std::string where = "combiner";
  if (!j.is_object()) throw ParseError(where + ": expected an object");
  const auto form = get_or<std::string>(j, "form", where, "polynomial");
  try {
    if (form == "linear") {
      allow_keys(j, where, {"form", "lambda"});
      require(j.contains("lambda"), where + ": missing 'lambda'");
      return RiskCombiner::linear(get_number(j, "lambda", where, 0.0));
    }
    if (form == "polynomial") {
      allow_keys(j, where, {"form", "c_i", "c_o", "power"});
      return RiskCombiner::polynomial(get_number(j, "c_i", where, 0.31), get_number(j, "c_o", where, 0.92),
                                      get_number(j, "power", where, 2.0));
    }
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
  throw ParseError(where + ": unknown form '" + form + "' (expected linear or polynomial)");
}

PipelineConfig PipelineConfig::from_json(const Json& doc) {
  allow_keys(doc, "config", {"mode", "seed", "output_dir", "combiner", "divergence", "training", "input_risk_rescale",
                             "empirical", "gaussian_lab", "synthetic_office", "fit", "override_risks"});
  PipelineConfig c;
  require(doc.contains("mode"), "config: missing 'mode'");
  const auto mode = get_or<std::string>(doc, "mode", "config", "");
  if (mode == "empirical") c.mode = Mode::empirical;
  else if (mode == "gaussian_lab") c.mode = Mode::gaussian_lab;
  else if (mode == "synthetic_office") c.mode = Mode::synthetic_office;
  else throw ParseError("config.mode: unknown mode '" + mode + "'");

  if (doc.contains("seed")) {
    require(doc["seed"].is_number_unsigned() || (doc["seed"].is_number_integer() && doc["seed"].get<long long>() >= 0),
            "config.seed: expected a nonnegative integer");
    c.seed = doc["seed"].get<std::uint64_t>();
  }
  c.output_dir = get_or<std::string>(doc, "output_dir", "config", c.output_dir);
  if (doc.contains("combiner")) c.combiner = combiner_from_json(doc["combiner"]);
  if (doc.contains("divergence")) c.divergence = divergence_from_json(doc["divergence"]);
  if (doc.contains("training")) {
    const Json& t = doc["training"];
    allow_keys(t, "training", {"risk", "accuracy", "source"});
    if (t.contains("risk")) c.risk_training = train_from_json(t["risk"], "training.risk", c.risk_training);
    if (t.contains("accuracy"))
      c.accuracy_training = train_from_json(t["accuracy"], "training.accuracy", c.accuracy_training);
    if (t.contains("source")) c.source_training = train_from_json(t["source"], "training.source", c.source_training);
  }
  c.input_rescale = get_number(doc, "input_risk_rescale", "config", c.input_rescale);
  require(c.input_rescale > 0.0, "config.input_risk_rescale: must be positive");

  for (const char* section : {"empirical", "gaussian_lab", "synthetic_office"})
    if (doc.contains(section) && section != to_string(c.mode))
      throw ParseError(std::string("config.") + section + ": does not apply to mode '" + mode + "'");

  if (doc.contains("override_risks")) {
    require(c.mode == Mode::empirical, "config.override_risks: only valid in empirical mode");
    c.override_risks = get_or<std::string>(doc, "override_risks", "config", "");
  }

  switch (c.mode) {
    case Mode::empirical: {
      if (!doc.contains("empirical")) {
        require(c.override_risks.has_value(), "config: empirical mode needs an 'empirical' section or override_risks");
        break;
      }
      const Json& e = doc["empirical"];
      allow_keys(e, "empirical", {"domains"});
      require(e.contains("domains") && e["domains"].is_array(), "empirical.domains: expected an array");
      for (std::size_t i = 0; i < e["domains"].size(); ++i) {
        const Json& d = e["domains"][i];
        const std::string where = "empirical.domains[" + std::to_string(i) + "]";
        allow_keys(d, where, {"name", "path", "format", "label_column"});
        require(d.contains("name") && d.contains("path"), where + ": needs 'name' and 'path'");
        DomainSource ds;
        ds.name = get_or<std::string>(d, "name", where, "");
        ds.path = get_or<std::string>(d, "path", where, "");
        ds.format = parse_format(get_or<std::string>(d, "format", where, "csv"));
        ds.label_column = get_or<std::string>(d, "label_column", where, ds.label_column);
        c.domains.push_back(ds);
      }
      require(c.override_risks || c.domains.size() >= 2, "empirical.domains: need at least two domains");
      break;
    }
    case Mode::gaussian_lab: {
      const Json e = doc.contains("gaussian_lab") ? doc["gaussian_lab"] : Json::object();
      const std::string where = "gaussian_lab";
      allow_keys(e, where, {"instances", "x_dim", "eig_min", "eig_max", "mean_scale", "identical", "source", "target"});
      auto& g = c.gaussian_lab;
      g.instances = get_count(e, "instances", where, g.instances);
      g.random.x_dim = static_cast<Eigen::Index>(get_count(e, "x_dim", where, 2));
      g.random.y_dim = 1;
      g.random.eig_min = get_number(e, "eig_min", where, g.random.eig_min);
      g.random.eig_max = get_number(e, "eig_max", where, g.random.eig_max);
      g.random.mean_scale = get_number(e, "mean_scale", where, g.random.mean_scale);
      g.identical = get_or<bool>(e, "identical", where, false);
      require(g.instances >= 1, where + ".instances: must be at least 1");
      require(g.random.x_dim >= 1, where + ".x_dim: must be at least 1");
      require(g.random.eig_min > 0.0 && g.random.eig_max >= g.random.eig_min,
              where + ": need 0 < eig_min <= eig_max");
      require(g.random.mean_scale >= 0.0, where + ".mean_scale: must be nonnegative");
      if (e.contains("source")) g.source = joint_from_json(e["source"], where + ".source");
      if (e.contains("target")) g.target = joint_from_json(e["target"], where + ".target");
      require(!g.target || g.source, where + ": 'target' given without 'source'");
      require(!g.source || g.identical || g.target, where + ": 'source' needs 'target' or identical = true");
      for (const auto* j : {g.source ? &*g.source : nullptr, g.target ? &*g.target : nullptr})
        if (j) require(j->y_dim() == 1, where + ": only scalar outputs are supported");
      if (g.source && g.target) require(g.source->x_dim() == g.target->x_dim(), where + ": x dimensions differ");
      break;
    }
    case Mode::synthetic_office: {
      const Json e = doc.contains("synthetic_office") ? doc["synthetic_office"] : Json::object();
      const std::string where = "synthetic_office";
      allow_keys(e, where, {"num_classes", "dim", "points_per_class", "class_radius", "domains"});
      auto& s = c.synthetic;
      s.num_classes = static_cast<int>(get_count(e, "num_classes", where, static_cast<std::size_t>(s.num_classes)));
      s.dim = static_cast<Eigen::Index>(get_count(e, "dim", where, static_cast<std::size_t>(s.dim)));
      s.points_per_class =
          static_cast<int>(get_count(e, "points_per_class", where, static_cast<std::size_t>(s.points_per_class)));
      s.class_radius = get_number(e, "class_radius", where, s.class_radius);
      require(s.num_classes >= 2, where + ".num_classes: must be at least 2");
      require(s.dim >= 2, where + ".dim: must be at least 2");
      require(s.points_per_class >= 4, where + ".points_per_class: must be at least 4");
      require(s.class_radius > 0.0, where + ".class_radius: must be positive");
      if (e.contains("domains")) {
        require(e["domains"].is_array(), where + ".domains: expected an array");
        s.domains.clear();
        for (std::size_t i = 0; i < e["domains"].size(); ++i) {
          const Json& d = e["domains"][i];
          const std::string dw = where + ".domains[" + std::to_string(i) + "]";
          allow_keys(d, dw, {"name", "shift", "noise"});
          require(d.contains("name"), dw + ": missing 'name'");
          ft::DomainStyle st;
          st.name = get_or<std::string>(d, "name", dw, "");
          st.shift = get_number(d, "shift", dw, 0.0);
          st.noise = get_number(d, "noise", dw, 0.5);
          require(st.noise > 0.0, dw + ".noise: must be positive");
          s.domains.push_back(st);
        }
      }
      require(s.domains.size() >= 2, where + ".domains: need at least two domains");
      break;
    }
  }

  if (doc.contains("fit")) {
    const Json& f = doc["fit"];
    allow_keys(f, "fit", {"grid_points", "max_coeff"});
    c.fit.grid_points = get_count(f, "grid_points", "fit", c.fit.grid_points);
    c.fit.max_coeff = get_number(f, "max_coeff", "fit", c.fit.max_coeff);
    require(c.fit.grid_points >= 2, "fit.grid_points: must be at least 2");
    require(c.fit.max_coeff > 0.0, "fit.max_coeff: must be positive");
  }
  c.echo = config_to_json(c);
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  Json doc;
  try {
    doc = Json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  auto cfg = from_json(doc);
  // relative dataset paths resolve against the config file
  const auto base = path.parent_path();
  for (auto& d : cfg.domains)
    if (std::filesystem::path(d.path).is_relative()) d.path = (base / d.path).lexically_normal().string();
  if (cfg.override_risks && std::filesystem::path(*cfg.override_risks).is_relative())
    cfg.override_risks = (base / *cfg.override_risks).lexically_normal().string();
  return cfg;
}

std::vector<ReportRow> read_override_risks(const std::filesystem::path& path, const RiskCombiner& combiner) {
  const Table t = read_csv(path);
  const std::string name = path.string();
  const auto src = column_index(t.header, "source");
  const auto tgt = column_index(t.header, "target");
  const auto ei = column_index(t.header, "input_risk");
  const auto eo = column_index(t.header, "output_risk");
  const auto acc = column_index(t.header, "accuracy");
  if (src < 0 || tgt < 0 || ei < 0 || eo < 0)
    throw ParseError(name + ": need columns source, target, input_risk, output_risk");
  if (t.rows.empty()) throw ParseError(name + ": no data rows");
  std::vector<ReportRow> rows;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& cells = t.rows[r];
    const std::string where = name + ": line " + std::to_string(t.lines[r]);
    ReportRow row;
    row.source = cells[static_cast<std::size_t>(src)];
    row.target = cells[static_cast<std::size_t>(tgt)];
    row.input_risk = cell_number(cells[static_cast<std::size_t>(ei)], where, "input_risk");
    row.output_risk = cell_number(cells[static_cast<std::size_t>(eo)], where, "output_risk");
    if (acc >= 0 && !cells[static_cast<std::size_t>(acc)].empty())
      row.accuracy = cell_number(cells[static_cast<std::size_t>(acc)], where, "accuracy");
    try {
      row.transfer_risk = combine(combiner, row.input_risk, row.output_risk);
    } catch (const Error& e) {
      throw ParseError(where + ": " + e.what());
    }
    rows.push_back(row);
  }
  return rows;
}

ReportDocument run(const PipelineConfig& config) {
  ReportDocument doc;
  doc.config = config.echo.is_null() ? config_to_json(config) : config.echo;
  doc.combiner = combiner_to_json(config.combiner);

  auto t0 = std::chrono::steady_clock::now();
  spdlog::info("run: mode {}, seed {}", to_string(config.mode), config.seed);
  if (config.override_risks) {
    doc.rows = read_override_risks(*config.override_risks, config.combiner);
    doc.stage_ms.emplace_back("override_risks", elapsed_ms(t0));
  } else {
    switch (config.mode) {
      case Mode::empirical: doc.rows = run_empirical(config); break;
      case Mode::gaussian_lab: run_gaussian_lab(config, doc.rows, doc.lab_rows); break;
      case Mode::synthetic_office: doc.rows = run_synthetic_office(config); break;
    }
    doc.stage_ms.emplace_back(to_string(config.mode), elapsed_ms(t0));
  }

  t0 = std::chrono::steady_clock::now();
  std::vector<double> acc, risk;
  for (const auto& r : doc.rows) {
    if (!r.accuracy) continue;
    acc.push_back(*r.accuracy);
    risk.push_back(r.transfer_risk);
  }
  if (acc.size() >= 3) {
    try {
      doc.spearman = stats::spearman(acc, risk);
      doc.pearson = stats::pearson(acc, risk);
    } catch (const InvalidArgument& e) {
      spdlog::warn("correlation skipped: {}", e.what());
    }
  }
  doc.stage_ms.emplace_back("statistics", elapsed_ms(t0));
  return doc;
}

Json ReportDocument::to_json() const {
  Json j;
  j["tool_version"] = tool_version;
  j["config"] = config;
  j["combiner"] = combiner;
  Json rows_json = Json::array();
  for (const auto& r : rows) {
    Json e;
    e["source"] = r.source;
    e["target"] = r.target;
    e["accuracy"] = r.accuracy ? Json(*r.accuracy) : Json(nullptr);
    e["input_risk"] = r.input_risk;
    e["output_risk"] = r.output_risk;
    e["transfer_risk"] = r.transfer_risk;
    rows_json.push_back(e);
  }
  j["pairs"] = rows_json;
  j["correlation"] = Json{{"spearman", spearman ? Json(*spearman) : Json(nullptr)},
                          {"pearson", pearson ? Json(*pearson) : Json(nullptr)}};
  Json xs = Json::array(), ys = Json::array(), labels = Json::array();
  for (const auto& r : rows) {
    if (!r.accuracy) continue;
    xs.push_back(r.transfer_risk);
    ys.push_back(*r.accuracy);
    labels.push_back(r.source + "-" + r.target);
  }
  j["plot_data"] = Json{{"risk_vs_accuracy", Json{{"x_label", "transfer_risk"},
                                                  {"y_label", "accuracy"},
                                                  {"x", xs},
                                                  {"y", ys},
                                                  {"labels", labels}}}};
  if (!lab_rows.empty()) {
    Json lab_json = Json::array();
    for (const auto& l : lab_rows) {
      Json e;
      e["name"] = l.name;
      if (l.kl_defined)
        e["kl"] = Json{{"variance_term", l.kl.variance_term}, {"bias_term", l.kl.bias_term}, {"total", l.kl.total}};
      else
        e["kl"] = nullptr;
      e["w"] = Json{{"variance_term", l.w.variance_term}, {"bias_term", l.w.bias_term}, {"total", l.w.total}};
      e["regret"] = l.regret;
      e["residual"] = l.residual;
      lab_json.push_back(e);
    }
    j["gaussian_lab"] = lab_json;
  }
  Json timings;
  for (const auto& [stage, ms] : stage_ms) timings[stage] = ms;
  j["timings_ms"] = timings;
  return j;
}

std::string pairs_csv(const std::vector<ReportRow>& rows) {
  std::string out = "source,target,accuracy,input_risk,output_risk,transfer_risk\n";
  for (const auto& r : rows) {
    out += r.source + "," + r.target + "," + (r.accuracy ? fmt17(*r.accuracy) : "") + "," + fmt17(r.input_risk) +
           "," + fmt17(r.output_risk) + "," + fmt17(r.transfer_risk) + "\n";
  }
  return out;
}

std::vector<ReportRow> read_pairs_csv(const std::filesystem::path& path) {
  const Table t = read_csv(path);
  const std::vector<std::string> expected = {"source", "target", "accuracy", "input_risk", "output_risk",
                                             "transfer_risk"};
  if (t.header != expected)
    throw ParseError(path.string() + ": header must be source,target,accuracy,input_risk,output_risk,transfer_risk");
  std::vector<ReportRow> rows;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& c = t.rows[r];
    const std::string where = path.string() + ": line " + std::to_string(t.lines[r]);
    ReportRow row;
    row.source = c[0];
    row.target = c[1];
    if (!c[2].empty()) row.accuracy = cell_number(c[2], where, "accuracy");
    row.input_risk = cell_number(c[3], where, "input_risk");
    row.output_risk = cell_number(c[4], where, "output_risk");
    row.transfer_risk = cell_number(c[5], where, "transfer_risk");
    rows.push_back(row);
  }
  return rows;
}

void write_report(const ReportDocument& doc, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json", std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / "report.json").string());
    out << doc.to_json().dump(2) << "\n";
  }
  std::ofstream out(dir / "pairs.csv", std::ios::binary);
  if (!out) throw Error("cannot write " + (dir / "pairs.csv").string());
  out << pairs_csv(doc.rows);
}

CombinerForm parse_combiner_form(const std::string& s) {
  if (s == "linear") return CombinerForm::linear;
  if (s == "polynomial2") return CombinerForm::polynomial2;
  throw ParseError("unknown combiner form '" + s + "' (expected linear or polynomial2)");
}

FitResult fit_combiner(const std::vector<FitRow>& rows, CombinerForm form, const FitGrid& grid) {
  if (rows.size() < 3) throw InvalidArgument("fit_combiner needs at least 3 rows");
  if (grid.grid_points < 2 || !(grid.max_coeff > 0.0)) throw InvalidArgument("fit grid needs >= 2 points and max > 0");
  std::vector<double> acc;
  for (const auto& r : rows) {
    if (!(r.input_risk >= 0.0) || !(r.output_risk >= 0.0) || !std::isfinite(r.accuracy))
      throw InvalidArgument("fit rows need nonnegative risks and finite accuracy");
    acc.push_back(r.accuracy);
  }
  if (std::all_of(acc.begin(), acc.end(), [&](double a) { return a == acc.front(); }))
    throw InvalidArgument("degenerate rows: accuracy is constant");

  const auto step = grid.max_coeff / static_cast<double>(grid.grid_points - 1);
  std::optional<FitResult> best;
  auto consider = [&](const RiskCombiner& c) {
    std::vector<double> combined;
    for (const auto& r : rows) combined.push_back(c(r.input_risk, r.output_risk));
    if (std::all_of(combined.begin(), combined.end(), [&](double v) { return v == combined.front(); })) return;
    const double corr = stats::pearson(combined, acc);
    if (!best || std::abs(corr) > std::abs(best->correlation)) best = FitResult{c, corr};
  };
  for (std::size_t a = 0; a < grid.grid_points; ++a) {
    if (form == CombinerForm::linear) {
      consider(RiskCombiner::linear(step * static_cast<double>(a)));
      continue;
    }
    for (std::size_t b = 0; b < grid.grid_points; ++b) {
      if (a == 0 && b == 0) continue;
      consider(RiskCombiner::polynomial(step * static_cast<double>(a), step * static_cast<double>(b), 2.0));
    }
  }
  if (!best) throw InvalidArgument("degenerate rows: every grid combiner is constant across rows");
  return *best;
}

}  // namespace trk::pipeline
