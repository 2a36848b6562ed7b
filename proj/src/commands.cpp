#include "hetmed/cli_io.hpp"

#include "hetmed/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace hetmed {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  const std::string s = trim(v);
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(out)) {
    fail(ErrorKind::InvalidConfig, "'" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  const std::string s = trim(v);
  long long out = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    fail(ErrorKind::InvalidConfig, "'" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_seed(const std::string& key, const std::string& v) {
  const std::string s = trim(v);
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    fail(ErrorKind::InvalidConfig, "'" + key + "' expects a nonnegative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  std::string s = trim(v);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  fail(ErrorKind::InvalidConfig, "'" + key + "' expects true or false, got '" + v + "'");
}

int parse_arm(const std::string& key, const std::string& v) {
  const std::string s = trim(v);
  if (s == "1" || s == "+1" || s == "treated" || s == "intervention") return 1;
  if (s == "-1" || s == "control") return -1;
  fail(ErrorKind::InvalidConfig, "'" + key + "' expects treated/control (or 1/-1), got '" + v + "'");
}

std::vector<Index> parse_index_list(const std::string& key, const std::string& v) {
  std::vector<Index> out;
  for (const auto& item : split_list(v)) out.push_back(static_cast<Index>(parse_int(key, item)));
  return out;
}

std::string na_or(const std::optional<double>& v) { return v ? format_number(*v) : "NA"; }

std::string number_or_na(double v) { return std::isfinite(v) ? format_number(v) : "NA"; }

json vec_json(const VectorXd& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json num_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

VectorXd vec_from_json(const json& j, const std::string& key) {
  if (!j.contains(key) || !j[key].is_array()) fail(ErrorKind::FileError, "theta file lacks array '" + key + "'");
  const auto& a = j[key];
  VectorXd v(static_cast<Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) fail(ErrorKind::NonFiniteValue, "theta entry " + key + "[" + std::to_string(i) + "] is not a number");
    v(static_cast<Index>(i)) = a[i].get<double>();
  }
  return v;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::FileError, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) fail(ErrorKind::FileError, "write to '" + path.string() + "' failed");
}

fs::path prepare_out_dir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) fail(ErrorKind::FileError, "cannot create output directory '" + cfg.out_dir.string() + "'");
  return cfg.out_dir;
}

const std::string& require(const Table& t, const std::vector<std::string>& row, const std::string& col) {
  const auto idx = t.column(col);
  if (!idx) fail(ErrorKind::MissingColumn, "effects file lacks column '" + col + "'");
  return row[*idx];
}

double cell_number(const std::string& col, const std::string& s) {
  if (s == "NA") return std::nan("");
  return parse_double(col, s);
}

std::optional<double> cell_optional(const std::string& col, const std::string& s) {
  if (s == "NA") return std::nullopt;
  return parse_double(col, s);
}

json trace_json(const TuningTrace& tr) {
  json j;
  j["sigma2"] = tr.sigma2;
  j["chosen_index"] = tr.chosen_index;
  j["lambdas"] = tr.lambdas;
  j["cp"] = tr.cp_values;
  j["df"] = tr.df_values;
  j["rss"] = tr.rss_values;
  json failed = json::array();
  for (bool f : tr.failed) failed.push_back(f);
  j["failed"] = failed;
  return j;
}

json model_json(const ModelFit& m) {
  json j;
  j["lambda"] = m.fit.lambda;
  j["df"] = m.fit.df;
  j["rss"] = m.fit.rss;
  j["kkt_residual"] = m.fit.kkt_residual;
  j["converged"] = m.fit.converged;
  j["iterations"] = m.fit.iterations;
  j["trace"] = m.trace ? trace_json(*m.trace) : json(nullptr);
  return j;
}

json metrics_json(const EffectMetrics& m) {
  json j;
  j["bias"] = num_json(m.bias);
  j["bias_se"] = num_json(m.bias_se);
  j["mse"] = num_json(m.mse);
  j["median_abs_error"] = num_json(m.median_abs_error);
  j["scaled_bias"] = num_json(m.scaled_bias);
  j["scaled_mse"] = num_json(m.scaled_mse);
  j["ci_width"] = num_json(m.ci_width);
  j["coverage"] = num_json(m.coverage);
  j["pairs"] = m.pairs;
  j["covered"] = m.covered;
  return j;
}

EffectTable effects_for(const RunConfig& cfg, const Dataset& d, std::optional<int> arm) {
  ThetaParams theta;
  FitMethod method;
  if (cfg.theta_path) {
    theta = read_theta_json(*cfg.theta_path);
    method = resolve_method(cfg.method, d.n(), d.p());
  } else {
    method = resolve_method(cfg.method, d.n(), d.p());
    theta = fit_pipeline(d, method, cfg.solver).theta;
  }
  if (theta.p() != d.p()) fail(ErrorKind::DimensionMismatch, "theta does not match the dataset's covariates");
  std::string source = cfg.inference;
  if (source == "auto") source = method == FitMethod::ols ? "wald" : "split";
  if (source == "split") {
    SplitOptions so;
    so.B = cfg.B;
    so.seed = cfg.seed;
    so.level = cfg.level;
    so.t = cfg.t;
    so.solver = cfg.solver;
    const SplitInference split = split_inference(d, so);
    return effect_table(split, d, arm);
  }
  EffectTableOptions eo;
  eo.t = cfg.t;
  eo.level = cfg.level;
  eo.arm = arm;
  std::optional<AsymptoticCovariance> cov;
  if (source == "wald") {
    cov = estimate_covariance(d, theta, cfg.wald_mode);
    eo.covariance = &*cov;
  } else if (source != "none") {
    fail(ErrorKind::InvalidConfig, "unknown inference '" + source + "'");
  }
  return effect_table(theta, d, eo);
}

}  // namespace

// ---- configuration ----------------------------------------------------------------

void RunConfig::check() const {
  if (!(level > 0.0 && level < 1.0)) fail(ErrorKind::InvalidConfig, "level must lie in (0,1)");
  if (B < 2) fail(ErrorKind::InvalidConfig, "B must be at least 2");
  if (t != 1 && t != -1) fail(ErrorKind::InvalidConfig, "t must be 1 or -1");
  if (inference != "auto" && inference != "wald" && inference != "split" && inference != "none") {
    fail(ErrorKind::InvalidConfig, "inference must be auto, wald, split or none");
  }
  if (solver.grid_size < 2) fail(ErrorKind::InvalidConfig, "grid_size must be at least 2");
  if (!(solver.kkt_tol > 0.0) || !(solver.zero_tol >= 0.0) || solver.max_iter < 1) {
    fail(ErrorKind::InvalidConfig, "solver tolerances must be positive");
  }
  if (!(solver.grid_ratio > 0.0 && solver.grid_ratio < 1.0)) fail(ErrorKind::InvalidConfig, "grid_ratio must lie in (0,1)");
  if (solver.ridge_eps && !(*solver.ridge_eps > 0.0)) fail(ErrorKind::InvalidConfig, "ridge_eps must be positive");
}

MethodChoice parse_method(const std::string& s) {
  if (s == "auto") return MethodChoice::automatic;
  if (s == "ols") return MethodChoice::ols;
  if (s == "genlasso") return MethodChoice::genlasso;
  fail(ErrorKind::InvalidConfig, "method must be auto, ols or genlasso, got '" + s + "'");
}

std::string to_string(MethodChoice m) {
  switch (m) {
    case MethodChoice::automatic: return "auto";
    case MethodChoice::ols: return "ols";
    case MethodChoice::genlasso: return "genlasso";
  }
  return "auto";
}

std::string to_string(FitMethod m) {
  switch (m) {
    case FitMethod::ols: return "ols";
    case FitMethod::genlasso: return "genlasso";
    case FitMethod::ridge: return "ridge";
  }
  return "ols";
}

void apply_config_value(RunConfig& cfg, const std::string& raw_key, const std::string& raw_value) {
  std::string key = trim(raw_key);
  std::replace(key.begin(), key.end(), '-', '_');
  const std::string v = trim(raw_value);
  StudyConfig& st = cfg.study;
  if (key == "input") cfg.input = v;
  else if (key == "treatment") cfg.mapping.treatment = v;
  else if (key == "mediator") cfg.mapping.mediator = v;
  else if (key == "outcome") cfg.mapping.outcome = v;
  else if (key == "treated_level") cfg.mapping.treated_level = v;
  else if (key == "covariates") cfg.mapping.covariates = split_list(v);
  else if (key == "ignore") cfg.mapping.ignore = split_list(v);
  else if (key == "binary") {
    for (const auto& c : split_list(v)) cfg.mapping.kind_override[c] = CovariateKind::binary;
  } else if (key == "continuous") {
    for (const auto& c : split_list(v)) cfg.mapping.kind_override[c] = CovariateKind::continuous;
  } else if (key == "method") cfg.method = parse_method(v);
  else if (key == "level") cfg.level = parse_double(key, v);
  else if (key == "B" || key == "b") cfg.B = static_cast<int>(parse_int(key, v));
  else if (key == "seed") cfg.seed = parse_seed(key, v);
  else if (key == "standardize") cfg.standardize = parse_bool(key, v);
  else if (key == "out_dir") cfg.out_dir = v;
  else if (key == "t") cfg.t = parse_arm(key, v);
  else if (key == "arm") {
    if (v == "all") cfg.arm.reset();
    else cfg.arm = parse_arm(key, v);
  } else if (key == "inference") cfg.inference = v;
  else if (key == "wald_covariance") {
    if (v == "joint") cfg.wald_mode = MediatorCovariance::joint;
    else if (v == "structural") cfg.wald_mode = MediatorCovariance::structural;
    else fail(ErrorKind::InvalidConfig, "wald_covariance must be joint or structural");
  } else if (key == "bonferroni") cfg.bonferroni = parse_bool(key, v);
  else if (key == "theta") cfg.theta_path = fs::path(v);
  else if (key == "effects") cfg.effects_path = fs::path(v);
  else if (key == "kkt_tol") cfg.solver.kkt_tol = parse_double(key, v);
  else if (key == "zero_tol") cfg.solver.zero_tol = parse_double(key, v);
  else if (key == "max_iter") cfg.solver.max_iter = static_cast<int>(parse_int(key, v));
  else if (key == "grid_size") cfg.solver.grid_size = static_cast<int>(parse_int(key, v));
  else if (key == "grid_ratio") cfg.solver.grid_ratio = parse_double(key, v);
  else if (key == "ridge_eps") cfg.solver.ridge_eps = parse_double(key, v);
  else if (key == "algorithm") {
    if (v == "auto") cfg.solver.algorithm = GenlassoAlgorithm::automatic;
    else if (v == "cd") cfg.solver.algorithm = GenlassoAlgorithm::coordinate_descent;
    else if (v == "admm") cfg.solver.algorithm = GenlassoAlgorithm::admm;
    else fail(ErrorKind::InvalidConfig, "algorithm must be auto, cd or admm");
  } else if (key == "methods") {
    st.methods.clear();
    for (const auto& m : split_list(v)) {
      if (m == "ols") st.methods.push_back(StudyMethod::ols);
      else if (m == "genlasso") st.methods.push_back(StudyMethod::genlasso);
      else fail(ErrorKind::InvalidConfig, "study methods are ols and genlasso, got '" + m + "'");
    }
  } else if (key == "ns") st.ns = parse_index_list(key, v);
  else if (key == "split_ns") st.split_ns = parse_index_list(key, v);
  else if (key == "replications") st.replications = static_cast<int>(parse_int(key, v));
  else if (key == "test_profiles") st.test_profiles = static_cast<Index>(parse_int(key, v));
  else if (key == "p") st.dgp.p = static_cast<Index>(parse_int(key, v));
  else if (key == "n_continuous") st.dgp.n_continuous = static_cast<Index>(parse_int(key, v));
  else if (key == "n_binary") st.dgp.n_binary = static_cast<Index>(parse_int(key, v));
  else if (key == "sparsity") st.dgp.sparsity = parse_double(key, v);
  else if (key == "noise_sd") st.dgp.noise_sd = parse_double(key, v);
  else if (key == "beta0") st.dgp.beta0 = parse_double(key, v);
  else if (key == "beta1") st.dgp.beta1 = parse_double(key, v);
  else if (key == "coef_lo") st.dgp.coef_lo = parse_double(key, v);
  else if (key == "coef_hi") st.dgp.coef_hi = parse_double(key, v);
  else fail(ErrorKind::InvalidConfig, "unknown config key '" + raw_key + "'");
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::InvalidConfig, "config line " + std::to_string(lineno) + " is not key = value");
    }
    apply_config_value(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
}

void apply_config_file(RunConfig& cfg, const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::FileError, "cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str());
}

FitMethod resolve_method(MethodChoice choice, Index n, Index p_with_intercept) {
  switch (choice) {
    case MethodChoice::ols: return FitMethod::ols;
    case MethodChoice::genlasso: return FitMethod::genlasso;
    case MethodChoice::automatic: break;
  }
  return ols_feasible(n, p_with_intercept - 1) ? FitMethod::ols : FitMethod::genlasso;
}

int exit_code_for(const Error& e) { return e.is_numerical() ? 3 : 2; }

// ---- pipeline -------------------------------------------------------------------

Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.input.empty()) fail(ErrorKind::InvalidConfig, "no input file given");
  if (cfg.mapping.treatment.empty() || cfg.mapping.mediator.empty() || cfg.mapping.outcome.empty()) {
    fail(ErrorKind::InvalidConfig, "treatment, mediator and outcome columns must be named");
  }
  Dataset d = validate_dataset(read_csv_file(cfg.input), cfg.mapping);
  return cfg.standardize ? standardize_covariates(d) : d;
}

PipelineFit fit_pipeline(const Dataset& d, FitMethod method, const SolverOptions& opts) {
  PipelineFit out;
  out.method = method;
  const StackedDesign sm = stack_model(d, ModelKind::mediator);
  const StackedDesign sy = stack_model(d, ModelKind::outcome);
  if (method == FitMethod::ols) {
    out.mediator.fit = fit_ols(sm);
    out.outcome.fit = fit_ols(sy);
  } else if (method == FitMethod::genlasso) {
    auto [fm, tm] = tune_cp(sm, opts);
    auto [fy, ty] = tune_cp(sy, opts);
    out.mediator = {std::move(fm), std::move(tm)};
    out.outcome = {std::move(fy), std::move(ty)};
  } else {
    fail(ErrorKind::InvalidConfig, "the pipeline fits ols or genlasso");
  }
  out.theta = theta_from_fits(recover_phi(out.mediator.fit.phi), recover_phi(out.outcome.fit.phi));
  return out;
}

// ---- serialization ----------------------------------------------------------------

std::string theta_json(const ThetaParams& theta, const std::vector<std::string>& names, FitMethod method) {
  json j;
  j["method"] = to_string(method);
  j["covariates"] = names;
  j["alpha0"] = vec_json(theta.alpha0);
  j["alpha1"] = vec_json(theta.alpha1);
  j["gamma0"] = vec_json(theta.gamma0);
  j["gamma1"] = vec_json(theta.gamma1);
  j["beta0"] = theta.beta0;
  j["beta1"] = theta.beta1;
  return j.dump(2) + "\n";
}

ThetaParams read_theta_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::FileError, "cannot open theta file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::FileError, "theta file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  ThetaParams th;
  th.alpha0 = vec_from_json(j, "alpha0");
  th.alpha1 = vec_from_json(j, "alpha1");
  th.gamma0 = vec_from_json(j, "gamma0");
  th.gamma1 = vec_from_json(j, "gamma1");
  if (!j.contains("beta0") || !j["beta0"].is_number() || !j.contains("beta1") || !j["beta1"].is_number()) {
    fail(ErrorKind::FileError, "theta file lacks beta0/beta1");
  }
  th.beta0 = j["beta0"].get<double>();
  th.beta1 = j["beta1"].get<double>();
  th.check();
  return th;
}

std::string fit_json(const PipelineFit& fit, const Dataset& d, MethodChoice requested) {
  json j;
  j["method_requested"] = to_string(requested);
  j["method"] = to_string(fit.method);
  j["n"] = d.n();
  j["p"] = d.p();
  j["n_treated"] = d.n_treated();
  j["n_control"] = d.n_control();
  j["mediator"] = model_json(fit.mediator);
  j["outcome"] = model_json(fit.outcome);
  return j.dump(2) + "\n";
}

Table effects_to_table(const EffectTable& table) {
  Table t;
  t.header = {"row_id", "arm",     "t",       "caie",    "cade",    "caie_other",       "cade_other", "tau",
              "se_caie", "caie_lo", "caie_hi", "se_cade", "cade_lo", "cade_hi", "significant_caie", "level",
              "source"};
  for (const EffectRow& r : table.rows) {
    t.rows.push_back({std::to_string(r.row_id + 1), std::to_string(r.arm), std::to_string(table.t),
                      format_number(r.caie), format_number(r.cade), format_number(r.caie_other),
                      format_number(r.cade_other), format_number(r.tau), na_or(r.se_caie),
                      r.ci_caie ? format_number(r.ci_caie->lo) : "NA", r.ci_caie ? format_number(r.ci_caie->hi) : "NA",
                      na_or(r.se_cade), r.ci_cade ? format_number(r.ci_cade->lo) : "NA",
                      r.ci_cade ? format_number(r.ci_cade->hi) : "NA", r.significant_caie ? "true" : "false",
                      format_number(table.level), to_string(table.source)});
  }
  return t;
}

EffectTable effects_from_table(const Table& t) {
  EffectTable out;
  bool first = true;
  std::optional<int> common_arm;
  bool single_arm = true;
  for (const auto& row : t.rows) {
    EffectRow r;
    r.row_id = static_cast<Index>(parse_int("row_id", require(t, row, "row_id"))) - 1;
    r.arm = parse_arm("arm", require(t, row, "arm"));
    r.caie = cell_number("caie", require(t, row, "caie"));
    r.cade = cell_number("cade", require(t, row, "cade"));
    r.caie_other = cell_number("caie_other", require(t, row, "caie_other"));
    r.cade_other = cell_number("cade_other", require(t, row, "cade_other"));
    r.tau = cell_number("tau", require(t, row, "tau"));
    r.se_caie = cell_optional("se_caie", require(t, row, "se_caie"));
    r.se_cade = cell_optional("se_cade", require(t, row, "se_cade"));
    const auto alo = cell_optional("caie_lo", require(t, row, "caie_lo"));
    const auto ahi = cell_optional("caie_hi", require(t, row, "caie_hi"));
    if (alo && ahi) r.ci_caie = Interval{*alo, *ahi};
    const auto dlo = cell_optional("cade_lo", require(t, row, "cade_lo"));
    const auto dhi = cell_optional("cade_hi", require(t, row, "cade_hi"));
    if (dlo && dhi) r.ci_cade = Interval{*dlo, *dhi};
    r.significant_caie = parse_bool("significant_caie", require(t, row, "significant_caie"));
    if (first) {
      out.t = parse_arm("t", require(t, row, "t"));
      out.level = parse_double("level", require(t, row, "level"));
      const std::string& src = require(t, row, "source");
      if (src == "wald") out.source = IntervalSource::wald;
      else if (src == "split") out.source = IntervalSource::split;
      else if (src == "none") out.source = IntervalSource::none;
      else fail(ErrorKind::InvalidConfig, "unknown interval source '" + src + "'");
      common_arm = r.arm;
      first = false;
    }
    if (common_arm && *common_arm != r.arm) single_arm = false;
    out.rows.push_back(std::move(r));
  }
  // A file holding one arm only is read back as filtered to that arm.
  if (single_arm && common_arm && !out.rows.empty()) out.arm_filter = common_arm;
  return out;
}

EffectTable read_effects_csv(const fs::path& path) { return effects_from_table(read_csv_file(path)); }

Table effects_plot_table(const EffectTable& table) {
  std::vector<const EffectRow*> rows;
  for (const auto& r : table.rows) rows.push_back(&r);
  std::stable_sort(rows.begin(), rows.end(), [](const EffectRow* a, const EffectRow* b) {
    if (a->caie != b->caie) return a->caie < b->caie;
    return a->row_id < b->row_id;
  });
  Table t;
  t.header = {"rank", "row_id", "arm", "caie", "caie_lo", "caie_hi", "significant_caie"};
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const EffectRow& r = *rows[k];
    t.rows.push_back({std::to_string(k + 1), std::to_string(r.row_id + 1), std::to_string(r.arm),
                      format_number(r.caie), r.ci_caie ? format_number(r.ci_caie->lo) : "NA",
                      r.ci_caie ? format_number(r.ci_caie->hi) : "NA", r.significant_caie ? "true" : "false"});
  }
  return t;
}

std::string subgroups_json(const SubgroupReport& report) {
  json j;
  j["n_significant"] = report.n_significant;
  j["n_other"] = report.n_other;
  j["critical_value"] = report.critical_value;
  j["bonferroni"] = report.bonferroni;
  json cont = json::array();
  for (const auto& c : report.continuous) {
    json e;
    e["covariate"] = c.covariate;
    e["mean_significant"] = num_json(c.mean_significant);
    e["mean_other"] = num_json(c.mean_other);
    e["pooled_sd"] = num_json(c.pooled_sd);
    e["cohens_d"] = num_json(c.cohens_d);
    e["se"] = num_json(c.se);
    e["ci"] = {num_json(c.ci.lo), num_json(c.ci.hi)};
    e["flagged"] = c.flagged;
    cont.push_back(e);
  }
  json bin = json::array();
  for (const auto& b : report.binary) {
    json e;
    e["covariate"] = b.covariate;
    e["cells"] = {b.sig_with, b.sig_without, b.other_with, b.other_without};
    e["odds_ratio"] = num_json(b.odds_ratio);
    e["log_se"] = num_json(b.log_se);
    e["ci"] = {num_json(b.ci.lo), num_json(b.ci.hi)};
    e["zero_cell"] = b.zero_cell;
    e["flagged"] = b.flagged;
    bin.push_back(e);
  }
  j["continuous"] = cont;
  j["binary"] = bin;
  return j.dump(2) + "\n";
}

Table subgroups_to_table(const SubgroupReport& report) {
  Table t;
  t.header = {"covariate", "kind",  "statistic", "estimate",  "se",     "ci_lo",      "ci_hi",
              "mean_significant", "mean_other", "sig_with", "sig_without", "other_with", "other_without",
              "n_significant", "n_other", "zero_cell", "flagged"};
  const std::string ns = std::to_string(report.n_significant);
  const std::string no = std::to_string(report.n_other);
  for (const auto& c : report.continuous) {
    t.rows.push_back({c.covariate, "continuous", "cohens_d", number_or_na(c.cohens_d), number_or_na(c.se),
                      number_or_na(c.ci.lo), number_or_na(c.ci.hi), number_or_na(c.mean_significant),
                      number_or_na(c.mean_other), "NA", "NA", "NA", "NA", ns, no, "false",
                      c.flagged ? "true" : "false"});
  }
  for (const auto& b : report.binary) {
    t.rows.push_back({b.covariate, "binary", "odds_ratio", number_or_na(b.odds_ratio), number_or_na(b.log_se),
                      number_or_na(b.ci.lo), number_or_na(b.ci.hi), "NA", "NA", format_number(b.sig_with),
                      format_number(b.sig_without), format_number(b.other_with), format_number(b.other_without), ns,
                      no, b.zero_cell ? "true" : "false", b.flagged ? "true" : "false"});
  }
  return t;
}

std::string sim_report_json(const SimReport& report) {
  const StudyConfig& c = report.config;
  json cfg;
  json methods = json::array();
  for (auto m : c.methods) methods.push_back(to_string(m));
  cfg["methods"] = methods;
  cfg["ns"] = c.ns;
  cfg["split_ns"] = c.split_ns;
  cfg["replications"] = c.replications;
  cfg["B"] = c.B;
  cfg["level"] = c.level;
  cfg["test_profiles"] = c.test_profiles;
  cfg["wald_covariance"] = c.wald_mode == MediatorCovariance::joint ? "joint" : "structural";
  json dgp;
  dgp["p"] = c.dgp.p;
  dgp["n_continuous"] = c.dgp.n_continuous;
  dgp["n_binary"] = c.dgp.n_binary;
  dgp["sparsity"] = c.dgp.sparsity;
  dgp["noise_sd"] = c.dgp.noise_sd;
  dgp["beta0"] = c.dgp.beta0;
  dgp["beta1"] = c.dgp.beta1;
  dgp["coef_lo"] = c.dgp.coef_lo;
  dgp["coef_hi"] = c.dgp.coef_hi;
  dgp["seed"] = c.dgp.seed;
  cfg["dgp"] = dgp;
  json cells = json::array();
  for (const SimCell& cell : report.cells) {
    json e;
    e["method"] = to_string(cell.method);
    e["n"] = cell.n;
    e["infeasible"] = cell.infeasible;
    e["split"] = cell.split;
    e["replications"] = cell.replications;
    e["completed"] = cell.completed;
    e["failures"] = cell.failures;
    e["caie"] = metrics_json(cell.caie);
    e["cade"] = metrics_json(cell.cade);
    cells.push_back(e);
  }
  json j;
  j["config"] = cfg;
  j["cells"] = cells;
  return j.dump(2) + "\n";
}

Table sim_report_table(const SimReport& report) {
  Table t;
  t.header = {"method", "n", "effect", "metric", "value"};
  for (const SimCell& cell : report.cells) {
    const std::string m = to_string(cell.method);
    const std::string n = std::to_string(cell.n);
    auto add = [&](const std::string& effect, const std::string& metric, const std::string& value) {
      t.rows.push_back({m, n, effect, metric, value});
    };
    add("all", "infeasible", cell.infeasible ? "true" : "false");
    add("all", "completed", std::to_string(cell.completed));
    add("all", "failures", std::to_string(cell.failures));
    for (const auto& [name, mt] : {std::pair<std::string, const EffectMetrics*>{"caie", &cell.caie},
                                   std::pair<std::string, const EffectMetrics*>{"cade", &cell.cade}}) {
      add(name, "bias", number_or_na(mt->bias));
      add(name, "bias_se", number_or_na(mt->bias_se));
      add(name, "mse", number_or_na(mt->mse));
      add(name, "median_abs_error", number_or_na(mt->median_abs_error));
      add(name, "scaled_bias", number_or_na(mt->scaled_bias));
      add(name, "scaled_mse", number_or_na(mt->scaled_mse));
      add(name, "ci_width", number_or_na(mt->ci_width));
      add(name, "coverage", number_or_na(mt->coverage));
    }
  }
  return t;
}

Table split_effects_table(const SplitInference& split, const Dataset& d) {
  if (split.caie_hat.size() != d.n()) {
    fail(ErrorKind::DimensionMismatch, "split inference was not evaluated at the rows of this dataset");
  }
  Table t;
  t.header = {"row_id", "arm",     "t",       "caie",     "caie_lo",  "caie_hi", "cade", "cade_lo",
              "cade_hi", "tau", "caie_min", "caie_max", "B", "seed", "method"};
  for (Index i = 0; i < d.n(); ++i) {
    const auto& a = split.ci_caie[static_cast<std::size_t>(i)];
    const auto& c = split.ci_cade[static_cast<std::size_t>(i)];
    t.rows.push_back({std::to_string(i + 1), d.T(i) > 0 ? "1" : "-1", std::to_string(split.t),
                      format_number(split.caie_hat(i)), format_number(a.lo), format_number(a.hi),
                      format_number(split.cade_hat(i)), format_number(c.lo), format_number(c.hi),
                      format_number(split.tau_hat(i)), format_number(split.caie.col(i).minCoeff()),
                      format_number(split.caie.col(i).maxCoeff()), std::to_string(split.B), std::to_string(split.seed),
                      "genlasso-split"});
  }
  return t;
}

Table selection_table(const SplitInference& split, const Dataset& d) {
  Table t;
  t.header = {"covariate", "frequency", "frequency_mediator", "frequency_outcome"};
  for (Index j = 0; j < d.p(); ++j) {
    t.rows.push_back({d.covariate_names[static_cast<std::size_t>(j)], format_number(split.selection_frequency(j)),
                      format_number(split.selection_frequency_mediator(j)),
                      format_number(split.selection_frequency_outcome(j))});
  }
  return t;
}

// ---- commands -----------------------------------------------------------------------

std::vector<fs::path> cmd_fit(const RunConfig& cfg) {
  cfg.check();
  const Dataset d = load_dataset(cfg);
  const FitMethod method = resolve_method(cfg.method, d.n(), d.p());
  const PipelineFit fit = fit_pipeline(d, method, cfg.solver);
  const fs::path dir = prepare_out_dir(cfg);
  write_text(dir / "theta.json", theta_json(fit.theta, d.covariate_names, method));
  write_text(dir / "fit.json", fit_json(fit, d, cfg.method));
  return {dir / "theta.json", dir / "fit.json"};
}

std::vector<fs::path> cmd_effects(const RunConfig& cfg) {
  cfg.check();
  const Dataset d = load_dataset(cfg);
  const EffectTable table = effects_for(cfg, d, cfg.arm);
  const fs::path dir = prepare_out_dir(cfg);
  write_csv_file(dir / "effects.csv", effects_to_table(table));
  write_csv_file(dir / "effects_plot.csv", effects_plot_table(table));
  return {dir / "effects.csv", dir / "effects_plot.csv"};
}

std::vector<fs::path> cmd_subgroups(const RunConfig& cfg) {
  cfg.check();
  const Dataset d = load_dataset(cfg);
  const int arm = cfg.arm.value_or(1);
  EffectTable table = cfg.effects_path ? read_effects_csv(*cfg.effects_path) : effects_for(cfg, d, arm);
  std::erase_if(table.rows, [&](const EffectRow& r) { return r.arm != arm; });
  SubgroupOptions so;
  so.critical_value = normal_critical_value(0.95);
  so.bonferroni = cfg.bonferroni;
  const SubgroupReport report = subgroup_report(table, d, so);
  const fs::path dir = prepare_out_dir(cfg);
  write_text(dir / "subgroups.json", subgroups_json(report));
  write_csv_file(dir / "subgroups.csv", subgroups_to_table(report));
  return {dir / "subgroups.json", dir / "subgroups.csv"};
}

std::vector<fs::path> cmd_simulate(const RunConfig& cfg) {
  cfg.check();
  StudyConfig study = cfg.study;
  study.dgp.seed = cfg.seed;
  study.B = cfg.B;
  study.level = cfg.level;
  study.solver = cfg.solver;
  study.wald_mode = cfg.wald_mode;
  const SimReport report = run_study(study);
  for (const SimCell& c : report.cells) {
    std::clog << to_string(c.method) << " n=" << c.n << ": " << c.completed << "/" << c.replications
              << " replications in " << c.seconds << " s\n";
  }
  const fs::path dir = prepare_out_dir(cfg);
  write_text(dir / "sim_report.json", sim_report_json(report));
  write_csv_file(dir / "sim_report.csv", sim_report_table(report));
  return {dir / "sim_report.json", dir / "sim_report.csv"};
}

std::vector<fs::path> cmd_split_infer(const RunConfig& cfg) {
  cfg.check();
  const Dataset d = load_dataset(cfg);
  SplitOptions so;
  so.B = cfg.B;
  so.seed = cfg.seed;
  so.level = cfg.level;
  so.t = cfg.t;
  so.solver = cfg.solver;
  const SplitInference split = split_inference(d, so);
  const fs::path dir = prepare_out_dir(cfg);
  json summary;
  summary["method"] = "genlasso-split";
  summary["B"] = split.B;
  summary["seed"] = split.seed;
  summary["level"] = split.level;
  summary["t"] = split.t;
  summary["n"] = d.n();
  summary["p"] = d.p();
  write_csv_file(dir / "split_effects.csv", split_effects_table(split, d));
  write_csv_file(dir / "split_selection.csv", selection_table(split, d));
  write_text(dir / "split_summary.json", summary.dump(2) + "\n");
  return {dir / "split_effects.csv", dir / "split_selection.csv", dir / "split_summary.json"};
}

}  // namespace hetmed
