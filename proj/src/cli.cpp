#include "subbag/cli.hpp"

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "subbag/diagnostics.hpp"
#include "subbag/parallel.hpp"

namespace subbag::cli {

namespace {

using Json = nlohmann::ordered_json;

struct RunConfig {
  std::string subcommand;
  std::string input;
  std::string format;  // empty: from the file extension
  std::string response;
  std::vector<std::string> features;
  std::vector<std::string> columns;
  bool intercept = false;
  std::string family;
  std::string algorithm = "1";
  std::string bc = "none";
  double alpha = 1.0;
  double delta_k = 0.001;
  double delta_m = 0.0;
  std::uint64_t k_n = 0;  // 0: formula
  std::uint64_t m_n = 0;
  std::uint64_t seed = 1;
  std::size_t workers = 0;
  std::uint64_t mem_budget = kDefaultMemBudget;
  std::string out;
  double ci_level = 0.95;
  double tol = 1e-10;
  int max_iter = 100;
  bool skip_failed = false;

  std::string dgp = "logistic";
  std::uint64_t n = 0;
  std::vector<double> theta0;
  double noise = 1.0;
  std::size_t reps = 100;
  std::string estimator = "subbag";
  std::string output_format = "csv";
  std::string asd_at = "truth";
  std::string spill_dir;

  std::vector<double> alphas{0.01, 0.02, 0.04, 0.1, 0.2, 0.3, 0.4, 0.6, 0.8, 1.0};
  double pilot_alpha = 0.01;

  std::size_t trials = 100;
  std::size_t mc_size = 4000;
  std::size_t dim = 2;
};

std::string number(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

Json to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Json row_major(const Matrix& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.push_back(m(i, j));
  }
  return a;
}

std::size_t resolve_workers(std::size_t flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("SUBBAG_WORKERS")) {
    std::size_t value = 0;
    const std::string text(env);
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size() || value == 0) {
      throw Error(ErrorKind::usage, "SUBBAG_WORKERS must be a positive integer, got '" + text + "'");
    }
    return value;
  }
  return default_workers();
}

ColumnMap column_map(const RunConfig& c) {
  ColumnMap map;
  if (!c.response.empty()) map.response = c.response;
  map.intercept = c.intercept;
  map.features = c.features;
  map.raw = c.columns;
  return map;
}

Format resolve_format(const RunConfig& c) {
  return c.format.empty() ? format_from_path(c.input) : parse_format(c.format);
}

Json config_json(const RunConfig& c) {
  Json j;
  j["subcommand"] = c.subcommand;
  const bool reads_input = c.subcommand == "estimate" || c.subcommand == "anticipate" ||
                           c.subcommand == "convert" || (c.subcommand == "sample" && !c.input.empty());
  if (reads_input) {
    j["input"] = c.input;
    j["format"] = c.subcommand == "convert" ? "csv" : to_string(resolve_format(c));
    j["columns"] = {{"response", c.response.empty() ? Json(nullptr) : Json(c.response)},
                    {"intercept", c.intercept},
                    {"features", c.features},
                    {"raw", c.columns}};
  }
  if (c.subcommand == "convert") {
    j["out"] = c.out;
    return j;
  }
  if (c.subcommand == "simulate") {
    j["dgp"] = c.dgp;
    j["n"] = c.n;
    j["theta0"] = c.theta0;
    j["noise"] = c.noise;
    j["reps"] = c.reps;
    j["estimator"] = c.estimator;
    j["asd_at"] = c.asd_at;
  }
  if (c.subcommand == "sample" && c.input.empty()) j["n"] = c.n;
  j["family"] = c.family;
  j["algorithm"] = c.algorithm;
  j["bc"] = c.bc;
  j["alpha"] = c.subcommand == "anticipate" ? c.pilot_alpha : c.alpha;
  j["delta_k"] = c.delta_k;
  j["delta_m"] = c.delta_m;
  j["k_n"] = c.k_n ? Json(c.k_n) : Json(nullptr);
  j["m_n"] = c.m_n ? Json(c.m_n) : Json(nullptr);
  j["seed"] = c.seed;
  if (c.subcommand != "sample") {
    j["workers"] = c.workers;
    j["mem_budget"] = c.mem_budget;
    j["ci_level"] = c.ci_level;
    j["tol"] = c.tol;
    j["max_iter"] = c.max_iter;
    j["skip_failed"] = c.skip_failed;
  }
  if (c.subcommand == "anticipate") j["alphas"] = c.alphas;
  j["out"] = c.out.empty() ? Json(nullptr) : Json(c.out);
  return j;
}

Json hyper_json(const HyperParams& h) {
  return Json{{"k_n", h.k_n},
              {"m_n", h.m_n},
              {"alpha", h.alpha},
              {"delta_k", h.delta_k},
              {"delta_m", h.delta_m},
              {"algorithm", to_string(h.algorithm)},
              {"k_clamped", h.k_clamped},
              {"k_overridden", h.k_overridden},
              {"m_overridden", h.m_overridden}};
}

HyperRequest hyper_request(const RunConfig& c, const PsiFamily& family, double alpha) {
  HyperRequest r;
  r.algorithm = parse_algorithm(c.algorithm);
  r.alpha = alpha;
  r.delta_k = c.delta_k;
  r.delta_m = c.delta_m;
  r.estimator_is_biased = !family.is_unbiased();
  if (c.k_n) r.k_override = c.k_n;
  if (c.m_n) r.m_override = c.m_n;
  return r;
}

SubbagOptions subbag_options(const RunConfig& c) {
  SubbagOptions o;
  o.bc_mode = parse_bc_mode(c.bc);
  o.solve.tol = c.tol;
  o.solve.max_iter = c.max_iter;
  o.workers = c.workers;
  o.mem_budget = c.mem_budget;
  o.skip_failed = c.skip_failed;
  o.ci_level = c.ci_level;
  return o;
}

void warn_hyper(const HyperParams& h, std::ostream& err) {
  if (h.k_clamped) err << "subbag: warning: k_N formula exceeds N; clamped to N\n";
}

// Writes to --out when given, otherwise to the supplied stream.
class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary | std::ios::trunc);
      if (!file_) throw Error(ErrorKind::data, "cannot write '" + path + "'");
      stream_ = &file_;
    }
  }
  std::ostream& operator*() { return *stream_; }

 private:
  std::ofstream file_;
  std::ostream* stream_;
};

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

int cmd_estimate(RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto source = open_source(c.input, resolve_format(c), column_map(c));
  const double open_seconds = seconds_since(t0);
  const auto family = make_family(c.family, source->n_cols());
  const auto options = subbag_options(c);
  check_bc_mode(*family, options.bc_mode);
  const auto hyper = select_hyperparams(source->n_rows(), hyper_request(c, *family, c.alpha));
  warn_hyper(hyper, err);

  auto result = run_subbagging(*source, *family, hyper, c.seed, options);
  result.wall_times.load += open_seconds;
  if (result.failed_subsamples > 0) {
    err << "subbag: warning: dropped " << result.failed_subsamples
        << " failed subsamples; effective m_N = " << hyper.m_n - result.failed_subsamples << "\n";
  }

  Json doc;
  doc["config"] = config_json(c);
  doc["family"] = family->name();
  doc["record_columns"] = source->column_names();
  doc["theta"] = to_json(result.theta_bar);
  doc["omega"] = row_major(result.omega);
  doc["sse"] = to_json(result.sse);
  doc["sse_adjusted"] = to_json(result.sse_adjusted);
  Json lower = Json::array(), upper = Json::array();
  for (const auto& iv : result.ci) {
    lower.push_back(iv.lower);
    upper.push_back(iv.upper);
  }
  doc["ci"] = {{"level", result.ci_level},
               {"se", result.ci_adjusted ? "sse_adjusted" : "sse"},
               {"lower", lower},
               {"upper", upper}};
  doc["hyper"] = hyper_json(result.hyper);
  doc["bc_mode"] = to_string(result.bc_mode);
  doc["n_total"] = result.n_total;
  doc["seed"] = result.seed;
  doc["failed_subsamples"] = result.failed_subsamples;
  doc["failed_ids"] = result.failed_ids;
  doc["extraction"] = {{"batch_size", result.batch_size},
                       {"passes", result.extraction.passes},
                       {"peak_buffer_bytes", result.extraction.peak_buffer_bytes}};
  doc["wall_times"] = {{"load", result.wall_times.load},
                       {"estimate", result.wall_times.estimate},
                       {"se", result.wall_times.se}};
  Output o(c.out, out);
  *o << doc.dump(2) << "\n";
  return 0;
}

int cmd_sample(RunConfig& c, std::ostream& out, std::ostream& err) {
  std::uint64_t n = c.n;
  if (!c.input.empty()) {
    n = open_source(c.input, resolve_format(c), column_map(c))->n_rows();
  }
  require(n >= 2, "sample needs --n >= 2 or an --input file");
  c.n = n;
  const auto family = make_family(c.family, family_uses_response(c.family) ? 2 : 1);
  const auto hyper = select_hyperparams(n, hyper_request(c, *family, c.alpha));
  warn_hyper(hyper, err);
  const auto plan = build_plan(n, hyper, c.seed);

  Output o(c.out, out);
  Json cfg = config_json(c);
  cfg["n_total"] = n;
  cfg["hyper"] = hyper_json(hyper);
  *o << "# config " << cfg.dump() << "\n";
  *o << "subsample_id,position,row_index\n";
  IndexList rows;
  for (std::size_t j = 0; j < plan.size(); ++j) {
    plan.subsample(j, rows);
    for (std::size_t i = 0; i < rows.size(); ++i) *o << j << ',' << i << ',' << rows[i] << '\n';
  }
  return 0;
}

int cmd_anticipate(RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto source = open_source(c.input, resolve_format(c), column_map(c));
  const double open_seconds = seconds_since(t0);
  const auto family = make_family(c.family, source->n_cols());
  const auto options = subbag_options(c);
  check_bc_mode(*family, options.bc_mode);
  const auto hyper =
      pilot_hyperparams(source->n_rows(), hyper_request(c, *family, c.pilot_alpha));
  warn_hyper(hyper, err);

  auto pilot = run_subbagging(*source, *family, hyper, c.seed, options);
  pilot.wall_times.load += open_seconds;
  const auto rows = anticipate_from(pilot, c.alphas);

  Output o(c.out, out);
  Json cfg = config_json(c);
  cfg["n_total"] = source->n_rows();
  cfg["hyper"] = hyper_json(pilot.hyper);
  cfg["pilot_theta"] = to_json(pilot.theta_bar);
  cfg["pilot_seconds"] = pilot.wall_times.total();
  *o << "# config " << cfg.dump() << "\n";
  *o << "alpha,coord,sse_adjusted,sse_full,anticipated_seconds\n";
  for (const auto& row : rows) {
    for (Eigen::Index j = 0; j < row.sse_full.size(); ++j) {
      *o << number(row.alpha) << ",theta" << j + 1 << ',' << number(row.sse_adjusted(j)) << ','
         << number(row.sse_full(j)) << ',' << number(row.seconds) << '\n';
    }
  }
  return 0;
}

int cmd_convert(RunConfig& c, std::ostream& out, std::ostream&) {
  require(!c.out.empty(), "convert needs --out");
  const auto rows = convert_csv_to_matrix(c.input, column_map(c), c.out);
  const auto written = open_source(c.out, Format::f64_matrix);
  Json doc;
  doc["config"] = config_json(c);
  doc["n_rows"] = rows;
  doc["n_cols"] = written->n_cols();
  out << doc.dump(2) << "\n";
  return 0;
}

int cmd_simulate(RunConfig& c, std::ostream& out, std::ostream& err) {
  const DgpKind kind = parse_dgp(c.dgp);
  require(c.n >= 2, "simulate needs --n >= 2");
  DgpSpec dgp = DgpSpec::with_defaults(kind, c.n);
  if (!c.theta0.empty()) dgp.theta0 = Eigen::Map<const Vector>(c.theta0.data(), c.theta0.size());
  dgp.noise = c.noise;
  c.theta0.assign(dgp.theta0.data(), dgp.theta0.data() + dgp.theta0.size());
  if (c.family.empty()) {
    c.family = kind == DgpKind::logistic ? "logistic" : kind == DgpKind::linear ? "ols" : "mean";
  }
  const auto family = make_family(c.family, dgp.record_cols());
  true_parameter(*family, dgp);  // family/dgp compatibility

  McConfig mc;
  mc.family = c.family;
  mc.bc_mode = parse_bc_mode(c.bc);
  check_bc_mode(*family, mc.bc_mode);
  mc.solve.tol = c.tol;
  mc.solve.max_iter = c.max_iter;
  mc.replications = c.reps;
  mc.campaign_seed = c.seed;
  mc.workers = c.workers;
  mc.ci_level = c.ci_level;
  mc.skip_failed = c.skip_failed;
  if (c.asd_at != "truth" && c.asd_at != "estimate") {
    throw Error(ErrorKind::usage, "--asd-at must be truth or estimate");
  }
  mc.asd_at_truth = c.asd_at == "truth";
  if (!c.spill_dir.empty()) mc.spill_dir = c.spill_dir;
  if (c.estimator == "full") {
    mc.estimator = Estimator::full_sample;
  } else if (c.estimator == "subbag") {
    mc.hyper = select_hyperparams(c.n, hyper_request(c, *family, c.alpha));
    warn_hyper(mc.hyper, err);
  } else {
    throw Error(ErrorKind::usage, "--estimator must be subbag or full");
  }
  const auto result = run_replications(dgp, mc);
  const auto& m = result.metrics;

  const std::vector<std::pair<std::string, const Vector*>> table{
      {"BIAS", &m.bias}, {"SD", &m.sd}, {"RMSE", &m.rmse},
      {"ASD", &m.asd},   {"SSE", &m.sse}, {"CP", &m.cp},
      {"ASD_ADJ", &m.alpha_adjusted_asd}, {"SSE_ADJ", &m.alpha_adjusted_sse},
      {"CP_ADJ", &m.alpha_adjusted_cp}};

  Json cfg = config_json(c);
  if (mc.estimator == Estimator::subbagging) cfg["hyper"] = hyper_json(mc.hyper);
  Output o(c.out, out);
  if (c.output_format == "json") {
    Json doc;
    doc["config"] = cfg;
    doc["replications"] = m.replications;
    doc["theta0"] = to_json(m.theta0);
    doc["failed_subsamples"] = m.failed_subsamples;
    Json metrics;
    for (const auto& [name, values] : table) metrics[name] = to_json(*values);
    doc["metrics"] = metrics;
    *o << doc.dump(2) << "\n";
  } else if (c.output_format == "csv") {
    *o << "# config " << cfg.dump() << "\n";
    *o << "metric,coord,value\n";
    for (const auto& [name, values] : table) {
      for (Eigen::Index j = 0; j < values->size(); ++j) {
        *o << name << ",theta" << j + 1 << ',' << number((*values)(j)) << '\n';
      }
    }
  } else {
    throw Error(ErrorKind::usage, "--output-format must be csv or json");
  }
  return 0;
}

int cmd_diag(const std::string& check, RunConfig& c, std::ostream& out) {
  Json doc;
  doc["check"] = check;
  if (check == "derivatives") {
    const auto family = make_family(c.family, c.dim);
    const auto report = derivative_check(*family, c.trials, c.seed);
    doc["family"] = report.family;
    doc["trials"] = report.trials;
    doc["dpsi_failures"] = report.dpsi_failures;
    doc["d2psi_failures"] = report.d2psi_failures;
    doc["max_dpsi_error"] = report.max_dpsi_error;
    doc["max_d2psi_error"] = report.max_d2psi_error;
    doc["passed"] = report.passed();
  } else if (check == "ustat") {
    require(c.n >= 2 && c.k_n >= 1 && c.m_n >= 1, "diag ustat needs --n, --k-n and --m-n");
    const auto u = ustat_variance_check(c.n, c.k_n, c.m_n, c.mc_size, c.seed);
    doc["n"] = u.n;
    doc["k_n"] = u.k_n;
    doc["m_n"] = u.m_n;
    doc["zeta_1"] = u.zeta_1;
    doc["zeta_k"] = u.zeta_k;
    doc["zeta_1_mc"] = u.zeta_1_mc;
    doc["zeta_k_mc"] = u.zeta_k_mc;
    doc["a_n"] = u.a_n;
    doc["predicted_var"] = u.predicted_var;
    doc["empirical_var"] = u.empirical_var;
    doc["mc_size"] = u.mc_size;
  } else if (check == "moments") {
    DgpSpec dgp = DgpSpec::with_defaults(parse_dgp(c.dgp), 2);
    const auto family = make_family(c.family, dgp.record_cols());
    const auto m = population_moments(*family, dgp, c.mc_size, c.seed);
    doc["family"] = family->name();
    doc["dgp"] = c.dgp;
    doc["theta0"] = to_json(m.theta0);
    doc["analytic"] = m.analytic;
    doc["sigma"] = row_major(m.sigma);
    doc["v"] = row_major(m.v);
    doc["b"] = to_json(m.b);
    doc["xi"] = row_major(m.xi);
  } else if (check == "oracle") {
    const auto source = open_source(c.input, resolve_format(c), column_map(c));
    const auto family = make_family(c.family, source->n_cols());
    require(c.k_n >= 1, "diag oracle needs --k-n");
    std::vector<double> values;
    values.reserve(source->n_rows() * source->n_cols());
    source->scan([&](std::uint64_t, std::span<const double> r) {
      values.insert(values.end(), r.begin(), r.end());
    });
    const BlockView view{source->n_rows(), source->n_cols(), values};
    doc["family"] = family->name();
    doc["k_n"] = c.k_n;
    doc["theta"] = to_json(complete_u_oracle(*family, view, c.k_n, parse_bc_mode(c.bc)));
  }
  doc["seed"] = c.seed;
  Output o(c.out, out);
  *o << doc.dump(2) << "\n";
  return 0;
}

void add_columns(CLI::App* app, RunConfig& c) {
  app->add_option("--response", c.response, "Response column (name or 0-based index)");
  app->add_option("--features", c.features, "Regressor columns, comma separated")->delimiter(',');
  app->add_option("--columns", c.columns, "Raw columns, comma separated")->delimiter(',');
  app->add_flag("--intercept", c.intercept, "Insert a constant 1 after the response");
}

void add_hyper(CLI::App* app, RunConfig& c) {
  app->add_option("--algorithm", c.algorithm, "1 or 2")->capture_default_str();
  app->add_option("--alpha", c.alpha, "Aggregation level alpha > 0")->capture_default_str();
  app->add_option("--delta-k", c.delta_k, "Exponent offset for k_N")->capture_default_str();
  app->add_option("--delta-m", c.delta_m, "Exponent offset for m_N")->capture_default_str();
  app->add_option("--k-n", c.k_n, "Subsample size (overrides the formula)");
  app->add_option("--m-n", c.m_n, "Number of subsamples (overrides the formula)");
  app->add_option("--seed", c.seed, "Master seed")->capture_default_str();
}

void add_solver(CLI::App* app, RunConfig& c) {
  app->add_option("--bc", c.bc, "none | bc1 | bc2 | bc3")->capture_default_str();
  app->add_option("--tol", c.tol, "Newton step tolerance")->capture_default_str();
  app->add_option("--max-iter", c.max_iter, "Newton iteration cap")->capture_default_str();
  app->add_flag("--skip-failed", c.skip_failed, "Drop subsamples whose solve fails");
  app->add_option("--workers", c.workers, "Worker threads (default: SUBBAG_WORKERS or all cores)");
  app->add_option("--ci-level", c.ci_level, "Confidence level")->capture_default_str();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig c;
  CLI::App app{"Subsample-aggregating estimation over out-of-core data", "subbag"};
  app.require_subcommand(1);

  auto* estimate = app.add_subcommand("estimate", "Subbagging estimate of a data file (JSON)");
  estimate->add_option("--input", c.input, "Data file (.csv or f64-matrix)")->required();
  estimate->add_option("--format", c.format, "csv | f64-matrix (default: from extension)");
  estimate->add_option("--family", c.family, "mean | meancov | meancov-unbiased | ols | logistic")
      ->required();
  add_columns(estimate, c);
  add_hyper(estimate, c);
  add_solver(estimate, c);
  estimate->add_option("--mem-budget", c.mem_budget, "Extraction buffer budget in bytes")
      ->capture_default_str();
  estimate->add_option("--out", c.out, "Output path (default: stdout)");

  auto* anticipate_cmd =
      app.add_subcommand("anticipate", "Anticipated SE and time from an alpha=0.01 pilot (CSV)");
  anticipate_cmd->add_option("--input", c.input, "Data file")->required();
  anticipate_cmd->add_option("--format", c.format, "csv | f64-matrix");
  anticipate_cmd->add_option("--family", c.family, "Estimating-equation family")->required();
  add_columns(anticipate_cmd, c);
  add_hyper(anticipate_cmd, c);
  add_solver(anticipate_cmd, c);
  anticipate_cmd->add_option("--alphas", c.alphas, "Target alphas")->delimiter(',');
  anticipate_cmd->add_option("--pilot-alpha", c.pilot_alpha, "Pilot alpha")->capture_default_str();
  anticipate_cmd->add_option("--mem-budget", c.mem_budget, "Extraction buffer budget in bytes");
  anticipate_cmd->add_option("--out", c.out, "Output path (default: stdout)");

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo metrics table (CSV or JSON)");
  simulate->add_option("--dgp", c.dgp, "logistic | linear | normal_mean")->capture_default_str();
  simulate->add_option("--n", c.n, "Sample size")->required();
  simulate->add_option("--theta0", c.theta0, "True parameter, comma separated")->delimiter(',');
  simulate->add_option("--noise", c.noise, "Error SD for the linear dgp")->capture_default_str();
  simulate->add_option("--family", c.family, "Family (default follows the dgp)");
  simulate->add_option("--estimator", c.estimator, "subbag | full")->capture_default_str();
  simulate->add_option("--reps", c.reps, "Replications")->capture_default_str();
  simulate->add_option("--asd-at", c.asd_at, "truth | estimate")->capture_default_str();
  simulate->add_option("--spill-dir", c.spill_dir, "Write each dataset to disk and read it back");
  simulate->add_option("--output-format", c.output_format, "csv | json")->capture_default_str();
  add_hyper(simulate, c);
  add_solver(simulate, c);
  simulate->add_option("--out", c.out, "Output path (default: stdout)");

  auto* sample = app.add_subcommand("sample", "Emit a sampling plan (CSV)");
  sample->add_option("--n", c.n, "Population size N");
  sample->add_option("--input", c.input, "Take N from this data file");
  sample->add_option("--format", c.format, "csv | f64-matrix");
  sample->add_option("--family", c.family, "Family, decides whether k_N needs --k-n")
      ->capture_default_str();
  add_hyper(sample, c);
  sample->add_option("--out", c.out, "Output path (default: stdout)");

  auto* convert = app.add_subcommand("convert", "Convert csv to the f64-matrix format");
  convert->add_option("--input", c.input, "csv file")->required();
  convert->add_option("--out", c.out, "f64-matrix file")->required();
  add_columns(convert, c);

  auto* diag = app.add_subcommand("diag", "Diagnostics (JSON)");
  diag->group("");
  diag->require_subcommand(1);
  RunConfig& dc = c;
  auto* d_deriv = diag->add_subcommand("derivatives", "Finite-difference derivative check");
  d_deriv->add_option("--family", dc.family)->required();
  d_deriv->add_option("--dim", dc.dim, "Record width")->capture_default_str();
  d_deriv->add_option("--trials", dc.trials)->capture_default_str();
  d_deriv->add_option("--seed", dc.seed);
  auto* d_ustat = diag->add_subcommand("ustat", "Mean-kernel U-statistic variance check");
  d_ustat->add_option("--n", dc.n)->required();
  d_ustat->add_option("--k-n", dc.k_n)->required();
  d_ustat->add_option("--m-n", dc.m_n)->required();
  d_ustat->add_option("--mc-size", dc.mc_size)->capture_default_str();
  d_ustat->add_option("--seed", dc.seed);
  auto* d_moments = diag->add_subcommand("moments", "Population moments at theta0");
  d_moments->add_option("--family", dc.family)->required();
  d_moments->add_option("--dgp", dc.dgp)->capture_default_str();
  d_moments->add_option("--mc-size", dc.mc_size)->capture_default_str();
  d_moments->add_option("--seed", dc.seed);
  auto* d_oracle = diag->add_subcommand("oracle", "Complete-U estimate over all subsets");
  d_oracle->add_option("--input", dc.input)->required();
  d_oracle->add_option("--format", dc.format);
  d_oracle->add_option("--family", dc.family)->required();
  d_oracle->add_option("--k-n", dc.k_n)->required();
  d_oracle->add_option("--bc", dc.bc);
  add_columns(d_oracle, dc);
  for (auto* sub : {d_deriv, d_ustat, d_moments, d_oracle}) sub->add_option("--out", dc.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (sample->parsed() && c.family.empty()) c.family = "logistic";
    if (estimate->parsed() || anticipate_cmd->parsed() || simulate->parsed()) {
      c.workers = resolve_workers(c.workers);
    }
    if (estimate->parsed()) {
      c.subcommand = "estimate";
      return cmd_estimate(c, out, err);
    }
    if (anticipate_cmd->parsed()) {
      c.subcommand = "anticipate";
      return cmd_anticipate(c, out, err);
    }
    if (simulate->parsed()) {
      c.subcommand = "simulate";
      return cmd_simulate(c, out, err);
    }
    if (sample->parsed()) {
      c.subcommand = "sample";
      return cmd_sample(c, out, err);
    }
    if (convert->parsed()) {
      c.subcommand = "convert";
      return cmd_convert(c, out, err);
    }
    c.subcommand = "diag";
    for (auto* sub : diag->get_subcommands()) {
      if (sub->parsed()) return cmd_diag(sub->get_name(), c, out);
    }
    return 1;
  } catch (const Error& e) {
    err << "subbag: error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "subbag: error: " << e.what() << "\n";
    return 2;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"subbag"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace subbag::cli
