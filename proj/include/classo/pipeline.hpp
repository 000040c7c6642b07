#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "classo/classo.hpp"
#include "classo/csv.hpp"
#include "classo/design.hpp"
#include "classo/dgp.hpp"
#include "classo/error.hpp"
#include "classo/inference.hpp"
#include "classo/jackknife.hpp"
#include "classo/panel.hpp"
#include "classo/parallel.hpp"
#include "classo/selection.hpp"

namespace classo {

inline constexpr int kSchemaVersion = 1;

/// A report with named columns; written as CSV or as a JSON array of row objects.
struct ReportTable {
  std::vector<std::string> columns;
  std::vector<std::vector<nlohmann::json>> rows;

  void write_csv(std::ostream& out) const {
    for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << csv::quote(columns[c], ',');
    out << '\n';
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (c) out << ',';
        const auto& v = row[c];
        if (v.is_null()) continue;
        if (v.is_number_float())
          out << csv::format_double(v.get<double>());
        else if (v.is_string())
          out << csv::quote(v.get<std::string>(), ',');
        else
          out << v.dump();
      }
      out << '\n';
    }
  }

  nlohmann::json to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& row : rows) {
      nlohmann::json o = nlohmann::json::object();
      for (std::size_t c = 0; c < columns.size(); ++c) o[columns[c]] = row[c];
      arr.push_back(o);
    }
    return {{"schema_version", kSchemaVersion}, {"columns", columns}, {"rows", arr}};
  }
};

struct RunConfig {
  std::string command;
  std::string input;
  std::string output_dir;
  std::string format = "csv";
  std::uint64_t seed = 1;
  int threads = 1;

  // Panel input.
  std::string input_kind = "panel";  // panel | histories
  std::string unit = "unit", period = "period", outcome = "y", phase;
  std::vector<std::string> common, group;
  char delimiter = ',';
  Index window_start = 0;

  // Raw employment histories.
  std::string design = "mixed";  // benchmark | mixed | full
  std::string first_birth = "first_birth", second_birth = "second_birth";
  std::optional<long long> cohort_min, cohort_max;

  // Selection.
  int k_min = 1;
  int k_max = 4;
  std::vector<double> c_grid = default_c_grid();
  int max_sweeps = 200;
  double tol_objective = 1e-8;
  bool jackknife = true;
  std::optional<std::vector<std::string>> zero;  // counterfactual covariates for predictions

  // Simulation.
  std::string scenario = "default";  // default | employment
  std::map<std::string, std::string> dgp;  // N, T, K, proportions, alphas, gamma, mu_sd, burn_in

  // Comparison.
  std::string control, treatment;

  void validate() const {
    if (threads < 1) fail(ErrorKind::InvalidArgument, "threads must be at least 1");
    if (format != "csv" && format != "json") fail(ErrorKind::InvalidArgument, "format must be csv or json");
    if (k_min < 1 || k_max < k_min) fail(ErrorKind::InvalidArgument, "need 1 <= k_min <= k_max");
    if (c_grid.empty()) fail(ErrorKind::InvalidArgument, "c grid is empty");
    if (input_kind != "panel" && input_kind != "histories")
      fail(ErrorKind::InvalidArgument, "input_kind must be panel or histories");
    if (!input.empty() && !output_dir.empty() &&
        std::filesystem::weakly_canonical(input) == std::filesystem::weakly_canonical(output_dir))
      fail(ErrorKind::InvalidArgument, "input and output paths must differ");
  }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  if (csv::trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(csv::trim(item));
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  double out;
  if (!parse_double(csv::trim(v), out)) fail(ErrorKind::InvalidArgument, "'" + key + "' expects a number, got '" + v + "'");
  return out;
}

inline long long to_integer(const std::string& key, const std::string& v) {
  long long out;
  if (!parse_integer(csv::trim(v), out))
    fail(ErrorKind::InvalidArgument, "'" + key + "' expects an integer, got '" + v + "'");
  return out;
}

inline std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(to_double(key, item));
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  const std::string t = csv::trim(v);
  if (t == "1" || t == "true" || t == "yes") return true;
  if (t == "0" || t == "false" || t == "no") return false;
  fail(ErrorKind::InvalidArgument, "'" + key + "' expects true or false, got '" + v + "'");
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << content;
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_report(const std::filesystem::path& dir, const std::string& name, const ReportTable& t,
                         const std::string& format) {
  if (format == "json") {
    write_file(dir / (name + ".json"), t.to_json().dump(2) + "\n");
  } else {
    std::ostringstream out;
    t.write_csv(out);
    write_file(dir / (name + ".csv"), out.str());
  }
}

inline std::filesystem::path prepare_output(const RunConfig& cfg) {
  if (cfg.output_dir.empty()) fail(ErrorKind::InvalidArgument, "--output-dir is required");
  std::error_code ec;
  std::filesystem::create_directories(cfg.output_dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + cfg.output_dir + ": " + ec.message());
  return cfg.output_dir;
}

}  // namespace detail

/// Applies key=value settings; unknown keys are configuration errors.
inline void apply_settings(RunConfig& cfg, const std::map<std::string, std::string>& kv) {
  using namespace detail;
  for (const auto& [key, v] : kv) {
    if (key == "input") cfg.input = v;
    else if (key == "output_dir") cfg.output_dir = v;
    else if (key == "format") cfg.format = csv::trim(v);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_integer(key, v));
    else if (key == "threads") cfg.threads = static_cast<int>(to_integer(key, v));
    else if (key == "input_kind") cfg.input_kind = csv::trim(v);
    else if (key == "unit") cfg.unit = csv::trim(v);
    else if (key == "period") cfg.period = csv::trim(v);
    else if (key == "outcome") cfg.outcome = csv::trim(v);
    else if (key == "phase") cfg.phase = csv::trim(v);
    else if (key == "common") cfg.common = split_list(v);
    else if (key == "group") cfg.group = split_list(v);
    else if (key == "delimiter") {
      const std::string d = v == "\\t" || v == "tab" ? "\t" : v;
      if (d.size() != 1) fail(ErrorKind::InvalidArgument, "delimiter must be a single character");
      cfg.delimiter = d[0];
    } else if (key == "window_start") cfg.window_start = to_integer(key, v);
    else if (key == "design") cfg.design = csv::trim(v);
    else if (key == "first_birth") cfg.first_birth = csv::trim(v);
    else if (key == "second_birth") cfg.second_birth = csv::trim(v);
    else if (key == "cohort_min") cfg.cohort_min = to_integer(key, v);
    else if (key == "cohort_max") cfg.cohort_max = to_integer(key, v);
    else if (key == "k_min") cfg.k_min = static_cast<int>(to_integer(key, v));
    else if (key == "k_max") cfg.k_max = static_cast<int>(to_integer(key, v));
    else if (key == "c_grid") cfg.c_grid = to_doubles(key, v);
    else if (key == "max_sweeps") cfg.max_sweeps = static_cast<int>(to_integer(key, v));
    else if (key == "tol_objective") cfg.tol_objective = to_double(key, v);
    else if (key == "jackknife") cfg.jackknife = to_bool(key, v);
    else if (key == "zero") cfg.zero = split_list(v);
    else if (key == "scenario") cfg.scenario = csv::trim(v);
    else if (key == "N" || key == "T" || key == "K" || key == "proportions" || key == "alphas" || key == "gamma" ||
             key == "mu_sd" || key == "burn_in")
      cfg.dgp[key] = v;
    else if (key == "control") cfg.control = v;
    else if (key == "treatment") cfg.treatment = v;
    else fail(ErrorKind::InvalidArgument, "unknown setting '" + key + "'");
  }
}

/// key = value lines; '#' starts a comment.
inline std::map<std::string, std::string> read_settings(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (csv::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::InvalidArgument, "config line " + std::to_string(lineno) + " is not key = value");
    kv[csv::trim(line.substr(0, eq))] = csv::trim(line.substr(eq + 1));
  }
  return kv;
}

/// Outcome with a lagged outcome and a second-child dummy as common covariates and three
/// post-birth phase dummies as group-specific covariates.
inline DgpSpec employment_scenario() {
  DgpSpec s;
  s.N = 150;
  s.T = 73;
  s.K = 3;
  s.group_proportions = {0.2, 0.3, 0.5};
  s.common = {CovariateProcess::lag("employ_lag"), CovariateProcess::binary("child_2nd", 0.2)};
  s.gamma_true = Eigen::Vector2d(1.0, -0.3);
  s.group = {CovariateProcess::phase_dummy("child_m1_m14", 1, 14), CovariateProcess::phase_dummy("child_m15_m24", 15, 24),
             CovariateProcess::phase_dummy("child_m25_m59", 25, 59)};
  s.alpha_true.resize(3, 3);
  s.alpha_true << -2.0, -1.5, -0.8, -1.0, -0.4, 0.0, -0.2, 0.3, 0.5;
  s.mu = MuDistribution::normal(0.0, 0.5);
  return s;
}

inline DgpSpec dgp_from_config(const RunConfig& cfg) {
  using namespace detail;
  DgpSpec s;
  if (cfg.scenario == "default") s = DgpSpec::default_scenario();
  else if (cfg.scenario == "employment") s = employment_scenario();
  else fail(ErrorKind::InvalidArgument, "unknown scenario '" + cfg.scenario + "'");
  s.seed = cfg.seed;
  for (const auto& [key, v] : cfg.dgp) {
    if (key == "N") s.N = to_integer(key, v);
    else if (key == "T") s.T = to_integer(key, v);
    else if (key == "K") s.K = static_cast<int>(to_integer(key, v));
    else if (key == "proportions") s.group_proportions = to_doubles(key, v);
    else if (key == "gamma") {
      const auto g = to_doubles(key, v);
      s.gamma_true = Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Index>(g.size()));
    } else if (key == "alphas") {
      const auto rows = split_list(v, ';');
      Eigen::MatrixXd a;
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto vals = to_doubles(key, rows[k]);
        if (k == 0) a.resize(static_cast<Index>(rows.size()), static_cast<Index>(vals.size()));
        if (static_cast<Index>(vals.size()) != a.cols()) fail(ErrorKind::InvalidArgument, "alphas rows differ in length");
        for (std::size_t j = 0; j < vals.size(); ++j) a(static_cast<Index>(k), static_cast<Index>(j)) = vals[j];
      }
      s.alpha_true = a;
    } else if (key == "mu_sd") s.mu = MuDistribution::normal(0.0, to_double(key, v));
    else if (key == "burn_in") s.burn_in = to_integer(key, v);
  }
  s.validate();
  return s;
}

inline void cmd_simulate(const RunConfig& cfg) {
  cfg.validate();
  const DgpSpec spec = dgp_from_config(cfg);
  const auto out_dir = detail::prepare_output(cfg);
  const SimulatedPanel sim = simulate_panel(spec);
  std::ostringstream panel_csv;
  write_panel(panel_csv, sim.panel, ',');
  detail::write_file(out_dir / "panel.csv", panel_csv.str());

  auto units = nlohmann::json::array();
  for (Index i = 0; i < sim.panel.n_units(); ++i)
    units.push_back({{"unit_id", sim.panel.unit_ids[i]},
                     {"group", sim.true_assignment.assignment[static_cast<std::size_t>(i)] + 1},
                     {"mu", sim.true_mu[i]}});
  nlohmann::json truth = {{"schema_version", kSchemaVersion},
                          {"spec", spec},
                          {"common", sim.panel.common_names},
                          {"group", sim.panel.group_names},
                          {"has_phases", sim.panel.has_phases()},
                          {"units", units}};
  detail::write_file(out_dir / "truth.json", truth.dump(2) + "\n");
}

namespace detail {

inline BalancedPanel load_input_panel(const RunConfig& cfg, nlohmann::json& provenance) {
  if (cfg.input.empty()) fail(ErrorKind::InvalidArgument, "--input is required");
  std::ifstream in(cfg.input, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + cfg.input);
  if (cfg.input_kind == "histories") {
    HistorySchema hs;
    hs.unit = cfg.unit;
    hs.period = cfg.period;
    hs.outcome = cfg.outcome == "y" ? "employ" : cfg.outcome;
    hs.first_birth = cfg.first_birth;
    hs.second_birth = cfg.second_birth;
    hs.delimiter = cfg.delimiter;
    std::map<std::string, long long> births;
    auto raw = load_histories(in, hs, &births);
    std::vector<UnitHistory> kept;
    for (auto& h : raw) {
      const long long b = births.at(h.unit_id);
      if ((cfg.cohort_min && b < *cfg.cohort_min) || (cfg.cohort_max && b > *cfg.cohort_max)) continue;
      kept.push_back(std::move(h));
    }
    provenance["cohort"] = {{"histories", raw.size()}, {"in_cohort", kept.size()}};
    if (kept.empty()) fail(ErrorKind::AllUnitsDegenerate, "no unit falls inside the cohort window");
    EmploymentDesignSpec spec;
    if (cfg.design == "benchmark") spec.model = DesignModel::Benchmark;
    else if (cfg.design == "mixed") spec.model = DesignModel::Mixed;
    else if (cfg.design == "full") spec.model = DesignModel::Full;
    else fail(ErrorKind::InvalidArgument, "design must be benchmark, mixed or full");
    return build_employment_design(kept, spec);
  }
  PanelSchema schema;
  schema.unit = cfg.unit;
  schema.period = cfg.period;
  schema.outcome = cfg.outcome;
  schema.common = cfg.common;
  schema.group = cfg.group;
  schema.phase = cfg.phase;
  schema.delimiter = cfg.delimiter;
  schema.window_start = cfg.window_start;
  if (schema.common.empty() && schema.group.empty()) {
    // Every remaining column is a group-specific covariate.
    std::string header;
    std::getline(in, header);
    if (!header.empty() && header.back() == '\r') header.pop_back();
    if (header.rfind("\xEF\xBB\xBF", 0) == 0) header.erase(0, 3);
    for (const auto& name : csv::split_record(header, cfg.delimiter)) {
      const auto n = csv::trim(name);
      if (n != cfg.unit && n != cfg.period && n != cfg.outcome && n != cfg.phase && n != "phase") schema.group.push_back(n);
    }
    if (schema.phase.empty() && header.find("phase") != std::string::npos)
      for (const auto& name : csv::split_record(header, cfg.delimiter))
        if (csv::trim(name) == "phase") schema.phase = "phase";
    in.clear();
    in.seekg(0);
  }
  return load_panel(in, schema);
}

inline std::vector<Index> counterfactual_columns(const BalancedPanel& p, const std::optional<std::vector<std::string>>& zero) {
  std::vector<Index> cols;
  if (!zero) {
    const Index j = p.covariate_index("child_2nd");
    if (j >= 0) cols.push_back(j);
    return cols;
  }
  for (const auto& name : *zero) {
    const Index j = p.covariate_index(name);
    if (j < 0) fail(ErrorKind::InvalidArgument, "counterfactual covariate '" + name + "' is not in the design");
    cols.push_back(j);
  }
  return cols;
}

inline bool is_binary_column(const BalancedPanel& p, Index j) {
  for (Index i = 0; i < p.n_units(); ++i)
    for (Index t = p.window.begin; t < p.window.end; ++t) {
      const double v = p.x(i, t, j);
      if (v != 0.0 && v != 1.0) return false;
    }
  return true;
}

inline ReportTable prediction_report(const std::vector<PhasePrediction>& rows) {
  ReportTable t{{"group", "phase", "mean", "se", "n_units", "n_cells"}, {}};
  for (const auto& r : rows)
    t.rows.push_back({r.group + 1, r.phase == 0 ? nlohmann::json("overall") : nlohmann::json(r.phase), r.mean, r.se,
                      r.n_units, r.n_cells});
  return t;
}

}  // namespace detail

inline void cmd_select_fit(const RunConfig& cfg) {
  cfg.validate();
  set_num_threads(cfg.threads);
  nlohmann::json provenance = nlohmann::json::object();
  const BalancedPanel raw = detail::load_input_panel(cfg, provenance);
  auto [panel, report] = filter_degenerate_units(raw);
  const auto out_dir = detail::prepare_output(cfg);
  detail::write_file(out_dir / "filter_report.json",
                     nlohmann::json{{"schema_version", kSchemaVersion}, {"filter", report}}.dump(2) + "\n");
  check_within_rank(panel);

  SelectionGrid grid = SelectionGrid::for_panel(panel, cfg.k_max, cfg.c_grid);
  grid.K_values.erase(grid.K_values.begin(), grid.K_values.begin() + (cfg.k_min - 1));
  SelectionOptions opt;
  opt.solver.seed = cfg.seed;
  opt.solver.max_sweeps = cfg.max_sweeps;
  opt.solver.tol_objective = cfg.tol_objective;
  const SelectionResult sel = select_model(panel, grid, opt);
  const SelectionCell& best = sel.best();
  const ProbitFit& post = *best.post;
  const GroupStructure& groups = best.fit->groups;

  nlohmann::json jk_json;
  std::optional<JackknifedEstimate> jk;
  if (cfg.jackknife) {
    try {
      jk = jackknife_correct(post_lasso_estimator(), panel, groups);
      jk_json = *jk;
    } catch (const Error& e) {
      jk_json = {{"error", e.what()}};
    }
  }

  ReportTable ic{{"K", "c", "lambda", "IC", "Q_tilde", "status"}, {}};
  for (const auto& c : sel.cells)
    ic.rows.push_back({c.K, c.c, c.lambda, c.ok ? nlohmann::json(c.ic) : nlohmann::json(),
                       c.ok ? nlohmann::json(c.q_tilde) : nlohmann::json(), c.ok ? std::string("ok") : c.error});
  detail::write_report(out_dir, "ic_table", ic, cfg.format);

  ReportTable assign{{"unit_id", "group"}, {}};
  for (Index i = 0; i < panel.n_units(); ++i)
    assign.rows.push_back({panel.unit_ids[i], groups.assignment[static_cast<std::size_t>(i)] + 1});
  detail::write_report(out_dir, "assignment", assign, cfg.format);

  ReportTable coef{{"group", "covariate", "estimate", "se", "jackknife"}, {}};
  const Index q = panel.n_common(), r = panel.n_group();
  const Eigen::VectorXd est = post.coefficients();
  auto coef_row = [&](nlohmann::json group, const std::string& name, Index pos) {
    coef.rows.push_back({std::move(group), name, est[pos], post.se[pos],
                         jk && std::isfinite(jk->theta_corrected[pos]) ? nlohmann::json(jk->theta_corrected[pos])
                                                                       : nlohmann::json()});
  };
  for (Index j = 0; j < q; ++j) coef_row("all", panel.common_names[static_cast<std::size_t>(j)], j);
  for (int k = 0; k < groups.K; ++k)
    for (Index j = 0; j < r; ++j) coef_row(k + 1, panel.group_names[static_cast<std::size_t>(j)], q + k * r + j);
  detail::write_report(out_dir, "coefficients", coef, cfg.format);

  ReportTable ame{{"covariate", "scope", "kind", "value", "se", "n_units", "n_cells"}, {}};
  for (Index j = 0; j < panel.n_covariates(); ++j) {
    const bool binary = detail::is_binary_column(panel, j);
    auto add = [&](nlohmann::json scope, const CellSet& cells) {
      const AmeEstimate a = binary ? ame_discrete(panel, post, groups, j, cells) : ame_continuous(panel, post, groups, j, cells);
      ame.rows.push_back({a.covariate, std::move(scope), binary ? "discrete" : "continuous", a.value, a.se, a.n_units,
                          a.n_cells});
    };
    add("all", window_cells(panel));
    for (int k = 0; k < groups.K; ++k) add(k + 1, window_cells(panel, groups.members(k)));
  }
  detail::write_report(out_dir, "ame", ame, cfg.format);

  const auto zero_cols = detail::counterfactual_columns(panel, cfg.zero);
  std::vector<std::string> zero_names;
  for (Index j : zero_cols) zero_names.push_back(panel.covariate_name(j));
  if (panel.has_phases())
    detail::write_report(out_dir, "predictions", detail::prediction_report(phase_prediction_table(panel, post, groups, zero_cols)),
                         cfg.format);

  std::ostringstream panel_csv;
  write_panel(panel_csv, panel, ',');
  detail::write_file(out_dir / "panel.csv", panel_csv.str());

  auto cells = nlohmann::json::array();
  for (const auto& c : sel.cells) cells.push_back(c);
  nlohmann::json fit = {
      {"schema_version", kSchemaVersion},
      {"command", "select-fit"},
      {"seed", cfg.seed},
      {"input", provenance},
      {"panel",
       {{"n_units", panel.n_units()},
        {"n_periods", panel.n_periods()},
        {"window", {panel.window.begin, panel.window.end}},
        {"common", panel.common_names},
        {"group", panel.group_names},
        {"has_phases", panel.has_phases()},
        {"unit_ids", panel.unit_ids}}},
      {"filter", report},
      {"selection",
       {{"cells", cells},
        {"s", grid.s},
        {"chosen", {{"K", best.K}, {"c", best.c}, {"lambda", best.lambda}, {"IC", best.ic}}}}},
      {"classo", *best.fit},
      {"post_lasso", post},
      {"assignment", groups},
      {"counterfactual_zero", zero_names}};
  if (cfg.jackknife) fit["jackknife"] = jk_json;
  detail::write_file(out_dir / "fit.json", fit.dump(2) + "\n");
}

/// A finished select-fit run read back from its output directory.
struct FittedRun {
  BalancedPanel panel;
  ProbitFit post;
  GroupStructure groups;
};

inline FittedRun load_run(const std::string& dir) {
  const std::filesystem::path d(dir);
  nlohmann::json fit;
  try {
    fit = nlohmann::json::parse(detail::read_file(d / "fit.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, (d / "fit.json").string() + ": " + e.what());
  }
  FittedRun run;
  try {
    PanelSchema schema;
    schema.common = fit.at("panel").at("common").get<std::vector<std::string>>();
    schema.group = fit.at("panel").at("group").get<std::vector<std::string>>();
    if (fit.at("panel").at("has_phases").get<bool>()) schema.phase = "phase";
    schema.window_start = fit.at("panel").at("window").at(0).get<Index>();
    std::ifstream in(d / "panel.csv", std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot read " + (d / "panel.csv").string());
    run.panel = load_panel(in, schema);
    run.post = fit.at("post_lasso").get<ProbitFit>();
    run.groups = fit.at("assignment").get<GroupStructure>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, (d / "fit.json").string() + ": " + e.what());
  }
  if (run.groups.n_units() != run.panel.n_units() || run.post.mu.size() != run.panel.n_units())
    fail(ErrorKind::Io, dir + ": fit and panel disagree on the number of units");
  return run;
}

struct Comparison {
  GroupMatching matching;
  ReportTable predictions;
  nlohmann::json summary;
};

inline Comparison compare_runs(const FittedRun& treatment, const FittedRun& control,
                               const std::optional<std::vector<std::string>>& zero) {
  if (treatment.groups.K != control.groups.K)
    fail(ErrorKind::KMismatch, "treatment run has K=" + std::to_string(treatment.groups.K) + " but control has K=" +
                                   std::to_string(control.groups.K));
  if (!treatment.panel.has_phases() || !control.panel.has_phases())
    fail(ErrorKind::InvalidArgument, "comparison needs phase labels in both runs");
  const int P = max_phase(treatment.panel);
  if (max_phase(control.panel) != P) fail(ErrorKind::PhaseOutOfRange, "runs have different numbers of phases");
  const int K = treatment.groups.K;
  const auto zt = detail::counterfactual_columns(treatment.panel, zero);
  const auto zc = detail::counterfactual_columns(control.panel, zero);
  const auto rows_t = phase_prediction_table(treatment.panel, treatment.post, treatment.groups, zt);
  const auto rows_c = phase_prediction_table(control.panel, control.post, control.groups, zc);

  // Rows come K-major with phases 1..P then the pooled row.
  auto at = [&](const std::vector<PhasePrediction>& rows, int k, int slot) -> const PhasePrediction& {
    return rows[static_cast<std::size_t>(k * (P + 1) + slot)];
  };
  Eigen::VectorXd ct(K), cc(K);
  Eigen::MatrixXd pt(K, P), pc(K, P);
  for (int k = 0; k < K; ++k) {
    ct[k] = static_cast<double>(treatment.groups.group_sizes[static_cast<std::size_t>(k)]);
    cc[k] = static_cast<double>(control.groups.group_sizes[static_cast<std::size_t>(k)]);
    for (int ph = 0; ph < P; ++ph) {
      pt(k, ph) = at(rows_t, k, ph).mean;
      pc(k, ph) = at(rows_c, k, ph).mean;
    }
  }
  Comparison out;
  out.matching = match_groups(ct, cc, pt, pc);
  const auto& perm = out.matching.chosen().permutation;
  out.predictions.columns = {"group_treatment", "group_control", "phase",     "control_mean", "treatment_mean",
                             "delta_pp",        "z",             "p_value",   "n_control",    "n_treatment"};
  for (int k = 0; k < K; ++k) {
    const int m = perm[static_cast<std::size_t>(k)];
    for (int slot = 0; slot <= P; ++slot) {
      const auto& t = at(rows_t, k, slot);
      const auto& c = at(rows_c, m, slot);
      const DiffTestResult d = diff_test(t, c);
      out.predictions.rows.push_back({k + 1, m + 1, slot < P ? nlohmann::json(slot + 1) : nlohmann::json("overall"),
                                      c.mean, t.mean, 100.0 * d.delta,
                                      std::isfinite(d.z) ? nlohmann::json(d.z) : nlohmann::json(d.z > 0 ? "inf" : "-inf"),
                                      d.p_value, c.n_units, t.n_units});
    }
  }
  auto perm_json = nlohmann::json::array();
  for (int v : perm) perm_json.push_back(v + 1);
  out.summary = {{"schema_version", kSchemaVersion},
                 {"K", K},
                 {"phases", P},
                 {"matching", {{"permutation", perm_json}, {"A", out.matching.chosen().A}, {"B", out.matching.chosen().B}}}};
  return out;
}

inline void cmd_compare(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.control.empty() || cfg.treatment.empty()) fail(ErrorKind::InvalidArgument, "--control and --treatment are required");
  const FittedRun control = load_run(cfg.control);
  const FittedRun treatment = load_run(cfg.treatment);
  const Comparison cmp = compare_runs(treatment, control, cfg.zero);
  const auto out_dir = detail::prepare_output(cfg);
  detail::write_report(out_dir, "predictions", cmp.predictions, cfg.format);
  std::ostringstream matching;
  write_matching_csv(matching, cmp.matching);
  detail::write_file(out_dir / "matching.csv", matching.str());
  nlohmann::json summary = cmp.summary;
  summary["predictions"] = cmp.predictions.to_json()["rows"];
  detail::write_file(out_dir / "compare.json", summary.dump(2) + "\n");
}

inline int exit_code(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::Config: return 2;
    case ErrorCategory::Data: return 3;
    case ErrorCategory::Convergence: return 4;
    case ErrorCategory::Mismatch: return 5;
  }
  return 1;
}

/// Runs one command and maps failures to exit codes.
inline int run_command(const RunConfig& cfg, std::ostream& err = std::cerr) {
  try {
    if (cfg.command == "simulate") cmd_simulate(cfg);
    else if (cfg.command == "select-fit") cmd_select_fit(cfg);
    else if (cfg.command == "compare") cmd_compare(cfg);
    else fail(ErrorKind::InvalidArgument, "unknown command '" + cfg.command + "'");
    return 0;
  } catch (const Error& e) {
    err << "classo: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    err << "classo: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace classo
