#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "classo/csv.hpp"
#include "classo/error.hpp"

namespace classo {

using Index = Eigen::Index;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Half-open range [begin, end) of period indices.
struct Window {
  Index begin = 0;
  Index end = 0;

  Index size() const { return end - begin; }
  bool contains(Index t) const { return t >= begin && t < end; }
  friend bool operator==(const Window&, const Window&) = default;
};

/// Binary outcomes plus common (x_common) and group-specific (x_group) covariates
/// for N units observed over the same T periods. Treated as immutable once built.
struct BalancedPanel {
  std::vector<std::string> unit_ids;
  std::vector<long long> periods;
  std::vector<std::string> common_names;
  std::vector<std::string> group_names;
  RowMatrixXd y;                          // N x T
  std::vector<Eigen::MatrixXd> x_common;  // per unit, T x q
  std::vector<Eigen::MatrixXd> x_group;   // per unit, T x (p - q)
  Eigen::MatrixXi phase;                  // N x T labels, 0 = unlabeled; empty when absent
  Window window;                          // periods entering the likelihood

  Index n_units() const { return y.rows(); }
  Index n_periods() const { return y.cols(); }
  Index n_common() const { return static_cast<Index>(common_names.size()); }
  Index n_group() const { return static_cast<Index>(group_names.size()); }
  Index n_covariates() const { return n_common() + n_group(); }
  Index window_length() const { return window.size(); }
  bool has_phases() const { return phase.size() > 0; }

  /// Name of covariate j in the stacked [common, group] ordering.
  const std::string& covariate_name(Index j) const {
    return j < n_common() ? common_names[j] : group_names[j - n_common()];
  }

  Index covariate_index(std::string_view name) const {
    for (Index j = 0; j < n_covariates(); ++j)
      if (covariate_name(j) == name) return j;
    return -1;
  }

  /// Covariate j (stacked ordering) of unit i at period t.
  double x(Index i, Index t, Index j) const {
    return j < n_common() ? x_common[i](t, j) : x_group[i](t, j - n_common());
  }

  double outcome_mean(Index i, Window w) const { return y.row(i).segment(w.begin, w.size()).mean(); }
  double outcome_mean(Index i) const { return outcome_mean(i, window); }

  bool has_variation(Index i, Window w) const {
    const double m = outcome_mean(i, w);
    return m > 0.0 && m < 1.0;
  }
  bool has_variation(Index i) const { return has_variation(i, window); }

  void validate() const {
    const Index n = n_units(), t = n_periods();
    if (n < 1 || t < 1) fail(ErrorKind::InvalidArgument, "panel must have at least one unit and one period");
    if (static_cast<Index>(unit_ids.size()) != n || static_cast<Index>(periods.size()) != t)
      fail(ErrorKind::InvalidArgument, "label vectors do not match panel dimensions");
    if (static_cast<Index>(x_common.size()) != n || static_cast<Index>(x_group.size()) != n)
      fail(ErrorKind::InvalidArgument, "covariate arrays do not match unit count");
    for (Index i = 0; i < n; ++i) {
      if (x_common[i].rows() != t || x_common[i].cols() != n_common() || x_group[i].rows() != t ||
          x_group[i].cols() != n_group())
        fail(ErrorKind::InvalidArgument, "covariate block of unit " + unit_ids[i] + " has wrong shape");
      if (!x_common[i].allFinite() || !x_group[i].allFinite())
        fail(ErrorKind::MissingValue, "non-finite covariate for unit " + unit_ids[i]);
      for (Index s = 0; s < t; ++s)
        if (y(i, s) != 0.0 && y(i, s) != 1.0)
          fail(ErrorKind::NonBinaryOutcome, "unit " + unit_ids[i] + " has outcome outside {0,1}");
    }
    if (has_phases() && (phase.rows() != n || phase.cols() != t))
      fail(ErrorKind::InvalidArgument, "phase labels do not match panel dimensions");
    if (window.begin < 0 || window.end > t || window.size() < 1)
      fail(ErrorKind::InvalidArgument, "likelihood window outside the panel");
  }

  BalancedPanel select_units(std::span<const Index> keep) const {
    BalancedPanel out;
    out.periods = periods;
    out.common_names = common_names;
    out.group_names = group_names;
    out.window = window;
    const auto m = static_cast<Index>(keep.size());
    out.y.resize(m, n_periods());
    if (has_phases()) out.phase.resize(m, n_periods());
    for (Index r = 0; r < m; ++r) {
      const Index i = keep[r];
      out.unit_ids.push_back(unit_ids[i]);
      out.y.row(r) = y.row(i);
      out.x_common.push_back(x_common[i]);
      out.x_group.push_back(x_group[i]);
      if (has_phases()) out.phase.row(r) = phase.row(i);
    }
    return out;
  }

  BalancedPanel with_window(Window w) const {
    BalancedPanel out = *this;
    out.window = w;
    return out;
  }
};

enum class DegenerateReason { AllZero, AllOne };

inline std::string_view to_string(DegenerateReason r) { return r == DegenerateReason::AllZero ? "all-zero" : "all-one"; }

struct FilterReport {
  std::vector<std::string> removed_unit_ids;
  std::vector<DegenerateReason> reasons;
  Index retained_count = 0;
};

inline void to_json(nlohmann::json& j, const FilterReport& r) {
  j = nlohmann::json::object();
  j["retained_count"] = r.retained_count;
  j["removed_count"] = r.removed_unit_ids.size();
  auto removed = nlohmann::json::array();
  for (std::size_t k = 0; k < r.removed_unit_ids.size(); ++k)
    removed.push_back({{"unit_id", r.removed_unit_ids[k]}, {"reason", std::string(to_string(r.reasons[k]))}});
  j["removed"] = std::move(removed);
}

/// Drops every unit whose outcome is constant over the likelihood window.
inline std::pair<BalancedPanel, FilterReport> filter_degenerate_units(const BalancedPanel& panel) {
  FilterReport report;
  std::vector<Index> keep;
  for (Index i = 0; i < panel.n_units(); ++i) {
    const double m = panel.outcome_mean(i);
    if (m == 0.0 || m == 1.0) {
      report.removed_unit_ids.push_back(panel.unit_ids[i]);
      report.reasons.push_back(m == 0.0 ? DegenerateReason::AllZero : DegenerateReason::AllOne);
    } else {
      keep.push_back(i);
    }
  }
  if (keep.empty()) fail(ErrorKind::AllUnitsDegenerate, "no unit has outcome variation in the likelihood window");
  report.retained_count = static_cast<Index>(keep.size());
  return {panel.select_units(keep), std::move(report)};
}

/// Rejects covariates that carry no information beyond the fixed effects: a column constant
/// within every unit, or a set of columns that is collinear after removing unit means.
inline void check_within_rank(const BalancedPanel& panel) {
  const Index q = panel.n_common(), p = q + panel.n_group();
  const Window w = panel.window;
  if (p == 0) return;
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd x(w.size(), p);
  for (Index i = 0; i < panel.n_units(); ++i) {
    x << panel.x_common[i].middleRows(w.begin, w.size()), panel.x_group[i].middleRows(w.begin, w.size());
    x.rowwise() -= x.colwise().mean();
    gram.noalias() += x.transpose() * x;
  }
  auto name = [&](Index j) {
    return j < q ? panel.common_names[static_cast<std::size_t>(j)] : panel.group_names[static_cast<std::size_t>(j - q)];
  };
  Eigen::VectorXd scale(p);
  for (Index j = 0; j < p; ++j) {
    if (!(gram(j, j) > 0.0))
      fail(ErrorKind::CollinearCovariates, "covariate '" + name(j) + "' does not vary within any unit");
    scale[j] = 1.0 / std::sqrt(gram(j, j));
  }
  const Eigen::MatrixXd corr = scale.asDiagonal() * gram * scale.asDiagonal();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(corr);
  if (es.eigenvalues()[0] < 1e-10) {
    const Eigen::VectorXd v = es.eigenvectors().col(0);
    std::string involved;
    for (Index j = 0; j < p; ++j)
      if (std::abs(v[j]) > 1e-3) involved += (involved.empty() ? "" : ", ") + name(j);
    fail(ErrorKind::CollinearCovariates, "covariates are collinear once unit means are removed: " + involved);
  }
}

// ---------------------------------------------------------------------------
// Delimited text I/O

struct PanelSchema {
  std::string unit = "unit";
  std::string period = "period";
  std::string outcome = "y";
  std::vector<std::string> common;
  std::vector<std::string> group;
  std::string phase;  // optional
  char delimiter = ',';
  Index window_start = 0;  // leading periods kept only as conditioning observations

  /// Schema that reads back what write_panel emits for `panel`.
  static PanelSchema for_panel(const BalancedPanel& panel, char delim = ',') {
    PanelSchema s;
    s.common = panel.common_names;
    s.group = panel.group_names;
    if (panel.has_phases()) s.phase = "phase";
    s.delimiter = delim;
    s.window_start = panel.window.begin;
    return s;
  }
};

namespace detail {

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

inline bool parse_integer(const std::string& s, long long& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Numeric order when every id is an integer, lexicographic otherwise.
inline void sort_unit_ids(std::vector<std::string>& ids) {
  bool numeric = true;
  long long tmp;
  for (const auto& id : ids) numeric = numeric && parse_integer(id, tmp);
  if (numeric) {
    std::sort(ids.begin(), ids.end(), [](const std::string& a, const std::string& b) {
      long long x, y;
      parse_integer(a, x);
      parse_integer(b, y);
      return x < y;
    });
  } else {
    std::sort(ids.begin(), ids.end());
  }
}

}  // namespace detail

inline BalancedPanel load_panel(std::istream& in, const PanelSchema& schema) {
  const csv::Table table = csv::read_table(in, schema.delimiter);
  auto require = [&](const std::string& name) {
    const auto c = table.column(name);
    if (c < 0) fail(ErrorKind::InvalidArgument, "column '" + name + "' not found in header");
    return static_cast<std::size_t>(c);
  };
  const std::size_t c_unit = require(schema.unit), c_period = require(schema.period),
                    c_y = require(schema.outcome);
  std::vector<std::size_t> c_common, c_group;
  for (const auto& n : schema.common) c_common.push_back(require(n));
  for (const auto& n : schema.group) c_group.push_back(require(n));
  const bool with_phase = !schema.phase.empty();
  const std::size_t c_phase = with_phase ? require(schema.phase) : 0;

  std::map<std::string, std::map<long long, std::size_t>> cells;
  std::map<long long, int> all_periods;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    long long per;
    if (!detail::parse_integer(row[c_period], per))
      fail(ErrorKind::MissingValue, "row " + std::to_string(r + 2) + ": period '" + row[c_period] + "' is not an integer");
    auto& unit_cells = cells[row[c_unit]];
    if (!unit_cells.emplace(per, r).second)
      fail(ErrorKind::DuplicateCell, "unit " + row[c_unit] + " period " + std::to_string(per) + " appears twice");
    all_periods[per] = 0;
  }
  if (cells.empty()) fail(ErrorKind::Io, "input has no data rows");

  std::vector<std::string> ids;
  for (const auto& [id, _] : cells) ids.push_back(id);
  detail::sort_unit_ids(ids);

  BalancedPanel p;
  for (const auto& [per, _] : all_periods) p.periods.push_back(per);
  const auto n = static_cast<Index>(ids.size()), t = static_cast<Index>(p.periods.size());
  p.unit_ids = ids;
  p.common_names = schema.common;
  p.group_names = schema.group;
  p.y.resize(n, t);
  if (with_phase) p.phase.resize(n, t);

  for (Index i = 0; i < n; ++i) {
    const auto& unit_cells = cells.at(ids[i]);
    if (static_cast<Index>(unit_cells.size()) != t)
      fail(ErrorKind::UnbalancedPanel, "unit " + ids[i] + " has " + std::to_string(unit_cells.size()) + " of " +
                                           std::to_string(t) + " periods");
    Eigen::MatrixXd xc(t, schema.common.size()), xg(t, schema.group.size());
    for (Index s = 0; s < t; ++s) {
      const auto it = unit_cells.find(p.periods[s]);
      if (it == unit_cells.end())
        fail(ErrorKind::UnbalancedPanel, "unit " + ids[i] + " is missing period " + std::to_string(p.periods[s]));
      const auto& row = table.rows[it->second];
      double v;
      if (!detail::parse_double(row[c_y], v))
        fail(ErrorKind::MissingValue, "unit " + ids[i] + ": outcome '" + row[c_y] + "' is not numeric");
      if (v != 0.0 && v != 1.0)
        fail(ErrorKind::NonBinaryOutcome, "unit " + ids[i] + " period " + std::to_string(p.periods[s]) +
                                              ": outcome " + row[c_y] + " is not 0/1");
      p.y(i, s) = v;
      auto read_cov = [&](std::size_t col) {
        double x;
        if (!detail::parse_double(row[col], x) || !std::isfinite(x))
          fail(ErrorKind::MissingValue, "unit " + ids[i] + " period " + std::to_string(p.periods[s]) + ": column '" +
                                            table.header[col] + "' is missing or non-finite");
        return x;
      };
      for (std::size_t j = 0; j < c_common.size(); ++j) xc(s, j) = read_cov(c_common[j]);
      for (std::size_t j = 0; j < c_group.size(); ++j) xg(s, j) = read_cov(c_group[j]);
      if (with_phase) {
        long long ph;
        if (!detail::parse_integer(row[c_phase], ph))
          fail(ErrorKind::MissingValue, "unit " + ids[i] + ": phase '" + row[c_phase] + "' is not an integer");
        p.phase(i, s) = static_cast<int>(ph);
      }
    }
    p.x_common.push_back(std::move(xc));
    p.x_group.push_back(std::move(xg));
  }
  if (schema.window_start < 0 || schema.window_start >= t)
    fail(ErrorKind::InvalidArgument, "window start outside the panel");
  p.window = {schema.window_start, t};
  p.validate();
  return p;
}

/// Writes one row per unit-period in the layout load_panel reads.
inline void write_panel(std::ostream& out, const BalancedPanel& p, char delim = ',') {
  out << "unit" << delim << "period" << delim << "y";
  for (const auto& n : p.common_names) out << delim << csv::quote(n, delim);
  for (const auto& n : p.group_names) out << delim << csv::quote(n, delim);
  if (p.has_phases()) out << delim << "phase";
  out << '\n';
  for (Index i = 0; i < p.n_units(); ++i) {
    for (Index s = 0; s < p.n_periods(); ++s) {
      out << csv::quote(p.unit_ids[i], delim) << delim << p.periods[s] << delim << (p.y(i, s) > 0.5 ? 1 : 0);
      for (Index j = 0; j < p.n_common(); ++j) out << delim << csv::format_double(p.x_common[i](s, j));
      for (Index j = 0; j < p.n_group(); ++j) out << delim << csv::format_double(p.x_group[i](s, j));
      if (p.has_phases()) out << delim << p.phase(i, s);
      out << '\n';
    }
  }
}

}  // namespace classo
