#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "classo/csv.hpp"
#include "classo/error.hpp"
#include "classo/groups.hpp"
#include "classo/normal.hpp"
#include "classo/panel.hpp"
#include "classo/probit_fe.hpp"

namespace classo {

/// Unit-period cells: periods[i] lists the period indices used for unit i (possibly none).
struct CellSet {
  std::vector<std::vector<Index>> periods;

  Index n_cells() const {
    Index n = 0;
    for (const auto& p : periods) n += static_cast<Index>(p.size());
    return n;
  }
  Index n_units() const {
    Index n = 0;
    for (const auto& p : periods) n += p.empty() ? 0 : 1;
    return n;
  }
};

/// Every likelihood period of the listed units (all units when `units` is empty).
inline CellSet window_cells(const BalancedPanel& panel, const std::vector<Index>& units = {}) {
  CellSet cs;
  cs.periods.resize(static_cast<std::size_t>(panel.n_units()));
  auto fill = [&](Index i) {
    for (Index t = panel.window.begin; t < panel.window.end; ++t) cs.periods[static_cast<std::size_t>(i)].push_back(t);
  };
  if (units.empty())
    for (Index i = 0; i < panel.n_units(); ++i) fill(i);
  else
    for (Index i : units) fill(i);
  return cs;
}

/// Likelihood periods of group-k units whose phase label is in `phases`.
inline CellSet phase_cells(const BalancedPanel& panel, const GroupStructure& groups, int k, const std::set<int>& phases) {
  if (!panel.has_phases()) fail(ErrorKind::InvalidArgument, "panel carries no phase labels");
  CellSet cs;
  cs.periods.resize(static_cast<std::size_t>(panel.n_units()));
  for (Index i = 0; i < panel.n_units(); ++i) {
    if (groups.assignment[static_cast<std::size_t>(i)] != k) continue;
    for (Index t = panel.window.begin; t < panel.window.end; ++t)
      if (phases.contains(panel.phase(i, t))) cs.periods[static_cast<std::size_t>(i)].push_back(t);
  }
  return cs;
}

namespace detail {

inline void check_fit(const BalancedPanel& panel, const ProbitFit& fit, const GroupStructure& groups) {
  if (groups.n_units() != panel.n_units() || fit.mu.size() != panel.n_units())
    fail(ErrorKind::InvalidArgument, "fit, assignment and panel disagree on the number of units");
  if (fit.gamma.size() != panel.n_common() || fit.beta.cols() != panel.n_group() || fit.beta.rows() != groups.K)
    fail(ErrorKind::InvalidArgument, "fit coefficients do not match the panel design");
}

inline double coefficient(const BalancedPanel& panel, const ProbitFit& fit, const GroupStructure& groups, Index i, Index j) {
  const Index q = panel.n_common();
  return j < q ? fit.gamma[j] : fit.beta(groups.assignment[static_cast<std::size_t>(i)], j - q);
}

/// x'coef + mu for unit i at period t, with the listed covariates set to zero.
inline double linear_index(const BalancedPanel& panel, const ProbitFit& fit, const GroupStructure& groups, Index i,
                           Index t, const std::vector<Index>& zeroed = {}) {
  double idx = fit.mu[i];
  for (Index j = 0; j < panel.n_covariates(); ++j) {
    if (std::find(zeroed.begin(), zeroed.end(), j) != zeroed.end()) continue;
    idx += panel.x(i, t, j) * coefficient(panel, fit, groups, i, j);
  }
  return idx;
}

struct UnitMeans {
  double mean = 0.0;  // over cells
  std::vector<double> per_unit;
  Index n_cells = 0;
};

template <class CellValue>
UnitMeans average_cells(const CellSet& cells, CellValue&& value) {
  UnitMeans out;
  double total = 0.0;
  for (std::size_t i = 0; i < cells.periods.size(); ++i) {
    const auto& ts = cells.periods[i];
    if (ts.empty()) continue;
    double unit_total = 0.0;
    for (Index t : ts) unit_total += value(static_cast<Index>(i), t);
    total += unit_total;
    out.n_cells += static_cast<Index>(ts.size());
    out.per_unit.push_back(unit_total / static_cast<double>(ts.size()));
  }
  if (out.n_cells == 0) fail(ErrorKind::EmptyCell, "no unit-period cells to average over");
  out.mean = total / static_cast<double>(out.n_cells);
  return out;
}

/// Sample variance (n - 1 denominator); zero for fewer than two values.
inline double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

}  // namespace detail

struct AmeEstimate {
  std::string covariate;
  double value = 0.0;
  double se = 0.0;
  Index n_units = 0;
  Index n_cells = 0;
};

/// Average of Phi(index | x_j = 1) - Phi(index | x_j = 0) over the cells.
inline AmeEstimate ame_discrete(const BalancedPanel& panel, const ProbitFit& fit, const GroupStructure& groups, Index j,
                                const CellSet& cells) {
  detail::check_fit(panel, fit, groups);
  if (j < 0 || j >= panel.n_covariates()) fail(ErrorKind::InvalidArgument, "covariate index out of range");
  const auto m = detail::average_cells(cells, [&](Index i, Index t) {
    const double c = detail::coefficient(panel, fit, groups, i, j);
    const double rest = detail::linear_index(panel, fit, groups, i, t, {j});
    return normal::cdf(rest + c) - normal::cdf(rest);
  });
  const double n = static_cast<double>(m.per_unit.size());
  return {panel.covariate_name(j), m.mean, std::sqrt(detail::sample_variance(m.per_unit) / n),
          static_cast<Index>(m.per_unit.size()), m.n_cells};
}

/// Average of phi(index) * beta_j over the cells.
inline AmeEstimate ame_continuous(const BalancedPanel& panel, const ProbitFit& fit, const GroupStructure& groups, Index j,
                                  const CellSet& cells) {
  detail::check_fit(panel, fit, groups);
  if (j < 0 || j >= panel.n_covariates()) fail(ErrorKind::InvalidArgument, "covariate index out of range");
  const auto m = detail::average_cells(cells, [&](Index i, Index t) {
    return normal::pdf(detail::linear_index(panel, fit, groups, i, t)) * detail::coefficient(panel, fit, groups, i, j);
  });
  const double n = static_cast<double>(m.per_unit.size());
  return {panel.covariate_name(j), m.mean, std::sqrt(detail::sample_variance(m.per_unit) / n),
          static_cast<Index>(m.per_unit.size()), m.n_cells};
}

struct PhasePrediction {
  int group = 0;   // 0-based
  int phase = 0;   // phase label, or 0 for the pooled row over all phases
  double mean = 0.0;
  double variance = 0.0;  // between-unit variance of per-unit cell means
  double se = 0.0;
  Index n_units = 0;
  Index n_cells = 0;
};

/// Mean predicted probability over the cells with the listed covariates forced to zero.
inline PhasePrediction predict_cells(const BalancedPanel& panel, const ProbitFit& fit, const GroupStructure& groups,
                                     const CellSet& cells, const std::vector<Index>& zeroed = {}) {
  detail::check_fit(panel, fit, groups);
  const auto m = detail::average_cells(
      cells, [&](Index i, Index t) { return normal::cdf(detail::linear_index(panel, fit, groups, i, t, zeroed)); });
  PhasePrediction p;
  p.mean = m.mean;
  p.n_units = static_cast<Index>(m.per_unit.size());
  p.n_cells = m.n_cells;
  p.variance = detail::sample_variance(m.per_unit);
  p.se = std::sqrt(p.variance / static_cast<double>(p.n_units));
  return p;
}

/// Group k, phase label `phase` (0 pools every positive label).
inline PhasePrediction predict_phase_probability(const BalancedPanel& panel, const ProbitFit& fit,
                                                 const GroupStructure& groups, int k, int phase,
                                                 const std::vector<Index>& zeroed = {}) {
  std::set<int> labels;
  if (phase > 0) {
    labels.insert(phase);
  } else {
    for (Index i = 0; i < panel.n_units(); ++i)
      for (Index t = panel.window.begin; t < panel.window.end; ++t)
        if (panel.phase(i, t) > 0) labels.insert(panel.phase(i, t));
  }
  const CellSet cells = phase_cells(panel, groups, k, labels);
  if (cells.n_cells() == 0)
    fail(ErrorKind::EmptyCell, "group " + std::to_string(k + 1) + " has no cells in phase " + std::to_string(phase));
  PhasePrediction p = predict_cells(panel, fit, groups, cells, zeroed);
  p.group = k;
  p.phase = phase;
  return p;
}

inline int max_phase(const BalancedPanel& panel) {
  if (!panel.has_phases()) fail(ErrorKind::InvalidArgument, "panel carries no phase labels");
  return panel.phase.size() == 0 ? 0 : panel.phase.maxCoeff();
}

/// Rows per group: phases 1..P followed by the pooled row (phase 0).
inline std::vector<PhasePrediction> phase_prediction_table(const BalancedPanel& panel, const ProbitFit& fit,
                                                           const GroupStructure& groups,
                                                           const std::vector<Index>& zeroed = {}) {
  const int P = max_phase(panel);
  std::vector<PhasePrediction> rows;
  for (int k = 0; k < groups.K; ++k) {
    for (int ph = 1; ph <= P; ++ph) rows.push_back(predict_phase_probability(panel, fit, groups, k, ph, zeroed));
    rows.push_back(predict_phase_probability(panel, fit, groups, k, 0, zeroed));
  }
  return rows;
}

struct DiffTestResult {
  double delta = 0.0;  // treatment - control
  double z = 0.0;
  double p_value = 1.0;
  bool degenerate = false;  // both variances zero with a nonzero difference
};

inline DiffTestResult diff_test(double mean_t, double var_t, Index n_t, double mean_c, double var_c, Index n_c) {
  if (n_t < 2 || n_c < 2) fail(ErrorKind::InvalidArgument, "difference test needs at least two units per sample");
  if (!(var_t >= 0.0) || !(var_c >= 0.0)) fail(ErrorKind::InvalidArgument, "variances must be non-negative");
  DiffTestResult r;
  r.delta = mean_t - mean_c;
  const double sd = std::sqrt(var_t / static_cast<double>(n_t) + var_c / static_cast<double>(n_c));
  if (sd == 0.0) {
    if (r.delta == 0.0) return r;
    r.degenerate = true;
    r.z = std::copysign(std::numeric_limits<double>::infinity(), r.delta);
    r.p_value = 0.0;
    return r;
  }
  r.z = r.delta / sd;
  r.p_value = std::clamp(2.0 * normal::survival(std::abs(r.z)), 0.0, 1.0);
  return r;
}

inline DiffTestResult diff_test(const PhasePrediction& treatment, const PhasePrediction& control) {
  return diff_test(treatment.mean, treatment.variance, treatment.n_units, control.mean, control.variance, control.n_units);
}

struct MatchingRow {
  std::vector<int> permutation;  // treatment group k is matched to control group permutation[k]
  double A = 0.0;                // L1 distance of group sizes
  double B = 0.0;                // L1 distance of phase predictions
};

struct GroupMatching {
  std::vector<MatchingRow> rows;  // every permutation, lexicographic from the identity
  std::size_t best = 0;

  const MatchingRow& chosen() const { return rows.at(best); }
};

/// Minimises A over all K! relabelings of the control sample, B breaking ties.
inline GroupMatching match_groups(const Eigen::VectorXd& counts_t, const Eigen::VectorXd& counts_c,
                                  const Eigen::MatrixXd& preds_t, const Eigen::MatrixXd& preds_c) {
  const Index K = counts_t.size();
  if (counts_c.size() != K || preds_t.rows() != K || preds_c.rows() != K)
    fail(ErrorKind::KMismatch, "samples have different numbers of groups (" + std::to_string(K) + " vs " +
                                   std::to_string(counts_c.size()) + ")");
  if (preds_t.cols() != preds_c.cols()) fail(ErrorKind::KMismatch, "samples have different numbers of phases");
  if (K > 8) fail(ErrorKind::InvalidArgument, "matching enumerates K! permutations; K > 8 is not supported");
  GroupMatching out;
  std::vector<int> perm(static_cast<std::size_t>(K));
  std::iota(perm.begin(), perm.end(), 0);
  do {
    MatchingRow row;
    row.permutation = perm;
    for (Index k = 0; k < K; ++k) {
      const int m = perm[static_cast<std::size_t>(k)];
      row.A += std::abs(counts_t[k] - counts_c[m]);
      row.B += (preds_t.row(k) - preds_c.row(m)).cwiseAbs().sum();
    }
    out.rows.push_back(std::move(row));
  } while (std::next_permutation(perm.begin(), perm.end()));
  for (std::size_t r = 1; r < out.rows.size(); ++r) {
    const auto& cand = out.rows[r];
    const auto& cur = out.rows[out.best];
    if (cand.A < cur.A || (cand.A == cur.A && cand.B < cur.B)) out.best = r;
  }
  return out;
}

inline void to_json(nlohmann::json& j, const AmeEstimate& a) {
  j = {{"covariate", a.covariate}, {"value", a.value}, {"se", a.se}, {"n_units", a.n_units}, {"n_cells", a.n_cells}};
}

inline void to_json(nlohmann::json& j, const PhasePrediction& p) {
  j = {{"group", p.group + 1}, {"phase", p.phase}, {"mean", p.mean}, {"variance", p.variance},
       {"se", p.se},           {"n_units", p.n_units}, {"n_cells", p.n_cells}};
}

inline void to_json(nlohmann::json& j, const DiffTestResult& d) {
  j = {{"delta", d.delta}, {"z", std::isfinite(d.z) ? nlohmann::json(d.z) : nlohmann::json(d.z > 0 ? "inf" : "-inf")},
       {"p_value", d.p_value}, {"degenerate", d.degenerate}};
}

inline void write_matching_csv(std::ostream& out, const GroupMatching& m) {
  out << "permutation,A,B,chosen\n";
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    std::string perm;
    for (int v : m.rows[r].permutation) perm += (perm.empty() ? "" : "-") + std::to_string(v + 1);
    out << perm << ',' << csv::format_double(m.rows[r].A) << ',' << csv::format_double(m.rows[r].B) << ','
        << (r == m.best ? 1 : 0) << '\n';
  }
}

}  // namespace classo
