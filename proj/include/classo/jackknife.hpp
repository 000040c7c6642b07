#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "classo/error.hpp"
#include "classo/groups.hpp"
#include "classo/json_eigen.hpp"
#include "classo/panel.hpp"
#include "classo/probit_fe.hpp"

namespace classo {

struct HalfPanelSplit {
  Window s1;
  Window s2;
};

/// Splits a likelihood window of length T into its first floor(T/2) periods and the rest.
inline HalfPanelSplit half_panel_split(Window window) {
  const Index T = window.size();
  if (T < 4) fail(ErrorKind::PanelTooShort, "half-panel jackknife needs T >= 4, got " + std::to_string(T));
  const Index mid = window.begin + T / 2;
  return {{window.begin, mid}, {mid, window.end}};
}

inline HalfPanelSplit half_panel_split(Index T) { return half_panel_split(Window{0, T}); }

struct JackknifedEstimate {
  Eigen::VectorXd theta_full;
  Eigen::VectorXd theta_s1;
  Eigen::VectorXd theta_s2;
  Eigen::VectorXd theta_corrected;
  std::vector<std::string> dropped_s1;  // units without outcome variation on that half
  std::vector<std::string> dropped_s2;
};

inline Eigen::VectorXd jackknife_combine(const Eigen::VectorXd& full, const Eigen::VectorXd& s1, const Eigen::VectorXd& s2) {
  if (s1.size() != full.size() || s2.size() != full.size())
    fail(ErrorKind::InvalidArgument, "half-panel estimates differ in length from the full estimate");
  return 2.0 * full - 0.5 * (s1 + s2);
}

using PanelEstimator = std::function<Eigen::VectorXd(const BalancedPanel&, const GroupStructure&)>;

namespace detail {

inline bool varies_within(const Eigen::MatrixXd& x, Index col, Window w) {
  const auto c = x.col(col).segment(w.begin, w.size());
  return c.maxCoeff() != c.minCoeff();
}

}  // namespace detail

/// Flags the entries of [gamma; alpha_1; ...; alpha_K] whose covariate moves over the window
/// for at least one unit that carries it. A covariate constant within every such unit is
/// absorbed by the fixed effects.
inline std::vector<bool> identified_coefficients(const BalancedPanel& panel, const GroupStructure& groups) {
  const Index q = panel.n_common(), r = panel.n_group();
  std::vector<bool> out(static_cast<std::size_t>(q + groups.K * r), false);
  for (Index i = 0; i < panel.n_units(); ++i) {
    for (Index j = 0; j < q; ++j)
      if (detail::varies_within(panel.x_common[i], j, panel.window)) out[static_cast<std::size_t>(j)] = true;
    const Index base = q + groups.assignment[static_cast<std::size_t>(i)] * r;
    for (Index j = 0; j < r; ++j)
      if (detail::varies_within(panel.x_group[i], j, panel.window)) out[static_cast<std::size_t>(base + j)] = true;
  }
  return out;
}

/// Stacked [gamma; alpha_1; ...; alpha_K] from a group-wise fit with fixed membership.
/// Entries that are not identified on the panel's window come back as NaN.
inline PanelEstimator post_lasso_estimator(FitOptions opt = {}) {
  return [opt](const BalancedPanel& p, const GroupStructure& g) {
    Eigen::VectorXd theta = fit_group_qml(p, g, opt).coefficients();
    const std::vector<bool> ok = identified_coefficients(p, g);
    for (Index j = 0; j < theta.size(); ++j)
      if (!ok[static_cast<std::size_t>(j)]) theta[j] = std::numeric_limits<double>::quiet_NaN();
    return theta;
  };
}

namespace detail {

inline std::pair<BalancedPanel, GroupStructure> restrict_to_half(const BalancedPanel& panel, const GroupStructure& groups,
                                                                 Window half, std::vector<std::string>& dropped) {
  const BalancedPanel windowed = panel.with_window(half);
  std::vector<Index> keep;
  std::vector<int> labels;
  for (Index i = 0; i < windowed.n_units(); ++i) {
    if (windowed.has_variation(i)) {
      keep.push_back(i);
      labels.push_back(groups.assignment[static_cast<std::size_t>(i)]);
    } else {
      dropped.push_back(windowed.unit_ids[i]);
    }
  }
  GroupStructure sub = GroupStructure::from_assignment(std::move(labels), groups.K);
  for (int k = 0; k < groups.K; ++k)
    if (sub.group_sizes[static_cast<std::size_t>(k)] == 0)
      fail(ErrorKind::HalfPanelDegenerate, "group " + std::to_string(k + 1) + " has no unit with outcome variation on periods " +
                                               std::to_string(half.begin) + ".." + std::to_string(half.end - 1));
  return {windowed.select_units(keep), std::move(sub)};
}

}  // namespace detail

/// Half-panel jackknife with group membership held fixed. Lagged outcomes are data columns,
/// so the second half conditions on the observed last period of the first.
inline JackknifedEstimate jackknife_correct(const PanelEstimator& estimator, const BalancedPanel& panel,
                                            const GroupStructure& structure) {
  if (structure.n_units() != panel.n_units()) fail(ErrorKind::InvalidArgument, "assignment length differs from panel");
  const HalfPanelSplit split = half_panel_split(panel.window);
  JackknifedEstimate out;
  out.theta_full = estimator(panel, structure);
  const auto [p1, g1] = detail::restrict_to_half(panel, structure, split.s1, out.dropped_s1);
  const auto [p2, g2] = detail::restrict_to_half(panel, structure, split.s2, out.dropped_s2);
  out.theta_s1 = estimator(p1, g1);
  out.theta_s2 = estimator(p2, g2);
  out.theta_corrected = jackknife_combine(out.theta_full, out.theta_s1, out.theta_s2);
  return out;
}

inline void to_json(nlohmann::json& j, const JackknifedEstimate& e) {
  j = {{"theta_full", jsonio::vec(e.theta_full)},
       {"theta_s1", jsonio::vec(e.theta_s1)},
       {"theta_s2", jsonio::vec(e.theta_s2)},
       {"theta_corrected", jsonio::vec(e.theta_corrected)},
       {"dropped_s1", e.dropped_s1},
       {"dropped_s2", e.dropped_s2}};
}

}  // namespace classo
