#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "classo/classo.hpp"
#include "classo/csv.hpp"
#include "classo/dgp.hpp"
#include "classo/error.hpp"
#include "classo/probit_fe.hpp"

namespace classo {

/// c_j = 0.01 * 10^(j / (n - 1)), j = 0..n-1: geometric from 0.01 to 0.1.
inline std::vector<double> default_c_grid(int n = 10) {
  if (n < 1) fail(ErrorKind::InvalidArgument, "c grid needs at least one point");
  if (n == 1) return {0.01};
  std::vector<double> c;
  for (int j = 0; j < n; ++j) c.push_back(0.01 * std::pow(10.0, static_cast<double>(j) / (n - 1)));
  return c;
}

/// lambda_j = c_j * s2_y * T^(-1/3).
inline std::vector<double> lambda_grid(double sample_var_y, Index T, const std::vector<double>& c_values) {
  if (!(sample_var_y > 0.0)) fail(ErrorKind::InvalidArgument, "outcome variance must be positive");
  if (T < 1) fail(ErrorKind::InvalidArgument, "T must be positive");
  const double scale = sample_var_y * std::pow(static_cast<double>(T), -1.0 / 3.0);
  std::vector<double> out;
  for (double c : c_values) {
    if (!(c > 0.0)) fail(ErrorKind::InvalidArgument, "tuning constants must be positive");
    out.push_back(c * scale);
  }
  return out;
}

/// s(T) = log(log T) / (4T).
inline double ic_penalty(Index T) {
  if (T < 4) fail(ErrorKind::InvalidArgument, "information criterion needs T >= 4");
  const double t = static_cast<double>(T);
  return 0.25 * std::log(std::log(t)) / t;
}

/// IC = Q + s(T) p K, where Q is twice the average negative log-likelihood per observation.
inline double information_criterion(double q_tilde, int K, Index p, Index T) {
  return q_tilde + ic_penalty(T) * static_cast<double>(p) * static_cast<double>(K);
}

inline double information_criterion(const ProbitFit& post_fit, int K, Index p, Index T) {
  return information_criterion(-2.0 * post_fit.loglik, K, p, T);
}

/// Sample variance (n - 1 denominator) of the outcome over the estimation window.
inline double outcome_sample_variance(const BalancedPanel& panel) {
  const Window w = panel.window;
  const Eigen::MatrixXd block = panel.y.middleCols(w.begin, w.size());
  const double n = static_cast<double>(block.size());
  if (n < 2) fail(ErrorKind::InvalidArgument, "need at least two observations");
  const double mean = block.mean();
  return (block.array() - mean).square().sum() / (n - 1.0);
}

struct SelectionGrid {
  std::vector<int> K_values;
  std::vector<double> c_values;
  std::vector<double> lambda_values;
  double s = 0.0;

  static SelectionGrid for_panel(const BalancedPanel& panel, int K_max = 4, std::vector<double> c = default_c_grid()) {
    if (K_max < 1) fail(ErrorKind::InvalidArgument, "K_max must be at least 1");
    for (std::size_t j = 1; j < c.size(); ++j)
      if (!(c[j] > c[j - 1])) fail(ErrorKind::InvalidArgument, "c grid must be strictly increasing");
    SelectionGrid g;
    for (int k = 1; k <= K_max; ++k) g.K_values.push_back(k);
    g.lambda_values = lambda_grid(outcome_sample_variance(panel), panel.window_length(), c);
    g.c_values = std::move(c);
    g.s = ic_penalty(panel.window_length());
    return g;
  }
};

struct SelectionCell {
  int K = 0;
  double c = 0.0;
  double lambda = 0.0;
  bool ok = false;
  std::string error;
  double q_tilde = std::numeric_limits<double>::quiet_NaN();
  double ic = std::numeric_limits<double>::quiet_NaN();
  std::optional<ClassoFit> fit;
  std::optional<ProbitFit> post;
};

struct SelectionResult {
  SelectionGrid grid;
  std::vector<SelectionCell> cells;  // K-major, lambda ascending
  std::size_t chosen = 0;

  const SelectionCell& best() const { return cells.at(chosen); }
  int chosen_K() const { return best().K; }
  double chosen_lambda() const { return best().lambda; }
};

struct SelectionOptions {
  ClassoConfig solver;  // K, lambda and warm start are set per cell
  FitOptions post;
};

inline SelectionResult select_model(const BalancedPanel& panel, const SelectionGrid& grid,
                                    const SelectionOptions& opt = {}) {
  if (grid.K_values.empty() || grid.lambda_values.empty()) fail(ErrorKind::InvalidArgument, "empty selection grid");
  if (grid.c_values.size() != grid.lambda_values.size())
    fail(ErrorKind::InvalidArgument, "c and lambda grids differ in length");
  const Index T = panel.window_length(), p = panel.n_group();
  SelectionResult res;
  res.grid = grid;
  std::optional<std::size_t> best;
  std::optional<Error> first_error;
  for (int K : grid.K_values) {
    std::map<std::vector<int>, ProbitFit> post_cache;
    std::optional<ClassoWarmStart> warm;
    for (std::size_t j = 0; j < grid.lambda_values.size(); ++j) {
      SelectionCell cell;
      cell.K = K;
      cell.c = grid.c_values[j];
      cell.lambda = grid.lambda_values[j];
      try {
        ClassoConfig cfg = opt.solver;
        cfg.K = K;
        cfg.lambda = cell.lambda;
        cfg.seed = derive_seed(opt.solver.seed, static_cast<std::uint64_t>(K));
        cfg.warm_start = warm;
        ClassoFit fit = classo_solve(panel, cfg);
        warm = fit.warm_start();
        auto hit = post_cache.find(fit.groups.assignment);
        if (hit == post_cache.end()) hit = post_cache.emplace(fit.groups.assignment, post_lasso(panel, fit, opt.post)).first;
        cell.post = hit->second;
        cell.q_tilde = -2.0 * cell.post->loglik;
        cell.ic = information_criterion(cell.q_tilde, K, p, T);
        cell.fit = std::move(fit);
        cell.ok = true;
      } catch (const Error& e) {
        cell.error = e.what();
        if (!first_error) first_error = e;
        warm.reset();
      }
      res.cells.push_back(std::move(cell));
      const auto idx = res.cells.size() - 1;
      // Later cells have larger K or, for equal K, larger lambda, so they must win outright.
      if (res.cells[idx].ok && (!best || res.cells[idx].ic < res.cells[*best].ic - 1e-15)) best = idx;
    }
  }
  if (!best) throw *first_error;
  res.chosen = *best;
  return res;
}

inline void write_ic_table(std::ostream& out, const SelectionResult& res) {
  out << "K,c,lambda,IC,Q_tilde,status\n";
  for (const auto& cell : res.cells) {
    out << cell.K << ',' << csv::format_double(cell.c) << ',' << csv::format_double(cell.lambda) << ',';
    if (cell.ok)
      out << csv::format_double(cell.ic) << ',' << csv::format_double(cell.q_tilde) << ",ok\n";
    else
      out << ",," << csv::quote(cell.error, ',') << '\n';
  }
}

inline void to_json(nlohmann::json& j, const SelectionCell& c) {
  j = {{"K", c.K}, {"c", c.c}, {"lambda", c.lambda}, {"ok", c.ok}};
  if (c.ok) {
    j["IC"] = c.ic;
    j["Q_tilde"] = c.q_tilde;
  } else {
    j["error"] = c.error;
  }
}

}  // namespace classo
