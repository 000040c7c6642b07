#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "classo/error.hpp"
#include "classo/groups.hpp"
#include "classo/json_eigen.hpp"
#include "classo/linalg.hpp"
#include "classo/normal.hpp"
#include "classo/panel.hpp"
#include "classo/parallel.hpp"

namespace classo {

using ConstVecRef = Eigen::Ref<const Eigen::VectorXd>;
using ConstMatRef = Eigen::Ref<const Eigen::MatrixXd>;

/// Sum over periods of the probit log-likelihood at the given linear indices.
inline double unit_loglik(ConstVecRef y, ConstVecRef index) {
  double ll = 0.0;
  for (Index t = 0; t < y.size(); ++t) {
    const double sign = y[t] > 0.5 ? 1.0 : -1.0;
    ll += normal::log_cdf_clamped(sign * index[t]);
  }
  return ll;
}

struct MuSolution {
  double mu = 0.0;
  int iterations = 0;
  // Final bracket: score(lo) > 0 > score(hi) whenever both ends are finite.
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};

/// Maximises the unit log-likelihood in its fixed effect. Safeguarded Newton on the
/// (strictly decreasing) score with bisection whenever a step leaves the bracket.
inline MuSolution solve_fixed_effect(ConstVecRef y, ConstVecRef offset, double start = 0.0) {
  const double ybar = y.mean();
  if (ybar <= 0.0 || ybar >= 1.0) fail(ErrorKind::NoVariation, "outcome has no variation; fixed effect is unbounded");
  MuSolution sol;
  double mu = std::isfinite(start) ? start : 0.0;
  for (int it = 1; it <= 200; ++it) {
    sol.iterations = it;
    double score = 0.0, weight = 0.0;
    for (Index t = 0; t < y.size(); ++t) {
      const auto terms = normal::probit_terms(y[t], offset[t] + mu);
      score += terms.score;
      weight += terms.weight;
    }
    if (std::abs(score) < 1e-10) break;
    if (score > 0.0)
      sol.lo = mu;
    else
      sol.hi = mu;
    double step = score / std::max(weight, 1e-300);
    step = std::clamp(step, -50.0, 50.0);
    double next = mu + step;
    if (!(next > sol.lo && next < sol.hi)) next = 0.5 * (sol.lo + sol.hi);
    const bool tiny = std::abs(next - mu) < 1e-12;
    mu = next;
    if (tiny) break;
  }
  sol.mu = mu;
  return sol;
}

inline double concentrate_fixed_effect(ConstVecRef y, ConstVecRef offset, double start = 0.0) {
  return solve_fixed_effect(y, offset, start).mu;
}

/// Form with explicit covariate blocks: offset = X_common * gamma + X_group * beta.
inline double concentrate_fixed_effect(ConstVecRef y, ConstMatRef x_common, ConstMatRef x_group, ConstVecRef gamma,
                                       ConstVecRef beta) {
  Eigen::VectorXd offset = Eigen::VectorXd::Zero(y.size());
  if (gamma.size() > 0) offset += x_common * gamma;
  if (beta.size() > 0) offset += x_group * beta;
  return concentrate_fixed_effect(y, offset);
}

/// One unit evaluated at given coefficients with its fixed effect concentrated out.
struct UnitEval {
  double loglik = 0.0;
  double mu = 0.0;
  Eigen::VectorXd score;  // d loglik / d coef (envelope: mu held at its optimum)
  Eigen::MatrixXd info;   // profile information, X'WX - (X'w)(X'w)'/sum(w)
};

inline UnitEval evaluate_unit(ConstVecRef y, ConstMatRef design, ConstVecRef coef, ConstVecRef offset,
                              double mu_start, bool with_derivatives) {
  const Index t_len = y.size();
  Eigen::VectorXd base = offset;
  if (design.cols() > 0) base += design * coef;
  UnitEval ev;
  ev.mu = concentrate_fixed_effect(y, base, mu_start);
  if (!with_derivatives) {
    ev.loglik = unit_loglik(y, (base.array() + ev.mu).matrix());
    return ev;
  }
  Eigen::VectorXd g(t_len), w(t_len);
  for (Index t = 0; t < t_len; ++t) {
    const auto terms = normal::probit_terms(y[t], base[t] + ev.mu);
    ev.loglik += terms.loglik;
    g[t] = terms.score;
    w[t] = terms.weight;
  }
  ev.score = design.transpose() * g;
  const Eigen::VectorXd xw = design.transpose() * w;
  ev.info = design.transpose() * w.asDiagonal() * design;
  ev.info.noalias() -= xw * xw.transpose() / std::max(w.sum(), 1e-300);
  return ev;
}

/// -(1/NT) sum_i unit log-likelihood, fixed effects concentrated; betas has one row per unit.
inline double profile_negloglik(const BalancedPanel& panel, const Eigen::VectorXd& gamma, const Eigen::MatrixXd& betas) {
  const Index n = panel.n_units(), tw = panel.window_length();
  const Window w = panel.window;
  std::vector<double> ll(static_cast<std::size_t>(n));
  parallel_for(n, [&](std::ptrdiff_t i) {
    Eigen::VectorXd offset = Eigen::VectorXd::Zero(tw);
    if (panel.n_common() > 0) offset += panel.x_common[i].middleRows(w.begin, tw) * gamma;
    if (panel.n_group() > 0) offset += panel.x_group[i].middleRows(w.begin, tw) * betas.row(i).transpose();
    const Eigen::VectorXd y = panel.y.row(i).segment(w.begin, tw).transpose();
    const double mu = concentrate_fixed_effect(y, offset);
    ll[static_cast<std::size_t>(i)] = unit_loglik(y, (offset.array() + mu).matrix());
  });
  double total = 0.0;
  for (double v : ll) total += v;
  return -total / (static_cast<double>(n) * static_cast<double>(tw));
}

/// Fixed-effects probit fit. `beta` holds one row per group (a single row for pooled fits);
/// `cov` is over the stacked vector [gamma; beta row 0; beta row 1; ...].
struct ProbitFit {
  Eigen::VectorXd gamma;
  Eigen::MatrixXd beta;
  Eigen::VectorXd mu;
  double loglik = 0.0;  // average per observation
  Eigen::MatrixXd cov;
  Eigen::VectorXd se;
  bool converged = false;
  int iterations = 0;
  std::vector<double> objective_trace;  // profile objective after each accepted step

  Eigen::VectorXd coefficients() const {
    Eigen::VectorXd out(gamma.size() + beta.size());
    out.head(gamma.size()) = gamma;
    for (Index k = 0; k < beta.rows(); ++k) out.segment(gamma.size() + k * beta.cols(), beta.cols()) = beta.row(k).transpose();
    return out;
  }

  /// Coefficients in stacked [common, group] order for a unit in group k.
  Eigen::VectorXd unit_coefficients(int k) const {
    Eigen::VectorXd out(gamma.size() + beta.cols());
    out << gamma, beta.row(k).transpose();
    return out;
  }
};

inline void to_json(nlohmann::json& j, const ProbitFit& f) {
  j = {{"gamma", jsonio::vec(f.gamma)},   {"beta", jsonio::mat(f.beta)},  {"mu", jsonio::vec(f.mu)},
       {"loglik", f.loglik},              {"se", jsonio::vec(f.se)},      {"cov", jsonio::mat(f.cov)},
       {"converged", f.converged},        {"iterations", f.iterations},   {"objective_trace", f.objective_trace}};
}

inline void from_json(const nlohmann::json& j, ProbitFit& f) {
  f.gamma = jsonio::to_vec(j.at("gamma"));
  f.beta = jsonio::to_mat(j.at("beta"));
  f.mu = jsonio::to_vec(j.at("mu"));
  f.loglik = j.at("loglik").get<double>();
  f.se = jsonio::to_vec(j.at("se"));
  f.cov = jsonio::to_mat(j.at("cov"));
  f.converged = j.at("converged").get<bool>();
  f.iterations = j.at("iterations").get<int>();
  if (j.contains("objective_trace")) f.objective_trace = j.at("objective_trace").get<std::vector<double>>();
}

struct FitOptions {
  int max_iterations = 500;
  double tol_objective = 1e-9;  // relative change in the profile objective
};

namespace detail {

// Newton ascent on the profile likelihood over theta = [gamma; alpha_0; ...; alpha_{K-1}],
// unit i loading its group-specific covariates on alpha_{group[i]}.
inline ProbitFit fit_grouped(const BalancedPanel& panel, const std::vector<int>& group, int K, const FitOptions& opt) {
  const Index n = panel.n_units(), tw = panel.window_length(), q = panel.n_common(), r = panel.n_group();
  const Index p = q + r, dim = q + K * r;
  const Window win = panel.window;
  const double nobs = static_cast<double>(n) * static_cast<double>(tw);
  for (Index i = 0; i < n; ++i)
    if (!panel.has_variation(i))
      fail(ErrorKind::NoVariation, "unit " + panel.unit_ids[i] + " has no outcome variation; filter it first");

  std::vector<Eigen::MatrixXd> design(static_cast<std::size_t>(n));
  std::vector<Eigen::VectorXd> ys(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    design[i].resize(tw, p);
    design[i] << panel.x_common[i].middleRows(win.begin, tw), panel.x_group[i].middleRows(win.begin, tw);
    ys[i] = panel.y.row(i).segment(win.begin, tw).transpose();
  }
  auto local = [&](const Eigen::VectorXd& theta, Index i) {
    Eigen::VectorXd b(p);
    b.head(q) = theta.head(q);
    b.tail(r) = theta.segment(q + group[i] * r, r);
    return b;
  };
  const Eigen::VectorXd zero_offset = Eigen::VectorXd::Zero(tw);

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(n);
  std::vector<UnitEval> evals(static_cast<std::size_t>(n));
  auto evaluate = [&](const Eigen::VectorXd& th, const Eigen::VectorXd& mu_start, std::vector<UnitEval>& out) {
    parallel_for(n, [&](std::ptrdiff_t i) {
      out[i] = evaluate_unit(ys[i], design[i], local(th, i), zero_offset, mu_start[i], true);
    });
    double total = 0.0;
    for (const auto& e : out) total += e.loglik;
    return -total / nobs;
  };
  auto assemble = [&](const std::vector<UnitEval>& ev, Eigen::VectorXd& grad, Eigen::MatrixXd& info) {
    grad = Eigen::VectorXd::Zero(dim);
    info = Eigen::MatrixXd::Zero(dim, dim);
    for (Index i = 0; i < n; ++i) {
      const auto& e = ev[i];
      const Index off = q + group[i] * r;
      grad.head(q) += e.score.head(q);
      grad.segment(off, r) += e.score.tail(r);
      info.topLeftCorner(q, q) += e.info.topLeftCorner(q, q);
      info.block(0, off, q, r) += e.info.topRightCorner(q, r);
      info.block(off, 0, r, q) += e.info.bottomLeftCorner(r, q);
      info.block(off, off, r, r) += e.info.bottomRightCorner(r, r);
    }
  };

  double obj = evaluate(theta, mu, evals);
  for (Index i = 0; i < n; ++i) mu[i] = evals[i].mu;
  ProbitFit fit;
  fit.objective_trace.push_back(obj);
  Eigen::VectorXd grad;
  Eigen::MatrixXd info;
  std::vector<UnitEval> trial(static_cast<std::size_t>(n));
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    assemble(evals, grad, info);
    if (dim == 0) {
      fit.converged = true;
      break;
    }
    const linalg::SpdSolver solver(info);
    const Eigen::VectorXd dir = solver.solve_vec(grad);
    const double decrement = grad.dot(dir);
    const double rel_dec = decrement / (2.0 * nobs * std::max(std::abs(obj), 1e-300));
    if (!(rel_dec > 1e-15) || dir.cwiseAbs().maxCoeff() < 1e-10) {
      fit.converged = true;
      break;
    }
    double step = 1.0, trial_obj = obj;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      const Eigen::VectorXd cand = theta + step * dir;
      trial_obj = evaluate(cand, mu, trial);
      if (std::isfinite(trial_obj) && trial_obj <= obj - 1e-4 * step * decrement / nobs) {
        theta = cand;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // Decrease is below rounding of the objective; take the full step if it does not go up.
      fit.converged = rel_dec < 1e-10;
      if (fit.converged) {
        const Eigen::VectorXd cand = theta + dir;
        const double polished = evaluate(cand, mu, trial);
        if (polished <= obj) {
          theta = cand;
          obj = polished;
          fit.objective_trace.push_back(obj);
          std::swap(evals, trial);
          for (Index i = 0; i < n; ++i) mu[i] = evals[i].mu;
        }
      }
      break;
    }
    const double rel_change = (obj - trial_obj) / std::max(std::abs(obj), 1e-300);
    obj = trial_obj;
    fit.objective_trace.push_back(obj);
    std::swap(evals, trial);
    for (Index i = 0; i < n; ++i) mu[i] = evals[i].mu;
    if (rel_change < opt.tol_objective && rel_dec < 1e-10 && dir.cwiseAbs().maxCoeff() * step < 1e-9) {
      fit.converged = true;
      ++it;
      break;
    }
  }
  fit.iterations = it;
  if (!fit.converged)
    fail(ErrorKind::NonConvergence, "profile Newton did not converge after " + std::to_string(it) +
                                        " iterations (objective " + std::to_string(obj) + ")");

  assemble(evals, grad, info);
  fit.gamma = theta.head(q);
  fit.beta.resize(K, r);
  for (int k = 0; k < K; ++k) fit.beta.row(k) = theta.segment(q + k * r, r).transpose();
  fit.mu = mu;
  fit.loglik = -obj;
  // Cluster-robust sandwich: per-unit scores, fixed effects concentrated.
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(dim, dim);
  for (Index i = 0; i < n; ++i) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(dim);
    const Index off = q + group[i] * r;
    s.head(q) = evals[i].score.head(q);
    s.segment(off, r) = evals[i].score.tail(r);
    meat.noalias() += s * s.transpose();
  }
  const linalg::SpdSolver solver(info);
  const Eigen::MatrixXd bread = solver.solve(Eigen::MatrixXd::Identity(dim, dim));
  fit.cov = bread * meat * bread;
  fit.cov = 0.5 * (fit.cov + fit.cov.transpose());
  fit.se = fit.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return fit;
}

}  // namespace detail

/// Homogeneous dynamic FE probit: gamma and one beta common to all units.
inline ProbitFit fit_pooled_probit_fe(const BalancedPanel& panel, const FitOptions& opt = {}) {
  return detail::fit_grouped(panel, std::vector<int>(static_cast<std::size_t>(panel.n_units()), 0), 1, opt);
}

/// Group-wise QML: one gamma for everyone and one coefficient vector per group.
/// Without common covariates each group is fitted on its own subpanel.
inline ProbitFit fit_group_qml(const BalancedPanel& panel, const GroupStructure& groups, const FitOptions& opt = {}) {
  if (groups.n_units() != panel.n_units()) fail(ErrorKind::InvalidArgument, "assignment length differs from panel");
  groups.require_nonempty();
  if (panel.n_common() > 0 || groups.K == 1) return detail::fit_grouped(panel, groups.assignment, groups.K, opt);

  const Index r = panel.n_group(), n = panel.n_units();
  ProbitFit fit;
  fit.gamma.resize(0);
  fit.beta.resize(groups.K, r);
  fit.mu.resize(n);
  fit.cov = Eigen::MatrixXd::Zero(groups.K * r, groups.K * r);
  fit.converged = true;
  double total_ll = 0.0;
  for (int k = 0; k < groups.K; ++k) {
    const auto members = groups.members(k);
    const BalancedPanel sub = panel.select_units(members);
    const ProbitFit part = fit_pooled_probit_fe(sub, opt);
    fit.beta.row(k) = part.beta.row(0);
    for (std::size_t m = 0; m < members.size(); ++m) fit.mu[members[m]] = part.mu[static_cast<Index>(m)];
    fit.cov.block(k * r, k * r, r, r) = part.cov;
    fit.iterations = std::max(fit.iterations, part.iterations);
    total_ll += part.loglik * static_cast<double>(members.size());
  }
  fit.loglik = total_ll / static_cast<double>(n);
  fit.se = fit.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return fit;
}

}  // namespace classo
