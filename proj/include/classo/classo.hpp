#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "classo/error.hpp"
#include "classo/groups.hpp"
#include "classo/json_eigen.hpp"
#include "classo/linalg.hpp"
#include "classo/panel.hpp"
#include "classo/parallel.hpp"
#include "classo/probit_fe.hpp"

namespace classo {

enum class InitStrategy { IndividualFitsThenKmeans, RandomCenters, UserSupplied };

inline std::string_view to_string(InitStrategy s) {
  switch (s) {
    case InitStrategy::IndividualFitsThenKmeans: return "individual-kmeans";
    case InitStrategy::RandomCenters: return "random-centers";
    case InitStrategy::UserSupplied: return "user";
  }
  return "?";
}

/// Full solver state from an earlier fit, e.g. the previous lambda on a grid.
struct ClassoWarmStart {
  Eigen::VectorXd gamma;
  Eigen::MatrixXd betas;   // N x r
  Eigen::MatrixXd alphas;  // K x r
  Eigen::VectorXd mu;
};

struct ClassoConfig {
  int K = 1;
  double lambda = 0.0;
  int max_sweeps = 200;
  double tol_objective = 1e-8;     // relative change of the penalised objective per sweep
  int tol_assignment_stability = 2;  // consecutive sweeps with unchanged nearest-centre labels
  InitStrategy init_strategy = InitStrategy::IndividualFitsThenKmeans;
  std::uint64_t seed = 1;
  int kmeans_restarts = 10;
  std::optional<ClassoWarmStart> warm_start;
  Eigen::MatrixXd initial_alphas;  // K x r, for InitStrategy::UserSupplied

  void validate(Index n_units, Index r) const {
    if (K < 1) fail(ErrorKind::InvalidArgument, "K must be at least 1");
    if (K > n_units) fail(ErrorKind::InvalidArgument, "K exceeds the number of units");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail(ErrorKind::InvalidArgument, "lambda must be finite and >= 0");
    if (max_sweeps < 1) fail(ErrorKind::InvalidArgument, "max_sweeps must be positive");
    if (!(tol_objective > 0.0)) fail(ErrorKind::InvalidArgument, "tol_objective must be positive");
    if (tol_assignment_stability < 1) fail(ErrorKind::InvalidArgument, "tol_assignment_stability must be positive");
    if (r < 1) fail(ErrorKind::InvalidArgument, "classifier-lasso needs at least one group-specific covariate");
    if (init_strategy == InitStrategy::UserSupplied && !warm_start &&
        (initial_alphas.rows() != K || initial_alphas.cols() != r))
      fail(ErrorKind::InvalidArgument, "initial_alphas must be K x r");
    if (warm_start) {
      const auto& w = *warm_start;
      if (w.betas.rows() != n_units || w.betas.cols() != r || w.alphas.rows() != K || w.alphas.cols() != r ||
          w.mu.size() != n_units)
        fail(ErrorKind::InvalidArgument, "warm start has the wrong shape");
    }
  }
};

struct ClassoFit {
  int K = 0;
  double lambda = 0.0;
  Eigen::VectorXd gamma;
  Eigen::MatrixXd betas;
  Eigen::MatrixXd alphas;
  Eigen::VectorXd mu;
  GroupStructure groups;
  double objective = 0.0;  // negloglik + lambda * penalty
  double negloglik = 0.0;
  double penalty = 0.0;
  std::vector<double> objective_trace;  // initial value, then once per sweep
  int sweeps = 0;
  bool converged = false;
  Index n_fused = 0;  // units whose coefficients coincide with a centre

  ClassoWarmStart warm_start() const { return {gamma, betas, alphas, mu}; }
};

inline void to_json(nlohmann::json& j, const ClassoFit& f) {
  j = {{"K", f.K},
       {"lambda", f.lambda},
       {"gamma", jsonio::vec(f.gamma)},
       {"alphas", jsonio::mat(f.alphas)},
       {"groups", f.groups},
       {"objective", f.objective},
       {"negloglik", f.negloglik},
       {"penalty", f.penalty},
       {"sweeps", f.sweeps},
       {"converged", f.converged},
       {"n_fused", f.n_fused},
       {"objective_trace", f.objective_trace}};
}

/// (1/N) sum_i prod_k ||beta_i - alpha_k||.
inline double penalty_h(const Eigen::MatrixXd& betas, const Eigen::MatrixXd& alphas) {
  if (betas.cols() != alphas.cols()) fail(ErrorKind::InvalidArgument, "betas and alphas differ in width");
  if (betas.rows() == 0) return 0.0;
  double total = 0.0;
  for (Index i = 0; i < betas.rows(); ++i) {
    double prod = 1.0;
    for (Index k = 0; k < alphas.rows(); ++k) prod *= (betas.row(i) - alphas.row(k)).norm();
    total += prod;
  }
  return total / static_cast<double>(betas.rows());
}

/// Nearest centre in Euclidean distance; ties go to the lowest label.
inline int nearest_center(const Eigen::RowVectorXd& beta, const Eigen::MatrixXd& alphas) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index k = 0; k < alphas.rows(); ++k) {
    const double d = (beta - alphas.row(k)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

inline GroupStructure assign_groups(const Eigen::MatrixXd& betas, const Eigen::MatrixXd& alphas) {
  std::vector<int> a(static_cast<std::size_t>(betas.rows()));
  for (Index i = 0; i < betas.rows(); ++i) a[static_cast<std::size_t>(i)] = nearest_center(betas.row(i), alphas);
  return GroupStructure::from_assignment(std::move(a), static_cast<int>(alphas.rows()));
}

/// Penalised objective evaluated from scratch.
inline double classo_objective(const BalancedPanel& panel, const Eigen::VectorXd& gamma, const Eigen::MatrixXd& betas,
                               const Eigen::MatrixXd& alphas, double lambda) {
  return profile_negloglik(panel, gamma, betas) + lambda * penalty_h(betas, alphas);
}

namespace detail {

/// k-means++ seeding followed by Lloyd iterations; best of several restarts by within-cluster SS.
inline Eigen::MatrixXd kmeans(const Eigen::MatrixXd& pts, int K, std::mt19937_64& rng, int restarts) {
  const Index n = pts.rows(), d = pts.cols();
  Eigen::MatrixXd best;
  double best_ss = std::numeric_limits<double>::infinity();
  for (int rep = 0; rep < std::max(1, restarts); ++rep) {
    Eigen::MatrixXd c(K, d);
    std::uniform_int_distribution<Index> pick(0, n - 1);
    c.row(0) = pts.row(pick(rng));
    Eigen::VectorXd d2(n);
    for (int k = 1; k < K; ++k) {
      for (Index i = 0; i < n; ++i) {
        double m = std::numeric_limits<double>::infinity();
        for (int l = 0; l < k; ++l) m = std::min(m, (pts.row(i) - c.row(l)).squaredNorm());
        d2[i] = m;
      }
      if (d2.sum() > 0.0) {
        std::discrete_distribution<Index> draw(d2.data(), d2.data() + n);
        c.row(k) = pts.row(draw(rng));
      } else {
        c.row(k) = pts.row(pick(rng));
      }
    }
    std::vector<int> label(static_cast<std::size_t>(n), -1);
    for (int it = 0; it < 100; ++it) {
      bool changed = false;
      for (Index i = 0; i < n; ++i) {
        const int l = nearest_center(pts.row(i), c);
        if (l != label[static_cast<std::size_t>(i)]) changed = true;
        label[static_cast<std::size_t>(i)] = l;
      }
      Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(K, d);
      std::vector<Index> count(static_cast<std::size_t>(K), 0);
      for (Index i = 0; i < n; ++i) {
        sum.row(label[static_cast<std::size_t>(i)]) += pts.row(i);
        ++count[static_cast<std::size_t>(label[static_cast<std::size_t>(i)])];
      }
      for (int k = 0; k < K; ++k) {
        if (count[static_cast<std::size_t>(k)] > 0) {
          c.row(k) = sum.row(k) / static_cast<double>(count[static_cast<std::size_t>(k)]);
          continue;
        }
        // Empty cluster: restart it at the worst-fitted point.
        Index far = 0;
        double far_d = -1.0;
        for (Index i = 0; i < n; ++i) {
          const double dd = (pts.row(i) - c.row(label[static_cast<std::size_t>(i)])).squaredNorm();
          if (dd > far_d) {
            far_d = dd;
            far = i;
          }
        }
        c.row(k) = pts.row(far);
        changed = true;
      }
      if (!changed) break;
    }
    double ss = 0.0;
    for (Index i = 0; i < n; ++i) ss += (pts.row(i) - c.row(nearest_center(pts.row(i), c))).squaredNorm();
    if (ss < best_ss) {
      best_ss = ss;
      best = c;
    }
  }
  return best;
}

/// Smallest r > 0 with sum_j c_j^2 / (ev_j r + w)^2 = 1; the left side decreases in r.
inline double prox_radius(const Eigen::VectorXd& c, const Eigen::VectorXd& ev, double w) {
  auto excess = [&](double r) { return (c.array() / (ev.array() * r + w)).square().sum() - 1.0; };
  double lo = 0.0, hi = c.norm() / std::max(ev.minCoeff(), 1e-300);
  if (!std::isfinite(hi)) hi = 1e300;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (excess(mid) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

class ClassoSolver {
 public:
  ClassoSolver(const BalancedPanel& panel, const ClassoConfig& cfg)
      : panel_(panel),
        cfg_(cfg),
        n_(panel.n_units()),
        tw_(panel.window_length()),
        q_(panel.n_common()),
        r_(panel.n_group()),
        K_(cfg.K),
        lambda_(cfg.lambda) {
    cfg.validate(n_, r_);
    for (Index i = 0; i < n_; ++i)
      if (!panel.has_variation(i))
        fail(ErrorKind::NoVariation, "unit " + panel.unit_ids[i] + " has no outcome variation; filter it first");
    const Window w = panel.window;
    xc_.resize(n_);
    xg_.resize(n_);
    full_.resize(n_);
    y_.resize(n_);
    for (Index i = 0; i < n_; ++i) {
      xc_[i] = panel.x_common[i].middleRows(w.begin, tw_);
      xg_[i] = panel.x_group[i].middleRows(w.begin, tw_);
      full_[i].resize(tw_, q_ + r_);
      full_[i] << xc_[i], xg_[i];
      y_[i] = panel.y.row(i).segment(w.begin, tw_).transpose();
    }
  }

  ClassoFit run() {
    initialise();
    ClassoFit fit;
    fit.K = K_;
    fit.lambda = lambda_;
    double obj = objective();
    fit.objective_trace.push_back(obj);
    GroupStructure labels = assign_groups(beta_, alpha_);
    int stable = 0;
    int sweep = 0;
    for (; sweep < cfg_.max_sweeps; ++sweep) {
      const double before = obj;
      for (int k = 0; k < K_; ++k) joint_move(k, false);
      for (int k = 0; k < K_; ++k) joint_move(k, true);
      common_move();
      unit_moves();
      reseed_empty_groups();
      obj = objective();
      fit.objective_trace.push_back(obj);
      GroupStructure next = assign_groups(beta_, alpha_);
      stable = next.assignment == labels.assignment ? stable + 1 : 0;
      labels = std::move(next);
      const double rel = (before - obj) / std::max(std::abs(before), 1e-300);
      if (rel < cfg_.tol_objective && stable >= cfg_.tol_assignment_stability) {
        fit.converged = true;
        ++sweep;
        break;
      }
    }
    fit.sweeps = sweep;
    if (!fit.converged)
      fail(ErrorKind::NonConvergence, "classifier-lasso did not converge in " + std::to_string(cfg_.max_sweeps) +
                                          " sweeps (K=" + std::to_string(K_) + ", lambda=" + std::to_string(lambda_) + ")");
    for (int k = 0; k < K_; ++k)
      for (int l = k + 1; l < K_; ++l)
        if ((alpha_.row(k) - alpha_.row(l)).norm() < 1e-8)
          fail(ErrorKind::DegenerateCenters,
               "centres " + std::to_string(k + 1) + " and " + std::to_string(l + 1) + " coincide");

    fit.gamma = gamma_;
    fit.betas = beta_;
    fit.alphas = alpha_;
    fit.mu = mu_;
    fit.groups = std::move(labels);
    fit.negloglik = f_.sum() / static_cast<double>(n_);
    fit.penalty = pen_.sum() / static_cast<double>(n_);
    fit.objective = obj;
    for (Index i = 0; i < n_; ++i)
      for (int k = 0; k < K_; ++k)
        if (beta_.row(i) == alpha_.row(k)) {
          ++fit.n_fused;
          break;
        }
    return fit;
  }

 private:
  double objective() const { return (f_.sum() + lambda_ * pen_.sum()) / static_cast<double>(n_); }

  double unit_penalty(const Eigen::RowVectorXd& b, const Eigen::MatrixXd& alphas) const {
    double prod = 1.0;
    for (int k = 0; k < K_; ++k) prod *= (b - alphas.row(k)).norm();
    return prod;
  }

  Eigen::VectorXd common_offset(Index i, const Eigen::VectorXd& gamma) const {
    if (q_ == 0) return Eigen::VectorXd::Zero(tw_);
    return xc_[i] * gamma;
  }

  // Unit-scale negative log-likelihood and its fixed effect.
  std::pair<double, double> unit_value(Index i, const Eigen::VectorXd& gamma, const Eigen::VectorXd& beta,
                                       double mu_start) const {
    const auto ev = evaluate_unit(y_[i], xg_[i], beta, common_offset(i, gamma), mu_start, false);
    return {-ev.loglik / static_cast<double>(tw_), ev.mu};
  }

  void refresh_cache() {
    f_.resize(n_);
    pen_.resize(n_);
    parallel_for(n_, [&](std::ptrdiff_t i) {
      const auto [f, mu] = unit_value(i, gamma_, beta_.row(i).transpose(), mu_[i]);
      f_[i] = f;
      mu_[i] = mu;
      pen_[i] = unit_penalty(beta_.row(i), alpha_);
    });
  }

  void initialise() {
    if (cfg_.warm_start) {
      const auto& w = *cfg_.warm_start;
      gamma_ = w.gamma;
      beta_ = w.betas;
      alpha_ = w.alphas;
      mu_ = w.mu;
      if (gamma_.size() != q_) fail(ErrorKind::InvalidArgument, "warm start gamma has the wrong length");
      refresh_cache();
      return;
    }
    const ProbitFit pooled = fit_pooled_probit_fe(panel_);
    gamma_ = pooled.gamma;
    mu_ = pooled.mu;
    const Eigen::VectorXd b0 = pooled.beta.row(0).transpose();
    beta_.resize(n_, r_);
    parallel_for(n_, [&](std::ptrdiff_t i) { beta_.row(i) = individual_fit(i, b0).transpose(); });

    std::mt19937_64 rng(cfg_.seed);
    if (cfg_.init_strategy == InitStrategy::UserSupplied) {
      alpha_ = cfg_.initial_alphas;
    } else if (K_ == 1) {
      alpha_ = b0.transpose();
    } else if (cfg_.init_strategy == InitStrategy::RandomCenters) {
      std::vector<Index> idx(static_cast<std::size_t>(n_));
      for (Index i = 0; i < n_; ++i) idx[static_cast<std::size_t>(i)] = i;
      std::shuffle(idx.begin(), idx.end(), rng);
      alpha_.resize(K_, r_);
      for (int k = 0; k < K_; ++k) alpha_.row(k) = beta_.row(idx[static_cast<std::size_t>(k)]);
    } else {
      alpha_ = kmeans(beta_, K_, rng, cfg_.kmeans_restarts);
    }
    // Coincident starting centres would never separate.
    for (int k = 1; k < K_; ++k)
      for (int l = 0; l < k; ++l)
        if ((alpha_.row(k) - alpha_.row(l)).norm() < 1e-6) alpha_.row(k).array() += 1e-3 * k;
    refresh_cache();
  }

  // Unit-by-unit probit with gamma at the pooled value and a small ridge towards the pooled slope.
  Eigen::VectorXd individual_fit(Index i, const Eigen::VectorXd& b0) {
    constexpr double ridge = 1e-2;
    const double scale = 1.0 / static_cast<double>(tw_);
    const Eigen::VectorXd offset = common_offset(i, gamma_);
    Eigen::VectorXd b = b0;
    double mu = mu_[i];
    auto value = [&](const Eigen::VectorXd& bb, double& m) {
      const auto ev = evaluate_unit(y_[i], xg_[i], bb, offset, m, false);
      m = ev.mu;
      return -ev.loglik * scale + 0.5 * ridge * (bb - b0).squaredNorm();
    };
    double cur = value(b, mu);
    for (int it = 0; it < 25; ++it) {
      const auto ev = evaluate_unit(y_[i], xg_[i], b, offset, mu, true);
      const Eigen::VectorXd g = -ev.score * scale + ridge * (b - b0);
      Eigen::MatrixXd h = ev.info * scale;
      h.diagonal().array() += ridge;
      const Eigen::VectorXd dir = -linalg::SpdSolver(h).solve_vec(g);
      const double dec = -g.dot(dir);
      if (!(dec > 1e-14)) break;
      double t = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
        double m = mu;
        const Eigen::VectorXd cand = b + t * dir;
        const double v = value(cand, m);
        if (v <= cur - 1e-4 * t * dec) {
          b = cand;
          cur = v;
          mu = m;
          moved = true;
          break;
        }
      }
      if (!moved) break;
    }
    mu_[i] = mu;
    return b;
  }

  // Newton step on (gamma, alpha_k) with the units fused to alpha_k carried along. The other
  // units' distances to alpha_k are majorised by quadratics, so the model is smooth. With
  // translate set, every unit whose nearest centre is k moves by the same shift as alpha_k,
  // which is the slow direction when a group sits close to, but not on, its centre.
  void joint_move(int k, bool translate) {
    const Index dim = q_ + r_;
    const Eigen::RowVectorXd a = alpha_.row(k);
    std::vector<char> moving(static_cast<std::size_t>(n_), 0);
    bool any_moving = false;
    for (Index i = 0; i < n_; ++i)
      if (beta_.row(i) == a || (translate && nearest_center(beta_.row(i), alpha_) == k)) {
        moving[static_cast<std::size_t>(i)] = 1;
        any_moving = true;
      }
    if (translate && !any_moving) return;

    const double nn = static_cast<double>(n_);
    const double lik_scale = 1.0 / (nn * static_cast<double>(tw_));
    std::vector<Eigen::VectorXd> gs(static_cast<std::size_t>(n_));
    std::vector<Eigen::MatrixXd> hs(static_cast<std::size_t>(n_));
    parallel_for(n_, [&](std::ptrdiff_t i) {
      if (moving[static_cast<std::size_t>(i)]) {
        Eigen::VectorXd coef(dim);
        coef << gamma_, beta_.row(i).transpose();
        const auto ev = evaluate_unit(y_[i], full_[i], coef, Eigen::VectorXd::Zero(tw_), mu_[i], true);
        gs[i] = -ev.score * lik_scale;
        hs[i] = ev.info * lik_scale;
      } else if (q_ > 0) {
        const Eigen::VectorXd offset = xg_[i] * beta_.row(i).transpose();
        const auto ev = evaluate_unit(y_[i], xc_[i], gamma_, offset, mu_[i], true);
        gs[i] = Eigen::VectorXd::Zero(dim);
        hs[i] = Eigen::MatrixXd::Zero(dim, dim);
        gs[i].head(q_) = -ev.score * lik_scale;
        hs[i].topLeftCorner(q_, q_) = ev.info * lik_scale;
      }
    });
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dim, dim);
    for (Index i = 0; i < n_; ++i) {
      if (gs[i].size() > 0) {
        grad += gs[i];
        hess += hs[i];
      }
      if (lambda_ == 0.0) continue;
      const bool mi = moving[static_cast<std::size_t>(i)];
      if (mi && !translate) continue;
      // Penalty terms whose distance changes with the shift: to alpha_k for a still unit,
      // to every other centre for a moving one.
      for (int l = 0; l < K_; ++l) {
        if (mi ? l == k : l != k) continue;
        double c = 1.0;
        for (int m = 0; m < K_; ++m)
          if (m != l) c *= (beta_.row(i) - alpha_.row(m)).norm();
        if (c == 0.0) continue;
        const Eigen::RowVectorXd diff = mi ? Eigen::RowVectorXd(beta_.row(i) - alpha_.row(l))
                                           : Eigen::RowVectorXd(a - beta_.row(i));
        const double d = std::max(diff.norm(), 1e-12);
        const double wgt = lambda_ * c / (nn * d);
        grad.tail(r_) += wgt * diff.transpose();
        hess.bottomRightCorner(r_, r_).diagonal().array() += wgt;
      }
    }
    if (!any_moving && q_ == 0 && lambda_ == 0.0) return;
    const Eigen::VectorXd dir = -linalg::SpdSolver(hess).solve_vec(grad);
    const double dec = -grad.dot(dir);
    const double current = objective();
    if (!(dec > 1e-16 * std::max(std::abs(current), 1e-300))) return;

    Eigen::VectorXd f_new(n_), pen_new(n_), mu_new(n_);
    Eigen::MatrixXd beta_new = beta_;
    double t = 1.0;
    for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
      const Eigen::VectorXd g_new = gamma_ + t * dir.head(q_);
      const Eigen::RowVectorXd shift = t * dir.tail(r_).transpose();
      Eigen::MatrixXd alphas = alpha_;
      alphas.row(k) = a + shift;
      for (Index i = 0; i < n_; ++i)
        if (moving[static_cast<std::size_t>(i)]) beta_new.row(i) = beta_.row(i) + shift;
      parallel_for(n_, [&](std::ptrdiff_t i) {
        const bool mi = moving[static_cast<std::size_t>(i)];
        if (mi || q_ > 0) {
          const auto [f, mu] = unit_value(i, g_new, beta_new.row(i).transpose(), mu_[i]);
          f_new[i] = f;
          mu_new[i] = mu;
        } else {
          f_new[i] = f_[i];
          mu_new[i] = mu_[i];
        }
        pen_new[i] = unit_penalty(beta_new.row(i), alphas);
      });
      const double trial = (f_new.sum() + lambda_ * pen_new.sum()) / nn;
      if (std::isfinite(trial) && trial <= current - 1e-4 * t * dec) {
        gamma_ = g_new;
        alpha_ = alphas;
        // Keep exact fusion exact rather than equal up to rounding.
        for (Index i = 0; i < n_; ++i)
          if (beta_.row(i) == a) beta_new.row(i) = alphas.row(k);
        beta_ = beta_new;
        for (Index i = 0; i < n_; ++i)
          if (beta_.row(i) == alphas.row(k)) pen_new[i] = 0.0;
        f_ = f_new;
        pen_ = pen_new;
        mu_ = mu_new;
        return;
      }
    }
  }

  // Newton step on gamma and every non-fused beta_i together, with each beta_i profiled out
  // through its own block. Removes the zig-zag between the common block and the units.
  void common_move() {
    if (q_ == 0) return;
    const Index dim = q_ + r_;
    const double nn = static_cast<double>(n_);
    const double lik_scale = 1.0 / (nn * static_cast<double>(tw_));
    std::vector<char> fused(static_cast<std::size_t>(n_), 0);
    std::vector<Eigen::VectorXd> gb(static_cast<std::size_t>(n_));
    std::vector<Eigen::MatrixXd> hgb(static_cast<std::size_t>(n_));
    std::vector<linalg::SpdSolver> mb(static_cast<std::size_t>(n_));
    std::vector<Eigen::VectorXd> gg(static_cast<std::size_t>(n_));
    std::vector<Eigen::MatrixXd> hgg(static_cast<std::size_t>(n_));
    parallel_for(n_, [&](std::ptrdiff_t i) {
      Eigen::VectorXd coef(dim);
      coef << gamma_, beta_.row(i).transpose();
      const auto ev = evaluate_unit(y_[i], full_[i], coef, Eigen::VectorXd::Zero(tw_), mu_[i], true);
      const Eigen::VectorXd g = -ev.score * lik_scale;
      const Eigen::MatrixXd h = ev.info * lik_scale;
      gg[i] = g.head(q_);
      bool on_centre = false;
      Eigen::VectorXd gp = Eigen::VectorXd::Zero(r_);
      double curv = 0.0;
      for (int k = 0; k < K_; ++k) {
        const Eigen::RowVectorXd diff = beta_.row(i) - alpha_.row(k);
        const double d = diff.norm();
        if (d == 0.0) {
          on_centre = true;
          break;
        }
        double c = 1.0;
        for (int l = 0; l < K_; ++l)
          if (l != k) c *= (beta_.row(i) - alpha_.row(l)).norm();
        gp += (lambda_ * c / (nn * d)) * diff.transpose();
        curv += lambda_ * c / (nn * d);
      }
      if (on_centre) {
        fused[static_cast<std::size_t>(i)] = 1;
        hgg[i] = h.topLeftCorner(q_, q_);
        return;
      }
      gb[i] = g.tail(r_) + gp;
      Eigen::MatrixXd m = h.bottomRightCorner(r_, r_);
      m.diagonal().array() += curv;
      mb[i] = linalg::SpdSolver(m);
      hgb[i] = h.topRightCorner(q_, r_);
      // Schur complement of the unit block.
      hgg[i] = h.topLeftCorner(q_, q_) - hgb[i] * mb[i].solve(hgb[i].transpose());
      gg[i] -= hgb[i] * mb[i].solve_vec(gb[i]);
    });
    Eigen::VectorXd b = Eigen::VectorXd::Zero(q_);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(q_, q_);
    for (Index i = 0; i < n_; ++i) {
      b += gg[i];
      a += hgg[i];
    }
    const Eigen::VectorXd dg = -linalg::SpdSolver(a).solve_vec(b);
    Eigen::MatrixXd db = Eigen::MatrixXd::Zero(n_, r_);
    double dec = -b.dot(dg);
    for (Index i = 0; i < n_; ++i) {
      if (fused[static_cast<std::size_t>(i)]) continue;
      const Eigen::VectorXd rhs = gb[i] + hgb[i].transpose() * dg;
      db.row(i) = -mb[i].solve_vec(rhs).transpose();
      dec += rhs.dot(mb[i].solve_vec(rhs));
    }
    const double current = objective();
    if (!(dec > 1e-16 * std::max(std::abs(current), 1e-300))) return;

    Eigen::VectorXd f_new(n_), pen_new(n_), mu_new(n_);
    Eigen::MatrixXd beta_new(n_, r_);
    double t = 1.0;
    for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
      const Eigen::VectorXd g_new = gamma_ + t * dg;
      beta_new = beta_ + t * db;
      parallel_for(n_, [&](std::ptrdiff_t i) {
        const auto [f, mu] = unit_value(i, g_new, beta_new.row(i).transpose(), mu_[i]);
        f_new[i] = f;
        mu_new[i] = mu;
        pen_new[i] = fused[static_cast<std::size_t>(i)] ? pen_[i] : unit_penalty(beta_new.row(i), alpha_);
      });
      const double trial = (f_new.sum() + lambda_ * pen_new.sum()) / nn;
      if (std::isfinite(trial) && trial <= current - 1e-4 * t * dec) {
        gamma_ = g_new;
        beta_ = beta_new;
        f_ = f_new;
        pen_ = pen_new;
        mu_ = mu_new;
        return;
      }
    }
  }

  // Proximal Newton step for each unit towards its nearest centre, with the product of the
  // other distances frozen as the l2 weight. Accepted only if the unit's own term decreases.
  void unit_moves() {
    if (K_ == 0) return;
    const double scale = 1.0 / static_cast<double>(tw_);
    parallel_for(n_, [&](std::ptrdiff_t i) {
      const Eigen::VectorXd offset = common_offset(i, gamma_);
      const Eigen::RowVectorXd beta = beta_.row(i);
      const int k = nearest_center(beta, alpha_);
      const Eigen::RowVectorXd center = alpha_.row(k);
      const double phi0 = f_[i] + lambda_ * pen_[i];

      const auto ev = evaluate_unit(y_[i], xg_[i], beta.transpose(), offset, mu_[i], true);
      const Eigen::VectorXd g = -ev.score * scale;
      Eigen::MatrixXd h = ev.info * scale;
      h.diagonal().array() += 1e-10;
      double w = lambda_;
      for (int l = 0; l < K_; ++l)
        if (l != k) w *= (beta - alpha_.row(l)).norm();

      const Eigen::VectorXd u0 = (beta - center).transpose();
      const Eigen::VectorXd b = h * u0 - g;
      Eigen::RowVectorXd cand;
      if (b.norm() <= w) {
        cand = center;
      } else if (w == 0.0) {
        cand = center + linalg::SpdSolver(h).solve_vec(b).transpose();
      } else {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
        const Eigen::VectorXd ev_h = es.eigenvalues().cwiseMax(1e-12);
        const Eigen::VectorXd c = es.eigenvectors().transpose() * b;
        const double rad = prox_radius(c, ev_h, w);
        const Eigen::VectorXd u = es.eigenvectors() * (c.array() / (ev_h.array() + w / rad)).matrix();
        cand = center + u.transpose();
      }

      double best_phi = phi0, best_f = f_[i], best_mu = mu_[i], best_pen = pen_[i];
      Eigen::RowVectorXd best_beta = beta;
      auto consider = [&](const Eigen::RowVectorXd& bb) {
        const auto [f, mu] = unit_value(i, gamma_, bb.transpose(), mu_[i]);
        const double pen = unit_penalty(bb, alpha_);
        const double phi = f + lambda_ * pen;
        if (std::isfinite(phi) && phi < best_phi) {
          best_phi = phi;
          best_f = f;
          best_mu = mu;
          best_pen = pen;
          best_beta = bb;
          return true;
        }
        return false;
      };
      double t = 1.0;
      for (int ls = 0; ls < 20; ++ls, t *= 0.5) {
        const Eigen::RowVectorXd bb = t == 1.0 ? cand : Eigen::RowVectorXd(beta + t * (cand - beta));
        if (consider(bb)) break;
      }
      if (cand != center && beta != center) consider(center);

      beta_.row(i) = best_beta;
      f_[i] = best_f;
      mu_[i] = best_mu;
      pen_[i] = best_pen;
    });
  }

  // A centre with no nearest units is moved onto the worst-fitted unit when that does not
  // raise the objective.
  void reseed_empty_groups() {
    if (K_ < 2) return;
    for (int k = 0; k < K_; ++k) {
      const GroupStructure g = assign_groups(beta_, alpha_);
      if (g.group_sizes[static_cast<std::size_t>(k)] > 0) continue;
      Index far = -1;
      double far_d = -1.0;
      for (Index i = 0; i < n_; ++i) {
        const double d = (beta_.row(i) - alpha_.row(g.assignment[static_cast<std::size_t>(i)])).norm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far < 0 || far_d <= 0.0) continue;
      Eigen::MatrixXd alphas = alpha_;
      alphas.row(k) = beta_.row(far);
      Eigen::VectorXd pen_new(n_);
      for (Index i = 0; i < n_; ++i) pen_new[i] = unit_penalty(beta_.row(i), alphas);
      const double trial = (f_.sum() + lambda_ * pen_new.sum()) / static_cast<double>(n_);
      if (trial <= objective()) {
        alpha_ = alphas;
        pen_ = pen_new;
      }
    }
  }

  const BalancedPanel& panel_;
  const ClassoConfig& cfg_;
  Index n_, tw_, q_, r_;
  int K_;
  double lambda_;
  std::vector<Eigen::MatrixXd> xc_, xg_, full_;
  std::vector<Eigen::VectorXd> y_;
  Eigen::VectorXd gamma_;
  Eigen::MatrixXd beta_, alpha_;
  Eigen::VectorXd mu_, f_, pen_;
};

}  // namespace detail

/// Penalised estimation of the latent group structure for a fixed K and lambda.
inline ClassoFit classo_solve(const BalancedPanel& panel, const ClassoConfig& config) {
  return detail::ClassoSolver(panel, config).run();
}

/// Unpenalised refit with the estimated groups.
inline ProbitFit post_lasso(const BalancedPanel& panel, const ClassoFit& fit, const FitOptions& opt = {}) {
  return fit_group_qml(panel, fit.groups, opt);
}

}  // namespace classo
