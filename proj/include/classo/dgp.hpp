#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "classo/error.hpp"
#include "classo/groups.hpp"
#include "classo/json_eigen.hpp"
#include "classo/panel.hpp"

namespace classo {

/// How one covariate column evolves over time.
struct CovariateProcess {
  enum class Kind { Lag, Binary, AR1Normal, PhaseDummy };

  Kind kind = Kind::AR1Normal;
  std::string name;
  double prob = 0.5;         // Binary
  double rho = 0.0;          // AR1Normal
  double sd = 1.0;           // AR1Normal, stationary standard deviation
  Index first_period = 0;    // PhaseDummy, inclusive (post burn-in index)
  Index last_period = 0;

  static CovariateProcess lag(std::string name = "y_lag") { return {Kind::Lag, std::move(name)}; }
  static CovariateProcess binary(std::string name, double prob) {
    CovariateProcess c{Kind::Binary, std::move(name)};
    c.prob = prob;
    return c;
  }
  static CovariateProcess ar1(std::string name, double rho, double sd = 1.0) {
    CovariateProcess c{Kind::AR1Normal, std::move(name)};
    c.rho = rho;
    c.sd = sd;
    return c;
  }
  static CovariateProcess phase_dummy(std::string name, Index first, Index last) {
    CovariateProcess c{Kind::PhaseDummy, std::move(name)};
    c.first_period = first;
    c.last_period = last;
    return c;
  }
};

struct MuDistribution {
  enum class Kind { Normal, Uniform, Fixed };
  Kind kind = Kind::Normal;
  double a = 0.0;  // mean or lower bound
  double b = 1.0;  // sd or upper bound
  std::vector<double> values;  // Fixed: one per unit (cycled)

  static MuDistribution normal(double mean, double sd) { return {Kind::Normal, mean, sd, {}}; }
  static MuDistribution uniform(double lo, double hi) { return {Kind::Uniform, lo, hi, {}}; }
  static MuDistribution fixed(std::vector<double> v) { return {Kind::Fixed, 0.0, 0.0, std::move(v)}; }
};

struct DgpSpec {
  Index N = 150;
  Index T = 80;
  int K = 3;
  std::vector<double> group_proportions = {0.2, 0.3, 0.5};
  Eigen::VectorXd gamma_true;  // one per common covariate
  Eigen::MatrixXd alpha_true;  // K x (number of group covariates)
  MuDistribution mu = MuDistribution::normal(0.0, 0.5);
  std::vector<CovariateProcess> common;
  std::vector<CovariateProcess> group;
  Index burn_in = 50;
  std::uint64_t seed = 1;

  void validate() const {
    if (N < 1 || T < 1 || K < 1) fail(ErrorKind::InvalidArgument, "N, T and K must be positive");
    if (static_cast<int>(group_proportions.size()) != K)
      fail(ErrorKind::InvalidArgument, "need one group proportion per group");
    double total = 0.0;
    for (double pr : group_proportions) {
      if (!(pr > 0.0)) fail(ErrorKind::InvalidArgument, "group proportions must be positive");
      total += pr;
    }
    if (std::abs(total - 1.0) > 1e-9) fail(ErrorKind::InvalidArgument, "group proportions must sum to 1");
    if (gamma_true.size() != static_cast<Index>(common.size()))
      fail(ErrorKind::InvalidArgument, "gamma_true length differs from the number of common covariates");
    if (alpha_true.rows() != K || alpha_true.cols() != static_cast<Index>(group.size()))
      fail(ErrorKind::InvalidArgument, "alpha_true must be K x (number of group covariates)");
    if (burn_in < 0) fail(ErrorKind::InvalidArgument, "burn_in must be non-negative");
    if (mu.kind == MuDistribution::Kind::Fixed && mu.values.empty())
      fail(ErrorKind::InvalidArgument, "fixed fixed-effect distribution needs values");
    if (mu.kind == MuDistribution::Kind::Uniform && !(mu.a < mu.b))
      fail(ErrorKind::InvalidArgument, "uniform fixed-effect bounds must satisfy a < b");
    for (const auto& c : common)
      if (c.kind == CovariateProcess::Kind::AR1Normal && std::abs(c.rho) >= 1.0)
        fail(ErrorKind::InvalidArgument, "AR(1) coefficient must be inside (-1, 1)");
    for (const auto& c : group)
      if (c.kind == CovariateProcess::Kind::AR1Normal && std::abs(c.rho) >= 1.0)
        fail(ErrorKind::InvalidArgument, "AR(1) coefficient must be inside (-1, 1)");
  }

  /// Three well-separated groups with a common lag; sizes 20/30/50 percent.
  static DgpSpec default_scenario() {
    DgpSpec s;
    s.common = {CovariateProcess::lag("y_lag")};
    s.gamma_true = Eigen::VectorXd::Constant(1, 0.5);
    s.group = {CovariateProcess::ar1("x1", 0.5), CovariateProcess::ar1("x2", 0.5)};
    s.alpha_true.resize(3, 2);
    s.alpha_true << -0.8, 0.6,  //
        0.4, -0.6,              //
        1.2, 0.8;
    return s;
  }
};

struct SimulatedPanel {
  BalancedPanel panel;
  GroupStructure true_assignment;
  Eigen::VectorXd true_mu;
  DgpSpec spec;
};

/// SplitMix64 finaliser: independent seeds for replication `stream` of a base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Draws memberships, fixed effects and covariate paths, then generates
/// y_t = 1{x_t'gamma + x_t'alpha_g + mu - eps_t > 0} with eps_t ~ N(0, 1).
inline SimulatedPanel simulate_panel(const DgpSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> stdnorm(0.0, 1.0);

  const Index n = spec.N, t_out = spec.T, burn = spec.burn_in, t_all = burn + t_out;
  const auto q = static_cast<Index>(spec.common.size()), r = static_cast<Index>(spec.group.size());
  std::vector<double> cum(spec.group_proportions.size());
  std::partial_sum(spec.group_proportions.begin(), spec.group_proportions.end(), cum.begin());

  std::vector<const CovariateProcess*> phase_cols;
  for (const auto& c : spec.common)
    if (c.kind == CovariateProcess::Kind::PhaseDummy) phase_cols.push_back(&c);
  for (const auto& c : spec.group)
    if (c.kind == CovariateProcess::Kind::PhaseDummy) phase_cols.push_back(&c);

  SimulatedPanel out;
  out.spec = spec;
  out.true_mu.resize(n);
  BalancedPanel& p = out.panel;
  for (const auto& c : spec.common) p.common_names.push_back(c.name);
  for (const auto& c : spec.group) p.group_names.push_back(c.name);
  for (Index s = 0; s < t_out; ++s) p.periods.push_back(s);
  p.y.resize(n, t_out);
  if (!phase_cols.empty()) {
    p.phase.resize(n, t_out);
    for (Index s = 0; s < t_out; ++s) {
      int label = static_cast<int>(phase_cols.size()) + 1;
      for (std::size_t j = 0; j < phase_cols.size(); ++j)
        if (s >= phase_cols[j]->first_period && s <= phase_cols[j]->last_period) {
          label = static_cast<int>(j) + 1;
          break;
        }
      p.phase.col(s).setConstant(label);
    }
  }

  std::vector<int> assignment(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const double u = unif(rng);
    int g = 0;
    while (g + 1 < spec.K && u > cum[static_cast<std::size_t>(g)]) ++g;
    assignment[static_cast<std::size_t>(i)] = g;

    double mu = 0.0;
    switch (spec.mu.kind) {
      case MuDistribution::Kind::Normal: mu = spec.mu.a + spec.mu.b * stdnorm(rng); break;
      case MuDistribution::Kind::Uniform: mu = spec.mu.a + (spec.mu.b - spec.mu.a) * unif(rng); break;
      case MuDistribution::Kind::Fixed: mu = spec.mu.values[static_cast<std::size_t>(i) % spec.mu.values.size()]; break;
    }
    out.true_mu[i] = mu;

    Eigen::MatrixXd xc(t_all, q), xg(t_all, r);
    Eigen::VectorXd y(t_all);
    auto draw = [&](const CovariateProcess& c, Index s, Eigen::MatrixXd& x, Index col) {
      switch (c.kind) {
        case CovariateProcess::Kind::Lag: x(s, col) = s > 0 ? y[s - 1] : 0.0; break;
        case CovariateProcess::Kind::Binary: x(s, col) = unif(rng) < c.prob ? 1.0 : 0.0; break;
        case CovariateProcess::Kind::AR1Normal:
          x(s, col) = s == 0 ? c.sd * stdnorm(rng)
                             : c.rho * x(s - 1, col) + c.sd * std::sqrt(1.0 - c.rho * c.rho) * stdnorm(rng);
          break;
        case CovariateProcess::Kind::PhaseDummy: {
          const Index post = s - burn;
          x(s, col) = (post >= c.first_period && post <= c.last_period) ? 1.0 : 0.0;
          break;
        }
      }
    };
    const Eigen::VectorXd alpha = spec.alpha_true.row(g).transpose();
    for (Index s = 0; s < t_all; ++s) {
      for (Index j = 0; j < q; ++j) draw(spec.common[static_cast<std::size_t>(j)], s, xc, j);
      for (Index j = 0; j < r; ++j) draw(spec.group[static_cast<std::size_t>(j)], s, xg, j);
      double index = mu;
      if (q > 0) index += xc.row(s).dot(spec.gamma_true);
      if (r > 0) index += xg.row(s).dot(alpha);
      y[s] = index - stdnorm(rng) > 0.0 ? 1.0 : 0.0;
    }
    p.unit_ids.push_back(std::to_string(i + 1));
    p.y.row(i) = y.tail(t_out).transpose();
    p.x_common.push_back(xc.bottomRows(t_out));
    p.x_group.push_back(xg.bottomRows(t_out));
  }
  p.window = {0, t_out};
  p.validate();
  out.true_assignment = GroupStructure::from_assignment(std::move(assignment), spec.K);
  return out;
}

/// Best fraction of matching labels over all K! relabelings of `estimated`.
inline double classification_accuracy(const GroupStructure& estimated, const GroupStructure& truth) {
  if (estimated.K != truth.K) fail(ErrorKind::KMismatch, "group counts differ");
  if (estimated.n_units() != truth.n_units()) fail(ErrorKind::InvalidArgument, "unit counts differ");
  const int K = truth.K;
  Eigen::MatrixXi confusion = Eigen::MatrixXi::Zero(K, K);
  for (std::size_t i = 0; i < truth.assignment.size(); ++i) ++confusion(estimated.assignment[i], truth.assignment[i]);
  std::vector<int> perm(static_cast<std::size_t>(K));
  std::iota(perm.begin(), perm.end(), 0);
  long best = 0;
  do {
    long hits = 0;
    for (int k = 0; k < K; ++k) hits += confusion(k, perm[static_cast<std::size_t>(k)]);
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(truth.n_units());
}

inline void to_json(nlohmann::json& j, const CovariateProcess& c) {
  static const char* kinds[] = {"lag", "binary", "ar1_normal", "phase_dummy"};
  j = {{"name", c.name}, {"kind", kinds[static_cast<int>(c.kind)]}};
  switch (c.kind) {
    case CovariateProcess::Kind::Binary: j["prob"] = c.prob; break;
    case CovariateProcess::Kind::AR1Normal: j["rho"] = c.rho; j["sd"] = c.sd; break;
    case CovariateProcess::Kind::PhaseDummy: j["first_period"] = c.first_period; j["last_period"] = c.last_period; break;
    default: break;
  }
}

inline void to_json(nlohmann::json& j, const DgpSpec& s) {
  static const char* mu_kinds[] = {"normal", "uniform", "fixed"};
  j = {{"N", s.N},
       {"T", s.T},
       {"K", s.K},
       {"group_proportions", s.group_proportions},
       {"gamma_true", jsonio::vec(s.gamma_true)},
       {"alpha_true", jsonio::mat(s.alpha_true)},
       {"mu_distribution", {{"kind", mu_kinds[static_cast<int>(s.mu.kind)]}, {"a", s.mu.a}, {"b", s.mu.b}, {"values", s.mu.values}}},
       {"common", s.common},
       {"group", s.group},
       {"burn_in", s.burn_in},
       {"seed", s.seed}};
}

}  // namespace classo
