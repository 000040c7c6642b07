#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "classo/classo.hpp"
#include "classo/dgp.hpp"

using namespace classo;

namespace {

SimulatedPanel small_scenario(Index n, Index t, std::uint64_t seed) {
  auto spec = DgpSpec::default_scenario();
  spec.N = n;
  spec.T = t;
  spec.seed = seed;
  return simulate_panel(spec);
}

void expect_monotone(const std::vector<double>& trace) {
  for (std::size_t s = 1; s < trace.size(); ++s) EXPECT_LE(trace[s], trace[s - 1] + 1e-10) << "sweep " << s;
}

}  // namespace

TEST(PenaltyH, ZeroWhenEveryUnitSitsOnACenter) {
  Eigen::MatrixXd alphas(2, 2);
  alphas << 1, 0, -1, 2;
  Eigen::MatrixXd betas(3, 2);
  betas << 1, 0, -1, 2, 1, 0;
  EXPECT_EQ(penalty_h(betas, alphas), 0.0);
  betas(2, 1) = 1e-6;
  EXPECT_GT(penalty_h(betas, alphas), 0.0);
}

TEST(PenaltyH, KnownValue) {
  Eigen::MatrixXd alphas(2, 1), betas(2, 1);
  alphas << 0, 3;
  betas << 1, 2;
  // (1*2 + 2*1) / 2
  EXPECT_DOUBLE_EQ(penalty_h(betas, alphas), 2.0);
}

TEST(PenaltyH, InvariantToCenterOrder) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::MatrixXd alphas(4, 2), betas(7, 2);
    for (Index i = 0; i < alphas.size(); ++i) alphas.data()[i] = nd(rng);
    for (Index i = 0; i < betas.size(); ++i) betas.data()[i] = nd(rng);
    std::vector<int> perm = {0, 1, 2, 3};
    const double base = penalty_h(betas, alphas);
    while (std::next_permutation(perm.begin(), perm.end())) {
      Eigen::MatrixXd moved(4, 2);
      for (int k = 0; k < 4; ++k) moved.row(k) = alphas.row(perm[k]);
      EXPECT_NEAR(penalty_h(betas, moved), base, 1e-12 * std::max(1.0, base));
    }
  }
}

TEST(AssignGroups, NearestCenterWithLowestLabelOnTies) {
  Eigen::MatrixXd alphas(2, 1), betas(3, 1);
  alphas << -1, 1;
  betas << -0.5, 0.0, 2.0;
  const auto g = assign_groups(betas, alphas);
  EXPECT_EQ(g.assignment, (std::vector<int>{0, 0, 1}));
}

TEST(ProxRadius, SolvesTheGroupLassoSubproblem) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::MatrixXd a(2, 2);
    for (Index i = 0; i < 4; ++i) a.data()[i] = nd(rng);
    const Eigen::MatrixXd h = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(2, 2);
    const Eigen::Vector2d b(nd(rng) * 3, nd(rng) * 3);
    const double w = 0.3 * b.norm();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    const Eigen::VectorXd c = es.eigenvectors().transpose() * b;
    const double r = detail::prox_radius(c, es.eigenvalues(), w);
    const Eigen::VectorXd u = es.eigenvectors() * (c.array() / (es.eigenvalues().array() + w / r)).matrix();
    EXPECT_NEAR(u.norm(), r, 1e-9 * std::max(1.0, r));
    // Stationarity of 0.5 u'Hu - b'u + w||u||.
    const Eigen::VectorXd grad = h * u - b + w * u / u.norm();
    EXPECT_LT(grad.norm(), 1e-8);
  }
}

TEST(ClassoSolve, RecoversWellSeparatedGroups) {
  const auto sim = small_scenario(150, 80, 3);
  const auto [p, rep] = filter_degenerate_units(sim.panel);
  ASSERT_TRUE(rep.removed_unit_ids.empty());
  ClassoConfig cfg;
  cfg.K = 3;
  cfg.lambda = 0.05 * 0.25 * std::pow(80.0, -1.0 / 3.0);
  const auto fit = classo_solve(p, cfg);
  EXPECT_TRUE(fit.converged);
  EXPECT_GE(classification_accuracy(fit.groups, sim.true_assignment), 0.95);
  expect_monotone(fit.objective_trace);
  EXPECT_NEAR(fit.objective, fit.negloglik + cfg.lambda * fit.penalty, 1e-14);
  EXPECT_NEAR(fit.objective, classo_objective(p, fit.gamma, fit.betas, fit.alphas, cfg.lambda), 1e-9);
}

TEST(ClassoSolve, DeterministicForFixedSeed) {
  const auto p = filter_degenerate_units(small_scenario(60, 30, 4).panel).first;
  ClassoConfig cfg;
  cfg.K = 2;
  cfg.lambda = 0.01;
  cfg.seed = 77;
  const auto a = classo_solve(p, cfg);
  const auto b = classo_solve(p, cfg);
  EXPECT_EQ(a.betas, b.betas);
  EXPECT_EQ(a.alphas, b.alphas);
  EXPECT_EQ(a.objective_trace, b.objective_trace);
}

TEST(ClassoSolve, TraceMonotoneAcrossSettings) {
  const auto p = filter_degenerate_units(small_scenario(50, 25, 6).panel).first;
  for (int K : {1, 2, 3, 4})
    for (double lambda : {0.0, 1e-3, 1e-2, 0.1}) {
      ClassoConfig cfg;
      cfg.K = K;
      cfg.lambda = lambda;
      const auto fit = classo_solve(p, cfg);
      expect_monotone(fit.objective_trace);
    }
}

TEST(ClassoSolve, SingleGroupLargeLambdaFusesToPooledFit) {
  const auto p = filter_degenerate_units(small_scenario(50, 40, 8).panel).first;
  const auto pooled = fit_pooled_probit_fe(p);
  ClassoConfig cfg;
  cfg.K = 1;
  cfg.lambda = 1.0;
  cfg.tol_objective = 1e-12;
  const auto fit = classo_solve(p, cfg);
  EXPECT_EQ(fit.n_fused, p.n_units());
  EXPECT_LT((fit.alphas.row(0) - pooled.beta.row(0)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((fit.gamma - pooled.gamma).cwiseAbs().maxCoeff(), 1e-6);
  const auto post = post_lasso(p, fit);
  EXPECT_LT((post.coefficients() - pooled.coefficients()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(ClassoSolve, ZeroLambdaMatchesUnitWiseFit) {
  const auto p = filter_degenerate_units(small_scenario(15, 60, 10).panel).first;
  std::vector<int> own(static_cast<std::size_t>(p.n_units()));
  std::iota(own.begin(), own.end(), 0);
  const auto oracle = fit_group_qml(p, GroupStructure::from_assignment(own, static_cast<int>(p.n_units())));
  ClassoConfig cfg;
  cfg.K = 2;
  cfg.lambda = 0.0;
  cfg.tol_objective = 1e-13;
  cfg.max_sweeps = 2000;
  const auto fit = classo_solve(p, cfg);
  EXPECT_NEAR(fit.negloglik, -oracle.loglik, 1e-9);
  EXPECT_LT((fit.betas - oracle.beta).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LT((fit.gamma - oracle.gamma).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(ClassoSolve, RelabeledStartGivesRelabeledSolution) {
  const auto p = filter_degenerate_units(small_scenario(60, 40, 12).panel).first;
  ClassoConfig cfg;
  cfg.K = 3;
  cfg.lambda = 0.01;
  cfg.init_strategy = InitStrategy::UserSupplied;
  cfg.initial_alphas = DgpSpec::default_scenario().alpha_true;
  const auto a = classo_solve(p, cfg);
  const std::vector<int> perm = {1, 2, 0};
  Eigen::MatrixXd moved(3, 2);
  for (int k = 0; k < 3; ++k) moved.row(perm[k]) = cfg.initial_alphas.row(k);
  cfg.initial_alphas = moved;
  const auto b = classo_solve(p, cfg);
  // Centre updates converge linearly, so agreement is to the solver tolerance only.
  EXPECT_NEAR(a.objective, b.objective, 1e-7 * a.objective);
  for (int k = 0; k < 3; ++k) EXPECT_LT((a.alphas.row(k) - b.alphas.row(perm[k])).cwiseAbs().maxCoeff(), 1e-2);
  EXPECT_DOUBLE_EQ(classification_accuracy(a.groups, b.groups), 1.0);
}

TEST(ClassoSolve, WarmStartFromSolutionStaysPut) {
  const auto p = filter_degenerate_units(small_scenario(60, 30, 13).panel).first;
  ClassoConfig cfg;
  cfg.K = 2;
  cfg.lambda = 0.02;
  const auto a = classo_solve(p, cfg);
  cfg.warm_start = a.warm_start();
  const auto b = classo_solve(p, cfg);
  EXPECT_LE(b.objective, a.objective + 1e-15);
  EXPECT_NEAR(b.objective, a.objective, 1e-7 * a.objective);
  EXPECT_EQ(a.groups, b.groups);
}

TEST(ClassoSolve, RejectsBadConfig) {
  const auto p = filter_degenerate_units(small_scenario(10, 20, 14).panel).first;
  ClassoConfig cfg;
  cfg.K = 11;
  EXPECT_THROW(classo_solve(p, cfg), Error);
  cfg.K = 2;
  cfg.lambda = -1.0;
  EXPECT_THROW(classo_solve(p, cfg), Error);
  cfg.lambda = 0.01;
  cfg.init_strategy = InitStrategy::UserSupplied;
  EXPECT_THROW(classo_solve(p, cfg), Error);
}

TEST(ClassoSolve, SweepBudgetExhaustionIsReported) {
  const auto p = filter_degenerate_units(small_scenario(40, 20, 15).panel).first;
  ClassoConfig cfg;
  cfg.K = 2;
  cfg.lambda = 0.01;
  cfg.max_sweeps = 1;
  try {
    classo_solve(p, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonConvergence);
    EXPECT_EQ(e.category(), ErrorCategory::Convergence);
  }
}
