#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace classo::linalg {

/// LDLT factorisation of a symmetric PSD matrix, ridged until strictly positive.
class SpdSolver {
 public:
  SpdSolver() : n_(0) {}
  explicit SpdSolver(const Eigen::MatrixXd& a) : n_(a.rows()) {
    if (n_ == 0) return;
    const double scale = std::max(1.0, a.diagonal().cwiseAbs().maxCoeff());
    Eigen::MatrixXd work = a;
    double ridge = 0.0;
    for (int attempt = 0; attempt < 40; ++attempt) {
      ldlt_.compute(work);
      if (ldlt_.info() == Eigen::Success && ldlt_.isPositive()) {
        const Eigen::VectorXd d = ldlt_.vectorD();
        if (d.minCoeff() > 1e-13 * scale) break;
      }
      ridge = ridge == 0.0 ? 1e-12 * scale : ridge * 10.0;
      work = a;
      work.diagonal().array() += ridge;
    }
    ridge_ = ridge;
  }

  template <class Rhs>
  Eigen::MatrixXd solve(const Rhs& b) const {
    if (n_ == 0) return Eigen::MatrixXd(0, b.cols());
    return ldlt_.solve(b);
  }

  Eigen::VectorXd solve_vec(const Eigen::VectorXd& b) const {
    if (n_ == 0) return Eigen::VectorXd(0);
    return ldlt_.solve(b);
  }

  double ridge() const { return ridge_; }

 private:
  Eigen::Index n_;
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
  double ridge_ = 0.0;
};

}  // namespace classo::linalg
