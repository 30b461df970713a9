#pragma once

// Test-only oracles, independent of the library's solver paths.

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace oracles {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Minimum-norm least squares through an explicit SVD pseudoinverse.
inline VectorXd pinv_least_squares(const MatrixXd& x, const VectorXd& y) {
  Eigen::JacobiSVD<MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& sv = svd.singularValues();
  const double tol = std::max(x.rows(), x.cols()) * 1e-14 * sv(0);
  VectorXd inv(sv.size());
  for (Eigen::Index k = 0; k < sv.size(); ++k) inv[k] = sv[k] > tol ? 1.0 / sv[k] : 0.0;
  return svd.matrixV() * inv.asDiagonal() * (svd.matrixU().transpose() * y);
}

inline double lasso_objective(const MatrixXd& x, const VectorXd& y, double lambda,
                              const VectorXd& beta) {
  const double n = static_cast<double>(x.rows());
  return (y - x * beta).squaredNorm() / (2.0 * n) + lambda * beta.lpNorm<1>();
}

// Projected subgradient oracle for the lasso via the positive-part split
// beta = bp - bm, bp, bm >= 0, which makes the objective smooth over the
// nonnegative orthant; each step projects back onto it. Returns the iterate
// with the best objective seen.
inline VectorXd lasso_projected_subgradient(const MatrixXd& x, const VectorXd& y, double lambda,
                                            long iterations) {
  const Eigen::Index p = x.cols();
  const double n = static_cast<double>(x.rows());
  const MatrixXd q = x.transpose() * x / n;
  const VectorXd xty = x.transpose() * y / n;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(q);
  const double step = 1.0 / (2.0 * std::max(eig.eigenvalues().maxCoeff(), 1e-12));

  VectorXd bp = VectorXd::Zero(p), bm = VectorXd::Zero(p);
  VectorXd best = VectorXd::Zero(p);
  double best_obj = lasso_objective(x, y, lambda, best);
  for (long it = 0; it < iterations; ++it) {
    const VectorXd grad_smooth = q * (bp - bm) - xty;
    bp = (bp - step * (grad_smooth.array() + lambda).matrix()).cwiseMax(0.0);
    bm = (bm - step * (-grad_smooth.array() + lambda).matrix()).cwiseMax(0.0);
    if ((it & 1023) == 0 || it + 1 == iterations) {
      const VectorXd beta = bp - bm;
      const double obj = lasso_objective(x, y, lambda, beta);
      if (obj < best_obj) {
        best_obj = obj;
        best = beta;
      }
    }
  }
  return best;
}

// Brute-force leave-one-out mean squared error for ridge at one lambda.
inline double ridge_loo_bruteforce(const MatrixXd& x, const VectorXd& y, double lambda) {
  const Eigen::Index n = x.rows();
  double total = 0.0;
  for (Eigen::Index held = 0; held < n; ++held) {
    MatrixXd xs(n - 1, x.cols());
    VectorXd ys(n - 1);
    Eigen::Index at = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == held) continue;
      xs.row(at) = x.row(i);
      ys[at] = y[i];
      ++at;
    }
    MatrixXd gram = xs.transpose() * xs;
    gram.diagonal().array() += lambda;
    const VectorXd beta = gram.llt().solve(xs.transpose() * ys);
    const double r = y[held] - x.row(held).dot(beta);
    total += r * r;
  }
  return total / static_cast<double>(n);
}

}  // namespace oracles
