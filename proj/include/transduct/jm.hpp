#pragma once

// JM-style transductive predictor. For a test direction x*, solves
//
//   w = argmin  w' Sigma_n w   s.t.  || Sigma_n w - x* ||_inf <= lambda_w,
//
// with Sigma_n = X'X/n, then corrects the pilot prediction by
// (1/n) w' X' (y - X beta_hat). When the program is infeasible, w = 0 and
// the prediction falls back to the pilot.
//
// The solver works in the eigenbasis of Sigma_n: with c = Sigma_n w
// restricted to range(Sigma_n), the objective is c' Sigma_n^+ c, which ADMM
// splits against the inf-ball indicator (a per-coordinate clamp). The
// minimizer w = Sigma_n^+ c is the minimum-norm optimum, so ties in the
// rank-deficient case resolve deterministically. Feasibility for p > n is
// certified first by alternating projections between range(Sigma_n) and the
// box; the limiting gap is the infeasibility certificate.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "transduct/data.hpp"
#include "transduct/linear_model.hpp"
#include "transduct/stats.hpp"

namespace transduct::jm {

using data::StandardizedDataset;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using model::FittedLinearModel;

struct JmProgramResult {
  VectorXd w;
  bool feasible = false;
  double lambda_w = 0.0;
  double kkt_residual = 0.0;
  double objective = 0.0;  // w' Sigma_n w
};

// Iteration cap reached without resolving feasibility or converging;
// distinct from a proven-infeasible program (which is not an error).
class JmSolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class JmSolver {
 public:
  explicit JmSolver(const MatrixXd& design)
      : JmSolver(MatrixXd((design.transpose() * design) / static_cast<double>(design.rows())),
                 /*is_sigma=*/true) {}

  JmSolver(MatrixXd sigma, bool /*is_sigma*/) : sigma_(std::move(sigma)) {
    if (sigma_.rows() != sigma_.cols()) throw std::invalid_argument("JmSolver: Sigma must be square");
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(sigma_);
    if (eig.info() != Eigen::Success) throw std::runtime_error("JmSolver: eigendecomposition failed");
    const VectorXd& d = eig.eigenvalues();
    const double dmax = std::max(d.maxCoeff(), 0.0);
    const double rank_tol = static_cast<double>(sigma_.rows()) * 1e-13 * std::max(dmax, 1e-300);
    Eigen::Index rank = 0;
    for (Eigen::Index k = 0; k < d.size(); ++k)
      if (d[k] > rank_tol) ++rank;
    range_vectors_ = eig.eigenvectors().rightCols(rank);
    range_eigenvalues_ = d.tail(rank);
    full_rank_ = rank == sigma_.rows();
  }

  const MatrixXd& sigma() const { return sigma_; }
  Eigen::Index dim() const { return sigma_.rows(); }
  bool full_rank() const { return full_rank_; }

  // Feasibility of {w : ||Sigma w - x*||_inf <= lambda_w}. For a full-rank
  // Sigma the feasible set is all of R^p. Otherwise alternate projections
  // between range(Sigma) and the box around x*.
  bool feasible(const VectorXd& x_star, double lambda_w) const {
    check_inputs(x_star, lambda_w);
    if (lambda_w >= x_star.lpNorm<Eigen::Infinity>()) return true;  // u = 0 works
    if (full_rank_) return true;
    const double scale = std::max(1.0, x_star.lpNorm<Eigen::Infinity>());
    const VectorXd lo = x_star.array() - lambda_w;
    const VectorXd hi = x_star.array() + lambda_w;
    VectorXd a = project_range(x_star);
    double gap = std::numeric_limits<double>::infinity();
    double gap_at_last_check = gap;
    for (int iter = 1; iter <= kFeasibilityIters; ++iter) {
      const VectorXd b = a.cwiseMax(lo).cwiseMin(hi);
      a = project_range(b);
      gap = (b - a).norm();
      if (gap <= 1e-10 * scale) return true;
      if (iter % 200 == 0) {
        if (gap_at_last_check - gap < 1e-13 * scale) return false;  // stalled at positive gap
        gap_at_last_check = gap;
      }
    }
    if (gap <= 1e-7 * scale) return true;
    throw JmSolverError("JmSolver: feasibility undecided after iteration cap");
  }

  JmProgramResult solve(const VectorXd& x_star, double lambda_w) const {
    check_inputs(x_star, lambda_w);
    JmProgramResult result;
    result.lambda_w = lambda_w;
    result.w = VectorXd::Zero(dim());

    // lambda_w >= ||x*||_inf: w = 0 is feasible with objective 0, hence optimal.
    if (lambda_w >= x_star.lpNorm<Eigen::Infinity>()) {
      result.feasible = true;
      return result;
    }
    if (!feasible(x_star, lambda_w)) {
      result.feasible = false;  // fall back to w = 0
      return result;
    }

    const Eigen::Index r = range_eigenvalues_.size();
    const VectorXd& d = range_eigenvalues_;
    const VectorXd lo = x_star.array() - lambda_w;
    const VectorXd hi = x_star.array() + lambda_w;
    const double scale = std::max(1.0, x_star.lpNorm<Eigen::Infinity>());

    // ADMM on min c~' D^{-1} c~ + I_box(u), V c~ = u.
    double rho = 0.0;
    {
      double log_sum = 0.0;
      for (Eigen::Index k = 0; k < r; ++k) log_sum += std::log(d[k]);
      rho = 2.0 / std::exp(log_sum / static_cast<double>(r));
    }
    VectorXd u = x_star.cwiseMax(lo).cwiseMin(hi);
    VectorXd v = VectorXd::Zero(dim());  // scaled dual
    VectorXd c_tilde = VectorXd::Zero(r);
    VectorXd c_full = VectorXd::Zero(dim());
    const double eps = 1e-11 * scale;

    int iter = 0;
    bool converged = false;
    for (; iter < kAdmmIters; ++iter) {
      const VectorXd t = range_vectors_.transpose() * (u - v);
      for (Eigen::Index k = 0; k < r; ++k) c_tilde[k] = rho * d[k] * t[k] / (2.0 + rho * d[k]);
      c_full = range_vectors_ * c_tilde;
      const VectorXd u_old = std::move(u);
      u = (c_full + v).cwiseMax(lo).cwiseMin(hi);
      v += c_full - u;

      const double primal = (c_full - u).lpNorm<Eigen::Infinity>();
      const double dual = rho * (u - u_old).lpNorm<Eigen::Infinity>();
      if (primal < eps && dual < eps) {
        converged = true;
        break;
      }
      if ((iter + 1) % 50 == 0) {  // residual balancing
        if (primal > 10.0 * dual) {
          rho *= 2.0;
          v *= 0.5;
        } else if (dual > 10.0 * primal) {
          rho *= 0.5;
          v *= 2.0;
        }
      }
    }
    if (!converged) throw JmSolverError("JmSolver: ADMM iteration cap reached");

    result.feasible = true;
    result.w = range_vectors_ * c_tilde.cwiseQuotient(d);
    result.objective = c_tilde.cwiseQuotient(d).dot(c_tilde);
    result.kkt_residual = kkt_residual(result.w, rho * v, x_star, lambda_w);
    return result;
  }

  // max of constraint violation, stationarity residual of
  // 2 Sigma w + Sigma m = 0, and complementary-slackness violation.
  double kkt_residual(const VectorXd& w, const VectorXd& multiplier, const VectorXd& x_star,
                      double lambda_w) const {
    const VectorXd slack = sigma_ * w - x_star;
    double res = std::max(0.0, slack.lpNorm<Eigen::Infinity>() - lambda_w);
    res = std::max(res, (2.0 * (sigma_ * w) + sigma_ * multiplier).lpNorm<Eigen::Infinity>());
    for (Eigen::Index j = 0; j < w.size(); ++j) {
      const double m = multiplier[j];
      if (std::abs(m) < 1e-12) continue;
      const double boundary = (m > 0.0) ? lambda_w : -lambda_w;
      res = std::max(res, std::abs(m * (slack[j] - boundary)));
    }
    return res;
  }

 private:
  static constexpr int kFeasibilityIters = 20000;
  static constexpr int kAdmmIters = 200000;

  void check_inputs(const VectorXd& x_star, double lambda_w) const {
    if (x_star.size() != dim()) throw std::invalid_argument("JmSolver: x_star dimension mismatch");
    if (!(lambda_w > 0.0)) throw std::invalid_argument("JmSolver: lambda_w must be positive");
  }

  VectorXd project_range(const VectorXd& x) const {
    return range_vectors_ * (range_vectors_.transpose() * x);
  }

  MatrixXd sigma_;
  MatrixXd range_vectors_;      // p x rank
  VectorXd range_eigenvalues_;  // rank
  bool full_rank_ = false;
};

inline JmProgramResult solve_jm_program(const MatrixXd& design, const VectorXd& x_star,
                                        double lambda_w) {
  return JmSolver(design).solve(x_star, lambda_w);
}

// Smallest grid value whose program is feasible; empty when none is (the
// caller then predicts with the pilot alone).
inline std::optional<double> select_lambda_w(const JmSolver& solver, const VectorXd& x_star,
                                             const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("select_lambda_w: empty grid");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (grid[i] <= grid[i - 1])
      throw std::invalid_argument("select_lambda_w: grid must be increasing");
  for (double lambda_w : grid)
    if (solver.feasible(x_star, lambda_w)) return lambda_w;
  return std::nullopt;
}

inline std::optional<double> select_lambda_w(const MatrixXd& design, const VectorXd& x_star,
                                             const std::vector<double>& grid) {
  return select_lambda_w(JmSolver(design), x_star, grid);
}

// Theory preset: the two candidate values tried in increasing order.
inline std::vector<double> theory_lambda_w_grid(Eigen::Index p, Eigen::Index n) {
  const double base = std::sqrt(std::log(static_cast<double>(p)) / static_cast<double>(n));
  return {0.01 * base, base};
}

// Preset used for real-data runs.
inline std::vector<double> real_data_lambda_w_grid() { return log_spaced_grid(1e-7, 1e2, 100); }

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
  double alpha = 0.0;
  bool bias_uncorrected = false;  // built with the default K2 = 0 allowance
};

struct JmPrediction {
  double value = 0.0;        // pilot_value + correction
  double pilot_value = 0.0;  // <x*, beta_hat> on the raw scale
  double correction = 0.0;
  std::optional<ConfidenceInterval> ci;
  JmProgramResult program;
};

// Pilot must have been fitted on `dataset`. x_star is on the raw scale and
// is standardized internally before entering the program.
inline JmPrediction predict_jm(const StandardizedDataset& dataset, const FittedLinearModel& pilot,
                               const VectorXd& x_star_raw, double lambda_w) {
  const VectorXd x_std = dataset.standardize_vector(x_star_raw);
  JmPrediction pred;
  pred.program = JmSolver(dataset.centered_design).solve(x_std, lambda_w);
  pred.pilot_value = model::predict(pilot, x_std);
  const VectorXd residual = dataset.centered_responses - dataset.centered_design * pilot.coefficients;
  pred.correction =
      pred.program.w.dot(dataset.centered_design.transpose() * residual) / static_cast<double>(dataset.n());
  pred.value = pred.pilot_value + pred.correction;
  return pred;
}

// Same, with lambda_w chosen as the smallest feasible grid value. A solver
// for the dataset's design can be supplied to amortize the eigendecomposition
// across test points.
inline JmPrediction predict_jm_with_grid(const StandardizedDataset& dataset,
                                         const FittedLinearModel& pilot,
                                         const VectorXd& x_star_raw,
                                         const std::vector<double>& grid,
                                         const JmSolver* solver = nullptr) {
  std::optional<JmSolver> local;
  if (solver == nullptr) {
    local.emplace(dataset.centered_design);
    solver = &*local;
  }
  const VectorXd x_std = dataset.standardize_vector(x_star_raw);
  JmPrediction pred;
  const std::optional<double> lambda_w = select_lambda_w(*solver, x_std, grid);
  if (!lambda_w) {  // all programs infeasible: predict with the pilot (w = 0)
    pred.program.w = VectorXd::Zero(dataset.p());
    pred.program.feasible = false;
    pred.program.lambda_w = grid.back();
    pred.pilot_value = model::predict(pilot, x_std);
    pred.value = pred.pilot_value;
    return pred;
  }
  pred.program = solver->solve(x_std, *lambda_w);
  pred.pilot_value = model::predict(pilot, x_std);
  const VectorXd residual = dataset.centered_responses - dataset.centered_design * pilot.coefficients;
  pred.correction =
      pred.program.w.dot(dataset.centered_design.transpose() * residual) / static_cast<double>(dataset.n());
  pred.value = pred.pilot_value + pred.correction;
  return pred;
}

// Gaussian interval around the corrected prediction,
//   y_jm +/- 1.01 z_{alpha/2} noise_sd sqrt(w' Sigma_n w / n) + k2/sqrt(n).
// k2 is the bias allowance; with the default k2 = 0 the interval carries only
// the Gaussian term and is flagged as bias-uncorrected.
inline ConfidenceInterval jm_confidence_interval(const JmPrediction& pred,
                                                 const JmProgramResult& program,
                                                 const MatrixXd& design, double noise_sd,
                                                 double alpha, double k2 = 0.0) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("jm_confidence_interval: alpha must lie in (0, 1]");
  if (!(noise_sd > 0.0))
    throw std::invalid_argument("jm_confidence_interval: noise_sd must be positive");
  const double n = static_cast<double>(design.rows());
  const double quad = program.w.size() == 0
                          ? 0.0
                          : program.w.dot((design.transpose() * (design * program.w))) / n;
  const double z = (alpha == 1.0) ? 0.0 : normal_quantile(1.0 - alpha / 2.0);
  const double half = 1.01 * z * noise_sd * std::sqrt(std::max(quad, 0.0) / n) + k2 / std::sqrt(n);
  return {pred.value - half, pred.value + half, alpha, k2 == 0.0};
}

inline nlohmann::json to_json(const JmProgramResult& result) {
  return {{"lambda_w", result.lambda_w},
          {"feasible", result.feasible},
          {"objective", result.objective},
          {"kkt_residual", result.kkt_residual}};
}

}  // namespace transduct::jm
