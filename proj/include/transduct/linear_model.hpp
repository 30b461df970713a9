#pragma once

// Baseline inductive estimators: OLS, ridge, Lasso, elastic net, plus
// cross-validation over log-spaced grids. These serve both as standalone
// predictors and as pilot / first-stage regressors for the debiasing
// estimators.
//
// Objectives follow the scaling conventions
//   ridge:   ||y - X b||^2 + lambda ||b||^2
//   lasso:   (1/2n) ||y - X b||^2 + lambda ||b||_1
//   elastic: (1/2n) ||y - X b||^2 + lambda (a ||b||_1 + (1-a)/2 ||b||_2^2)
// so elastic with a = 1 coincides bitwise with the lasso.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "transduct/data.hpp"
#include "transduct/rng.hpp"
#include "transduct/stats.hpp"

namespace transduct::model {

using data::StandardizedDataset;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kKktTol = 1e-8;
inline constexpr int kMaxSweeps = 100000;

enum class RegularizerKind { kNone, kRidge, kLasso, kElastic };

struct Regularizer {
  RegularizerKind kind = RegularizerKind::kNone;
  double lambda = 0.0;
  double l1_ratio = 1.0;  // elastic only

  static Regularizer none() { return {RegularizerKind::kNone, 0.0, 1.0}; }
  static Regularizer ridge(double lambda) { return {RegularizerKind::kRidge, lambda, 0.0}; }
  static Regularizer lasso(double lambda) { return {RegularizerKind::kLasso, lambda, 1.0}; }
  static Regularizer elastic(double lambda, double l1_ratio) {
    return {RegularizerKind::kElastic, lambda, l1_ratio};
  }
};

inline std::string to_string(RegularizerKind kind) {
  switch (kind) {
    case RegularizerKind::kNone: return "none";
    case RegularizerKind::kRidge: return "ridge";
    case RegularizerKind::kLasso: return "lasso";
    case RegularizerKind::kElastic: return "elastic";
  }
  return "?";
}

struct SolverReport {
  int iterations = 0;
  double kkt_gap = 0.0;  // final duality / KKT gap (residual norm for ridge)
  bool converged = true;
};

struct FittedLinearModel {
  VectorXd coefficients;
  double intercept = 0.0;
  Regularizer regularizer;
  SolverReport solver_report;
};

// <x_standardized, beta> + intercept.
inline double predict(const FittedLinearModel& model, const VectorXd& x_standardized) {
  if (x_standardized.size() != model.coefficients.size())
    throw std::invalid_argument("predict: dimension mismatch");
  return model.coefficients.dot(x_standardized) + model.intercept;
}

// Raw-scale prediction: standardize x with the training statistics first.
inline double predict_raw(const FittedLinearModel& model, const StandardizedDataset& dataset,
                          const VectorXd& x_raw) {
  return predict(model, dataset.standardize_vector(x_raw));
}

// Minimum-norm least squares on (x, y) with no intercept.
inline FittedLinearModel fit_ols_xy(const MatrixXd& x, const VectorXd& y) {
  FittedLinearModel model;
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(x);
  model.coefficients = cod.solve(y);
  model.regularizer = Regularizer::none();
  model.solver_report = {1, 0.0, true};
  return model;
}

inline FittedLinearModel fit_ridge_xy(const MatrixXd& x, const VectorXd& y, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("fit_ridge: lambda must be nonnegative");
  if (lambda == 0.0) {
    FittedLinearModel model = fit_ols_xy(x, y);
    model.regularizer = Regularizer::ridge(0.0);
    return model;
  }
  MatrixXd gram = x.transpose() * x;
  gram.diagonal().array() += lambda;
  const VectorXd xty = x.transpose() * y;
  FittedLinearModel model;
  model.coefficients = Eigen::LLT<MatrixXd>(gram).solve(xty);
  model.regularizer = Regularizer::ridge(lambda);
  const double residual = (gram * model.coefficients - xty).norm();
  model.solver_report = {1, residual / (1.0 + xty.norm()), true};
  return model;
}

// Minimum-norm least squares (pseudoinverse semantics when rank-deficient).
inline FittedLinearModel fit_ols(const StandardizedDataset& dataset) {
  FittedLinearModel model = fit_ols_xy(dataset.centered_design, dataset.centered_responses);
  model.intercept = dataset.response_mean;
  return model;
}

inline FittedLinearModel fit_ridge(const StandardizedDataset& dataset, double lambda) {
  FittedLinearModel model = fit_ridge_xy(dataset.centered_design, dataset.centered_responses, lambda);
  model.intercept = dataset.response_mean;
  return model;
}

namespace detail {

inline double soft_threshold(double value, double threshold) {
  if (value > threshold) return value - threshold;
  if (value < -threshold) return value + threshold;
  return 0.0;
}

// KKT gap of the elastic-net objective at beta: for active coordinates the
// stationarity residual, for inactive ones the subgradient-bound violation.
// Gradient of the smooth part is -(1/n) X^T r + l2 * beta.
inline double elastic_kkt_gap(const MatrixXd& x, const VectorXd& residual, const VectorXd& beta,
                              double l1, double l2) {
  const double n = static_cast<double>(x.rows());
  const VectorXd corr = x.transpose() * residual / n;
  double gap = 0.0;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    const double g = corr[j] - l2 * beta[j];
    if (beta[j] > 0.0)
      gap = std::max(gap, std::abs(g - l1));
    else if (beta[j] < 0.0)
      gap = std::max(gap, std::abs(g + l1));
    else
      gap = std::max(gap, std::max(0.0, std::abs(g) - l1));
  }
  return gap;
}

// Cyclic coordinate descent on
//   (1/2n)||y - X b||^2 + l1 ||b||_1 + (l2/2)||b||_2^2,
// warm-started from `beta`.
inline FittedLinearModel coordinate_descent(const MatrixXd& x, const VectorXd& y, double l1,
                                            double l2, VectorXd beta) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  VectorXd col_sq(p);
  for (Eigen::Index j = 0; j < p; ++j) col_sq[j] = x.col(j).squaredNorm() * inv_n;

  if (beta.size() != p) beta = VectorXd::Zero(p);
  VectorXd residual = y - x * beta;

  FittedLinearModel model;
  int sweep = 0;
  for (; sweep < kMaxSweeps; ++sweep) {
    double max_change = 0.0;
    double max_beta = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      const double old = beta[j];
      const double denom = col_sq[j] + l2;
      if (denom == 0.0) {  // all-zero column
        beta[j] = 0.0;
        continue;
      }
      const double rho = x.col(j).dot(residual) * inv_n + col_sq[j] * old;
      const double updated = soft_threshold(rho, l1) / denom;
      if (updated != old) {
        residual -= (updated - old) * x.col(j);
        beta[j] = updated;
        max_change = std::max(max_change, std::abs(updated - old));
      }
      max_beta = std::max(max_beta, std::abs(beta[j]));
    }
    if (max_change < 1e-10 * std::max(1.0, max_beta)) break;
    if (elastic_kkt_gap(x, residual, beta, l1, l2) < kKktTol) break;
  }
  model.coefficients = std::move(beta);
  model.solver_report.iterations = sweep + 1;
  model.solver_report.kkt_gap = elastic_kkt_gap(x, residual, model.coefficients, l1, l2);
  model.solver_report.converged = sweep < kMaxSweeps;
  return model;
}

}  // namespace detail

inline FittedLinearModel fit_lasso_xy(const MatrixXd& x, const VectorXd& y, double lambda,
                                      const VectorXd* warm_start = nullptr) {
  if (lambda <= 0.0) throw std::invalid_argument("fit_lasso: lambda must be positive");
  FittedLinearModel model = detail::coordinate_descent(x, y, lambda, 0.0,
                                                       warm_start ? *warm_start : VectorXd());
  model.regularizer = Regularizer::lasso(lambda);
  return model;
}

inline FittedLinearModel fit_elastic_xy(const MatrixXd& x, const VectorXd& y, double lambda,
                                        double l1_ratio, const VectorXd* warm_start = nullptr) {
  if (lambda <= 0.0) throw std::invalid_argument("fit_elastic: lambda must be positive");
  if (!(l1_ratio > 0.0 && l1_ratio <= 1.0))
    throw std::invalid_argument("fit_elastic: l1_ratio must lie in (0, 1]");
  FittedLinearModel model = detail::coordinate_descent(x, y, lambda * l1_ratio,
                                                       lambda * (1.0 - l1_ratio),
                                                       warm_start ? *warm_start : VectorXd());
  model.regularizer = Regularizer::elastic(lambda, l1_ratio);
  return model;
}

inline FittedLinearModel fit_lasso(const StandardizedDataset& dataset, double lambda,
                                   const VectorXd* warm_start = nullptr) {
  FittedLinearModel model =
      fit_lasso_xy(dataset.centered_design, dataset.centered_responses, lambda, warm_start);
  model.intercept = dataset.response_mean;
  return model;
}

inline FittedLinearModel fit_elastic(const StandardizedDataset& dataset, double lambda,
                                     double l1_ratio, const VectorXd* warm_start = nullptr) {
  FittedLinearModel model = fit_elastic_xy(dataset.centered_design, dataset.centered_responses,
                                           lambda, l1_ratio, warm_start);
  model.intercept = dataset.response_mean;
  return model;
}

// ---------------------------------------------------------------------------
// Cross-validation

inline constexpr int kLeaveOneOut = -1;

struct CvPlan {
  int folds = 5;  // kLeaveOneOut selects the closed-form ridge shortcut
  std::vector<double> grid;
  std::optional<std::vector<double>> l1_ratio_grid;  // elastic only

  void validate() const {
    if (folds != kLeaveOneOut && folds < 2) throw std::invalid_argument("CvPlan: folds must be >= 2");
    if (grid.empty()) throw std::invalid_argument("CvPlan: empty grid");
    for (std::size_t i = 1; i < grid.size(); ++i)
      if (grid[i] <= grid[i - 1]) throw std::invalid_argument("CvPlan: grid must be strictly increasing");
    if (l1_ratio_grid) {
      for (double r : *l1_ratio_grid)
        if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("CvPlan: l1_ratio values must lie in (0,1]");
    }
  }
};

// Grids from the reference experimental setup.
inline CvPlan lasso_cv_plan(int folds = 5) { return {folds, log_spaced_grid(1e-6, 1e1, 100), std::nullopt}; }
inline CvPlan ridge_cv_plan_synthetic() { return {kLeaveOneOut, log_spaced_grid(1e-2, 1e6, 100), std::nullopt}; }
inline CvPlan ridge_cv_plan_real() { return {kLeaveOneOut, log_spaced_grid(1e-6, 1e1, 100), std::nullopt}; }
inline CvPlan elastic_cv_plan(int folds = 5) {
  return {folds, log_spaced_grid(1e-6, 1e1, 100),
          std::vector<double>{0.1, 0.5, 0.7, 0.9, 0.95, 0.99, 1.0}};
}

// Seeded partition of [0, n) into `folds` index sets with sizes differing by
// at most one.
inline std::vector<std::vector<Eigen::Index>> make_folds(Eigen::Index n, int folds,
                                                         std::uint64_t seed,
                                                         std::string_view purpose = "cv-folds") {
  if (folds < 2 || folds > n) throw std::invalid_argument("make_folds: need 2 <= folds <= n");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  RngStream rng(seed, purpose);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.next_below(i)]);
  std::vector<std::vector<Eigen::Index>> out(static_cast<std::size_t>(folds));
  for (std::size_t i = 0; i < order.size(); ++i)
    out[i % static_cast<std::size_t>(folds)].push_back(order[i]);
  return out;
}

namespace detail {

struct SubsetView {
  MatrixXd x;
  VectorXd y;
};

inline SubsetView take_rows(const MatrixXd& x, const VectorXd& y,
                            const std::vector<Eigen::Index>& rows) {
  SubsetView view;
  view.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
  view.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    view.x.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
    view.y[static_cast<Eigen::Index>(i)] = y[rows[i]];
  }
  return view;
}

inline SubsetView drop_rows(const MatrixXd& x, const VectorXd& y,
                            const std::vector<Eigen::Index>& rows) {
  std::vector<bool> held(static_cast<std::size_t>(x.rows()), false);
  for (Eigen::Index r : rows) held[static_cast<std::size_t>(r)] = true;
  std::vector<Eigen::Index> keep;
  keep.reserve(static_cast<std::size_t>(x.rows()) - rows.size());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    if (!held[static_cast<std::size_t>(i)]) keep.push_back(i);
  return take_rows(x, y, keep);
}

// Mean LOO squared error of ridge across the grid via the SVD leverage
// shortcut: residual_i / (1 - h_ii) with h from the shrunken spectrum.
inline std::vector<double> ridge_loo_errors(const MatrixXd& x, const VectorXd& y,
                                            const std::vector<double>& grid) {
  Eigen::BDCSVD<MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& sv = svd.singularValues();
  const MatrixXd& u = svd.matrixU();
  const VectorXd uty = u.transpose() * y;
  const Eigen::Index n = x.rows();
  std::vector<double> errors;
  errors.reserve(grid.size());
  for (double lambda : grid) {
    VectorXd shrink(sv.size());
    for (Eigen::Index k = 0; k < sv.size(); ++k)
      shrink[k] = sv[k] * sv[k] / (sv[k] * sv[k] + lambda);
    const VectorXd fitted = u * shrink.cwiseProduct(uty);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = (u.row(i).transpose().array().square() * shrink.array()).sum();
      const double denom = std::max(1.0 - h, 1e-12);
      const double loo = (y[i] - fitted[i]) / denom;
      total += loo * loo;
    }
    errors.push_back(total / static_cast<double>(n));
  }
  return errors;
}

}  // namespace detail

enum class RegularizerFamily { kRidge, kLasso, kElastic };

// Fits the family across the plan's grid, scores mean held-out MSE, refits
// on the full data at the winner. Ties break toward more regularization.
// Operates on (x, y) as given, with no intercept.
inline FittedLinearModel cross_validate_xy(const MatrixXd& x, const VectorXd& y,
                                           RegularizerFamily family, const CvPlan& plan,
                                           std::uint64_t seed) {
  plan.validate();
  const Eigen::Index n = x.rows();

  std::vector<double> l1_ratios{1.0};
  if (family == RegularizerFamily::kElastic)
    l1_ratios = plan.l1_ratio_grid.value_or(std::vector<double>{1.0});

  double best_mse = std::numeric_limits<double>::infinity();
  double best_lambda = plan.grid.back();
  double best_ratio = l1_ratios.back();

  if (family == RegularizerFamily::kRidge && plan.folds == kLeaveOneOut) {
    const std::vector<double> errors = detail::ridge_loo_errors(x, y, plan.grid);
    for (std::size_t g = plan.grid.size(); g-- > 0;) {
      if (errors[g] < best_mse) {
        best_mse = errors[g];
        best_lambda = plan.grid[g];
      }
    }
    return fit_ridge_xy(x, y, best_lambda);
  }
  if (plan.folds == kLeaveOneOut)
    throw std::invalid_argument("cross_validate: leave-one-out implemented for ridge only");
  if (plan.folds > n) throw std::invalid_argument("cross_validate: more folds than rows");

  const auto folds = make_folds(n, plan.folds, seed);
  std::vector<detail::SubsetView> fits, holds;
  for (const auto& fold : folds) {
    fits.push_back(detail::drop_rows(x, y, fold));
    holds.push_back(detail::take_rows(x, y, fold));
  }

  for (double ratio : l1_ratios) {
    // Walk the grid from the most regularized end with warm starts.
    std::vector<VectorXd> warm(folds.size());
    for (std::size_t g = plan.grid.size(); g-- > 0;) {
      const double lambda = plan.grid[g];
      std::vector<double> fold_mse(folds.size());
      for (std::size_t k = 0; k < folds.size(); ++k) {
        VectorXd beta;
        switch (family) {
          case RegularizerFamily::kRidge: {
            MatrixXd gram = fits[k].x.transpose() * fits[k].x;
            gram.diagonal().array() += lambda;
            beta = Eigen::LLT<MatrixXd>(gram).solve(fits[k].x.transpose() * fits[k].y);
            break;
          }
          case RegularizerFamily::kLasso:
          case RegularizerFamily::kElastic: {
            const double l1 = lambda * ratio;
            const double l2 = lambda * (1.0 - ratio);
            beta = detail::coordinate_descent(fits[k].x, fits[k].y, l1, l2,
                                              std::move(warm[k])).coefficients;
            warm[k] = beta;
            break;
          }
        }
        fold_mse[k] = (holds[k].y - holds[k].x * beta).squaredNorm() /
                      static_cast<double>(holds[k].y.size());
      }
      const double mse = pairwise_sum(fold_mse) / static_cast<double>(fold_mse.size());
      // Strict improvement required, so on ties the larger lambda (visited
      // first) wins; across l1 ratios the earlier ratio wins.
      if (mse < best_mse) {
        best_mse = mse;
        best_lambda = lambda;
        best_ratio = ratio;
      }
    }
  }

  switch (family) {
    case RegularizerFamily::kRidge: return fit_ridge_xy(x, y, best_lambda);
    case RegularizerFamily::kLasso: return fit_lasso_xy(x, y, best_lambda);
    case RegularizerFamily::kElastic: return fit_elastic_xy(x, y, best_lambda, best_ratio);
  }
  throw std::logic_error("cross_validate: unreachable");
}

inline FittedLinearModel cross_validate(const StandardizedDataset& dataset,
                                        RegularizerFamily family, const CvPlan& plan,
                                        std::uint64_t seed) {
  FittedLinearModel model = cross_validate_xy(dataset.centered_design,
                                              dataset.centered_responses, family, plan, seed);
  model.intercept = dataset.response_mean;
  return model;
}

inline nlohmann::json to_json(const FittedLinearModel& model) {
  nlohmann::json reg;
  reg["kind"] = to_string(model.regularizer.kind);
  reg["lambda"] = model.regularizer.lambda;
  if (model.regularizer.kind == RegularizerKind::kElastic)
    reg["l1_ratio"] = model.regularizer.l1_ratio;
  nlohmann::json j;
  j["coefficients"] = std::vector<double>(model.coefficients.data(),
                                          model.coefficients.data() + model.coefficients.size());
  j["intercept"] = model.intercept;
  j["regularizer"] = reg;
  j["solver_report"] = {{"iterations", model.solver_report.iterations},
                        {"final_duality_or_kkt_gap", model.solver_report.kkt_gap},
                        {"converged", model.solver_report.converged}};
  return j;
}

}  // namespace transduct::model
