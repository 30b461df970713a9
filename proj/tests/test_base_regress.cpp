#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "transduct/data.hpp"
#include "transduct/linear_model.hpp"
#include "transduct/rng.hpp"

using namespace transduct;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Dataset wrapper around pre-centered coordinates (identity standardization).
data::StandardizedDataset as_dataset(const MatrixXd& x, const VectorXd& y) {
  data::StandardizedDataset d;
  d.centered_design = x;
  d.centered_responses = y;
  d.column_means = VectorXd::Zero(x.cols());
  d.column_sds = VectorXd::Ones(x.cols());
  d.constant_columns.assign(static_cast<std::size_t>(x.cols()), false);
  d.response_mean = 0.0;
  return d;
}

MatrixXd random_matrix(int n, int p, std::uint64_t seed) {
  RngStream rng(seed, "test-x");
  MatrixXd x(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) x(i, j) = rng.next_gaussian();
  return x;
}

VectorXd random_vector(int n, std::uint64_t seed, std::string_view tag = "test-y") {
  RngStream rng(seed, tag);
  VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = rng.next_gaussian();
  return y;
}

}  // namespace

TEST_CASE("fit_ols: identity design returns the responses") {
  VectorXd y(2);
  y << 3.0, -1.0;
  const auto model = model::fit_ols(as_dataset(MatrixXd::Identity(2, 2), y));
  REQUIRE(model.coefficients[0] == Catch::Approx(3.0).margin(1e-12));
  REQUIRE(model.coefficients[1] == Catch::Approx(-1.0).margin(1e-12));
}

TEST_CASE("fit_ols: duplicated column takes the minimum-norm split") {
  MatrixXd x(6, 3);
  x.col(0) = random_vector(6, 1, "c0");
  x.col(1) = x.col(0);
  x.col(2) = random_vector(6, 2, "c2");
  const VectorXd y = random_vector(6, 3);
  const auto model = model::fit_ols(as_dataset(x, y));
  const VectorXd oracle = oracles::pinv_least_squares(x, y);
  REQUIRE((model.coefficients - oracle).lpNorm<Eigen::Infinity>() < 1e-8);
  REQUIRE(model.coefficients[0] == Catch::Approx(model.coefficients[1]).margin(1e-9));
}

TEST_CASE("fit_ols: matches the normal equations on a full-rank instance") {
  const MatrixXd x = random_matrix(50, 10, 4);
  const VectorXd y = random_vector(50, 5);
  const auto model = model::fit_ols(as_dataset(x, y));
  const VectorXd oracle = (x.transpose() * x).llt().solve(x.transpose() * y);
  REQUIRE((model.coefficients - oracle).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("fit_ridge: lambda = 0 equals OLS on full-rank data") {
  const MatrixXd x = random_matrix(30, 5, 6);
  const VectorXd y = random_vector(30, 7);
  const auto dataset = as_dataset(x, y);
  const auto ridge = model::fit_ridge(dataset, 0.0);
  const auto ols = model::fit_ols(dataset);
  REQUIRE((ridge.coefficients - ols.coefficients).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("fit_ridge: heavy shrinkage limit") {
  const MatrixXd x = random_matrix(30, 5, 8);
  const VectorXd y = random_vector(30, 9);
  const auto model = model::fit_ridge(as_dataset(x, y), 1e12);
  REQUIRE(model.coefficients.norm() <= 1e-6 * (x.transpose() * y).norm());
}

TEST_CASE("fit_ridge: scalar closed form and stationarity residual") {
  MatrixXd x(1, 1);
  x << 1.0;
  VectorXd y(1);
  y << 2.0;
  const auto model = model::fit_ridge(as_dataset(x, y), 1.0);
  REQUIRE(model.coefficients[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(model.solver_report.kkt_gap < 1e-8);
  REQUIRE_THROWS_AS(model::fit_ridge(as_dataset(x, y), -1.0), std::invalid_argument);
}

TEST_CASE("fit_lasso: subgradient condition at zero") {
  const MatrixXd x = random_matrix(20, 6, 10);
  const VectorXd y = random_vector(20, 11);
  const double lambda_max = (x.transpose() * y / 20.0).lpNorm<Eigen::Infinity>();
  const auto model = model::fit_lasso(as_dataset(x, y), lambda_max * 1.000001);
  REQUIRE(model.coefficients.isZero(0.0));
}

TEST_CASE("fit_lasso: orthonormal design soft-thresholding closed form") {
  // Columns of Q scaled by sqrt(n) give (1/n) X'X = I.
  const int n = 32, p = 5;
  const MatrixXd base = random_matrix(n, p, 12);
  const MatrixXd q = Eigen::HouseholderQR<MatrixXd>(base).householderQ() * MatrixXd::Identity(n, p);
  const MatrixXd x = std::sqrt(static_cast<double>(n)) * q;
  const VectorXd y = random_vector(n, 13);
  const double lambda = 0.21;
  const auto model = model::fit_lasso(as_dataset(x, y), lambda);
  const VectorXd corr = x.transpose() * y / static_cast<double>(n);
  for (int j = 0; j < p; ++j) {
    const double expect =
        corr[j] > lambda ? corr[j] - lambda : (corr[j] < -lambda ? corr[j] + lambda : 0.0);
    REQUIRE(model.coefficients[j] == Catch::Approx(expect).margin(1e-9));
  }
}

TEST_CASE("fit_lasso: matches the projected-subgradient oracle") {
  const MatrixXd x = random_matrix(8, 4, 14);
  const VectorXd y = random_vector(8, 15);
  const double lambda = 0.1;
  const auto model = model::fit_lasso(as_dataset(x, y), lambda);
  const VectorXd oracle = oracles::lasso_projected_subgradient(x, y, lambda, 1000000);
  const double obj_model = oracles::lasso_objective(x, y, lambda, model.coefficients);
  const double obj_oracle = oracles::lasso_objective(x, y, lambda, oracle);
  REQUIRE(std::abs(obj_model - obj_oracle) < 1e-6);
  REQUIRE(obj_model <= obj_oracle + 1e-10);
}

TEST_CASE("fit_lasso: KKT certificate on random instances") {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const int n = 10 + static_cast<int>(trial % 30);
    const int p = 3 + static_cast<int>(trial % 7);
    const MatrixXd x = random_matrix(n, p, 100 + trial);
    const VectorXd y = random_vector(n, 200 + trial);
    const double lambda = 0.01 + 0.05 * static_cast<double>(trial % 5);
    const auto model = model::fit_lasso(as_dataset(x, y), lambda);
    REQUIRE(model.solver_report.converged);
    REQUIRE(model.solver_report.kkt_gap <= 1e-8);
  }
}

TEST_CASE("fit_lasso: active set shrinks as lambda grows") {
  const MatrixXd x = random_matrix(100, 5, 16);
  VectorXd beta(5);
  beta << 2.0, -1.5, 1.0, 0.5, 0.0;
  const VectorXd y = x * beta + 0.1 * random_vector(100, 17);
  const auto dataset = as_dataset(x, y);
  auto grid = log_spaced_grid(1e-3, 1.0, 12);
  int prev_active = 0;
  VectorXd warm;
  for (std::size_t g = grid.size(); g-- > 0;) {  // decreasing lambda path
    const auto model =
        model::fit_lasso(dataset, grid[g], warm.size() ? &warm : nullptr);
    warm = model.coefficients;
    const int active = static_cast<int>((model.coefficients.array() != 0.0).count());
    REQUIRE(active >= prev_active);
    prev_active = active;
  }
}

TEST_CASE("fit_elastic: l1_ratio = 1 reproduces the lasso bitwise") {
  const MatrixXd x = random_matrix(25, 6, 18);
  const VectorXd y = random_vector(25, 19);
  const auto dataset = as_dataset(x, y);
  const auto lasso = model::fit_lasso(dataset, 0.05);
  const auto elastic = model::fit_elastic(dataset, 0.05, 1.0);
  REQUIRE(lasso.coefficients == elastic.coefficients);
}

TEST_CASE("fit_elastic: l1_ratio -> 0 approaches ridge at n * lambda * (1 - l1_ratio)") {
  const MatrixXd x = random_matrix(20, 4, 20);
  const VectorXd y = random_vector(20, 21);
  const auto dataset = as_dataset(x, y);
  const double lambda = 0.5;
  const double ratio = 1e-10;
  const auto elastic = model::fit_elastic(dataset, lambda, ratio);
  const auto ridge = model::fit_ridge(dataset, 20.0 * lambda * (1.0 - ratio));
  REQUIRE((elastic.coefficients - ridge.coefficients).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("fit_elastic: huge lambda zeroes the solution, bad l1_ratio throws") {
  const MatrixXd x = random_matrix(20, 4, 22);
  const VectorXd y = random_vector(20, 23);
  const auto dataset = as_dataset(x, y);
  REQUIRE(model::fit_elastic(dataset, 1e9, 0.5).coefficients.isZero(0.0));
  REQUIRE_THROWS_AS(model::fit_elastic(dataset, 1.0, 0.0), std::invalid_argument);
  REQUIRE_THROWS_AS(model::fit_elastic(dataset, 1.0, 1.5), std::invalid_argument);
}

TEST_CASE("cross_validate: singleton grid equals the direct fit") {
  const MatrixXd x = random_matrix(30, 5, 24);
  const VectorXd y = random_vector(30, 25);
  const auto dataset = as_dataset(x, y);
  model::CvPlan plan{5, {0.17}, std::nullopt};
  const auto cv = model::cross_validate(dataset, model::RegularizerFamily::kLasso, plan, 3);
  const auto direct = model::fit_lasso(dataset, 0.17);
  REQUIRE(cv.coefficients == direct.coefficients);
}

TEST_CASE("cross_validate: reference grids") {
  const auto lasso_plan = model::lasso_cv_plan();
  REQUIRE(lasso_plan.grid.size() == 100);
  REQUIRE(lasso_plan.grid.front() == Catch::Approx(1e-6));
  REQUIRE(lasso_plan.grid.back() == Catch::Approx(1e1));
  const auto ridge_plan = model::ridge_cv_plan_synthetic();
  REQUIRE(ridge_plan.grid.size() == 100);
  REQUIRE(ridge_plan.grid.front() == Catch::Approx(1e-2));
  REQUIRE(ridge_plan.grid.back() == Catch::Approx(1e6));
  REQUIRE(ridge_plan.folds == model::kLeaveOneOut);
}

TEST_CASE("cross_validate: returned lambda minimizes the fold-mean MSE") {
  const MatrixXd x = random_matrix(40, 6, 26);
  VectorXd beta(6);
  beta << 1.0, -1.0, 0.0, 0.0, 0.5, 0.0;
  const VectorXd y = x * beta + 0.5 * random_vector(40, 27);
  const auto dataset = as_dataset(x, y);
  model::CvPlan plan{4, log_spaced_grid(1e-4, 1.0, 12), std::nullopt};
  const auto chosen = model::cross_validate(dataset, model::RegularizerFamily::kLasso, plan, 55);

  // Recompute the CV curve with the same fold partition.
  const auto folds = model::make_folds(40, 4, 55);
  double best = std::numeric_limits<double>::infinity();
  double best_lambda = 0.0;
  for (std::size_t g = plan.grid.size(); g-- > 0;) {
    double total = 0.0;
    for (const auto& fold : folds) {
      std::vector<Eigen::Index> keep;
      for (Eigen::Index i = 0; i < 40; ++i)
        if (std::find(fold.begin(), fold.end(), i) == fold.end()) keep.push_back(i);
      MatrixXd xs(keep.size(), 6);
      VectorXd ys(keep.size());
      for (std::size_t i = 0; i < keep.size(); ++i) {
        xs.row(static_cast<Eigen::Index>(i)) = x.row(keep[i]);
        ys[static_cast<Eigen::Index>(i)] = y[keep[i]];
      }
      const auto m = model::fit_lasso_xy(xs, ys, plan.grid[g]);
      double fold_err = 0.0;
      for (Eigen::Index i : fold) {
        const double r = y[i] - x.row(i).dot(m.coefficients);
        fold_err += r * r;
      }
      total += fold_err / static_cast<double>(fold.size());
    }
    total /= static_cast<double>(folds.size());
    if (total < best) {
      best = total;
      best_lambda = plan.grid[g];
    }
  }
  REQUIRE(chosen.regularizer.lambda == Catch::Approx(best_lambda));
}

TEST_CASE("cross_validate: ridge LOO shortcut matches brute force") {
  const MatrixXd x = random_matrix(25, 4, 28);
  VectorXd beta(4);
  beta << 2.0, 0.0, -1.0, 0.3;
  const VectorXd y = x * beta + random_vector(25, 29);
  model::CvPlan plan{model::kLeaveOneOut, log_spaced_grid(1e-2, 1e3, 7), std::nullopt};

  double best = std::numeric_limits<double>::infinity();
  double best_lambda = 0.0;
  for (std::size_t g = plan.grid.size(); g-- > 0;) {
    const double err = oracles::ridge_loo_bruteforce(x, y, plan.grid[g]);
    if (err < best) {
      best = err;
      best_lambda = plan.grid[g];
    }
  }
  const auto chosen =
      model::cross_validate(as_dataset(x, y), model::RegularizerFamily::kRidge, plan, 0);
  REQUIRE(chosen.regularizer.lambda == Catch::Approx(best_lambda));
}

TEST_CASE("predict: intercept handling and raw-scale round trip") {
  model::FittedLinearModel model;
  model.coefficients = VectorXd::Zero(3);
  model.intercept = 4.5;
  VectorXd x = VectorXd::Ones(3);
  REQUIRE(model::predict(model, x) == 4.5);

  model.coefficients << 1.0, -2.0, 0.5;
  model.intercept = 0.0;
  VectorXd e1 = VectorXd::Zero(3);
  e1[1] = 1.0;
  REQUIRE(model::predict(model, e1) == Catch::Approx(-2.0));

  VectorXd wrong = VectorXd::Zero(2);
  REQUIRE_THROWS_AS(model::predict(model, wrong), std::invalid_argument);

  // Raw-scale prediction equals the manual standardize-then-dot pipeline.
  const MatrixXd raw_x = random_matrix(30, 3, 30).array() * 2.0 + 1.0;
  const VectorXd raw_y = random_vector(30, 31).array() + 5.0;
  const auto dataset = data::standardize(raw_x, raw_y);
  const auto fitted = model::fit_ridge(dataset, 3.0);
  const VectorXd x_raw = random_vector(3, 32, "probe");
  const VectorXd manual_std = (x_raw - dataset.column_means).cwiseQuotient(dataset.column_sds);
  const double manual = manual_std.dot(fitted.coefficients) + dataset.response_mean;
  REQUIRE(model::predict_raw(fitted, dataset, x_raw) == Catch::Approx(manual).margin(1e-10));
}

TEST_CASE("model json export carries the contract fields") {
  const MatrixXd x = random_matrix(10, 2, 33);
  const VectorXd y = random_vector(10, 34);
  const auto m = model::fit_lasso(as_dataset(x, y), 0.2);
  const auto j = model::to_json(m);
  REQUIRE(j.at("coefficients").size() == 2);
  REQUIRE(j.at("regularizer").at("kind") == "lasso");
  REQUIRE(j.at("solver_report").contains("iterations"));
  REQUIRE(j.at("solver_report").contains("final_duality_or_kkt_gap"));
}
