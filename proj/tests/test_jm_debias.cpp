#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "transduct/data.hpp"
#include "transduct/estimators.hpp"
#include "transduct/jm.hpp"
#include "transduct/rng.hpp"

using namespace transduct;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_matrix(int n, int p, std::uint64_t seed) {
  RngStream rng(seed, "jm-x");
  MatrixXd x(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) x(i, j) = rng.next_gaussian();
  return x;
}

VectorXd random_vector(int n, std::uint64_t seed, std::string_view tag = "jm-v") {
  RngStream rng(seed, tag);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.next_gaussian();
  return v;
}

}  // namespace

TEST_CASE("solve_jm_program: w = 0 exactly when lambda_w >= ||x*||_inf") {
  const MatrixXd x = random_matrix(12, 4, 1);
  const VectorXd x_star = random_vector(4, 2);
  const double linf = x_star.lpNorm<Eigen::Infinity>();
  const auto result = jm::solve_jm_program(x, x_star, linf);
  REQUIRE(result.feasible);
  REQUIRE(result.w.isZero(0.0));
  REQUIRE(result.objective == 0.0);
  REQUIRE(result.kkt_residual == 0.0);
}

TEST_CASE("solve_jm_program: objective beats the inverse-covariance oracle") {
  const int n = 40, p = 6;
  const MatrixXd x = random_matrix(n, p, 3);
  const MatrixXd sigma = x.transpose() * x / static_cast<double>(n);
  const VectorXd x_star = random_vector(p, 4);
  const VectorXd w0 = sigma.llt().solve(x_star);  // exactly feasible for any lambda_w
  const double oracle_obj = w0.dot(sigma * w0);
  for (double lambda_w : {1e-6, 1e-2, 0.2}) {
    const auto result = jm::solve_jm_program(x, x_star, lambda_w);
    REQUIRE(result.feasible);
    REQUIRE(result.objective <= oracle_obj + 1e-6);
    REQUIRE((sigma * result.w - x_star).lpNorm<Eigen::Infinity>() <= lambda_w + 1e-7);
  }
}

TEST_CASE("solve_jm_program: one-dimensional boundary-active closed form") {
  MatrixXd x(3, 1);
  x << 1.0, 2.0, -1.0;  // Sigma = 2
  const double sigma = x.col(0).squaredNorm() / 3.0;
  VectorXd x_star(1);
  x_star << 1.5;
  const double lambda_w = 0.4;  // < |x*|
  const auto result = jm::solve_jm_program(x, x_star, lambda_w);
  REQUIRE(result.feasible);
  const double expected = (1.5 - 0.4) / sigma;
  REQUIRE(result.w[0] == Catch::Approx(expected).margin(1e-8));
  REQUIRE(std::abs(sigma * result.w[0] - 1.5) == Catch::Approx(lambda_w).margin(1e-8));
}

TEST_CASE("solve_jm_program: infeasible rank-deficient program falls back to w = 0") {
  // range(Sigma) is 2-dimensional inside R^5; a tiny box around a generic
  // x* misses it.
  const MatrixXd x = random_matrix(2, 5, 5);
  const VectorXd x_star = random_vector(5, 6);
  const auto result = jm::solve_jm_program(x, x_star, 1e-4);
  REQUIRE_FALSE(result.feasible);
  REQUIRE(result.w.isZero(0.0));
}

TEST_CASE("jm program: feasibility and objective are monotone in lambda_w") {
  for (std::uint64_t trial = 0; trial < 8; ++trial) {
    const int n = trial % 2 == 0 ? 20 : 4;  // alternate full-rank and degenerate
    const int p = 6;
    const MatrixXd x = random_matrix(n, p, 10 + trial);
    const jm::JmSolver solver(x);
    const VectorXd x_star = random_vector(p, 20 + trial);
    const auto grid = log_spaced_grid(1e-4, 2.0 * x_star.lpNorm<Eigen::Infinity>(), 8);
    bool was_feasible = false;
    double prev_obj = std::numeric_limits<double>::infinity();
    for (double lambda_w : grid) {
      const auto result = solver.solve(x_star, lambda_w);
      if (was_feasible) REQUIRE(result.feasible);  // monotone feasibility
      if (result.feasible) {
        REQUIRE(result.objective <= prev_obj + 1e-7);  // monotone objective
        prev_obj = result.objective;
        was_feasible = true;
      }
    }
    REQUIRE(was_feasible);  // the top of the grid always admits w = 0
  }
}

TEST_CASE("jm program: scale equivariance of the solution") {
  const MatrixXd x = random_matrix(30, 5, 30);
  const jm::JmSolver solver(x);
  const VectorXd x_star = random_vector(5, 31);
  const double lambda_w = 0.3;
  const double c = 2.5;
  const auto base = solver.solve(x_star, lambda_w);
  const auto scaled = solver.solve(c * x_star, c * lambda_w);
  REQUIRE((scaled.w - c * base.w).lpNorm<Eigen::Infinity>() <
          1e-6 * (1.0 + base.w.lpNorm<Eigen::Infinity>()));
}

TEST_CASE("jm program: KKT certificates on random triples") {
  RngStream rng(99, "jm-kkt");
  for (std::uint64_t trial = 0; trial < 25; ++trial) {
    const int p = 2 + static_cast<int>(rng.next_below(6));
    const int n = p + 1 + static_cast<int>(rng.next_below(20));
    const MatrixXd x = random_matrix(n, p, 300 + trial);
    const VectorXd x_star = random_vector(p, 400 + trial);
    const double frac = 0.05 + 0.9 * rng.next_uniform();
    const double lambda_w = frac * x_star.lpNorm<Eigen::Infinity>();
    const jm::JmSolver solver(x);
    const auto result = solver.solve(x_star, lambda_w);
    REQUIRE(result.feasible);
    REQUIRE((solver.sigma() * result.w - x_star).lpNorm<Eigen::Infinity>() <= lambda_w + 1e-7);
    REQUIRE(result.kkt_residual <= 1e-6);
  }
}

TEST_CASE("select_lambda_w: singleton at ||x*||_inf and preset grids") {
  const MatrixXd x = random_matrix(10, 4, 40);
  const VectorXd x_star = random_vector(4, 41);
  const double linf = x_star.lpNorm<Eigen::Infinity>();
  const auto chosen = jm::select_lambda_w(x, x_star, {linf});
  REQUIRE(chosen.has_value());
  REQUIRE(*chosen == linf);

  // Theory preset: two candidates, the smaller feasible one wins. On a
  // full-rank design every positive lambda_w is feasible.
  const auto grid = jm::theory_lambda_w_grid(4, 10);
  REQUIRE(grid.size() == 2);
  REQUIRE(grid[0] == Catch::Approx(0.01 * grid[1]));
  const auto theory = jm::select_lambda_w(x, x_star, grid);
  REQUIRE(*theory == grid[0]);

  const auto real_grid = jm::real_data_lambda_w_grid();
  REQUIRE(real_grid.size() == 100);
  REQUIRE(real_grid.front() == Catch::Approx(1e-7));
  REQUIRE(real_grid.back() == Catch::Approx(1e2));

  // Degenerate design, grid entirely below the feasibility threshold.
  const MatrixXd thin = random_matrix(2, 6, 42);
  const VectorXd target = random_vector(6, 43);
  const auto none = jm::select_lambda_w(thin, target, {1e-6, 1e-5});
  REQUIRE_FALSE(none.has_value());
}

TEST_CASE("predict_jm: w = 0 case returns the pilot prediction exactly") {
  data::SyntheticSpec spec{40, 6, 3, data::BetaLaw::kFirstSGaussian, std::nullopt};
  const auto inst = data::generate_instance(spec, 50);
  const auto dataset = data::standardize(inst);
  const auto pilot = model::fit_lasso(dataset, 0.2);
  const VectorXd x_raw = random_vector(6, 51);
  const VectorXd x_std = dataset.standardize_vector(x_raw);
  const auto pred = jm::predict_jm(dataset, pilot, x_raw, x_std.lpNorm<Eigen::Infinity>() * 1.01);
  REQUIRE(pred.program.w.isZero(0.0));
  REQUIRE(pred.correction == 0.0);
  REQUIRE(pred.value == pred.pilot_value);
  REQUIRE(pred.value == model::predict(pilot, x_std));
}

TEST_CASE("predict_jm: OLS pilot residual orthogonality kills the correction") {
  data::SyntheticSpec spec{50, 5, 5, data::BetaLaw::kFirstSGaussian, std::nullopt};
  const auto inst = data::generate_instance(spec, 52);
  const auto dataset = data::standardize(inst);
  const auto pilot = model::fit_ols(dataset);
  const VectorXd x_raw = random_vector(5, 53);
  const auto pred = jm::predict_jm(dataset, pilot, x_raw, 0.05);
  REQUIRE(std::abs(pred.correction) <= 1e-8 * (1.0 + std::abs(pred.pilot_value)));
}

TEST_CASE("predict_jm: zero-noise instance with oracle pilot is exact") {
  const int n = 30, p = 4;
  const MatrixXd x = random_matrix(n, p, 54).array() * 1.5 + 0.3;
  VectorXd beta(p);
  beta << 1.0, -2.0, 0.5, 3.0;
  const VectorXd y = x * beta;  // no noise
  const auto dataset = data::standardize(x, y);
  model::FittedLinearModel pilot;
  pilot.coefficients = beta.cwiseProduct(dataset.column_sds);
  pilot.intercept = dataset.response_mean;
  const VectorXd x_raw = random_vector(p, 55);
  const auto pred = jm::predict_jm(dataset, pilot, x_raw, 0.1);
  REQUIRE(pred.value == Catch::Approx(x_raw.dot(beta)).margin(1e-9));
  REQUIRE(pred.correction == Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("jm_confidence_interval: degenerate and zero-width cases") {
  const MatrixXd x = random_matrix(20, 3, 60);
  jm::JmPrediction pred;
  pred.value = 1.25;
  jm::JmProgramResult program;
  program.w = VectorXd::Zero(3);

  const auto full = jm::jm_confidence_interval(pred, program, x, 1.0, 1.0);
  REQUIRE(full.lo == Catch::Approx(1.25));  // alpha = 1: z = 0
  REQUIRE(full.hi == Catch::Approx(1.25));

  const auto zero_w = jm::jm_confidence_interval(pred, program, x, 1.0, 0.05);
  REQUIRE(zero_w.hi - zero_w.lo == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(zero_w.bias_uncorrected);

  program.w = random_vector(3, 62);
  const auto widened = jm::jm_confidence_interval(pred, program, x, 1.0, 0.05, 2.0);
  const auto plain = jm::jm_confidence_interval(pred, program, x, 1.0, 0.05);
  REQUIRE(widened.hi - widened.lo ==
          Catch::Approx(plain.hi - plain.lo + 2.0 * 2.0 / std::sqrt(20.0)).margin(1e-12));
  REQUIRE_FALSE(widened.bias_uncorrected);

  REQUIRE_THROWS_AS(jm::jm_confidence_interval(pred, program, x, 1.0, 1.5), std::invalid_argument);
}

TEST_CASE("jm_confidence_interval: simulated coverage at alpha = 0.05") {
  const int replicates = 500;
  data::SyntheticSpec spec{300, 50, 5, data::BetaLaw::kFirstSGaussian, std::nullopt};
  const VectorXd beta0 = data::draw_truth(spec, 70);
  int covered = 0;
  for (int r = 0; r < replicates; ++r) {
    const auto inst = data::instantiate(spec, beta0, 70, static_cast<std::uint64_t>(r) + 1);
    const auto dataset = data::standardize(inst);
    const auto pilot =
        model::fit_lasso(dataset, estimators::lasso_theory_lambda(spec.p, spec.n, 1.0));
    const VectorXd x_raw = data::sample_test_point(&beta0, spec.p, {data::ShiftKind::kNone}, 70,
                                                   static_cast<std::uint64_t>(r) + 1);
    const auto grid = jm::theory_lambda_w_grid(spec.p, spec.n);
    const auto pred = jm::predict_jm_with_grid(dataset, pilot, x_raw, grid);
    const auto ci = jm::jm_confidence_interval(pred, pred.program, dataset.centered_design,
                                               *inst.noise_sd, 0.05);
    const double theta = x_raw.dot(beta0);
    if (theta >= ci.lo && theta <= ci.hi) ++covered;
  }
  const double coverage = static_cast<double>(covered) / replicates;
  REQUIRE(coverage >= 0.90);
}

TEST_CASE("jm program json export") {
  const MatrixXd x = random_matrix(10, 3, 80);
  const VectorXd x_star = random_vector(3, 81);
  const auto result = jm::solve_jm_program(x, x_star, 0.2);
  const auto j = jm::to_json(result);
  REQUIRE(j.at("lambda_w") == 0.2);
  REQUIRE(j.at("feasible") == result.feasible);
  REQUIRE(j.contains("objective"));
  REQUIRE(j.contains("kkt_residual"));
}
