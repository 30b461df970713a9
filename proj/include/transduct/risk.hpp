#pragma once

// Monte Carlo estimation of x*-prediction risk E[(yhat - <x*, beta0>)^2]
// for any configured predictor, together with closed-form evaluation of the
// ridge and lasso bias lower bounds and the trimmed-norm utilities they use.
// Risk is always measured against <x*, beta0>, never against a noisy y*.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "transduct/data.hpp"
#include "transduct/estimators.hpp"
#include "transduct/stats.hpp"

namespace transduct::risk {

using data::ProblemInstance;
using data::ShiftSpec;
using data::SyntheticSpec;
using Eigen::VectorXd;

// Sum of the magnitudes of the s largest-magnitude entries.
inline double trimmed_norm(const VectorXd& x, Eigen::Index s) {
  if (s < 0 || s > x.size()) throw std::invalid_argument("trimmed_norm: s out of range");
  if (s == 0) return 0.0;
  std::vector<double> mag(static_cast<std::size_t>(x.size()));
  for (Eigen::Index j = 0; j < x.size(); ++j) mag[static_cast<std::size_t>(j)] = std::abs(x[j]);
  std::nth_element(mag.begin(), mag.begin() + (x.size() - s), mag.end());
  double total = 0.0;
  for (std::size_t j = static_cast<std::size_t>(x.size() - s); j < mag.size(); ++j) total += mag[j];
  return total;
}

// Dual of the trimmed norm: max(||x||_1 / s, ||x||_inf).
inline double trimmed_dual_norm(const VectorXd& x, Eigen::Index s) {
  if (s < 1 || s > x.size()) throw std::invalid_argument("trimmed_dual_norm: s out of range");
  return std::max(x.lpNorm<1>() / static_cast<double>(s), x.lpNorm<Eigen::Infinity>());
}

enum class BoundKind { kRidgeThm1, kRidgeCor1, kLassoLowerShape, kLassoUpperShape };

inline std::string to_string(BoundKind kind) {
  switch (kind) {
    case BoundKind::kRidgeThm1: return "ridge_thm1";
    case BoundKind::kRidgeCor1: return "ridge_cor1";
    case BoundKind::kLassoLowerShape: return "lasso_lower_shape";
    case BoundKind::kLassoUpperShape: return "lasso_upper_shape";
  }
  return "?";
}

struct BoundValue {
  BoundKind kind = BoundKind::kRidgeThm1;
  double value = 0.0;
  bool in_regime = true;  // false flags evaluation outside the stated regime
  nlohmann::json inputs;
};

inline double cosine(const VectorXd& a, const VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

// Ridge bias lower bound at regularization lambda:
//   (||b0||^2/s^2) (n/4) (l/n / (l/n + 7))^2 ||x*||^2 (s^2/n) cos^2(x*, b0).
// Stated for Gaussian isotropic design with n >= p >= 20; evaluation outside
// that regime is allowed but flagged.
inline BoundValue ridge_lower_bound(const VectorXd& beta0, double sigma_eps, Eigen::Index n,
                                    double lambda, const VectorXd& x_star) {
  if (!(sigma_eps > 0.0)) throw std::invalid_argument("ridge_lower_bound: sigma_eps must be positive");
  if (lambda < 0.0) throw std::invalid_argument("ridge_lower_bound: lambda must be nonnegative");
  const Eigen::Index p = beta0.size();
  const double nn = static_cast<double>(n);
  const double shrink = (lambda / nn) / (lambda / nn + 7.0);
  const double cos = cosine(x_star, beta0);
  BoundValue bound;
  bound.kind = BoundKind::kRidgeThm1;
  bound.value = beta0.squaredNorm() / (sigma_eps * sigma_eps) * (nn / 4.0) * shrink * shrink *
                x_star.squaredNorm() * (sigma_eps * sigma_eps / nn) * cos * cos;
  bound.in_regime = n >= p && p >= 20;
  bound.inputs = {{"n", n}, {"p", p}, {"lambda", lambda}, {"sigma_eps", sigma_eps},
                  {"cos", cos}};
  return bound;
}

// lambda* = p / SNR, the minimizer of both the expected l2 estimation error
// and the training-population prediction risk.
inline double optimal_ridge_lambda(Eigen::Index p, double snr) {
  if (!(snr > 0.0)) throw std::invalid_argument("optimal_ridge_lambda: snr must be positive");
  return static_cast<double>(p) / snr;
}

// The displayed bound at lambda*: (p^2/(n snr)) ||x*||^2 (s^2/n) cos^2 / 784.
inline BoundValue ridge_optimal_lower_bound(const VectorXd& beta0, double sigma_eps,
                                            Eigen::Index n, const VectorXd& x_star) {
  if (!(sigma_eps > 0.0))
    throw std::invalid_argument("ridge_optimal_lower_bound: sigma_eps must be positive");
  const Eigen::Index p = beta0.size();
  const double snr = beta0.squaredNorm() / (sigma_eps * sigma_eps);
  if (!(snr > 0.0)) throw std::invalid_argument("ridge_optimal_lower_bound: beta0 must be nonzero");
  const double nn = static_cast<double>(n);
  const double cos = cosine(x_star, beta0);
  BoundValue bound;
  bound.kind = BoundKind::kRidgeCor1;
  bound.value = static_cast<double>(p) * static_cast<double>(p) / (nn * snr) *
                x_star.squaredNorm() * (sigma_eps * sigma_eps / nn) * cos * cos / 784.0;
  bound.in_regime =
      n >= p && p >= 20 && 6.0 * snr * nn >= static_cast<double>(p) * (1.0 - 1e-9);
  bound.inputs = {{"n", n}, {"p", p}, {"snr", snr}, {"sigma_eps", sigma_eps}, {"cos", cos}};
  return bound;
}

// Shared shape lambda^2 ||x*||_(s)^2 of the lasso lower and upper bounds;
// the universal constants c2, c3 are unknown and never asserted.
inline std::pair<BoundValue, BoundValue> lasso_lower_bound_shape(const VectorXd& x_star,
                                                                 Eigen::Index s, double lambda) {
  if (s < 1) throw std::invalid_argument("lasso_lower_bound_shape: s must be >= 1");
  if (!(lambda > 0.0)) throw std::invalid_argument("lasso_lower_bound_shape: lambda must be positive");
  const double tn = trimmed_norm(x_star, s);
  const double shape = lambda * lambda * tn * tn;
  nlohmann::json inputs = {{"s", s}, {"lambda", lambda}, {"trimmed_norm", tn}};
  return {{BoundKind::kLassoLowerShape, shape, true, inputs},
          {BoundKind::kLassoUpperShape, shape, true, inputs}};
}

// ---------------------------------------------------------------------------
// Monte Carlo risk

enum class XStarMode { kFixedAcrossReplicates, kFreshPerReplicate };

struct RiskReport {
  std::string estimator_name;
  int replicates = 0;
  double risk_mean = 0.0;
  double risk_se = 0.0;
  std::uint64_t seed = 0;
  int failures = 0;
  bool valid = true;  // false when more than 1% of replicates failed
  // context carried for table export
  int n = 0;
  int p = 0;
  int sparsity = 0;
  std::string shift_name;
};

inline std::string to_string(data::ShiftKind kind) {
  switch (kind) {
    case data::ShiftKind::kNone: return "none";
    case data::ShiftKind::kMeanShiftTowardBeta: return "mean_shift";
    case data::ShiftKind::kCovShiftRankOne: return "cov_shift_rank_one";
    case data::ShiftKind::kCovShiftOnSupport: return "cov_shift_on_support";
  }
  return "?";
}

// Draws fresh (X, eps) per replicate around a fixed beta0, runs the
// configured predictor at x* (fixed, or fresh per replicate) and averages
// (yhat - <x*, beta0>)^2. Replicates use split seed streams and the
// aggregation is a pairwise sum, so results are reproducible bit-for-bit
// for a given seed regardless of `jobs`.
inline RiskReport monte_carlo_risk(const SyntheticSpec& spec, const ShiftSpec& shift,
                                   const estimators::EstimatorConfig& predictor,
                                   XStarMode x_star_mode, int replicates, std::uint64_t seed,
                                   int jobs = 1) {
  if (replicates < 2) throw std::invalid_argument("monte_carlo_risk: need at least 2 replicates");
  spec.validate();
  const VectorXd beta0 = data::draw_truth(spec, seed);
  VectorXd x_fixed;
  if (x_star_mode == XStarMode::kFixedAcrossReplicates)
    x_fixed = data::sample_test_point(&beta0, spec.p, shift, seed, 0);

  std::vector<double> sq_errors(static_cast<std::size_t>(replicates), 0.0);
  std::vector<char> failed(static_cast<std::size_t>(replicates), 0);

  auto run_range = [&](int begin, int end) {
    for (int r = begin; r < end; ++r) {
      const std::uint64_t stream = static_cast<std::uint64_t>(r) + 1;
      try {
        const ProblemInstance inst = data::instantiate(spec, beta0, seed, stream);
        const VectorXd x_star = x_star_mode == XStarMode::kFixedAcrossReplicates
                                    ? x_fixed
                                    : data::sample_test_point(&beta0, spec.p, shift, seed, stream);
        const auto fitted = estimators::fit_estimator(predictor, inst);
        const double err = fitted.predict(x_star) - x_star.dot(beta0);
        sq_errors[static_cast<std::size_t>(r)] = err * err;
      } catch (const std::exception&) {
        failed[static_cast<std::size_t>(r)] = 1;
      }
    }
  };

  if (jobs <= 1) {
    run_range(0, replicates);
  } else {
    std::vector<std::future<void>> tasks;
    const int chunk = (replicates + jobs - 1) / jobs;
    for (int begin = 0; begin < replicates; begin += chunk)
      tasks.push_back(std::async(std::launch::async, run_range, begin,
                                 std::min(begin + chunk, replicates)));
    for (auto& task : tasks) task.get();
  }

  std::vector<double> kept;
  kept.reserve(sq_errors.size());
  int failures = 0;
  for (std::size_t r = 0; r < sq_errors.size(); ++r) {
    if (failed[r])
      ++failures;
    else
      kept.push_back(sq_errors[r]);
  }

  RiskReport report;
  report.estimator_name = predictor.name;
  report.replicates = replicates;
  report.seed = seed;
  report.failures = failures;
  report.valid = failures * 100 <= replicates;
  report.n = spec.n;
  report.p = spec.p;
  report.sparsity = spec.sparsity;
  report.shift_name = to_string(shift.kind);
  if (kept.size() >= 2) {
    const MeanSe ms = mean_and_se(kept);
    report.risk_mean = ms.mean;
    report.risk_se = ms.se;
  } else if (kept.size() == 1) {
    report.risk_mean = kept.front();
    report.risk_se = 0.0;
  } else {
    report.valid = false;
  }
  return report;
}

inline std::string risk_report_csv_header() {
  return "estimator,n,p,s,shift,risk_mean,risk_se,replicates,seed";
}

inline std::string to_csv_row(const RiskReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << report.estimator_name << ',' << report.n << ',' << report.p << ',' << report.sparsity
      << ',' << report.shift_name << ',' << report.risk_mean << ',' << report.risk_se << ','
      << report.replicates << ',' << report.seed;
  return out.str();
}

inline nlohmann::json to_json(const RiskReport& report) {
  return {{"estimator", report.estimator_name},
          {"n", report.n},
          {"p", report.p},
          {"s", report.sparsity},
          {"shift", report.shift_name},
          {"risk_mean", report.risk_mean},
          {"risk_se", report.risk_se},
          {"replicates", report.replicates},
          {"seed", report.seed},
          {"failures", report.failures},
          {"valid", report.valid}};
}

inline nlohmann::json to_json(const BoundValue& bound) {
  return {{"kind", to_string(bound.kind)},
          {"value", bound.value},
          {"in_regime", bound.in_regime},
          {"inputs", bound.inputs}};
}

}  // namespace transduct::risk
