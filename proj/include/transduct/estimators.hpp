#pragma once

// Declarative estimator configurations and the fitting pipeline shared by
// the Monte Carlo risk laboratory and the benchmark harness. An estimator
// config names a base regressor (with theory-calibrated, cross-validated or
// fixed hyperparameters) and an optional transduction wrapper (JM one-step
// correction, or OM f/q moments with cross-fitting).
//
// Fitting an estimator on a problem instance standardizes the data, fits
// whatever is test-point independent once, and returns a per-x* predictor
// on the raw scale.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "transduct/data.hpp"
#include "transduct/jm.hpp"
#include "transduct/linear_model.hpp"
#include "transduct/om.hpp"

namespace transduct::estimators {

using data::ProblemInstance;
using data::StandardizedDataset;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double lasso_theory_lambda(Eigen::Index p, Eigen::Index n, double sigma = 1.0) {
  return 4.0 * sigma * std::sqrt(std::log(static_cast<double>(p)) / static_cast<double>(n));
}

enum class BaseKind { kOracle, kConstantZero, kOls, kRidge, kLasso, kElastic };
enum class HyperMode { kTheory, kCv, kFixed };
enum class Transduction { kNone, kJm, kOmF, kOmQ };
enum class LambdaWMode { kTheoryGrid, kRealDataGrid, kFixed };
enum class GFamilyKind { kSameAsBase, kLassoCv, kRidgeCv, kElasticCv, kZero };

struct EstimatorConfig {
  std::string name;
  BaseKind base = BaseKind::kLasso;
  HyperMode hyper = HyperMode::kTheory;
  double fixed_lambda = 0.0;
  double l1_ratio = 1.0;
  bool synthetic_ridge_grid = true;  // which LOO ridge CV grid to use

  Transduction transduction = Transduction::kNone;

  // JM settings
  LambdaWMode lambda_w_mode = LambdaWMode::kTheoryGrid;
  double fixed_lambda_w = 0.0;

  // OM settings
  int k_folds = 5;
  double tau = 0.0;
  std::vector<GFamilyKind> g_candidates{GFamilyKind::kSameAsBase};

  std::uint64_t fold_seed = 17;  // combined with the instance seed
};

struct FittedEstimator {
  std::function<double(const VectorXd& x_raw)> predict;
};

namespace detail {

inline model::FittedLinearModel fit_base(const EstimatorConfig& cfg,
                                         const StandardizedDataset& std_data,
                                         const ProblemInstance& inst) {
  const Eigen::Index n = std_data.n();
  const Eigen::Index p = std_data.p();
  const double sigma = inst.noise_sd.value_or(1.0);
  switch (cfg.base) {
    case BaseKind::kOls:
      return model::fit_ols(std_data);
    case BaseKind::kRidge:
      switch (cfg.hyper) {
        case HyperMode::kFixed:
          return model::fit_ridge(std_data, cfg.fixed_lambda);
        case HyperMode::kTheory: {
          if (!inst.truth) throw std::invalid_argument("theory ridge needs a known beta0");
          const double snr = inst.truth->squaredNorm() / (sigma * sigma);
          if (!(snr > 0.0)) throw std::invalid_argument("theory ridge needs nonzero beta0");
          return model::fit_ridge(std_data, static_cast<double>(p) / snr);
        }
        case HyperMode::kCv: {
          const auto plan = cfg.synthetic_ridge_grid ? model::ridge_cv_plan_synthetic()
                                                     : model::ridge_cv_plan_real();
          return model::cross_validate(std_data, model::RegularizerFamily::kRidge, plan,
                                       inst.seed ^ cfg.fold_seed);
        }
      }
      break;
    case BaseKind::kLasso:
      switch (cfg.hyper) {
        case HyperMode::kFixed:
          return model::fit_lasso(std_data, cfg.fixed_lambda);
        case HyperMode::kTheory:
          return model::fit_lasso(std_data, lasso_theory_lambda(p, n, sigma));
        case HyperMode::kCv:
          return model::cross_validate(std_data, model::RegularizerFamily::kLasso,
                                       model::lasso_cv_plan(), inst.seed ^ cfg.fold_seed);
      }
      break;
    case BaseKind::kElastic:
      switch (cfg.hyper) {
        case HyperMode::kFixed:
          return model::fit_elastic(std_data, cfg.fixed_lambda, cfg.l1_ratio);
        case HyperMode::kTheory:
          return model::fit_elastic(std_data, lasso_theory_lambda(p, n, sigma), cfg.l1_ratio);
        case HyperMode::kCv:
          return model::cross_validate(std_data, model::RegularizerFamily::kElastic,
                                       model::elastic_cv_plan(), inst.seed ^ cfg.fold_seed);
      }
      break;
    default:
      break;
  }
  throw std::logic_error("fit_base: unsupported configuration");
}

inline om::FirstStageFamily pilot_family_for(const EstimatorConfig& cfg,
                                             const StandardizedDataset& std_data,
                                             const ProblemInstance& inst) {
  const Eigen::Index n = std_data.n();
  const Eigen::Index p = std_data.p();
  const double sigma = inst.noise_sd.value_or(1.0);
  switch (cfg.base) {
    case BaseKind::kOls:
      return om::FirstStageFamily::ols();
    case BaseKind::kRidge:
      if (cfg.hyper == HyperMode::kFixed) return om::FirstStageFamily::ridge_fixed(cfg.fixed_lambda);
      if (cfg.hyper == HyperMode::kTheory) {
        if (!inst.truth) throw std::invalid_argument("theory ridge needs a known beta0");
        const double snr = inst.truth->squaredNorm() / (sigma * sigma);
        return om::FirstStageFamily::ridge_fixed(static_cast<double>(p) / snr);
      }
      return om::FirstStageFamily::ridge_cv(cfg.synthetic_ridge_grid);
    case BaseKind::kLasso:
      if (cfg.hyper == HyperMode::kFixed) return om::FirstStageFamily::lasso_fixed(cfg.fixed_lambda);
      if (cfg.hyper == HyperMode::kTheory) return om::FirstStageFamily::lasso_theory(p, n, sigma);
      return om::FirstStageFamily::lasso_cv();
    case BaseKind::kElastic: {
      if (cfg.hyper == HyperMode::kCv) return om::FirstStageFamily::elastic_cv();
      om::FirstStageFamily fam;
      fam.kind = om::FirstStageFamily::Kind::kElastic;
      fam.lambda = cfg.hyper == HyperMode::kFixed ? cfg.fixed_lambda
                                                  : lasso_theory_lambda(p, n, sigma);
      fam.l1_ratio = cfg.l1_ratio;
      return fam;
    }
    default:
      throw std::invalid_argument("OM transduction needs a linear base regressor");
  }
}

inline om::FirstStageFamily g_family_for(GFamilyKind kind, const EstimatorConfig& cfg,
                                         const StandardizedDataset& std_data,
                                         const ProblemInstance& inst) {
  switch (kind) {
    case GFamilyKind::kSameAsBase: return pilot_family_for(cfg, std_data, inst);
    case GFamilyKind::kLassoCv: return om::FirstStageFamily::lasso_cv();
    case GFamilyKind::kRidgeCv: return om::FirstStageFamily::ridge_cv(cfg.synthetic_ridge_grid);
    case GFamilyKind::kElasticCv: return om::FirstStageFamily::elastic_cv();
    case GFamilyKind::kZero: return om::FirstStageFamily::zero();
  }
  throw std::logic_error("g_family_for: unreachable");
}

}  // namespace detail

// Fits the test-point-independent parts of the configured estimator and
// returns a raw-scale per-x* predictor.
inline FittedEstimator fit_estimator(const EstimatorConfig& cfg, const ProblemInstance& inst) {
  inst.validate();
  FittedEstimator out;

  if (cfg.base == BaseKind::kOracle) {
    if (!inst.truth) throw std::invalid_argument("oracle estimator needs beta0");
    const VectorXd beta = *inst.truth;
    out.predict = [beta](const VectorXd& x_raw) { return x_raw.dot(beta); };
    return out;
  }
  if (cfg.base == BaseKind::kConstantZero) {
    out.predict = [](const VectorXd&) { return 0.0; };
    return out;
  }

  auto std_data = std::make_shared<StandardizedDataset>(data::standardize(inst));
  auto pilot = std::make_shared<model::FittedLinearModel>(detail::fit_base(cfg, *std_data, inst));

  switch (cfg.transduction) {
    case Transduction::kNone: {
      out.predict = [std_data, pilot](const VectorXd& x_raw) {
        return model::predict_raw(*pilot, *std_data, x_raw);
      };
      return out;
    }
    case Transduction::kJm: {
      auto solver = std::make_shared<jm::JmSolver>(std_data->centered_design);
      // X'(y - X beta)/n is x*-independent; the correction is w' times it.
      auto moment = std::make_shared<VectorXd>(
          std_data->centered_design.transpose() *
          (std_data->centered_responses - std_data->centered_design * pilot->coefficients) /
          static_cast<double>(std_data->n()));
      const EstimatorConfig config = cfg;
      out.predict = [std_data, pilot, solver, moment, config](const VectorXd& x_raw) {
        const VectorXd x_std = std_data->standardize_vector(x_raw);
        const double pilot_value = model::predict(*pilot, x_std);
        std::optional<double> lambda_w;
        switch (config.lambda_w_mode) {
          case LambdaWMode::kFixed:
            lambda_w = config.fixed_lambda_w;
            break;
          case LambdaWMode::kTheoryGrid:
            lambda_w = jm::select_lambda_w(*solver, x_std,
                                           jm::theory_lambda_w_grid(std_data->p(), std_data->n()));
            break;
          case LambdaWMode::kRealDataGrid:
            lambda_w = jm::select_lambda_w(*solver, x_std, jm::real_data_lambda_w_grid());
            break;
        }
        if (!lambda_w) return pilot_value;  // all programs infeasible
        const jm::JmProgramResult program = solver->solve(x_std, *lambda_w);
        return pilot_value + program.w.dot(*moment);
      };
      return out;
    }
    case Transduction::kOmF:
    case Transduction::kOmQ: {
      const om::Moment moment_kind =
          cfg.transduction == Transduction::kOmF ? om::Moment::kF : om::Moment::kQ;
      const EstimatorConfig config = cfg;
      const ProblemInstance inst_copy = inst;  // families may need truth/noise metadata
      const std::uint64_t fold_seed = inst.seed ^ cfg.fold_seed;

      // For f moments the per-fold pilot regressions do not depend on x*,
      // so fit them once against a fixed fold partition.
      auto folds = std::make_shared<std::vector<std::vector<Eigen::Index>>>(
          model::make_folds(std_data->n(), cfg.k_folds, fold_seed, "om-folds"));
      auto fold_of = std::make_shared<std::vector<int>>(std_data->n(), -1);
      for (std::size_t k = 0; k < folds->size(); ++k)
        for (Eigen::Index row : (*folds)[k]) (*fold_of)[static_cast<std::size_t>(row)] = static_cast<int>(k);

      auto fold_betas = std::make_shared<std::vector<VectorXd>>();
      if (moment_kind == om::Moment::kF) {
        const om::FirstStageFamily pilot_family =
            detail::pilot_family_for(config, *std_data, inst_copy);
        fold_betas->resize(folds->size());
        for (int k = 0; k < cfg.k_folds; ++k) {
          auto [xs, ys] = om::detail::rows_excluding(
              std_data->centered_design, std_data->centered_responses, *fold_of, k);
          (*fold_betas)[static_cast<std::size_t>(k)] =
              om::fit_family_xy(pilot_family, xs, ys, fold_seed + static_cast<std::uint64_t>(k)).coef;
        }
      }

      out.predict = [std_data, pilot, config, inst_copy, moment_kind, folds, fold_of, fold_betas,
                     fold_seed](const VectorXd& x_raw) {
        const VectorXd x_std = std_data->standardize_vector(x_raw);
        if (!(x_std.norm() > 0.0)) return model::predict(*pilot, x_std);

        om::OmDecomposition dec;
        dec.reparam = om::build_reparam(x_std);
        dec.treatment = std_data->centered_design * x_std / x_std.squaredNorm();
        dec.controls = std_data->centered_design * dec.reparam.basis_r.transpose() / dec.reparam.norm;
        dec.folds = *folds;
        dec.fold_of = *fold_of;

        om::FirstStageFits fits;
        fits.moment = moment_kind;
        fits.f_or_q.resize(folds->size());
        if (moment_kind == om::Moment::kF) {
          for (std::size_t k = 0; k < folds->size(); ++k) {
            const VectorXd rotated = dec.reparam.apply_u((*fold_betas)[k]);
            fits.f_or_q[k] =
                dec.reparam.p() > 1 ? rotated.tail(dec.reparam.p() - 1).eval() : VectorXd();
          }
        } else {
          const om::FirstStageFamily q_family =
              detail::pilot_family_for(config, *std_data, inst_copy);
          for (std::size_t k = 0; k < folds->size(); ++k) {
            auto [zs, ys] = om::detail::rows_excluding(
                dec.controls, std_data->centered_responses, *fold_of, static_cast<int>(k));
            fits.f_or_q[k] = om::fit_family_xy(q_family, zs, ys, fold_seed + k).coef;
          }
        }

        std::vector<om::FirstStageFamily> g_families;
        for (GFamilyKind kind : config.g_candidates)
          g_families.push_back(detail::g_family_for(kind, config, *std_data, inst_copy));
        if (g_families.empty()) g_families.push_back(om::FirstStageFamily::zero());

        if (g_families.size() == 1) {
          fits.g_method = g_families.front().g_method();
          fits.g_models.resize(folds->size());
          for (std::size_t k = 0; k < folds->size(); ++k) {
            auto [zs, ts] = om::detail::rows_excluding(dec.controls, dec.treatment, *fold_of,
                                                       static_cast<int>(k));
            om::ZModel g = om::fit_family_xy(g_families.front(), zs, ts, fold_seed + k);
            g.trained_excluding = static_cast<int>(k);
            fits.g_models[k] = std::move(g);
          }
        } else {
          om::GSelection sel =
              om::select_g_method(dec, *std_data, g_families, moment_kind, fold_seed);
          fits.g_method = g_families[sel.index].g_method();
          fits.g_models = std::move(sel.fitted[sel.index]);
        }

        const om::OmPrediction pred =
            om::predict_om(dec, fits, *std_data, *pilot, moment_kind, config.tau);
        return pred.value;
      };
      return out;
    }
  }
  throw std::logic_error("fit_estimator: unreachable");
}

// ---------------------------------------------------------------------------
// Common configurations

inline EstimatorConfig oracle_config() {
  EstimatorConfig cfg;
  cfg.name = "oracle";
  cfg.base = BaseKind::kOracle;
  return cfg;
}

inline EstimatorConfig constant_zero_config() {
  EstimatorConfig cfg;
  cfg.name = "zero";
  cfg.base = BaseKind::kConstantZero;
  return cfg;
}

inline EstimatorConfig lasso_theory_config() {
  EstimatorConfig cfg;
  cfg.name = "lasso_theory";
  cfg.base = BaseKind::kLasso;
  cfg.hyper = HyperMode::kTheory;
  return cfg;
}

inline EstimatorConfig ridge_opt_config() {
  EstimatorConfig cfg;
  cfg.name = "ridge_opt";
  cfg.base = BaseKind::kRidge;
  cfg.hyper = HyperMode::kTheory;
  return cfg;
}

inline EstimatorConfig jm_lasso_theory_config() {
  EstimatorConfig cfg = lasso_theory_config();
  cfg.name = "jm_lasso_theory";
  cfg.transduction = Transduction::kJm;
  cfg.lambda_w_mode = LambdaWMode::kTheoryGrid;
  return cfg;
}

inline EstimatorConfig om_f_lasso_theory_config(int k_folds = 5) {
  EstimatorConfig cfg = lasso_theory_config();
  cfg.name = "om_f_lasso_theory";
  cfg.transduction = Transduction::kOmF;
  cfg.k_folds = k_folds;
  return cfg;
}

inline EstimatorConfig om_f_ridge_opt_config(int k_folds = 5) {
  EstimatorConfig cfg = ridge_opt_config();
  cfg.name = "om_f_ridge_opt";
  cfg.transduction = Transduction::kOmF;
  cfg.k_folds = k_folds;
  return cfg;
}

}  // namespace transduct::estimators
