#pragma once

// Orthogonal-moment transductive estimators.
//
// The test direction x* defines the rotation U = ||x*|| [u1; R] with
// u1 = x*/||x*|| and R an orthonormal basis of u1-perp, so that the first
// coordinate of U beta is <x*, beta>. Since U/||x*|| is orthogonal,
// (U^{-1})' = U/||x*||^2, and the reparametrized data is
//
//   t_i = <x*, x_i>/||x*||^2,   z_i = R x_i / ||x*||,
//
// giving y_i = theta0 t_i + z_i' f0 + eps_i with theta0 = <x*, beta0>.
// Two Neyman-orthogonal moment families identify theta0: the f moments use
// a rotated estimate of beta0 for the control regression; the q moments
// regress y directly on z. Both use an auxiliary regression g of t on z and
// K-fold cross-fitting throughout.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "transduct/data.hpp"
#include "transduct/linear_model.hpp"
#include "transduct/rng.hpp"

namespace transduct::om {

using data::StandardizedDataset;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using model::FittedLinearModel;

enum class Moment { kF, kQ };

inline std::string to_string(Moment moment) { return moment == Moment::kF ? "f" : "q"; }

struct Reparam {
  VectorXd x_star;   // direction the rotation was built for
  VectorXd u1;       // x*/||x*||
  double norm = 0.0; // ||x*||_2
  MatrixXd basis_r;  // (p-1) x p, orthonormal rows spanning u1-perp
  VectorXd householder_v;  // reflector vector behind basis_r (empty for p = 1)

  Eigen::Index p() const { return x_star.size(); }

  // U beta = ||x*|| [u1' beta; R beta]; first coordinate is <x*, beta>.
  VectorXd apply_u(const VectorXd& beta) const {
    if (beta.size() != p()) throw std::invalid_argument("Reparam: beta dimension mismatch");
    VectorXd out(p());
    out[0] = norm * u1.dot(beta);
    if (p() > 1) out.tail(p() - 1) = norm * (basis_r * beta);
    return out;
  }

  // X R'/||x*|| computed through the reflector as a rank-one update,
  // O(np) instead of the O(n p^2) explicit product.
  MatrixXd controls_of(const MatrixXd& x) const {
    if (x.cols() != p()) throw std::invalid_argument("Reparam: design dimension mismatch");
    if (p() == 1) return MatrixXd(x.rows(), 0);
    const double factor = 2.0 / householder_v.squaredNorm();
    const VectorXd xv = x * householder_v;
    MatrixXd reflected = x - factor * xv * householder_v.transpose();
    return reflected.rightCols(p() - 1) / norm;
  }
};

// Deterministic construction of R from the Householder reflection carrying
// e1 to +/- u1: the reflector's remaining columns are an orthonormal basis
// of the complement. Avoids the eigendecomposition of I - u1 u1', whose
// column order is arbitrary.
inline Reparam build_reparam(const VectorXd& x_star) {
  const double norm = x_star.norm();
  if (!(norm > 0.0)) throw std::invalid_argument("build_reparam: x_star must be nonzero");
  Reparam rep;
  rep.x_star = x_star;
  rep.norm = norm;
  rep.u1 = x_star / norm;
  const Eigen::Index p = x_star.size();
  rep.basis_r.resize(p - 1, p);
  if (p == 1) return rep;

  const double sign = rep.u1[0] >= 0.0 ? 1.0 : -1.0;
  VectorXd v = rep.u1;
  v[0] += sign;  // H = I - 2 v v'/v'v maps e1 to -sign * u1
  const double vv = v.squaredNorm();
  for (Eigen::Index k = 1; k < p; ++k) {
    // Row k-1 of R is column k of H.
    const double factor = 2.0 * v[k] / vv;
    for (Eigen::Index j = 0; j < p; ++j)
      rep.basis_r(k - 1, j) = (j == k ? 1.0 : 0.0) - factor * v[j];
  }
  rep.householder_v = std::move(v);
  return rep;
}

struct OmDecomposition {
  Reparam reparam;
  VectorXd treatment;  // t, length n
  MatrixXd controls;   // z, n x (p-1)
  std::vector<std::vector<Eigen::Index>> folds;
  std::vector<int> fold_of;  // row -> fold index
  std::optional<double> theta_true;

  Eigen::Index n() const { return treatment.size(); }
  int k_folds() const { return static_cast<int>(folds.size()); }
};

inline OmDecomposition decompose(const StandardizedDataset& dataset, const Reparam& reparam,
                                 int k_folds, std::uint64_t seed) {
  if (reparam.p() != dataset.p()) throw std::invalid_argument("decompose: dimension mismatch");
  const Eigen::Index n = dataset.n();
  if (k_folds < 2 || k_folds > n) throw std::invalid_argument("decompose: need 2 <= k_folds <= n");
  OmDecomposition dec;
  dec.reparam = reparam;
  dec.treatment = dataset.centered_design * reparam.x_star / (reparam.norm * reparam.norm);
  dec.controls = dataset.centered_design * reparam.basis_r.transpose() / reparam.norm;
  dec.folds = model::make_folds(n, k_folds, seed, "om-folds");
  dec.fold_of.assign(static_cast<std::size_t>(n), -1);
  for (std::size_t k = 0; k < dec.folds.size(); ++k)
    for (Eigen::Index row : dec.folds[k]) dec.fold_of[static_cast<std::size_t>(row)] = static_cast<int>(k);
  return dec;
}

// ---------------------------------------------------------------------------
// First-stage regression families

enum class GMethod { kLassoCv, kRidgeCv, kElasticCv, kZero, kCustom };

inline std::string to_string(GMethod method) {
  switch (method) {
    case GMethod::kLassoCv: return "lasso_cv";
    case GMethod::kRidgeCv: return "ridge_cv";
    case GMethod::kElasticCv: return "elastic_cv";
    case GMethod::kZero: return "zero";
    case GMethod::kCustom: return "custom";
  }
  return "?";
}

// A fitted regressor of some target on control rows. Linear fits keep their
// coefficients; anything else satisfies the predict contract via `fn`.
struct ZModel {
  VectorXd coef;
  std::function<double(const Eigen::Ref<const Eigen::RowVectorXd>&)> fn;
  int trained_excluding = -1;  // fold whose rows this model never saw

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    if (fn) return fn(row);
    if (coef.size() == 0) return 0.0;
    return row * coef;
  }
};

using CustomFit =
    std::function<ZModel(const Eigen::Ref<const MatrixXd>&, const Eigen::Ref<const VectorXd>&)>;

// Declarative first-stage configuration: a linear family with a fixed
// penalty or a CV plan, the zero baseline, or a user-supplied fit.
struct FirstStageFamily {
  enum class Kind { kOls, kRidge, kLasso, kElastic, kZero, kCustom };
  Kind kind = Kind::kLasso;
  std::optional<double> lambda;           // fixed-penalty mode
  double l1_ratio = 1.0;                  // elastic only
  std::optional<model::CvPlan> cv_plan;   // CV mode
  CustomFit custom_fit;                   // kCustom only

  static FirstStageFamily ols() { return {Kind::kOls, std::nullopt, 1.0, std::nullopt, nullptr}; }
  static FirstStageFamily zero() { return {Kind::kZero, std::nullopt, 1.0, std::nullopt, nullptr}; }
  static FirstStageFamily ridge_fixed(double lambda) {
    return {Kind::kRidge, lambda, 1.0, std::nullopt, nullptr};
  }
  static FirstStageFamily lasso_fixed(double lambda) {
    return {Kind::kLasso, lambda, 1.0, std::nullopt, nullptr};
  }
  static FirstStageFamily lasso_theory(Eigen::Index p, Eigen::Index n, double sigma = 1.0) {
    return lasso_fixed(4.0 * sigma *
                       std::sqrt(std::log(static_cast<double>(p)) / static_cast<double>(n)));
  }
  static FirstStageFamily lasso_cv() {
    return {Kind::kLasso, std::nullopt, 1.0, model::lasso_cv_plan(), nullptr};
  }
  static FirstStageFamily ridge_cv(bool synthetic_grid = false) {
    return {Kind::kRidge, std::nullopt, 1.0,
            synthetic_grid ? model::ridge_cv_plan_synthetic() : model::ridge_cv_plan_real(), nullptr};
  }
  static FirstStageFamily elastic_cv() {
    return {Kind::kElastic, std::nullopt, 1.0, model::elastic_cv_plan(), nullptr};
  }
  static FirstStageFamily custom(CustomFit fit) {
    FirstStageFamily fam;
    fam.kind = Kind::kCustom;
    fam.custom_fit = std::move(fit);
    return fam;
  }

  GMethod g_method() const {
    switch (kind) {
      case Kind::kLasso: return GMethod::kLassoCv;
      case Kind::kRidge: return GMethod::kRidgeCv;
      case Kind::kElastic: return GMethod::kElasticCv;
      case Kind::kZero: return GMethod::kZero;
      default: return GMethod::kCustom;
    }
  }
};

inline ZModel fit_family_xy(const FirstStageFamily& family, const Eigen::Ref<const MatrixXd>& x,
                            const Eigen::Ref<const VectorXd>& y, std::uint64_t seed) {
  ZModel zm;
  if (x.cols() == 0) return zm;  // p = 1: no controls, predict 0
  switch (family.kind) {
    case FirstStageFamily::Kind::kZero:
      zm.coef = VectorXd::Zero(x.cols());
      return zm;
    case FirstStageFamily::Kind::kCustom:
      if (!family.custom_fit) throw std::invalid_argument("FirstStageFamily: missing custom fit");
      return family.custom_fit(x, y);
    case FirstStageFamily::Kind::kOls:
      zm.coef = model::fit_ols_xy(x, y).coefficients;
      return zm;
    case FirstStageFamily::Kind::kRidge:
      if (family.cv_plan) {
        zm.coef = model::cross_validate_xy(x, y, model::RegularizerFamily::kRidge,
                                           *family.cv_plan, seed).coefficients;
      } else if (family.lambda) {
        zm.coef = model::fit_ridge_xy(x, y, *family.lambda).coefficients;
      } else {
        throw std::invalid_argument("FirstStageFamily: ridge needs lambda or cv_plan");
      }
      return zm;
    case FirstStageFamily::Kind::kLasso:
      if (family.cv_plan) {
        zm.coef = model::cross_validate_xy(x, y, model::RegularizerFamily::kLasso,
                                           *family.cv_plan, seed).coefficients;
      } else if (family.lambda) {
        zm.coef = model::fit_lasso_xy(x, y, *family.lambda).coefficients;
      } else {
        throw std::invalid_argument("FirstStageFamily: lasso needs lambda or cv_plan");
      }
      return zm;
    case FirstStageFamily::Kind::kElastic:
      if (family.cv_plan) {
        zm.coef = model::cross_validate_xy(x, y, model::RegularizerFamily::kElastic,
                                           *family.cv_plan, seed).coefficients;
      } else if (family.lambda) {
        zm.coef = model::fit_elastic_xy(x, y, *family.lambda, family.l1_ratio).coefficients;
      } else {
        throw std::invalid_argument("FirstStageFamily: elastic needs lambda or cv_plan");
      }
      return zm;
  }
  throw std::logic_error("fit_family_xy: unreachable");
}

struct FirstStageFits {
  Moment moment = Moment::kF;
  std::vector<VectorXd> f_or_q;      // per fold: f-hat (F) or q-hat (Q), length p-1
  std::vector<ZModel> g_models;      // per fold
  std::vector<VectorXd> pilot_beta;  // per-fold beta-hat (F moments only)
  GMethod g_method = GMethod::kZero;

  int k_folds() const { return static_cast<int>(g_models.size()); }
};

namespace detail {

inline std::pair<MatrixXd, VectorXd> rows_excluding(const MatrixXd& x, const VectorXd& y,
                                                    const std::vector<int>& fold_of,
                                                    int excluded) {
  const Eigen::Index keep =
      x.rows() - static_cast<Eigen::Index>(std::count(fold_of.begin(), fold_of.end(), excluded));
  MatrixXd xs(keep, x.cols());
  VectorXd ys(keep);
  Eigen::Index at = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (fold_of[static_cast<std::size_t>(i)] == excluded) continue;
    xs.row(at) = x.row(i);
    ys[at] = y[i];
    ++at;
  }
  return {std::move(xs), std::move(ys)};
}

}  // namespace detail

// K per-fold first-stage pairs, each trained with its fold's rows excluded.
// F moments: fit beta on the original (X, y) and rotate, f = (U beta)[2:].
// Q moments: regress y on z directly. g always regresses t on z.
inline FirstStageFits fit_first_stage(const OmDecomposition& dec,
                                      const StandardizedDataset& dataset, Moment moment,
                                      const FirstStageFamily& pilot_family,
                                      const FirstStageFamily& g_family,
                                      std::uint64_t seed = 0) {
  if (pilot_family.kind == FirstStageFamily::Kind::kZero ||
      pilot_family.kind == FirstStageFamily::Kind::kCustom)
    throw std::invalid_argument("fit_first_stage: pilot family must be a linear regressor");
  FirstStageFits fits;
  fits.moment = moment;
  fits.g_method = g_family.g_method();
  const int k = dec.k_folds();
  fits.f_or_q.resize(static_cast<std::size_t>(k));
  fits.g_models.resize(static_cast<std::size_t>(k));
  if (moment == Moment::kF) fits.pilot_beta.resize(static_cast<std::size_t>(k));

  for (int fold = 0; fold < k; ++fold) {
    const auto sub_seed = seed + static_cast<std::uint64_t>(fold);
    if (moment == Moment::kF) {
      auto [xs, ys] = detail::rows_excluding(dataset.centered_design, dataset.centered_responses,
                                             dec.fold_of, fold);
      ZModel pilot = fit_family_xy(pilot_family, xs, ys, sub_seed);
      const VectorXd rotated = dec.reparam.apply_u(pilot.coef);
      fits.pilot_beta[static_cast<std::size_t>(fold)] = std::move(pilot.coef);
      fits.f_or_q[static_cast<std::size_t>(fold)] =
          dec.reparam.p() > 1 ? rotated.tail(dec.reparam.p() - 1).eval() : VectorXd();
    } else {
      auto [zs, ys] = detail::rows_excluding(dec.controls, dataset.centered_responses,
                                             dec.fold_of, fold);
      fits.f_or_q[static_cast<std::size_t>(fold)] = fit_family_xy(pilot_family, zs, ys, sub_seed).coef;
    }
    auto [zs, ts] = detail::rows_excluding(dec.controls, dec.treatment, dec.fold_of, fold);
    ZModel g = fit_family_xy(g_family, zs, ts, sub_seed);
    g.trained_excluding = fold;
    fits.g_models[static_cast<std::size_t>(fold)] = std::move(g);
  }
  return fits;
}

// Cross-fitted g residuals t_i - g^{-fold(i)}(z_i), each row scored by the
// model that excluded it.
inline VectorXd cross_fitted_g_residuals(const OmDecomposition& dec,
                                         const std::vector<ZModel>& g_models) {
  VectorXd r(dec.n());
  for (Eigen::Index i = 0; i < dec.n(); ++i) {
    const auto& g = g_models[static_cast<std::size_t>(dec.fold_of[static_cast<std::size_t>(i)])];
    r[i] = dec.treatment[i] - g.predict(dec.controls.row(i));
  }
  return r;
}

// Cross-fitted estimate of E[eta^2]: the f form averages t_i (t_i - g(z_i)),
// the q form averages the squared residual.
inline double estimate_mu2(const OmDecomposition& dec, const FirstStageFits& fits, Moment moment) {
  const VectorXd r = cross_fitted_g_residuals(dec, fits.g_models);
  const double n = static_cast<double>(dec.n());
  if (moment == Moment::kF) return dec.treatment.dot(r) / n;
  return r.squaredNorm() / n;
}

struct OmPrediction {
  double value = 0.0;  // raw scale, response mean restored
  double mu2 = 0.0;
  bool thresholded = false;     // fell back to the pilot (mu2 <= tau)
  bool degenerate_mu2 = false;  // mu2 <= 0 with tau = 0 forced the fallback
  Moment moment_kind = Moment::kF;
  double variance_estimate = 0.0;
  GMethod g_method = GMethod::kZero;
};

// Plug-in variance of the solved estimator for a given set of g models:
//   q-var = S_rr / V,  f-var = S_tr / V,  V = S_tt - S_rr,
// with S_tt = sum t^2, S_rr = sum r^2, S_tr = sum t r over cross-fitted
// residuals r. V <= 0 (e.g. the zero baseline, or an overfit g) marks the
// candidate degenerate.
struct PluginVariance {
  double value = 0.0;
  bool degenerate = false;
};

inline PluginVariance plugin_variance(const OmDecomposition& dec,
                                      const std::vector<ZModel>& g_models, Moment moment) {
  const VectorXd r = cross_fitted_g_residuals(dec, g_models);
  const double s_tt = dec.treatment.squaredNorm();
  const double s_rr = r.squaredNorm();
  const double s_tr = dec.treatment.dot(r);
  const double v = s_tt - s_rr;
  PluginVariance out;
  if (!(v > 0.0)) {
    out.degenerate = true;
    return out;
  }
  out.value = (moment == Moment::kF ? s_tr : s_rr) / v;
  if (!(out.value > 0.0) || !std::isfinite(out.value)) {
    out.degenerate = true;
    out.value = 0.0;
  }
  return out;
}

// Solves the empirical moment equation. Numerator and mu2 are averaged over
// the same n cross-fitted rows; if mu2 <= tau (or mu2 <= 0 with tau = 0) the
// pilot prediction is returned instead.
inline OmPrediction predict_om(const OmDecomposition& dec, const FirstStageFits& fits,
                               const StandardizedDataset& dataset, const FittedLinearModel& pilot,
                               Moment moment, double tau = 0.0) {
  if (tau < 0.0) throw std::invalid_argument("predict_om: tau must be nonnegative");
  if (fits.moment != moment) throw std::invalid_argument("predict_om: fits built for other moment");
  OmPrediction pred;
  pred.moment_kind = moment;
  pred.g_method = fits.g_method;
  pred.mu2 = estimate_mu2(dec, fits, moment);

  const PluginVariance var = plugin_variance(dec, fits.g_models, moment);
  pred.variance_estimate = var.degenerate ? 0.0 : var.value;

  // reparam.x_star lives in the dataset's standardized coordinates.
  const double pilot_value = model::predict(pilot, dec.reparam.x_star);
  if (pred.mu2 <= tau || pred.mu2 <= 0.0) {
    pred.thresholded = pred.mu2 <= tau && tau > 0.0;
    pred.degenerate_mu2 = !pred.thresholded;
    pred.value = pilot_value;
    return pred;
  }

  const VectorXd r = cross_fitted_g_residuals(dec, fits.g_models);
  double numerator = 0.0;
  double denominator = 0.0;
  for (Eigen::Index i = 0; i < dec.n(); ++i) {
    const auto& fq = fits.f_or_q[static_cast<std::size_t>(dec.fold_of[static_cast<std::size_t>(i)])];
    const double control_fit = fq.size() == 0 ? 0.0 : dec.controls.row(i).dot(fq);
    numerator += (dataset.centered_responses[i] - control_fit) * r[i];
    denominator += (moment == Moment::kF) ? dec.treatment[i] * r[i] : r[i] * r[i];
  }
  pred.value = numerator / denominator + dataset.response_mean;
  return pred;
}

// ---------------------------------------------------------------------------
// Variance-based selection of the g method

struct GSelection {
  std::size_t index = 0;  // position in the candidate list
  double variance = 0.0;
  bool degenerate_fallback = false;  // every candidate was degenerate
  std::vector<std::vector<ZModel>> fitted;  // per candidate, reusable by the caller
};

// Fits every candidate g family and returns the one with the smallest
// plug-in variance; ties break toward the earlier candidate.
inline GSelection select_g_method(const OmDecomposition& dec, const StandardizedDataset& dataset,
                                  const std::vector<FirstStageFamily>& candidates, Moment moment,
                                  std::uint64_t seed = 0) {
  if (candidates.empty()) throw std::invalid_argument("select_g_method: no candidates");
  GSelection sel;
  sel.fitted.resize(candidates.size());
  bool found = false;
  double best = 0.0;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    std::vector<ZModel> models(static_cast<std::size_t>(dec.k_folds()));
    for (int fold = 0; fold < dec.k_folds(); ++fold) {
      auto [zs, ts] = detail::rows_excluding(dec.controls, dec.treatment, dec.fold_of, fold);
      ZModel g = fit_family_xy(candidates[c], zs, ts, seed + static_cast<std::uint64_t>(fold));
      g.trained_excluding = fold;
      models[static_cast<std::size_t>(fold)] = std::move(g);
    }
    const PluginVariance var = plugin_variance(dec, models, moment);
    sel.fitted[c] = std::move(models);
    if (!var.degenerate && (!found || var.value < best)) {
      found = true;
      best = var.value;
      sel.index = c;
      sel.variance = var.value;
    }
  }
  if (!found) {
    sel.index = 0;
    sel.variance = 0.0;
    sel.degenerate_fallback = true;
  }
  return sel;
}

inline nlohmann::json to_json(const OmPrediction& pred) {
  return {{"value", pred.value},
          {"mu2", pred.mu2},
          {"thresholded", pred.thresholded},
          {"moment_kind", to_string(pred.moment_kind)},
          {"variance_estimate", pred.variance_estimate},
          {"g_method", to_string(pred.g_method)}};
}

}  // namespace transduct::om
