#pragma once

// Synthetic problem generation, distribution-shift test-point samplers,
// CSV ingestion and the standardization pipeline.

#include <Eigen/Dense>

#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "transduct/rng.hpp"

namespace transduct::data {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// One observed regression problem: y = X beta0 + eps. `truth` and
// `noise_sd` are present for synthetic data only.
struct ProblemInstance {
  MatrixXd design;                 // n x p
  VectorXd responses;              // n
  std::optional<VectorXd> truth;   // beta0
  std::optional<double> noise_sd;  // sigma_eps > 0
  std::uint64_t seed = 0;

  Eigen::Index n() const { return design.rows(); }
  Eigen::Index p() const { return design.cols(); }

  void validate() const {
    if (design.rows() != responses.size())
      throw std::invalid_argument("ProblemInstance: design rows != responses length");
    if (truth && !noise_sd)
      throw std::invalid_argument("ProblemInstance: truth present without noise_sd");
    if (truth && truth->size() != design.cols())
      throw std::invalid_argument("ProblemInstance: truth length != p");
  }
};

enum class BetaLaw {
  kFirstSGaussian,   // beta_j ~ N(0,1) for j < sparsity, 0 otherwise
  kIsotropicScaled,  // beta ~ N(0, p^{-1/2} I), all coordinates active
};

struct SyntheticSpec {
  int n = 0;
  int p = 0;
  int sparsity = 0;  // ignored for kIsotropicScaled
  BetaLaw beta_law = BetaLaw::kFirstSGaussian;
  std::optional<double> snr_override;  // targets ||beta0||^2 = snr * sigma_eps^2

  void validate() const {
    if (n <= 0 || p <= 0) throw std::invalid_argument("SyntheticSpec: n and p must be positive");
    if (sparsity < 0 || sparsity > p)
      throw std::invalid_argument("SyntheticSpec: sparsity must lie in [0, p]");
    if (snr_override && *snr_override <= 0.0)
      throw std::invalid_argument("SyntheticSpec: snr_override must be positive");
    if (snr_override && beta_law == BetaLaw::kFirstSGaussian && sparsity == 0)
      throw std::invalid_argument("SyntheticSpec: cannot rescale a zero beta0 to a target SNR");
  }
};

enum class ShiftKind {
  kNone,                // x_star ~ N(0, I_p), the training law
  kMeanShiftTowardBeta, // x_star ~ N(10 beta0, I_p)
  kCovShiftRankOne,     // x_star ~ N(0, 100 beta0 beta0^T)
  kCovShiftOnSupport,   // (x_star)_j ~ N(0,100) on supp(beta0), 0 elsewhere
};

struct ShiftSpec {
  ShiftKind kind = ShiftKind::kNone;

  bool needs_truth() const { return kind != ShiftKind::kNone; }
};

// Noise level used for all synthetic generation; the shift experiments
// assume eps ~ N(0,1) and snr_override moves beta0 instead.
inline constexpr double kSyntheticNoiseSd = 1.0;

// beta0 as a pure function of (spec, seed); stream tag "beta".
inline VectorXd draw_truth(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  RngStream rng(seed, "beta");
  VectorXd beta = VectorXd::Zero(spec.p);
  switch (spec.beta_law) {
    case BetaLaw::kFirstSGaussian:
      for (int j = 0; j < spec.sparsity; ++j) beta[j] = rng.next_gaussian();
      break;
    case BetaLaw::kIsotropicScaled: {
      const double sd = std::pow(static_cast<double>(spec.p), -0.25);
      for (int j = 0; j < spec.p; ++j) beta[j] = sd * rng.next_gaussian();
      break;
    }
  }
  if (spec.snr_override) {
    const double norm = beta.norm();
    if (norm == 0.0) throw std::invalid_argument("draw_truth: zero beta0 cannot hit target SNR");
    beta *= std::sqrt(*spec.snr_override) * kSyntheticNoiseSd / norm;
  }
  return beta;
}

// Fresh (X, eps) for a fixed beta0. `replicate` indexes independent streams
// so Monte Carlo replicates can be generated (and run) independently.
inline ProblemInstance instantiate(const SyntheticSpec& spec, const VectorXd& beta,
                                   std::uint64_t seed, std::uint64_t replicate = 0) {
  RngStream design_rng(seed, "design", replicate);
  RngStream noise_rng(seed, "noise", replicate);
  ProblemInstance inst;
  inst.design.resize(spec.n, spec.p);
  for (int i = 0; i < spec.n; ++i)
    for (int j = 0; j < spec.p; ++j) inst.design(i, j) = design_rng.next_gaussian();
  inst.responses = inst.design * beta;
  for (int i = 0; i < spec.n; ++i) inst.responses[i] += kSyntheticNoiseSd * noise_rng.next_gaussian();
  inst.truth = beta;
  inst.noise_sd = kSyntheticNoiseSd;
  inst.seed = seed;
  return inst;
}

inline ProblemInstance generate_instance(const SyntheticSpec& spec, std::uint64_t seed) {
  return instantiate(spec, draw_truth(spec, seed), seed);
}

// One draw of a test direction. `index` selects the stream for the
// fresh-per-replicate mode.
inline VectorXd sample_test_point(const VectorXd* truth, Eigen::Index p, const ShiftSpec& shift,
                                  std::uint64_t seed, std::uint64_t index = 0) {
  if (shift.needs_truth() && truth == nullptr)
    throw std::invalid_argument("sample_test_point: shift law requires beta0");
  RngStream rng(seed, "xstar", index);
  VectorXd x(p);
  switch (shift.kind) {
    case ShiftKind::kNone:
      for (Eigen::Index j = 0; j < p; ++j) x[j] = rng.next_gaussian();
      break;
    case ShiftKind::kMeanShiftTowardBeta:
      for (Eigen::Index j = 0; j < p; ++j) x[j] = 10.0 * (*truth)[j] + rng.next_gaussian();
      break;
    case ShiftKind::kCovShiftRankOne: {
      const double g = rng.next_gaussian();
      x = 10.0 * g * (*truth);
      break;
    }
    case ShiftKind::kCovShiftOnSupport:
      for (Eigen::Index j = 0; j < p; ++j)
        x[j] = ((*truth)[j] != 0.0) ? 10.0 * rng.next_gaussian() : 0.0;
      break;
  }
  return x;
}

inline VectorXd sample_test_point(const ProblemInstance& inst, const ShiftSpec& shift,
                                  std::uint64_t seed, std::uint64_t index = 0) {
  return sample_test_point(inst.truth ? &*inst.truth : nullptr, inst.p(), shift, seed, index);
}

// Centered/scaled view of a dataset plus everything needed to map raw
// inputs into the fitted coordinate system and predictions back out.
struct StandardizedDataset {
  MatrixXd centered_design;   // columns mean 0, sample sd 1 (constant: sd 1)
  VectorXd centered_responses;
  VectorXd column_means;
  VectorXd column_sds;        // recorded as 1 for constant columns
  std::vector<bool> constant_columns;
  double response_mean = 0.0;

  Eigen::Index n() const { return centered_design.rows(); }
  Eigen::Index p() const { return centered_design.cols(); }

  // Raw covariate vector -> standardized coordinates.
  VectorXd standardize_vector(const VectorXd& x_raw) const {
    if (x_raw.size() != column_means.size())
      throw std::invalid_argument("standardize_vector: dimension mismatch");
    return (x_raw - column_means).cwiseQuotient(column_sds);
  }
};

inline StandardizedDataset standardize(const MatrixXd& raw_design, const VectorXd& raw_responses) {
  const Eigen::Index n = raw_design.rows();
  const Eigen::Index p = raw_design.cols();
  if (n < 2) throw std::invalid_argument("standardize: need at least 2 rows");
  if (raw_responses.size() != n)
    throw std::invalid_argument("standardize: responses length != design rows");

  StandardizedDataset out;
  out.column_means = raw_design.colwise().mean();
  out.centered_design = raw_design.rowwise() - out.column_means.transpose();
  out.column_sds.resize(p);
  out.constant_columns.assign(static_cast<std::size_t>(p), false);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double ss = out.centered_design.col(j).squaredNorm();
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (sd > 0.0) {
      out.column_sds[j] = sd;
      out.centered_design.col(j) /= sd;
    } else {
      out.column_sds[j] = 1.0;
      out.constant_columns[static_cast<std::size_t>(j)] = true;
    }
  }
  out.response_mean = raw_responses.mean();
  out.centered_responses = raw_responses.array() - out.response_mean;
  return out;
}

inline StandardizedDataset standardize(const ProblemInstance& inst) {
  return standardize(inst.design, inst.responses);
}

// ---------------------------------------------------------------------------
// CSV ingestion

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline CsvTable read_numeric_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_numeric_csv: cannot open " + path);
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_numeric_csv: empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  {
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) table.header.push_back(cell);
  }
  if (table.header.empty()) throw std::runtime_error("read_numeric_csv: no header columns");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    row.reserve(table.header.size());
    std::istringstream rs(line);
    std::string cell;
    std::size_t col = 0;
    while (col < table.header.size()) {
      if (!std::getline(rs, cell, ',')) cell.clear();
      std::size_t used = 0;
      double value = 0.0;
      try {
        value = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      // Missing or non-numeric cells are a hard error.
      if (used == 0 || used != cell.size())
        throw std::runtime_error("read_numeric_csv: non-numeric or missing value at line " +
                                 std::to_string(line_no) + ", column " + table.header[col]);
      row.push_back(value);
      ++col;
    }
    if (rs.rdbuf()->in_avail() > 0)
      throw std::runtime_error("read_numeric_csv: too many cells at line " + std::to_string(line_no));
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline std::size_t csv_column_index(const CsvTable& table, const std::string& name) {
  for (std::size_t j = 0; j < table.header.size(); ++j)
    if (table.header[j] == name) return j;
  throw std::runtime_error("csv: no column named '" + name + "'");
}

struct TrainTestSplit {
  ProblemInstance train;
  ProblemInstance test;
};

// Rows satisfying `to_train` go to the training side. The split feature
// itself (when named) is dropped from the covariates, as is the target.
inline TrainTestSplit load_csv(const std::string& path, const std::string& target_column,
                               const std::function<bool(const std::vector<double>&)>& to_train,
                               const std::optional<std::string>& split_column = std::nullopt) {
  const CsvTable table = read_numeric_csv(path);
  const std::size_t target = csv_column_index(table, target_column);
  std::optional<std::size_t> split;
  if (split_column) {
    split = csv_column_index(table, *split_column);
    if (*split == target) throw std::runtime_error("load_csv: split column equals target column");
  }

  std::vector<std::size_t> covariates;
  for (std::size_t j = 0; j < table.header.size(); ++j)
    if (j != target && (!split || j != *split)) covariates.push_back(j);
  if (covariates.empty()) throw std::runtime_error("load_csv: no covariates remain");

  std::vector<const std::vector<double>*> train_rows, test_rows;
  for (const auto& row : table.rows)
    (to_train(row) ? train_rows : test_rows).push_back(&row);
  if (train_rows.empty()) throw std::runtime_error("load_csv: empty training side of split");
  if (test_rows.empty()) throw std::runtime_error("load_csv: empty test side of split");

  auto build = [&](const std::vector<const std::vector<double>*>& rows) {
    ProblemInstance inst;
    inst.design.resize(static_cast<Eigen::Index>(rows.size()),
                       static_cast<Eigen::Index>(covariates.size()));
    inst.responses.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < covariates.size(); ++j)
        inst.design(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            (*rows[i])[covariates[j]];
      inst.responses[static_cast<Eigen::Index>(i)] = (*rows[i])[target];
    }
    return inst;
  };
  return {build(train_rows), build(test_rows)};
}

// ---------------------------------------------------------------------------
// JSON export

inline nlohmann::json to_json(const ProblemInstance& inst) {
  nlohmann::json j;
  j["n"] = inst.n();
  j["p"] = inst.p();
  j["seed"] = inst.seed;
  std::vector<double> design(static_cast<std::size_t>(inst.n() * inst.p()));
  for (Eigen::Index i = 0; i < inst.n(); ++i)
    for (Eigen::Index k = 0; k < inst.p(); ++k)
      design[static_cast<std::size_t>(i * inst.p() + k)] = inst.design(i, k);
  j["design"] = design;  // row-major
  j["responses"] = std::vector<double>(inst.responses.data(), inst.responses.data() + inst.n());
  if (inst.truth)
    j["truth"] = std::vector<double>(inst.truth->data(), inst.truth->data() + inst.truth->size());
  if (inst.noise_sd) j["noise_sd"] = *inst.noise_sd;
  return j;
}

inline ProblemInstance instance_from_json(const nlohmann::json& j) {
  ProblemInstance inst;
  const Eigen::Index n = j.at("n").get<Eigen::Index>();
  const Eigen::Index p = j.at("p").get<Eigen::Index>();
  inst.seed = j.at("seed").get<std::uint64_t>();
  const auto design = j.at("design").get<std::vector<double>>();
  if (design.size() != static_cast<std::size_t>(n * p))
    throw std::runtime_error("instance_from_json: design size mismatch");
  inst.design.resize(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < p; ++k)
      inst.design(i, k) = design[static_cast<std::size_t>(i * p + k)];
  const auto responses = j.at("responses").get<std::vector<double>>();
  if (responses.size() != static_cast<std::size_t>(n))
    throw std::runtime_error("instance_from_json: responses size mismatch");
  inst.responses = Eigen::Map<const VectorXd>(responses.data(), n);
  if (j.contains("truth")) {
    const auto truth = j.at("truth").get<std::vector<double>>();
    inst.truth = Eigen::Map<const VectorXd>(truth.data(), static_cast<Eigen::Index>(truth.size()));
  }
  if (j.contains("noise_sd")) inst.noise_sd = j.at("noise_sd").get<double>();
  inst.validate();
  return inst;
}

}  // namespace transduct::data
