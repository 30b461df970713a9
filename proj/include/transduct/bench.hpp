#pragma once

// Config-driven benchmark harness: reproduces the synthetic experiments at
// desk scale, runs real-data RMSE comparisons, and emits plot-ready tables.
//
// Synthetic scenarios follow the figure protocol: `replicates` independent
// problem instances, each scored over `test_points` test directions; the
// reported metric is the per-instance root mean squared x*-risk ("rmsre"),
// averaged over instances with +/- 1 SE error bars. Real-data runs report
// test RMSE (noise included) with a delta-method standard error.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "transduct/data.hpp"
#include "transduct/estimators.hpp"
#include "transduct/risk.hpp"
#include "transduct/stats.hpp"

namespace transduct::bench {

using nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

enum class Scenario { kSyntheticNoShift, kSyntheticShiftRidge, kSyntheticShiftLasso, kRealData };

inline std::string to_string(Scenario scenario) {
  switch (scenario) {
    case Scenario::kSyntheticNoShift: return "synthetic_no_shift";
    case Scenario::kSyntheticShiftRidge: return "synthetic_shift_ridge";
    case Scenario::kSyntheticShiftLasso: return "synthetic_shift_lasso";
    case Scenario::kRealData: return "real_data";
  }
  return "?";
}

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RealDataSpec {
  std::string csv_path;
  std::string target_column;
  std::string split_column;
  std::string split_op;  // "le", "gt", "eq"
  double split_value = 0.0;
};

struct ExperimentConfig {
  Scenario scenario = Scenario::kSyntheticNoShift;
  std::vector<estimators::EstimatorConfig> estimator_list;
  std::vector<int> n_grid;
  int p = 0;
  int sparsity = 0;
  data::BetaLaw beta_law = data::BetaLaw::kFirstSGaussian;
  data::ShiftKind shift = data::ShiftKind::kNone;
  std::optional<double> snr_override;
  int replicates = 20;    // problem instances per grid point
  int test_points = 500;  // test directions per instance
  std::uint64_t seed = 0;
  std::string output_path;  // stem; .csv/.json are appended
  int jobs = 1;
  std::optional<RealDataSpec> real_data;

  void validate() const {
    if (estimator_list.empty()) throw ConfigError("config: estimators must be nonempty");
    if (scenario == Scenario::kRealData) {
      if (!real_data) throw ConfigError("config: real_data section required");
      if (real_data->csv_path.empty()) throw ConfigError("config: real_data.csv_path required");
      if (real_data->target_column.empty()) throw ConfigError("config: real_data.target required");
      return;
    }
    if (n_grid.empty()) throw ConfigError("config: n_grid must be nonempty");
    for (int n : n_grid)
      if (n < 2) throw ConfigError("config: n_grid entries must be >= 2");
    if (p <= 0) throw ConfigError("config: p must be positive");
    if (sparsity < 0 || sparsity > p) throw ConfigError("config: sparsity must lie in [0, p]");
    if (replicates < 2) throw ConfigError("config: replicates must be >= 2");
    if (test_points < 1) throw ConfigError("config: test_points must be >= 1");
    if (scenario == Scenario::kSyntheticNoShift && shift != data::ShiftKind::kNone)
      throw ConfigError("config: synthetic_no_shift runs with the training law");
    if (scenario != Scenario::kSyntheticNoShift && shift == data::ShiftKind::kNone)
      throw ConfigError("config: shift scenario needs a shift kind");
  }
};

// ---------------------------------------------------------------------------
// JSON parsing

namespace detail {

inline Scenario parse_scenario(const std::string& s) {
  if (s == "synthetic_no_shift") return Scenario::kSyntheticNoShift;
  if (s == "synthetic_shift_ridge") return Scenario::kSyntheticShiftRidge;
  if (s == "synthetic_shift_lasso") return Scenario::kSyntheticShiftLasso;
  if (s == "real_data") return Scenario::kRealData;
  throw ConfigError("config: unknown scenario '" + s + "'");
}

inline data::ShiftKind parse_shift(const std::string& s) {
  if (s == "none") return data::ShiftKind::kNone;
  if (s == "mean_shift") return data::ShiftKind::kMeanShiftTowardBeta;
  if (s == "cov_shift_rank_one") return data::ShiftKind::kCovShiftRankOne;
  if (s == "cov_shift_on_support") return data::ShiftKind::kCovShiftOnSupport;
  throw ConfigError("config: unknown shift '" + s + "'");
}

inline data::BetaLaw parse_beta_law(const std::string& s) {
  if (s == "first_s_gaussian") return data::BetaLaw::kFirstSGaussian;
  if (s == "isotropic_scaled") return data::BetaLaw::kIsotropicScaled;
  throw ConfigError("config: unknown beta_law '" + s + "'");
}

inline estimators::BaseKind parse_base(const std::string& s) {
  if (s == "oracle") return estimators::BaseKind::kOracle;
  if (s == "zero") return estimators::BaseKind::kConstantZero;
  if (s == "ols") return estimators::BaseKind::kOls;
  if (s == "ridge") return estimators::BaseKind::kRidge;
  if (s == "lasso") return estimators::BaseKind::kLasso;
  if (s == "elastic") return estimators::BaseKind::kElastic;
  throw ConfigError("config: unknown base '" + s + "'");
}

inline estimators::HyperMode parse_hyper(const std::string& s) {
  if (s == "theory") return estimators::HyperMode::kTheory;
  if (s == "cv") return estimators::HyperMode::kCv;
  if (s == "fixed") return estimators::HyperMode::kFixed;
  throw ConfigError("config: unknown hyper mode '" + s + "'");
}

inline estimators::Transduction parse_transduction(const std::string& s) {
  if (s == "none") return estimators::Transduction::kNone;
  if (s == "jm") return estimators::Transduction::kJm;
  if (s == "om_f") return estimators::Transduction::kOmF;
  if (s == "om_q") return estimators::Transduction::kOmQ;
  throw ConfigError("config: unknown transduction '" + s + "'");
}

inline estimators::GFamilyKind parse_g_family(const std::string& s) {
  if (s == "same_as_base") return estimators::GFamilyKind::kSameAsBase;
  if (s == "lasso_cv") return estimators::GFamilyKind::kLassoCv;
  if (s == "ridge_cv") return estimators::GFamilyKind::kRidgeCv;
  if (s == "elastic_cv") return estimators::GFamilyKind::kElasticCv;
  if (s == "zero") return estimators::GFamilyKind::kZero;
  throw ConfigError("config: unknown g family '" + s + "'");
}

inline estimators::EstimatorConfig parse_estimator(const json& j,
                                                   estimators::HyperMode default_hyper,
                                                   bool synthetic) {
  estimators::EstimatorConfig cfg;
  if (!j.contains("name")) throw ConfigError("config: estimator entry missing 'name'");
  cfg.name = j.at("name").get<std::string>();
  cfg.base = parse_base(j.value("base", "lasso"));
  cfg.hyper = j.contains("hyper") ? parse_hyper(j.at("hyper").get<std::string>()) : default_hyper;
  cfg.fixed_lambda = j.value("lambda", 0.0);
  cfg.l1_ratio = j.value("l1_ratio", 1.0);
  cfg.synthetic_ridge_grid = synthetic;
  cfg.transduction = parse_transduction(j.value("transduction", "none"));
  if (j.contains("lambda_w")) {
    const auto& lw = j.at("lambda_w");
    if (lw.is_number()) {
      cfg.lambda_w_mode = estimators::LambdaWMode::kFixed;
      cfg.fixed_lambda_w = lw.get<double>();
    } else if (lw.get<std::string>() == "theory") {
      cfg.lambda_w_mode = estimators::LambdaWMode::kTheoryGrid;
    } else if (lw.get<std::string>() == "real_grid") {
      cfg.lambda_w_mode = estimators::LambdaWMode::kRealDataGrid;
    } else {
      throw ConfigError("config: unknown lambda_w setting");
    }
  } else {
    cfg.lambda_w_mode = synthetic ? estimators::LambdaWMode::kTheoryGrid
                                  : estimators::LambdaWMode::kRealDataGrid;
  }
  cfg.k_folds = j.value("k_folds", synthetic ? 5 : 10);
  cfg.tau = j.value("tau", 0.0);
  if (j.contains("g_candidates")) {
    cfg.g_candidates.clear();
    for (const auto& g : j.at("g_candidates"))
      cfg.g_candidates.push_back(parse_g_family(g.get<std::string>()));
    if (cfg.g_candidates.empty()) throw ConfigError("config: empty g_candidates");
  }
  return cfg;
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  try {
    cfg.scenario = detail::parse_scenario(j.at("scenario").get<std::string>());
    const bool synthetic = cfg.scenario != Scenario::kRealData;
    const auto default_hyper =
        j.contains("hyper_mode") ? detail::parse_hyper(j.at("hyper_mode").get<std::string>())
                                 : estimators::HyperMode::kCv;
    for (const auto& e : j.at("estimators"))
      cfg.estimator_list.push_back(detail::parse_estimator(e, default_hyper, synthetic));
    if (synthetic) {
      cfg.n_grid = j.at("n_grid").get<std::vector<int>>();
      cfg.p = j.at("p").get<int>();
      cfg.sparsity = j.value("sparsity", 0);
      cfg.beta_law = detail::parse_beta_law(j.value("beta_law", "first_s_gaussian"));
      cfg.shift = detail::parse_shift(j.value("shift", "none"));
      if (j.contains("snr_override")) cfg.snr_override = j.at("snr_override").get<double>();
      cfg.replicates = j.value("replicates", 20);
      cfg.test_points = j.value("test_points", 500);
    } else {
      RealDataSpec real;
      const auto& r = j.at("real_data");
      real.csv_path = r.at("csv_path").get<std::string>();
      real.target_column = r.at("target").get<std::string>();
      real.split_column = r.value("split_column", "");
      real.split_op = r.value("split_op", "le");
      real.split_value = r.value("split_value", 0.0);
      cfg.real_data = real;
    }
    cfg.seed = j.value("seed", 0ULL);
    cfg.output_path = j.value("output_path", "");
    cfg.jobs = j.value("jobs", 1);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse failure: ") + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Result table

struct ResultRow {
  std::string scenario;
  std::string estimator;
  int n = 0;
  std::string metric_name;  // "rmsre" (synthetic) or "rmse" (real data)
  double value = 0.0;
  double se = 0.0;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  json metadata;
  int failures = 0;
  int predictions = 0;
};

inline json to_json(const ResultTable& table) {
  json rows = json::array();
  for (const auto& row : table.rows)
    rows.push_back({{"scenario", row.scenario},
                    {"estimator", row.estimator},
                    {"n", row.n},
                    {"metric_name", row.metric_name},
                    {"value", row.value},
                    {"se", row.se}});
  return {{"rows", rows}, {"metadata", table.metadata}};
}

inline std::string to_csv(const ResultTable& table) {
  std::ostringstream out;
  out.precision(17);
  out << "scenario,estimator,n,metric_name,value,se\n";
  for (const auto& row : table.rows)
    out << row.scenario << ',' << row.estimator << ',' << row.n << ',' << row.metric_name << ','
        << row.value << ',' << row.se << '\n';
  return out.str();
}

inline ResultTable table_from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("table_from_csv: cannot open " + path);
  ResultTable table;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("table_from_csv: empty file");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    ResultRow r;
    std::string n_text, value_text, se_text;
    std::getline(row, r.scenario, ',');
    std::getline(row, r.estimator, ',');
    std::getline(row, n_text, ',');
    std::getline(row, r.metric_name, ',');
    std::getline(row, value_text, ',');
    std::getline(row, se_text, ',');
    r.n = std::stoi(n_text);
    r.value = std::stod(value_text);
    r.se = std::stod(se_text);
    table.rows.push_back(std::move(r));
  }
  return table;
}

inline void write_table(const ResultTable& table, const std::string& stem) {
  const std::filesystem::path csv_path = stem + ".csv";
  if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
  std::ofstream csv(csv_path);
  csv << to_csv(table);
  std::ofstream js(stem + ".json");
  js << to_json(table).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Experiment runner

namespace detail {

struct InstanceResult {
  std::vector<double> rmsre;  // per estimator
  int failures = 0;
  int predictions = 0;
};

inline InstanceResult run_synthetic_instance(const ExperimentConfig& cfg,
                                             const data::SyntheticSpec& spec,
                                             std::uint64_t instance_seed) {
  InstanceResult result;
  const auto inst = data::generate_instance(spec, instance_seed);
  std::vector<Eigen::VectorXd> test_points;
  test_points.reserve(static_cast<std::size_t>(cfg.test_points));
  for (int t = 0; t < cfg.test_points; ++t)
    test_points.push_back(data::sample_test_point(inst, {cfg.shift}, instance_seed,
                                                  static_cast<std::uint64_t>(t) + 1));
  for (const auto& est : cfg.estimator_list) {
    double total_sq = 0.0;
    int ok = 0;
    result.predictions += cfg.test_points;
    try {
      const auto fitted = estimators::fit_estimator(est, inst);
      for (const auto& x_star : test_points) {
        try {
          const double err = fitted.predict(x_star) - x_star.dot(*inst.truth);
          total_sq += err * err;
          ++ok;
        } catch (const std::exception&) {
          ++result.failures;
        }
      }
    } catch (const std::exception&) {
      result.failures += cfg.test_points;
    }
    result.rmsre.push_back(ok > 0 ? std::sqrt(total_sq / ok)
                                  : std::numeric_limits<double>::quiet_NaN());
  }
  return result;
}

inline std::uint64_t config_hash(const json& j) {
  return transduct::detail::fnv1a64(j.dump());
}

}  // namespace detail

inline ResultTable run_experiment(const ExperimentConfig& cfg, const json& raw_config = {}) {
  cfg.validate();
  ResultTable table;

  if (cfg.scenario == Scenario::kRealData) {
    const auto& real = *cfg.real_data;
    std::function<bool(const std::vector<double>&)> rule;
    std::optional<std::string> split_column;
    if (!real.split_column.empty()) {
      split_column = real.split_column;
      const auto probe = data::read_numeric_csv(real.csv_path);
      const std::size_t col = data::csv_column_index(probe, real.split_column);
      const double value = real.split_value;
      if (real.split_op == "le")
        rule = [col, value](const std::vector<double>& row) { return row[col] <= value; };
      else if (real.split_op == "gt")
        rule = [col, value](const std::vector<double>& row) { return row[col] > value; };
      else if (real.split_op == "eq")
        rule = [col, value](const std::vector<double>& row) { return row[col] == value; };
      else
        throw ConfigError("config: unknown split_op '" + real.split_op + "'");
    } else {
      throw ConfigError("config: real_data.split_column required");
    }
    const auto split = data::load_csv(real.csv_path, real.target_column, rule, split_column);
    data::ProblemInstance train = split.train;
    train.seed = cfg.seed;

    for (const auto& est : cfg.estimator_list) {
      std::vector<double> sq_errors;
      sq_errors.reserve(static_cast<std::size_t>(split.test.n()));
      try {
        const auto fitted = estimators::fit_estimator(est, train);
        for (Eigen::Index i = 0; i < split.test.n(); ++i) {
          ++table.predictions;
          const double err =
              fitted.predict(split.test.design.row(i).transpose()) - split.test.responses[i];
          sq_errors.push_back(err * err);
        }
      } catch (const std::exception&) {
        table.failures += static_cast<int>(split.test.n());
        table.predictions += static_cast<int>(split.test.n());
      }
      ResultRow row;
      row.scenario = to_string(cfg.scenario);
      row.estimator = est.name;
      row.n = static_cast<int>(train.n());
      row.metric_name = "rmse";
      if (sq_errors.size() >= 2) {
        const MeanSe ms = mean_and_se(sq_errors);
        row.value = std::sqrt(ms.mean);
        row.se = row.value > 0.0 ? ms.se / (2.0 * row.value) : 0.0;  // delta method
      } else {
        row.value = std::numeric_limits<double>::quiet_NaN();
        row.se = std::numeric_limits<double>::quiet_NaN();
      }
      table.rows.push_back(std::move(row));
    }
  } else {
    for (std::size_t n_index = 0; n_index < cfg.n_grid.size(); ++n_index) {
      const int n = cfg.n_grid[n_index];
      data::SyntheticSpec spec{n, cfg.p,
                               cfg.beta_law == data::BetaLaw::kIsotropicScaled ? cfg.p : cfg.sparsity,
                               cfg.beta_law, cfg.snr_override};
      std::vector<detail::InstanceResult> results(static_cast<std::size_t>(cfg.replicates));
      auto run_range = [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
          const std::uint64_t instance_seed = derive_seed(
              cfg.seed, (static_cast<std::uint64_t>(n_index) << 32) | static_cast<std::uint64_t>(i));
          results[static_cast<std::size_t>(i)] = detail::run_synthetic_instance(cfg, spec, instance_seed);
        }
      };
      if (cfg.jobs <= 1) {
        run_range(0, cfg.replicates);
      } else {
        std::vector<std::future<void>> tasks;
        const int chunk = (cfg.replicates + cfg.jobs - 1) / cfg.jobs;
        for (int begin = 0; begin < cfg.replicates; begin += chunk)
          tasks.push_back(std::async(std::launch::async, run_range, begin,
                                     std::min(begin + chunk, cfg.replicates)));
        for (auto& task : tasks) task.get();
      }

      for (std::size_t e = 0; e < cfg.estimator_list.size(); ++e) {
        std::vector<double> rmsre;
        for (const auto& result : results) {
          if (std::isfinite(result.rmsre[e])) rmsre.push_back(result.rmsre[e]);
        }
        ResultRow row;
        row.scenario = to_string(cfg.scenario);
        row.estimator = cfg.estimator_list[e].name;
        row.n = n;
        row.metric_name = "rmsre";
        if (rmsre.size() >= 2) {
          const MeanSe ms = mean_and_se(rmsre);
          row.value = ms.mean;
          row.se = ms.se;
        } else {
          row.value = std::numeric_limits<double>::quiet_NaN();
          row.se = std::numeric_limits<double>::quiet_NaN();
        }
        table.rows.push_back(std::move(row));
      }
      for (const auto& result : results) {
        table.failures += result.failures;
        table.predictions += result.predictions;
      }
    }
  }

  const auto now = std::chrono::system_clock::now();
  table.metadata = {{"config_hash", detail::config_hash(raw_config)},
                    {"seed", cfg.seed},
                    {"timestamp", std::chrono::duration_cast<std::chrono::seconds>(
                                      now.time_since_epoch()).count()},
                    {"version", kVersion}};
  if (!cfg.output_path.empty()) write_table(table, cfg.output_path);
  return table;
}

// ---------------------------------------------------------------------------
// Comparison report

struct CompareEntry {
  std::string scenario;
  std::string estimator;
  int n = 0;
  double ratio = 0.0;
  double ratio_se = 0.0;
};

struct CompareReport {
  std::vector<CompareEntry> entries;
  std::string text;
  json as_json;
};

// Relative value vs the baseline estimator within each (scenario, n) group,
// with SE propagated for the ratio of independent means.
inline CompareReport compare_report(const ResultTable& table, const std::string& baseline) {
  CompareReport report;
  bool baseline_seen = false;
  std::ostringstream text;
  text.precision(4);
  json entries = json::array();
  for (const auto& row : table.rows) {
    const ResultRow* base = nullptr;
    for (const auto& candidate : table.rows) {
      if (candidate.estimator == baseline && candidate.scenario == row.scenario &&
          candidate.n == row.n && candidate.metric_name == row.metric_name) {
        base = &candidate;
        break;
      }
    }
    if (base == nullptr) continue;
    baseline_seen = true;
    CompareEntry entry;
    entry.scenario = row.scenario;
    entry.estimator = row.estimator;
    entry.n = row.n;
    entry.ratio = row.value / base->value;
    const double rel_a = row.value != 0.0 ? row.se / row.value : 0.0;
    const double rel_b = base->value != 0.0 ? base->se / base->value : 0.0;
    entry.ratio_se = std::abs(entry.ratio) * std::sqrt(rel_a * rel_a + rel_b * rel_b);
    text << entry.scenario << " n=" << entry.n << "  " << entry.estimator << "/" << baseline
         << " = " << entry.ratio << " +/- " << entry.ratio_se << '\n';
    entries.push_back({{"scenario", entry.scenario},
                       {"estimator", entry.estimator},
                       {"n", entry.n},
                       {"ratio", entry.ratio},
                       {"ratio_se", entry.ratio_se}});
    report.entries.push_back(std::move(entry));
  }
  if (!baseline_seen) throw std::invalid_argument("compare_report: baseline '" + baseline +
                                                  "' not present in table");
  report.text = text.str();
  report.as_json = {{"baseline", baseline}, {"entries", entries}};
  return report;
}

}  // namespace transduct::bench
