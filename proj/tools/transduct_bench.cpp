// Benchmark CLI: runs config-driven experiments, validates configs, and
// summarizes result tables against a baseline estimator.
//
// Exit codes: 0 ok, 2 config error, 3 runtime failure threshold exceeded.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "transduct/bench.hpp"

namespace {

int run_command(const std::string& config_path, std::optional<std::uint64_t> seed,
                std::optional<std::string> out_dir, std::optional<int> jobs) {
  transduct::bench::ExperimentConfig cfg;
  nlohmann::json raw;
  try {
    {
      std::ifstream in(config_path);
      if (!in) throw transduct::bench::ConfigError("cannot open " + config_path);
      in >> raw;
    }
    cfg = transduct::bench::parse_config(raw);
  } catch (const std::exception& e) {
    nlohmann::json err = {{"error", "config"}, {"message", e.what()}};
    std::cerr << err.dump() << '\n';
    return 2;
  }
  if (seed) cfg.seed = *seed;
  if (jobs) cfg.jobs = *jobs;
  if (cfg.output_path.empty())
    cfg.output_path = std::filesystem::path(config_path).stem().string();
  if (out_dir)
    cfg.output_path =
        (std::filesystem::path(*out_dir) / std::filesystem::path(cfg.output_path).filename())
            .string();

  try {
    const auto table = transduct::bench::run_experiment(cfg, raw);
    std::cout << transduct::bench::to_csv(table);
    std::cout << "# wrote " << cfg.output_path << ".csv and .json\n";
    if (table.predictions > 0 && table.failures * 100 > table.predictions) {
      nlohmann::json err = {{"error", "runtime"},
                            {"message", "failure threshold exceeded"},
                            {"failures", table.failures},
                            {"predictions", table.predictions}};
      std::cerr << err.dump() << '\n';
      return 3;
    }
  } catch (const std::exception& e) {
    nlohmann::json err = {{"error", "runtime"}, {"message", e.what()}};
    std::cerr << err.dump() << '\n';
    return 3;
  }
  return 0;
}

int report_command(const std::string& table_path, const std::string& baseline, bool as_json) {
  try {
    const auto table = transduct::bench::table_from_csv(table_path);
    const auto report = transduct::bench::compare_report(table, baseline);
    if (as_json)
      std::cout << report.as_json.dump(2) << '\n';
    else
      std::cout << report.text;
  } catch (const std::exception& e) {
    nlohmann::json err = {{"error", "report"}, {"message", e.what()}};
    std::cerr << err.dump() << '\n';
    return 2;
  }
  return 0;
}

int validate_command(const std::string& config_path) {
  try {
    transduct::bench::load_config(config_path);
  } catch (const std::exception& e) {
    nlohmann::json err = {{"error", "config"}, {"message", e.what()}};
    std::cerr << err.dump() << '\n';
    return 2;
  }
  std::cout << "ok\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-point transductive prediction benchmark"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> jobs;
  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("config", config_path, "Path to the experiment config (JSON)")->required();
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out", out_dir, "Directory for the output table");
  run->add_option("--jobs", jobs, "Worker threads for instance-level parallelism");

  std::string table_path, baseline;
  bool report_json = false;
  auto* report = app.add_subcommand("report", "Summarize a result table against a baseline");
  report->add_option("table", table_path, "Path to a result table CSV")->required();
  report->add_option("--baseline", baseline, "Baseline estimator name")->required();
  report->add_flag("--json", report_json, "Emit JSON instead of text");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Validate an experiment config");
  validate->add_option("config", validate_path, "Path to the experiment config (JSON)")->required();

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) return run_command(config_path, seed, out_dir, jobs);
  if (report->parsed()) return report_command(table_path, baseline, report_json);
  if (validate->parsed()) return validate_command(validate_path);
  return 2;
}
