// cme-rates: experiment runner for conditional-mean-embedding rate studies.
//
//   cme-rates run --config cfg.json [--experiment name] [--seed 123] [--out dir]
//   cme-rates report <dir>
//
// `run` executes the configured experiment, writes rows.csv + summary.json
// into the output directory, and exits 0 iff every verdict passes. `report`
// re-renders a previously written summary.

#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cmerates/harness.hpp"

namespace {

int run_command(const std::string& config_path, const std::string& experiment_override,
                long long seed_override, bool has_seed, const std::string& out_override) {
  std::ifstream in(config_path);
  if (!in) {
    std::cerr << "error: cannot open config file " << config_path << "\n";
    return 2;
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: config parse failure: " << e.what() << "\n";
    return 2;
  }
  if (!experiment_override.empty()) j["experiment"] = experiment_override;

  cmerates::harness::ExperimentConfig cfg;
  try {
    cfg = cmerates::harness::parse_config(j);
  } catch (const cmerates::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  if (has_seed) cfg.master_seed = static_cast<std::uint64_t>(seed_override);
  if (!out_override.empty()) cfg.output_dir = out_override;

  cmerates::harness::RunResult res;
  try {
    res = cmerates::harness::run(cfg);
    cmerates::harness::write_outputs(res, cfg, cfg.output_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }

  for (const auto& f : res.fits)
    std::cout << (f.pass ? "[pass] " : "[FAIL] ") << f.name << ": slope " << f.slope
              << " vs theoretical " << f.theoretical << " (" << cmerates::harness::to_string(f.comparison)
              << ", tol " << f.tolerance << ", r2 " << f.r2 << ")\n";
  for (const auto& c : res.checks)
    std::cout << (c.pass ? "[pass] " : "[FAIL] ") << c.name
              << (c.details.empty() ? "" : ": " + c.details) << "\n";
  std::cout << "outputs written to " << cfg.output_dir << "\n";
  return res.all_pass ? 0 : 1;
}

int report_command(const std::string& dir) {
  std::ifstream in(dir + "/summary.json");
  if (!in) {
    std::cerr << "error: cannot open " << dir << "/summary.json\n";
    return 2;
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: summary parse failure: " << e.what() << "\n";
    return 2;
  }
  std::cout << "experiment: " << j["config"]["experiment"].get<std::string>() << "\n";
  std::cout << "git: " << j.value("git_describe", std::string("unknown")) << "\n";
  for (const auto& r : j["results"])
    std::cout << (r["verdict"] == "pass" ? "[pass] " : "[FAIL] ") << r["name"].get<std::string>()
              << ": slope " << r["slope"].get<double>() << " vs " << r["theoretical"].get<double>()
              << " +/- " << r["tolerance"].get<double>() << "\n";
  for (const auto& c : j["checks"])
    std::cout << (c["pass"].get<bool>() ? "[pass] " : "[FAIL] ") << c["name"].get<std::string>()
              << "\n";
  const bool ok = j.value("all_pass", false);
  std::cout << (ok ? "all verdicts pass" : "FAILURES present") << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conditional mean embedding rate experiments"};
  app.require_subcommand(1);

  std::string config_path, experiment_override, out_override, report_dir;
  long long seed_override = 0;

  CLI::App* run = app.add_subcommand("run", "run an experiment from a JSON config");
  run->add_option("--config", config_path, "config file path")->required();
  run->add_option("--experiment", experiment_override, "override the experiment name");
  CLI::Option* seed_opt = run->add_option("--seed", seed_override, "override master_seed");
  run->add_option("--out", out_override, "override the output directory");

  CLI::App* report = app.add_subcommand("report", "re-render a summary directory");
  report->add_option("dir", report_dir, "output directory of a previous run")->required();

  CLI11_PARSE(app, argc, argv);

  if (run->parsed())
    return run_command(config_path, experiment_override, seed_override, seed_opt->count() > 0,
                       out_override);
  return report_command(report_dir);
}
