#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sapg/error.hpp"
#include "sapg_cli/commands.hpp"
#include "sapg_cli/config.hpp"

namespace {

std::vector<double> parse_theta(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != item.size() || !(v > 0.0)) {
      throw sapg::Error(sapg::ErrorKind::config, "--theta: expected positive numbers, got '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw sapg::Error(sapg::ErrorKind::config, "--theta: empty list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace sapg::cli;
  CLI::App app{"Empirical Bayes regularisation-parameter estimation with SAPG and MAP reconstruction"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> out;
  std::optional<std::string> theta_text;

  auto add_common = [&](CLI::App* sub, bool with_theta) {
    sub->add_option("--config", config_path, "Experiment INI file")->required();
    sub->add_option("--seed", seed, "Master seed (overrides the config)");
    sub->add_option("--workers", workers, "Concurrent repetitions / grid points")->check(CLI::PositiveNumber);
    sub->add_option("--out", out, "Output directory (overrides the config)");
    if (with_theta) sub->add_option("--theta", theta_text, "Comma-separated theta, bypassing summary.json");
  };
  auto* estimate = app.add_subcommand("estimate", "Run SAPG for every repetition");
  add_common(estimate, false);
  auto* map = app.add_subcommand("map", "MAP reconstruction at the estimated or given theta");
  add_common(map, true);
  auto* sweep = app.add_subcommand("sweep", "MSE over a theta grid");
  add_common(sweep, true);
  auto* diagnose = app.add_subcommand("diagnose", "Convergence diagnostics of a finished run");
  add_common(diagnose, false);
  auto* oracle = app.add_subcommand("oracle-suite", "Quadrature and brute-force checks");
  std::string oracle_out = "oracle_out";
  oracle->add_option("--out", oracle_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (oracle->parsed()) return cmd_oracle_suite(oracle_out);

  ExperimentConfig config;
  std::optional<std::vector<double>> theta;
  try {
    Overrides overrides{seed, workers, out ? std::optional<std::filesystem::path>(*out) : std::nullopt};
    config = load_config(config_path, overrides);
    if (theta_text) theta = parse_theta(*theta_text);
  } catch (const sapg::Error& e) {
    std::cerr << e.what() << '\n';
    return e.kind() == sapg::ErrorKind::io ? kExitIo : kExitConfig;
  }

  if (estimate->parsed()) return cmd_estimate(config);
  if (map->parsed()) return cmd_map(config, theta);
  if (sweep->parsed()) return cmd_sweep(config, theta);
  return cmd_diagnose(config);
}
