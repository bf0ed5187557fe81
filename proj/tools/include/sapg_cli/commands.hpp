#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "sapg_cli/config.hpp"

namespace sapg::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitDivergence = 3,
  kExitIo = 4,
};

/// Runs SAPG for every repetition; writes rep_XXX/{theta_trace.csv, chain_*.csv,
/// summary.json, observation.raw, truth.raw} and an aggregate summary.json.
int cmd_estimate(const ExperimentConfig& config);

/// MAP reconstruction per repetition with theta from `theta` or the repetition's summary.json.
int cmd_map(const ExperimentConfig& config, const std::optional<std::vector<double>>& theta);

/// MSE over a geometric grid around the estimate (repetition 0), plus the estimate itself.
int cmd_sweep(const ExperimentConfig& config, const std::optional<std::vector<double>>& theta);

/// Log-probability, gradient-residual and autocorrelation diagnostics of a finished run.
int cmd_diagnose(const ExperimentConfig& config);

/// Quadrature and brute-force checks of the library's closed forms and proxes.
int cmd_oracle_suite(const std::filesystem::path& out_dir);

/// Directory of repetition `rep` under `out`.
std::filesystem::path repetition_dir(const std::filesystem::path& out, std::size_t rep);

}  // namespace sapg::cli
