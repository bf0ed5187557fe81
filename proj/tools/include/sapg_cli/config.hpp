#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sapg/map.hpp"
#include "sapg/sapg.hpp"
#include "sapg/transforms.hpp"

namespace sapg::cli {

enum class Problem { denoise_synthesis_l1, deblur_tv, deblur_wavelet_l1, deblur_tv_unknown_sigma, custom };

std::string to_string(Problem p);
Problem problem_from_string(const std::string& s);

struct InputSpec {
  /// "synthetic" or a path to a .pgm / .raw image.
  std::string source = "synthetic";
  std::size_t rows = 64;
  std::size_t cols = 64;
  /// Synthetic generator: laplace_coefficients | phantom | gaussian_coefficients | tv_prior.
  std::string generator = "phantom";
  double true_theta = 1.0;
  /// Prior-chain length for tv_prior.
  std::size_t prior_steps = 20000;
};

struct NoiseSpec {
  NoiseKind kind = NoiseKind::gaussian;
  double snr_db = 30.0;
};

struct ModelSpec {
  /// gaussian | laplace
  std::string likelihood = "gaussian";
  /// identity | blur | synthesis | blur_synthesis
  std::string op = "identity";
  /// l1 | block_l1 | tv | elastic_net | squared_norm | zero
  std::string regulariser = "l1";
  std::size_t blur_size = 9;
  WaveletKind wavelet_kind = WaveletKind::orthogonal;
  std::size_t wavelet_levels = 4;
  double lipschitz_factor = 1.0;
  /// Moreau smoothing of the Laplace likelihood as a fraction of b^2.
  double laplace_smoothing = 0.125;
  std::size_t tv_inner_iters = 25;
  bool tv_warm_start = true;
  double fixed_ridge = 0.0;
  double elastic_rho = 1.0;
  double squared_coefficient = 1.0;
  /// Intensity range of written PGM images; 0 disables PGM output.
  int pgm_maxval = 0;
};

struct SweepSpec {
  std::size_t points = 12;
  double low_factor = 0.1;
  double high_factor = 10.0;
  std::vector<double> theta;
};

struct ExperimentConfig {
  Problem problem = Problem::custom;
  InputSpec input;
  NoiseSpec noise;
  ModelSpec model;
  SapgConfig sapg;
  double theta_min = 1e-3;
  double theta_max = 1e3;
  /// c0 = c0_over_d / d when set, else the guideline 1 / (theta0 d) unless c0 is explicit.
  std::optional<double> c0_over_d;
  std::optional<double> c0;
  double sigma_snr_min_db = 15.0;
  double sigma_snr_max_db = 45.0;
  double sigma_c0_over_d = 10.0;
  MapOptions map;
  SweepSpec sweep;
  std::size_t repetitions = 1;
  std::uint64_t master_seed = 0;
  std::filesystem::path output_dir = "out";
  std::size_t workers = 1;
  /// FNV-1a hash of the config text plus command-line overrides.
  std::string config_hash;
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::filesystem::path> out;
};

/// Parses an INI file. Presets fill problem defaults before the file's keys are
/// applied; unknown sections or keys are rejected with their path.
ExperimentConfig load_config(const std::filesystem::path& path, const Overrides& overrides = {});
ExperimentConfig parse_config(const std::string& text, const Overrides& overrides = {});

/// Per-problem experiment defaults.
ExperimentConfig preset(Problem problem);

std::string fnv1a_hex(const std::string& text);

/// Seed for repetition `rep`: splitmix64(master_seed + rep).
std::uint64_t repetition_seed(std::uint64_t master_seed, std::size_t rep);

}  // namespace sapg::cli
