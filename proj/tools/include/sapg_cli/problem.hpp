#pragma once

#include <cstdint>

#include "sapg/model.hpp"
#include "sapg_cli/config.hpp"

namespace sapg::cli {

/// Everything one repetition needs: data, model and the resolved SAPG settings.
struct ProblemInstance {
  /// Ground truth in the image domain (metrics are computed there).
  ImageVector truth;
  ImageVector y;
  /// Variance of the noise actually added.
  double sigma2 = 0.0;
  OperatorPtr forward;
  /// Maps the sampler state (pixels or coefficients) to an image.
  OperatorPtr to_image;
  std::shared_ptr<const PosteriorModel> model;
  SapgConfig sapg;
  MapOptions map;
  std::uint64_t seed = 0;
};

/// Deterministic piecewise-constant test image with intensities in [0, 255].
ImageVector phantom(std::size_t rows, std::size_t cols, std::uint64_t seed);

/// Builds the data and model of repetition `rep`. All randomness is derived
/// from repetition_seed(master_seed, rep).
ProblemInstance build_problem(const ExperimentConfig& config, std::size_t rep);

/// Same model with the likelihood's noise variance replaced (Gaussian only).
std::shared_ptr<const PosteriorModel> with_noise_variance(const PosteriorModel& model, double sigma2);

}  // namespace sapg::cli
