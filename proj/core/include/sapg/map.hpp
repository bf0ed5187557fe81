#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "sapg/image.hpp"
#include "sapg/image_io.hpp"
#include "sapg/model.hpp"

namespace sapg {

struct MapOptions {
  /// Relative fixed-point residual at which the solver stops.
  double tol = 1e-6;
  std::size_t max_iters = 1000;
  /// Objective never increases (the candidate step is rejected instead).
  bool monotone = true;
  /// Inner solver settings for iterative proxes. The dual is warm-started across
  /// outer iterations, so a fixed modest count reaches the outer tolerance.
  TvProxOptions tv_prox{50, 0.0};
  std::optional<ImageVector> x0;
};

struct MapResult {
  ImageVector x_hat;
  std::vector<double> objective_trace;
  std::size_t iterations = 0;
  bool converged = false;
  double residual = 0.0;
};

/// Objective f_y(x) + theta^T g(x) (+ fixed prior penalty).
double map_objective(const PosteriorModel& model, std::span<const double> x, std::span<const double> theta);

/// Minimises the objective with monotone accelerated proximal gradient (adaptive
/// restart, backtracking on the Lipschitz estimate). Stops when
/// ||x - prox_{theta^T g / L}(x - grad f(x) / L)|| / ||x|| < tol.
MapResult solve_map(const PosteriorModel& model, std::span<const double> theta, const MapOptions& options = {});

struct Metrics {
  double mse_db = 0.0;
  double psnr = 0.0;
};

Metrics evaluate(const ImageVector& x_hat, const ImageVector& ground_truth);

/// CSV with columns iteration, objective.
void write_objective_csv(const std::filesystem::path& path, std::span<const double> trace,
                         const io::Metadata& metadata = {});

}  // namespace sapg
