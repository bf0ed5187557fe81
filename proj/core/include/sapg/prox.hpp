#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sapg/blocks.hpp"
#include "sapg/image.hpp"

namespace sapg {

struct ProxResult {
  ImageVector point;
  std::size_t inner_iterations = 0;
  double inner_residual = 0.0;
};

// Closed-form proximal maps. The in-place span overloads are the hot-loop forms
// used by the samplers.

ImageVector soft_threshold(const ImageVector& x, double t);
void soft_threshold_inplace(std::span<double> x, double t);

/// Soft threshold with per-block threshold `lambda * theta[j]`.
ImageVector prox_weighted_l1_blocks(const ImageVector& x, std::span<const double> theta, const BlockList& blocks,
                                    double lambda = 1.0);

ImageVector project_nonneg(const ImageVector& x);

/// prox of t * ||y - .||_1, i.e. y + soft_threshold(x - y, t).
ImageVector prox_l1_residual(const ImageVector& x, const ImageVector& y, double t);
void prox_l1_residual_inplace(std::span<double> x, std::span<const double> y, double t);

/// Euclidean projection onto the unit l-infinity ball.
ImageVector project_unit_linf(const ImageVector& x);

// Isotropic total variation with forward differences and Neumann (replicate)
// boundary. A 1-D signal is treated as a single row.

double tv_iso(const ImageVector& x);

/// Forward-difference gradient; output holds horizontal then vertical components (2 * size).
void tv_gradient(const ImageVector& x, std::span<double> out);
/// Exact adjoint of tv_gradient.
void tv_gradient_adjoint(const Shape& shape, std::span<const double> p, std::span<double> out);

struct TvProxOptions {
  std::size_t inner_iters = 25;
  /// Stop once the duality-gap bound on ||z - z*|| / ||z|| drops below this (checked every
  /// 10 iterations; throws ConvergenceError if never reached). 0 runs exactly `inner_iters`.
  double tolerance = 0.0;
};

/// Dual variable carried between successive calls (one per chain).
struct TvWarmStart {
  std::vector<double> dual;
};

/// Approximate prox of weight * TV via accelerated primal-dual iterations on
/// the strongly convex primal. Output mean equals input mean.
ProxResult prox_tv_iso(const ImageVector& x, double weight, const TvProxOptions& options = {},
                       TvWarmStart* warm = nullptr);

}  // namespace sapg
