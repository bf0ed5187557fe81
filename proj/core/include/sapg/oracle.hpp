#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "sapg/image.hpp"
#include "sapg/model.hpp"

// Brute-force references used by the test suite: tensor-grid quadrature in
// d <= 3, Newton-based proximal maps in small dimension and closed forms.
namespace sapg::oracle {

using LogDensity = std::function<double(std::span<const double>)>;
using VectorFunction = std::function<std::vector<double>(std::span<const double>)>;

struct QuadratureOptions {
  double initial_radius = 4.0;
  double max_radius = 1.0e4;
  /// Relative mass allowed outside the accepted radius.
  double tail_tolerance = 1e-8;
  /// Accept when halving the spacing changes log Z by less than this.
  double refine_tolerance = 1e-4;
  std::size_t initial_intervals = 32;  // per axis, over [-R, R]
  std::size_t max_points = 60'000'000;
  std::vector<double> center;          // defaults to the origin
};

/// Symmetric tensor grid of `intervals` Simpson intervals per axis over [c - R, c + R].
struct QuadratureGrid {
  double radius = 0.0;
  std::size_t intervals = 0;
  std::vector<double> center;

  double spacing() const { return 2.0 * radius / static_cast<double>(intervals); }
};

struct QuadratureResult {
  double log_integral = 0.0;
  QuadratureGrid grid;
};

/// log of the integral of exp(log_density) over R^d by composite Simpson on a
/// symmetric tensor grid, with automatic radius doubling and spacing halving.
QuadratureResult log_integral(const LogDensity& log_density, std::size_t d, const QuadratureOptions& options = {});

/// Same integral on a fixed grid (no adaptation).
double log_integral_on_grid(const LogDensity& log_density, std::size_t d, const QuadratureGrid& grid);

/// Expectation of `h` under the normalised density, on the grid chosen by log_integral.
std::vector<double> expectation(const LogDensity& log_density, const VectorFunction& h, std::size_t d,
                                const QuadratureOptions& options = {});
std::vector<double> expectation_on_grid(const LogDensity& log_density, const VectorFunction& h, std::size_t d,
                                        const QuadratureGrid& grid);

/// log Z(theta) = log int exp(-theta^T g(x) - fixed(x)) dx for the model's regulariser.
double quadrature_log_z(const Regulariser& regulariser, std::span<const double> theta,
                        const QuadratureOptions& options = {});

/// log p(y | theta) up to a theta-independent constant:
/// log int exp(-f_y(x) - theta^T g(x) - fixed(x)) dx - log Z(theta).
double quadrature_log_marginal(const PosteriorModel& model, std::span<const double> theta,
                               const QuadratureOptions& options = {});

/// E_prior[g] - E_posterior[g] (Fisher's identity).
std::vector<double> quadrature_grad_marginal(const PosteriorModel& model, std::span<const double> theta,
                                             const QuadratureOptions& options = {});

/// Central finite difference of quadrature_log_marginal in each theta component.
/// Both evaluations of a difference share one grid, chosen adaptively at theta.
std::vector<double> finite_difference_grad_marginal(const PosteriorModel& model, std::span<const double> theta,
                                                    double relative_step = 1e-3,
                                                    const QuadratureOptions& options = {});

/// Maximiser of the quadrature marginal over [lower, upper] for scalar theta: the
/// zero of the Fisher-identity gradient located by bisection in log theta (a
/// boundary is returned when the gradient does not change sign).
double quadrature_marginal_argmax(const PosteriorModel& model, double lower, double upper,
                                  double log_tolerance = 1e-6, const QuadratureOptions& options = {});

/// Maximiser of the marginal likelihood for y = x + noise, noise ~ N(0, sigma2 I)
/// and prior density proportional to exp(-theta ||x||^2): 1 / (2 (mean(y^2) - sigma2)),
/// or `upper` when mean(y^2) <= sigma2.
double gaussian_marginal_mle(std::span<const double> y, double sigma2, double upper);

/// Stationary variance s2 / (1 - gamma / (2 s2)) of ULA on N(0, s2).
double ula_gaussian_stationary_variance(double gamma, double s2);

/// Convex function sum_j w_j ||B_j z - c_j||_2 + (q / 2) ||z||^2 on R^d.
/// l1, TV, weighted block l1 and l1-residual terms are all of this form.
struct NormSum {
  struct Term {
    std::vector<std::vector<double>> rows;  // B_j, each row of length d
    std::vector<double> offset;             // c_j
    double weight = 1.0;
  };
  std::size_t dim = 0;
  std::vector<Term> terms;
  double quadratic = 0.0;

  double value(std::span<const double> z) const;

  static NormSum zero(std::size_t d);
  /// sum_i w_i |z_i - c_i|.
  static NormSum weighted_l1(std::span<const double> weights, std::span<const double> offset = {});
  /// Isotropic TV on a rows x cols image with the library's discretisation.
  static NormSum tv(Shape shape, double weight);
};

struct BruteProxResult {
  ImageVector point;
  double residual = 0.0;
  double start_spread = 0.0;
};

/// argmin_z g(z) + ||z - x||^2 / (2 lambda) by damped Newton on a smoothed
/// problem with continuation, from several starts. Throws ConvergenceError
/// (carrying the spread) if the starts disagree by more than 1e-8.
BruteProxResult brute_prox(const NormSum& g, double lambda, const ImageVector& x);

}  // namespace sapg::oracle
