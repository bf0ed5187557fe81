#include "sapg/oracle.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace sapg::oracle {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double simpson_weight(std::size_t i, std::size_t n) {
  if (i == 0 || i == n) return 1.0;
  return (i % 2 == 1) ? 4.0 : 2.0;
}

std::vector<double> grid_center(const QuadratureGrid& grid, std::size_t d) {
  if (grid.center.empty()) return std::vector<double>(d, 0.0);
  if (grid.center.size() != d) throw_dimension("quadrature.center", d, grid.center.size());
  return grid.center;
}

// Streams the Simpson sum of exp(log f) (and optionally exp(log f) * h) over the
// grid with a running log-sum-exp.
struct Accumulator {
  double log_max = kNegInf;
  double sum = 0.0;
  std::vector<double> moments;

  void add(double log_w, const std::vector<double>* h) {
    if (log_w == kNegInf) return;
    if (log_w > log_max) {
      const double scale = log_max == kNegInf ? 0.0 : std::exp(log_max - log_w);
      sum *= scale;
      for (double& m : moments) m *= scale;
      log_max = log_w;
    }
    const double w = std::exp(log_w - log_max);
    sum += w;
    if (h) {
      if (moments.empty()) moments.assign(h->size(), 0.0);
      for (std::size_t i = 0; i < h->size(); ++i) moments[i] += w * (*h)[i];
    }
  }
};

Accumulator integrate(const LogDensity& log_density, const VectorFunction* h, std::size_t d,
                      const QuadratureGrid& grid) {
  if (d == 0 || d > 3) throw Error(ErrorKind::dimension, "quadrature: supports 1 <= d <= 3");
  if (grid.intervals == 0 || grid.intervals % 4 != 0) {
    throw Error(ErrorKind::config, "quadrature: intervals must be a positive multiple of 4");
  }
  const auto center = grid_center(grid, d);
  const std::size_t n = grid.intervals;
  const double hstep = grid.spacing();
  const double log_cell = static_cast<double>(d) * std::log(hstep / 3.0);
  std::vector<std::size_t> idx(d, 0);
  std::vector<double> x(d);
  Accumulator acc;
  for (;;) {
    double w = 1.0;
    for (std::size_t a = 0; a < d; ++a) {
      x[a] = center[a] - grid.radius + static_cast<double>(idx[a]) * hstep;
      w *= simpson_weight(idx[a], n);
    }
    const double lf = log_density(x);
    if (std::isnan(lf)) throw Error(ErrorKind::domain, "quadrature: log density returned NaN");
    if (h) {
      const auto hv = (*h)(x);
      acc.add(lf + std::log(w) + log_cell, &hv);
    } else {
      acc.add(lf + std::log(w) + log_cell, nullptr);
    }
    std::size_t a = 0;
    while (a < d && ++idx[a] > n) idx[a++] = 0;
    if (a == d) break;
  }
  return acc;
}

double log_of(const Accumulator& acc) { return acc.sum > 0.0 ? acc.log_max + std::log(acc.sum) : kNegInf; }

std::size_t points(std::size_t intervals, std::size_t d) {
  double p = 1.0;
  for (std::size_t a = 0; a < d; ++a) p *= static_cast<double>(intervals + 1);
  return p > 1e18 ? std::numeric_limits<std::size_t>::max() : static_cast<std::size_t>(p);
}

}  // namespace

double log_integral_on_grid(const LogDensity& log_density, std::size_t d, const QuadratureGrid& grid) {
  return log_of(integrate(log_density, nullptr, d, grid));
}

QuadratureResult log_integral(const LogDensity& log_density, std::size_t d, const QuadratureOptions& options) {
  std::size_t intervals = std::max<std::size_t>(4, options.initial_intervals / 4 * 4);
  QuadratureGrid grid{options.initial_radius, intervals, options.center};
  auto too_many = [&](std::size_t n) {
    if (points(n, d) > options.max_points) {
      throw Error(ErrorKind::convergence, "quadrature: grid exceeds max_points before reaching tolerance");
    }
  };

  // Radius: double at constant spacing until the added shell carries negligible mass.
  double current = log_integral_on_grid(log_density, d, grid);
  for (;;) {
    QuadratureGrid wider{2.0 * grid.radius, 2 * grid.intervals, grid.center};
    if (wider.radius > options.max_radius) {
      throw Error(ErrorKind::domain, "quadrature: integrand mass still growing at the maximum radius");
    }
    too_many(wider.intervals);
    const double next = log_integral_on_grid(log_density, d, wider);
    const bool settled = current != kNegInf && next - current < std::log1p(options.tail_tolerance);
    grid = wider;
    current = next;
    if (settled) break;
  }

  // Spacing: halve until log Z is stable.
  for (;;) {
    QuadratureGrid finer{grid.radius, 2 * grid.intervals, grid.center};
    too_many(finer.intervals);
    const double next = log_integral_on_grid(log_density, d, finer);
    grid = finer;
    const bool settled = std::abs(next - current) < options.refine_tolerance;
    current = next;
    if (settled) break;
  }
  return {current, grid};
}

std::vector<double> expectation_on_grid(const LogDensity& log_density, const VectorFunction& h, std::size_t d,
                                        const QuadratureGrid& grid) {
  const auto acc = integrate(log_density, &h, d, grid);
  if (!(acc.sum > 0.0)) throw Error(ErrorKind::domain, "quadrature: zero mass");
  std::vector<double> out = acc.moments;
  for (double& v : out) v /= acc.sum;
  return out;
}

std::vector<double> expectation(const LogDensity& log_density, const VectorFunction& h, std::size_t d,
                                const QuadratureOptions& options) {
  const auto res = log_integral(log_density, d, options);
  return expectation_on_grid(log_density, h, d, res.grid);
}

namespace {

LogDensity prior_density(const Regulariser& reg, std::span<const double> theta) {
  std::vector<double> t(theta.begin(), theta.end());
  return [&reg, t](std::span<const double> x) { return -reg.potential(x, t); };
}

LogDensity joint_density(const PosteriorModel& model, std::span<const double> theta) {
  std::vector<double> t(theta.begin(), theta.end());
  return [&model, t](std::span<const double> x) {
    return -model.likelihood().value(x) - model.regulariser().potential(x, t);
  };
}

VectorFunction statistics_of(const Regulariser& reg) {
  return [&reg](std::span<const double> x) { return reg.statistics(x); };
}

}  // namespace

double quadrature_log_z(const Regulariser& regulariser, std::span<const double> theta,
                        const QuadratureOptions& options) {
  if (theta.size() != regulariser.theta_dim()) throw_dimension("theta", regulariser.theta_dim(), theta.size());
  return log_integral(prior_density(regulariser, theta), regulariser.dim(), options).log_integral;
}

double quadrature_log_marginal(const PosteriorModel& model, std::span<const double> theta,
                               const QuadratureOptions& options) {
  const std::size_t d = model.dim();
  return log_integral(joint_density(model, theta), d, options).log_integral -
         log_integral(prior_density(model.regulariser(), theta), d, options).log_integral;
}

std::vector<double> quadrature_grad_marginal(const PosteriorModel& model, std::span<const double> theta,
                                             const QuadratureOptions& options) {
  const std::size_t d = model.dim();
  const auto stats = statistics_of(model.regulariser());
  const auto prior = expectation(prior_density(model.regulariser(), theta), stats, d, options);
  const auto post = expectation(joint_density(model, theta), stats, d, options);
  std::vector<double> grad(prior.size());
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = prior[i] - post[i];
  return grad;
}

std::vector<double> finite_difference_grad_marginal(const PosteriorModel& model, std::span<const double> theta,
                                                    double relative_step, const QuadratureOptions& options) {
  const std::size_t d = model.dim();
  const auto joint_grid = log_integral(joint_density(model, theta), d, options).grid;
  const auto prior_grid = log_integral(prior_density(model.regulariser(), theta), d, options).grid;
  std::vector<double> grad(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    std::vector<double> up(theta.begin(), theta.end()), dn(theta.begin(), theta.end());
    const double h = relative_step * theta[i];
    up[i] += h;
    dn[i] -= h;
    auto value = [&](const std::vector<double>& t) {
      return log_integral_on_grid(joint_density(model, t), d, joint_grid) -
             log_integral_on_grid(prior_density(model.regulariser(), t), d, prior_grid);
    };
    grad[i] = (value(up) - value(dn)) / (2.0 * h);
  }
  return grad;
}

double quadrature_marginal_argmax(const PosteriorModel& model, double lower, double upper, double log_tolerance,
                                  const QuadratureOptions& options) {
  if (model.theta_dim() != 1) throw Error(ErrorKind::dimension, "quadrature argmax: scalar theta only");
  if (!(lower > 0.0) || !(upper > lower)) throw Error(ErrorKind::domain, "quadrature argmax: bad bracket");
  auto grad = [&](double t) {
    const double th[1] = {t};
    return quadrature_grad_marginal(model, th, options)[0];
  };
  if (grad(lower) <= 0.0) return lower;
  if (grad(upper) >= 0.0) return upper;
  double a = std::log(lower), b = std::log(upper);
  while (b - a > log_tolerance) {
    const double m = 0.5 * (a + b);
    if (grad(std::exp(m)) > 0.0) {
      a = m;
    } else {
      b = m;
    }
  }
  return std::exp(0.5 * (a + b));
}

double gaussian_marginal_mle(std::span<const double> y, double sigma2, double upper) {
  if (!(sigma2 > 0.0)) throw Error(ErrorKind::domain, "gaussian_marginal_mle: sigma2 must be > 0");
  const double m = vec::norm2_sq(y) / static_cast<double>(y.size());
  if (m == 0.0) throw Error(ErrorKind::domain, "gaussian_marginal_mle: observation is identically zero");
  if (m <= sigma2) return upper;
  return std::min(1.0 / (2.0 * (m - sigma2)), upper);
}

double ula_gaussian_stationary_variance(double gamma, double s2) {
  if (!(s2 > 0.0)) throw Error(ErrorKind::domain, "ula variance: s2 must be > 0");
  if (!(gamma > 0.0) || !(gamma < 2.0 * s2)) throw Error(ErrorKind::domain, "ula variance: need 0 < gamma < 2 s2");
  return s2 / (1.0 - gamma / (2.0 * s2));
}

// ---------------------------------------------------------------------------

double NormSum::value(std::span<const double> z) const {
  double v = 0.5 * quadratic * vec::norm2_sq(z);
  for (const auto& t : terms) {
    double sq = 0.0;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const double br = vec::dot(t.rows[r], z) - (t.offset.empty() ? 0.0 : t.offset[r]);
      sq += br * br;
    }
    v += t.weight * std::sqrt(sq);
  }
  return v;
}

NormSum NormSum::zero(std::size_t d) { return {d, {}, 0.0}; }

NormSum NormSum::weighted_l1(std::span<const double> weights, std::span<const double> offset) {
  NormSum g;
  g.dim = weights.size();
  for (std::size_t i = 0; i < weights.size(); ++i) {
    Term t;
    std::vector<double> row(g.dim, 0.0);
    row[i] = 1.0;
    t.rows.push_back(std::move(row));
    t.offset = {offset.empty() ? 0.0 : offset[i]};
    t.weight = weights[i];
    g.terms.push_back(std::move(t));
  }
  return g;
}

NormSum NormSum::tv(Shape shape, double weight) {
  NormSum g;
  g.dim = shape.size();
  const std::size_t rows = shape.rows, cols = shape.cols;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      Term t;
      t.weight = weight;
      const std::size_t i = r * cols + c;
      if (c + 1 < cols) {
        std::vector<double> row(g.dim, 0.0);
        row[i + 1] = 1.0;
        row[i] = -1.0;
        t.rows.push_back(std::move(row));
      }
      if (r + 1 < rows) {
        std::vector<double> row(g.dim, 0.0);
        row[i + cols] = 1.0;
        row[i] = -1.0;
        t.rows.push_back(std::move(row));
      }
      if (t.rows.empty()) continue;
      t.offset.assign(t.rows.size(), 0.0);
      g.terms.push_back(std::move(t));
    }
  }
  return g;
}

namespace {

// Smoothed objective sum w sqrt(|Bz - c|^2 + eps^2) + q/2 |z|^2 + |z - x|^2 / (2 lambda).
struct Smoothed {
  const NormSum& g;
  double lambda;
  const Eigen::VectorXd& x;
  double eps;

  double value(const Eigen::VectorXd& z) const {
    double v = 0.5 * g.quadratic * z.squaredNorm() + (z - x).squaredNorm() / (2.0 * lambda);
    for (const auto& t : g.terms) {
      double sq = eps * eps;
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const double br = Eigen::Map<const Eigen::VectorXd>(t.rows[r].data(), z.size()).dot(z) - t.offset[r];
        sq += br * br;
      }
      v += t.weight * std::sqrt(sq);
    }
    return v;
  }

  void derivatives(const Eigen::VectorXd& z, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) const {
    const auto n = z.size();
    grad = (g.quadratic * z) + (z - x) / lambda;
    hess = Eigen::MatrixXd::Identity(n, n) * (g.quadratic + 1.0 / lambda);
    for (const auto& t : g.terms) {
      const auto m = static_cast<Eigen::Index>(t.rows.size());
      Eigen::MatrixXd b(m, n);
      Eigen::VectorXd r(m);
      for (Eigen::Index k = 0; k < m; ++k) {
        b.row(k) = Eigen::Map<const Eigen::RowVectorXd>(t.rows[k].data(), n);
        r(k) = b.row(k).dot(z) - t.offset[k];
      }
      const double s = std::sqrt(r.squaredNorm() + eps * eps);
      grad += t.weight * b.transpose() * (r / s);
      const Eigen::MatrixXd inner = (Eigen::MatrixXd::Identity(m, m) / s) - (r * r.transpose()) / (s * s * s);
      hess += t.weight * b.transpose() * inner * b;
    }
  }
};

Eigen::VectorXd newton_continuation(const NormSum& g, double lambda, const Eigen::VectorXd& x,
                                    Eigen::VectorXd z, double& residual) {
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  for (double eps = 1.0; eps >= 1e-13; eps *= 0.1) {
    Smoothed f{g, lambda, x, eps};
    for (int it = 0; it < 200; ++it) {
      f.derivatives(z, grad, hess);
      const Eigen::VectorXd step = hess.ldlt().solve(-grad);
      const double slope = grad.dot(step);
      if (!(slope < 0.0) || grad.norm() < 1e-15 * (1.0 + x.norm())) break;
      const double f0 = f.value(z);
      double a = 1.0;
      while (a > 1e-20 && f.value(z + a * step) > f0 + 1e-4 * a * slope) a *= 0.5;
      z += a * step;
      if ((a * step).norm() < 1e-16 * (1.0 + z.norm())) break;
    }
  }
  Smoothed f{g, lambda, x, 1e-13};
  f.derivatives(z, grad, hess);
  residual = grad.norm();
  return z;
}

}  // namespace

BruteProxResult brute_prox(const NormSum& g, double lambda, const ImageVector& x) {
  if (!(lambda > 0.0)) throw Error(ErrorKind::domain, "brute_prox: lambda must be > 0");
  if (x.size() != g.dim) throw_dimension("brute_prox.x", g.dim, x.size());
  if (g.dim > 16) throw Error(ErrorKind::dimension, "brute_prox: intended for small dimension");
  const auto n = static_cast<Eigen::Index>(g.dim);
  const Eigen::VectorXd xv = Eigen::Map<const Eigen::VectorXd>(x.raw().data(), n);

  std::vector<Eigen::VectorXd> starts{xv, Eigen::VectorXd::Zero(n)};
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> normal(0.0, 1.0 + xv.norm());
  for (int s = 0; s < 2; ++s) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
    starts.push_back(v);
  }

  std::vector<Eigen::VectorXd> sols;
  double worst_residual = 0.0;
  for (const auto& s : starts) {
    double r = 0.0;
    sols.push_back(newton_continuation(g, lambda, xv, s, r));
    worst_residual = std::max(worst_residual, r);
  }
  double spread = 0.0;
  for (const auto& s : sols) spread = std::max(spread, (s - sols.front()).lpNorm<Eigen::Infinity>());

  const double scale = 1.0 + xv.lpNorm<Eigen::Infinity>();
  if (spread > 1e-8 * scale) throw ConvergenceError("brute_prox: multi-start solutions disagree", spread);

  BruteProxResult res;
  res.point = ImageVector(x.shape(), std::vector<double>(sols.front().data(), sols.front().data() + n), x.tag());
  res.residual = worst_residual;
  res.start_spread = spread;
  return res;
}

}  // namespace sapg::oracle
