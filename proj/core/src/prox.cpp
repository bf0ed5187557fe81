#include "sapg/prox.hpp"

#include <algorithm>
#include <cmath>

namespace sapg {

bool blocks_partition(const BlockList& blocks, std::size_t dim) {
  std::vector<char> seen(dim, 0);
  std::size_t covered = 0;
  for (const auto& b : blocks) {
    if (b.offset + b.size > dim) return false;
    for (std::size_t i = b.offset; i < b.offset + b.size; ++i) {
      if (seen[i]) return false;
      seen[i] = 1;
    }
    covered += b.size;
  }
  return covered == dim;
}

void soft_threshold_inplace(std::span<double> x, double t) {
  for (double& v : x) {
    const double a = std::abs(v) - t;
    v = a > 0.0 ? std::copysign(a, v) : 0.0;
  }
}

ImageVector soft_threshold(const ImageVector& x, double t) {
  if (t < 0.0) throw Error(ErrorKind::domain, "soft_threshold: negative threshold");
  ImageVector out = x;
  soft_threshold_inplace(out.values(), t);
  return out;
}

ImageVector prox_weighted_l1_blocks(const ImageVector& x, std::span<const double> theta, const BlockList& blocks,
                                    double lambda) {
  if (theta.size() != blocks.size()) throw_dimension("prox_weighted_l1_blocks.theta", blocks.size(), theta.size());
  if (!blocks_partition(blocks, x.size())) {
    throw Error(ErrorKind::dimension, "prox_weighted_l1_blocks: blocks do not partition the index set");
  }
  ImageVector out = x;
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    if (theta[j] < 0.0) throw Error(ErrorKind::domain, "prox_weighted_l1_blocks: negative theta");
    soft_threshold_inplace(out.values().subspan(blocks[j].offset, blocks[j].size), lambda * theta[j]);
  }
  return out;
}

ImageVector project_nonneg(const ImageVector& x) {
  ImageVector out = x;
  for (double& v : out.raw()) v = std::max(v, 0.0);
  return out;
}

void prox_l1_residual_inplace(std::span<double> x, std::span<const double> y, double t) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = x[i] - y[i];
    const double a = std::abs(r) - t;
    x[i] = y[i] + (a > 0.0 ? std::copysign(a, r) : 0.0);
  }
}

ImageVector prox_l1_residual(const ImageVector& x, const ImageVector& y, double t) {
  x.require_same_shape(y, "prox_l1_residual.y");
  if (t < 0.0) throw Error(ErrorKind::domain, "prox_l1_residual: negative threshold");
  ImageVector out = x;
  prox_l1_residual_inplace(out.values(), y.values(), t);
  return out;
}

ImageVector project_unit_linf(const ImageVector& x) {
  ImageVector out = x;
  for (double& v : out.raw()) v = std::clamp(v, -1.0, 1.0);
  return out;
}

void tv_gradient(const ImageVector& x, std::span<double> out) {
  const std::size_t rows = x.shape().rows;
  const std::size_t cols = x.shape().cols;
  const std::size_t n = rows * cols;
  auto gh = out.subspan(0, n);
  auto gv = out.subspan(n, n);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      gh[i] = c + 1 < cols ? x[i + 1] - x[i] : 0.0;
      gv[i] = r + 1 < rows ? x[i + cols] - x[i] : 0.0;
    }
  }
}

void tv_gradient_adjoint(const Shape& shape, std::span<const double> p, std::span<double> out) {
  const std::size_t rows = shape.rows;
  const std::size_t cols = shape.cols;
  const std::size_t n = rows * cols;
  auto ph = p.subspan(0, n);
  auto pv = p.subspan(n, n);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      if (c + 1 < cols) {
        out[i] -= ph[i];
        out[i + 1] += ph[i];
      }
      if (r + 1 < rows) {
        out[i] -= pv[i];
        out[i + cols] += pv[i];
      }
    }
  }
}

double tv_iso(const ImageVector& x) {
  const std::size_t n = x.size();
  std::vector<double> g(2 * n);
  tv_gradient(x, g);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::hypot(g[i], g[n + i]);
  return s;
}

ProxResult prox_tv_iso(const ImageVector& x, double weight, const TvProxOptions& options, TvWarmStart* warm) {
  if (weight < 0.0) throw Error(ErrorKind::domain, "prox_tv_iso: negative weight");
  if (options.inner_iters == 0) throw Error(ErrorKind::domain, "prox_tv_iso: inner_iters must be >= 1");
  if (!x.all_finite()) throw Error(ErrorKind::domain, "prox_tv_iso: non-finite input");

  const std::size_t n = x.size();
  ProxResult result{x, 0, 0.0};
  if (weight == 0.0 || n < 2) return result;

  std::vector<double> local_dual;
  std::vector<double>& p = warm ? warm->dual : local_dual;
  if (p.size() != 2 * n) p.assign(2 * n, 0.0);

  // Accelerated primal-dual scheme for min 0.5||z - x||^2 + weight * ||Dz||_{2,1},
  // with ||D||^2 <= 8 and a 1-strongly convex primal term.
  const double op_norm = std::sqrt(8.0);
  double tau = 1.0 / op_norm;
  double sigma = 1.0 / op_norm;

  std::vector<double> kt(n);
  std::vector<double> grad(2 * n);
  std::vector<double>& z = result.point.raw();
  tv_gradient_adjoint(x.shape(), p, kt);
  for (std::size_t i = 0; i < n; ++i) z[i] = x[i] - kt[i];
  ImageVector z_bar = result.point;
  std::vector<double> z_old(n);
  ImageVector u(x.shape());
  std::vector<double> du(options.tolerance > 0.0 ? 2 * n : 0);

  const double w2 = weight * weight;
  for (std::size_t it = 0; it < options.inner_iters; ++it) {
    tv_gradient(z_bar, grad);
    for (std::size_t i = 0; i < n; ++i) {
      double qh = p[i] + sigma * grad[i];
      double qv = p[n + i] + sigma * grad[n + i];
      const double m2 = qh * qh + qv * qv;
      if (m2 > w2) {
        const double s = weight / std::sqrt(m2);
        qh *= s;
        qv *= s;
      }
      p[i] = qh;
      p[n + i] = qv;
    }
    tv_gradient_adjoint(x.shape(), p, kt);
    std::copy(z.begin(), z.end(), z_old.begin());
    const double inv = 1.0 / (1.0 + tau);
    double change = 0.0;
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      z[i] = (z_old[i] - tau * kt[i] + tau * x[i]) * inv;
      const double d = z[i] - z_old[i];
      change += d * d;
      norm += z[i] * z[i];
    }
    const double theta = 1.0 / std::sqrt(1.0 + 2.0 * tau);
    tau *= theta;
    sigma /= theta;
    for (std::size_t i = 0; i < n; ++i) z_bar[i] = z[i] + theta * (z[i] - z_old[i]);

    result.inner_iterations = it + 1;
    if (options.tolerance <= 0.0) {
      result.inner_residual = std::sqrt(change / std::max(norm, 1e-300));
      continue;
    }
    if (it % 10 != 9 && it + 1 != options.inner_iters) continue;
    // Certificate from the dual iterate: u = x - D^T p satisfies
    // ||u - z*||^2 <= 2 gap with gap = sum_i (w |(Du)_i| - <(Du)_i, p_i>) >= 0.
    for (std::size_t i = 0; i < n; ++i) u[i] = x[i] - kt[i];
    tv_gradient(u, du);
    double gap = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      gap += weight * std::hypot(du[i], du[n + i]) - (du[i] * p[i] + du[n + i] * p[n + i]);
    }
    result.inner_residual = std::sqrt(2.0 * std::max(gap, 0.0) / std::max(vec::norm2_sq(u.values()), 1e-300));
    if (result.inner_residual < options.tolerance) {
      std::copy(u.raw().begin(), u.raw().end(), z.begin());
      return result;
    }
  }
  if (options.tolerance > 0.0) {
    throw ConvergenceError("prox_tv_iso: inner solver did not reach tolerance", result.inner_residual);
  }
  // The point paired with the dual iterate is far more accurate than the
  // (step-size damped) primal iterate.
  for (std::size_t i = 0; i < n; ++i) z[i] = x[i] - kt[i];
  return result;
}

}  // namespace sapg
