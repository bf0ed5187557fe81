#include "sapg/map.hpp"

#include <algorithm>
#include <cmath>

#include "sapg/csv.hpp"
#include "sapg/transforms.hpp"

namespace sapg {

double map_objective(const PosteriorModel& model, std::span<const double> x, std::span<const double> theta) {
  return model.likelihood().value(x) + model.regulariser().potential(x, theta);
}

namespace {

struct Solver {
  const PosteriorModel& model;
  std::span<const double> theta;
  ProxWorkspace workspace;
  std::vector<double> grad;

  // Forward-backward step from `from` with step 1/lip into `out`.
  void forward_backward(std::span<const double> from, double lip, std::span<double> out) {
    model.likelihood().gradient(from, grad);
    std::vector<double> z(from.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = from[i] - grad[i] / lip;
    model.regulariser().prox(z, theta, 1.0 / lip, out, &workspace);
  }

  double residual(std::span<const double> x, double lip) {
    std::vector<double> p(x.size());
    forward_backward(x, lip, p);
    const double nx = vec::norm2(x);
    return std::sqrt(vec::dist_sq(x, p)) / std::max(nx, 1e-300);
  }
};

}  // namespace

MapResult solve_map(const PosteriorModel& model, std::span<const double> theta, const MapOptions& options) {
  if (theta.size() != model.theta_dim()) throw_dimension("theta", model.theta_dim(), theta.size());
  if (!model.theta_domain().contains(theta)) throw Error(ErrorKind::domain, "solve_map: theta outside its domain");
  const std::size_t d = model.dim();

  Solver solver{model, theta, {}, std::vector<double>(d)};
  solver.workspace.tv_override = options.tv_prox;
  const auto& lik = model.likelihood();

  ImageVector x = options.x0 ? *options.x0 : lik.initial_state();
  if (x.size() != d) throw_dimension("map.x0", d, x.size());
  double lip = lik.lipschitz();
  if (!(lip > 0.0)) lip = 1.0;

  MapResult result;
  double fx = map_objective(model, x.values(), theta);
  result.objective_trace.push_back(fx);

  std::vector<double> x_prev = x.raw();
  std::vector<double> y = x.raw();
  std::vector<double> z(d), gy(d);
  double t = 1.0;

  for (std::size_t k = 1; k <= options.max_iters; ++k) {
    // Backtracking: grow the Lipschitz estimate until the quadratic upper bound holds at z.
    const double fy_smooth = lik.value(y);
    lik.gradient(y, gy);
    for (;;) {
      std::vector<double> u(d);
      for (std::size_t i = 0; i < d; ++i) u[i] = y[i] - gy[i] / lip;
      model.regulariser().prox(u, theta, 1.0 / lip, z, &solver.workspace);
      double lin = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double dz = z[i] - y[i];
        lin += gy[i] * dz;
        sq += dz * dz;
      }
      const double fz_smooth = lik.value(z);
      if (fz_smooth <= fy_smooth + lin + 0.5 * lip * sq + 1e-12 * std::abs(fy_smooth)) break;
      lip *= 2.0;
    }

    const double fz = map_objective(model, z, theta);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    x_prev = x.raw();
    if (options.monotone && fz > fx) {
      // Reject the step and restart the momentum from the current iterate.
      y = x.raw();
      t = 1.0;
    } else {
      std::copy(z.begin(), z.end(), x.raw().begin());
      const double momentum = (t - 1.0) / t_next;
      // Gradient-based adaptive restart.
      double dir = 0.0;
      for (std::size_t i = 0; i < d; ++i) dir += (y[i] - z[i]) * (x[i] - x_prev[i]);
      if (dir > 0.0) {
        y = x.raw();
        t = 1.0;
      } else {
        for (std::size_t i = 0; i < d; ++i) y[i] = x[i] + momentum * (x[i] - x_prev[i]);
        t = t_next;
      }
      fx = fz;
    }
    result.objective_trace.push_back(fx);
    result.iterations = k;

    // The exact fixed-point residual costs one more gradient and prox; only
    // evaluate it once the step itself has become small.
    const double step_rel = std::sqrt(vec::dist_sq(z, x_prev)) / std::max(vec::norm2(z), 1e-300);
    if (step_rel >= 10.0 * options.tol && k % 25 != 0 && k != options.max_iters) continue;
    result.residual = solver.residual(x.values(), lip);
    if (result.residual < options.tol) {
      result.converged = true;
      break;
    }
  }
  if (!x.all_finite()) throw Error(ErrorKind::divergence, "solve_map: non-finite iterate");
  result.x_hat = std::move(x);
  return result;
}

Metrics evaluate(const ImageVector& x_hat, const ImageVector& ground_truth) {
  return {mse_db(x_hat, ground_truth), psnr(x_hat, ground_truth)};
}

void write_objective_csv(const std::filesystem::path& path, std::span<const double> trace,
                         const io::Metadata& metadata) {
  io::CsvTable t;
  t.metadata = metadata;
  t.columns = {"iteration", "objective"};
  for (std::size_t i = 0; i < trace.size(); ++i) t.rows.push_back({static_cast<double>(i), trace[i]});
  io::write_csv(path, t);
}

}  // namespace sapg
