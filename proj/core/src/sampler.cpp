#include "sapg/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "sapg/csv.hpp"

namespace sapg {

std::string to_string(ChainTarget target) { return target == ChainTarget::posterior ? "posterior" : "prior"; }

KernelParams posterior_kernel_guideline(double lipschitz, double lambda_factor, double lambda_cap,
                                        double gamma_fraction) {
  if (lipschitz < 0.0 || !std::isfinite(lipschitz)) throw Error(ErrorKind::domain, "kernel guideline: bad Lipschitz constant");
  if (!(lambda_factor > 0.0) || !(lambda_cap > 0.0)) throw Error(ErrorKind::domain, "kernel guideline: lambda settings must be > 0");
  KernelParams p;
  p.lambda = lipschitz > 0.0 ? std::min(lambda_factor / lipschitz, lambda_cap) : lambda_cap;
  p.gamma = gamma_fraction / (lipschitz + 1.0 / p.lambda);
  return p;
}

KernelParams prior_kernel_guideline(double lambda, double gamma_fraction) {
  if (!(lambda > 0.0)) throw Error(ErrorKind::domain, "kernel guideline: lambda must be > 0");
  return {gamma_fraction * lambda, lambda, false};
}

double stability_bound(const PosteriorModel& model, std::span<const double> theta, const KernelParams& params,
                       ChainTarget target) {
  double lip = target == ChainTarget::posterior ? model.likelihood().lipschitz() : 0.0;
  const auto& reg = model.regulariser();
  if (params.smooth_gradient && reg.has_smooth_gradient()) {
    lip += reg.smooth_lipschitz(theta);
  } else {
    lip += 1.0 / params.lambda;
  }
  return 1.0 / lip;
}

bool is_stable(const PosteriorModel& model, std::span<const double> theta, const KernelParams& params,
               ChainTarget target) {
  return params.gamma > 0.0 && params.gamma < stability_bound(model, theta, params, target);
}

void require_stable(const PosteriorModel& model, std::span<const double> theta, const KernelParams& params,
                    ChainTarget target) {
  if (!(params.lambda > 0.0)) throw Error(ErrorKind::domain, "kernel: lambda must be > 0");
  if (!is_stable(model, theta, params, target)) {
    throw Error(ErrorKind::domain, to_string(target) + " kernel: gamma = " + io::format_double(params.gamma) +
                                       " outside stability range (0, " +
                                       io::format_double(stability_bound(model, theta, params, target)) + ")");
  }
}

std::uint64_t splitmix64(std::uint64_t value) {
  std::uint64_t z = value + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) { return splitmix64(splitmix64(seed) + index); }

namespace {

void step_impl(const PosteriorModel& model, ChainState& state, std::span<const double> theta,
               const KernelParams& params, ChainTarget target, std::span<const double> z) {
  const std::size_t d = model.dim();
  if (state.x.size() != d) throw_dimension("chain.x", d, state.x.size());
  if (theta.size() != model.theta_dim()) throw_dimension("theta", model.theta_dim(), theta.size());
  if (z.size() != d) throw_dimension("noise", d, z.size());
  state.drift.resize(d);
  state.prox_out.resize(d);

  auto x = state.x.values();
  const double gamma = params.gamma;
  const double lambda = params.lambda;
  const auto& reg = model.regulariser();

  if (target == ChainTarget::posterior) {
    model.likelihood().preconditioned_gradient(x, state.drift);
  } else {
    std::fill(state.drift.begin(), state.drift.end(), 0.0);
  }

  if (params.smooth_gradient && reg.has_smooth_gradient()) {
    reg.smooth_gradient(x, theta, state.prox_out);
    for (std::size_t i = 0; i < d; ++i) state.drift[i] += state.prox_out[i];
  } else {
    reg.prox(x, theta, lambda, state.prox_out, &state.workspace);
    const double inv_lambda = 1.0 / lambda;
    for (std::size_t i = 0; i < d; ++i) state.drift[i] += (x[i] - state.prox_out[i]) * inv_lambda;
  }

  const double scale = std::sqrt(2.0 * gamma);
  bool finite = true;
  for (std::size_t i = 0; i < d; ++i) {
    x[i] = x[i] - gamma * state.drift[i] + scale * z[i];
    finite = finite && std::isfinite(x[i]);
  }
  ++state.step_count;
  if (!finite) {
    throw DivergenceError(to_string(target) + " chain diverged at step " + std::to_string(state.step_count) +
                              " (gamma=" + io::format_double(gamma) + ", lambda=" + io::format_double(lambda) +
                              ", theta=" + io::format_double(theta[0]) + ")",
                          gamma, lambda, theta[0], static_cast<long>(state.step_count));
  }
}

}  // namespace

void myula_step(const PosteriorModel& model, ChainState& state, std::span<const double> theta,
                const KernelParams& params, ChainTarget target) {
  const std::size_t d = model.dim();
  state.noise.resize(d);
  for (double& v : state.noise) v = state.normal(state.rng);
  step_impl(model, state, theta, params, target, state.noise);
}

void myula_step(const PosteriorModel& model, ChainState& state, std::span<const double> theta,
                const KernelParams& params, ChainTarget target, std::span<const double> z) {
  step_impl(model, state, theta, params, target, z);
}

void warm_up(const PosteriorModel& model, ChainState& state, std::span<const double> theta,
             const KernelParams& params, std::size_t t0, ChainTarget target) {
  for (std::size_t k = 0; k < t0; ++k) myula_step(model, state, theta, params, target);
  state.warm = true;
}

std::vector<ImageVector> run_chain(const PosteriorModel& model, ChainState& state, std::span<const double> theta,
                                   const KernelParams& params, std::size_t steps, std::size_t thinning,
                                   ChainTarget target) {
  if (thinning == 0) throw Error(ErrorKind::config, "run_chain: thinning must be >= 1");
  std::vector<ImageVector> samples;
  samples.reserve(steps / thinning);
  for (std::size_t k = 1; k <= steps; ++k) {
    myula_step(model, state, theta, params, target);
    if (k % thinning == 0) samples.push_back(state.x);
  }
  return samples;
}

std::vector<ChainRecord> run_chain_statistics(const PosteriorModel& model, ChainState& state,
                                              std::span<const double> theta, const KernelParams& params,
                                              std::size_t steps, std::size_t thinning, ChainTarget target) {
  if (thinning == 0) throw Error(ErrorKind::config, "run_chain: thinning must be >= 1");
  std::vector<ChainRecord> records;
  records.reserve(steps / thinning);
  for (std::size_t k = 1; k <= steps; ++k) {
    myula_step(model, state, theta, params, target);
    if (k % thinning == 0) {
      ChainRecord r;
      r.iteration = state.step_count;
      r.g = model.regulariser().statistics(state.x.values());
      r.log_prob = eval_log_posterior_unnorm(model, state.x, theta);
      records.push_back(std::move(r));
    }
  }
  return records;
}

bool is_stabilised(std::span<const double> trace) {
  if (trace.empty()) return false;
  const auto [lo, hi] = std::minmax_element(trace.begin(), trace.end());
  const double range = *hi - *lo;
  if (range == 0.0) return true;
  const std::size_t n = trace.size();
  const std::size_t start = n - std::max<std::size_t>(n / 4, 1);
  const auto tail = trace.subspan(start);
  const double m = vec::mean(tail);
  double var = 0.0;
  for (double v : tail) var += (v - m) * (v - m);
  var /= static_cast<double>(tail.size());
  return std::sqrt(var) < 0.05 * range;
}

LogProbTrace log_prob_trace(const PosteriorModel& model, std::span<const ImageVector> states,
                            std::span<const double> theta) {
  LogProbTrace t;
  t.values.reserve(states.size());
  for (const auto& s : states) t.values.push_back(eval_log_posterior_unnorm(model, s, theta));
  t.stabilised = is_stabilised(t.values);
  return t;
}

std::vector<double> autocorrelation(std::span<const double> series, std::size_t max_lag) {
  const std::size_t n = series.size();
  if (n <= max_lag) throw Error(ErrorKind::domain, "autocorrelation: series shorter than max_lag + 1");
  const double m = vec::mean(series);
  double c0 = 0.0;
  for (double v : series) c0 += (v - m) * (v - m);
  if (c0 == 0.0) throw Error(ErrorKind::domain, "autocorrelation: zero-variance series");
  std::vector<double> acf(max_lag + 1);
  for (std::size_t k = 0; k <= max_lag; ++k) {
    double c = 0.0;
    for (std::size_t i = 0; i + k < n; ++i) c += (series[i] - m) * (series[i + k] - m);
    acf[k] = c / c0;
  }
  return acf;
}

double integrated_autocorrelation_time(std::span<const double> series, std::size_t max_lag) {
  const auto acf = autocorrelation(series, max_lag);
  double tau = 1.0;
  for (std::size_t k = 1; k < acf.size(); ++k) {
    if (acf[k] <= 0.0) break;
    tau += 2.0 * acf[k];
  }
  return tau;
}

void write_chain_csv(const std::filesystem::path& path, std::span<const ChainRecord> records,
                     const io::Metadata& metadata) {
  io::CsvTable t;
  t.metadata = metadata;
  t.columns.push_back("iteration");
  const std::size_t k = records.empty() ? 0 : records.front().g.size();
  for (std::size_t j = 0; j < k; ++j) t.columns.push_back("g_" + std::to_string(j + 1));
  t.columns.push_back("log_prob");
  for (const auto& r : records) {
    std::vector<double> row;
    row.push_back(static_cast<double>(r.iteration));
    row.insert(row.end(), r.g.begin(), r.g.end());
    row.push_back(r.log_prob);
    t.rows.push_back(std::move(row));
  }
  io::write_csv(path, t);
}

std::vector<ChainRecord> read_chain_csv(const std::filesystem::path& path) {
  const auto t = io::read_csv(path);
  if (t.columns.size() < 2 || t.columns.front() != "iteration" || t.columns.back() != "log_prob") {
    throw Error(ErrorKind::io, "chain csv '" + path.string() + "' has unexpected columns");
  }
  std::vector<ChainRecord> out;
  for (const auto& row : t.rows) {
    ChainRecord r;
    r.iteration = static_cast<std::size_t>(row.front());
    r.g.assign(row.begin() + 1, row.end() - 1);
    r.log_prob = row.back();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace sapg
