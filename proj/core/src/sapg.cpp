#include "sapg/sapg.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "sapg/csv.hpp"

namespace sapg {

std::string to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::alg1:
      return "alg1";
    case Algorithm::alg2:
      return "alg2";
    case Algorithm::alg3:
      return "alg3";
    case Algorithm::alg4:
      return "alg4";
  }
  return "alg1";
}

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "alg1") return Algorithm::alg1;
  if (s == "alg2") return Algorithm::alg2;
  if (s == "alg3") return Algorithm::alg3;
  if (s == "alg4") return Algorithm::alg4;
  throw Error(ErrorKind::config, "unknown algorithm '" + s + "' (expected alg1..alg4)");
}

std::string to_string(WeightTail tail) { return tail == WeightTail::uniform ? "uniform" : "decreasing"; }

WeightTail weight_tail_from_string(const std::string& s) {
  if (s == "uniform") return WeightTail::uniform;
  if (s == "decreasing") return WeightTail::decreasing;
  throw Error(ErrorKind::config, "unknown weight tail '" + s + "' (expected uniform|decreasing)");
}

double StepSchedule::delta(std::size_t n) const { return c0 * std::pow(static_cast<double>(n), -exponent); }

double StepSchedule::delta(std::size_t n, std::size_t component) const {
  const double d = scale.empty() ? 1.0 : scale[component];
  return delta(n) * d;
}

void StepSchedule::validate(std::size_t theta_dim, const std::string& field) const {
  if (!(c0 > 0.0) || !std::isfinite(c0)) throw Error(ErrorKind::config, field + ".c0: must be > 0");
  if (!(exponent >= 0.0)) throw Error(ErrorKind::config, field + ".exponent: must be >= 0");
  if (!scale.empty()) {
    if (scale.size() != theta_dim) throw_dimension(field + ".scale", theta_dim, scale.size());
    for (double s : scale) {
      if (!(s > 0.0)) throw Error(ErrorKind::config, field + ".scale: entries must be > 0");
    }
  }
}

double WeightScheme::weight(std::size_t n, double delta_n) const {
  if (n < n0) return 0.0;
  if (n <= n1) return 1.0;
  return tail == WeightTail::decreasing ? delta_n : 1.0;
}

void WeightScheme::validate() const {
  if (!(n0 < n1)) throw Error(ErrorKind::config, "weights: n0 must be < n1");
}

void validate_config(const SapgConfig& config, const PosteriorModel& model) {
  const std::size_t k = model.theta_dim();
  if (config.theta0.size() != k) throw_dimension("sapg.theta0", k, config.theta0.size());
  if (!model.theta_domain().contains(config.theta0)) throw Error(ErrorKind::config, "sapg.theta0: outside theta domain");
  config.schedule.validate(k, "sapg.schedule");
  config.weights.validate();
  if (!(config.stop.tolerance > 0.0)) throw Error(ErrorKind::config, "sapg.stop.tolerance: must be > 0");
  if (config.stop.max_iters == 0) throw Error(ErrorKind::config, "sapg.stop.max_iters: must be >= 1");
  if (config.samples_per_iteration == 0) throw Error(ErrorKind::config, "sapg.samples_per_iteration: must be >= 1");
  if (config.posterior_thinning == 0 || config.prior_thinning == 0) {
    throw Error(ErrorKind::config, "sapg.thinning: must be >= 1");
  }
  const auto h = model.regulariser().homogeneity();
  switch (config.algorithm) {
    case Algorithm::alg1:
    case Algorithm::alg4:
      if (h.kind != HomogeneityKind::homogeneous) {
        throw Error(ErrorKind::config, "sapg.algorithm: " + to_string(config.algorithm) +
                                           " needs a homogeneous regulariser, got " + to_string(h.kind));
      }
      if (k != 1) throw Error(ErrorKind::config, "sapg.algorithm: homogeneous regulariser must have scalar theta");
      break;
    case Algorithm::alg2:
      if (h.kind == HomogeneityKind::general) {
        throw Error(ErrorKind::config, "sapg.algorithm: alg2 needs a separably homogeneous regulariser, got general");
      }
      break;
    case Algorithm::alg3:
      break;
  }
  if (config.algorithm == Algorithm::alg4) {
    if (!dynamic_cast<const GaussianLikelihood*>(&model.likelihood())) {
      throw Error(ErrorKind::config, "sapg.algorithm: alg4 needs a Gaussian likelihood");
    }
    const auto& s = config.sigma;
    if (!(s.lower > 0.0) || !(s.upper > s.lower)) {
      throw Error(ErrorKind::config, "sapg.sigma: bounds must satisfy 0 < lower < upper");
    }
    if (s.initial && (*s.initial < s.lower || *s.initial > s.upper)) {
      throw Error(ErrorKind::config, "sapg.sigma.initial: outside [lower, upper]");
    }
    if (s.stages == 0) throw Error(ErrorKind::config, "sapg.sigma.stages: must be >= 1");
    if (!(s.tolerance > 0.0)) throw Error(ErrorKind::config, "sapg.sigma.tolerance: must be > 0");
    s.schedule.validate(1, "sapg.sigma.schedule");
  }
}

// ---------------------------------------------------------------------------

double grad_logz_drift_homogeneous(std::size_t d_eff, double alpha, double theta) {
  if (!(theta > 0.0)) throw Error(ErrorKind::domain, "log Z drift: theta must be > 0");
  if (alpha == 0.0) throw Error(ErrorKind::domain, "log Z drift: alpha must be nonzero");
  return static_cast<double>(d_eff) / (alpha * theta);
}

std::vector<double> grad_logz_drift_separable(const BlockList& blocks, std::span<const double> theta) {
  if (theta.size() != blocks.size()) throw_dimension("theta", blocks.size(), theta.size());
  std::vector<double> out(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    out[i] = grad_logz_drift_homogeneous(blocks[i].size, blocks[i].alpha, theta[i]);
  }
  return out;
}

namespace {

std::vector<double> mean_of(const std::vector<std::vector<double>>& samples) {
  if (samples.empty()) throw Error(ErrorKind::domain, "sapg: no samples");
  std::vector<double> m(samples.front().size(), 0.0);
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += s[i];
  }
  for (double& v : m) v /= static_cast<double>(samples.size());
  return m;
}

}  // namespace

std::vector<double> sapg_gradient_drift(std::span<const double> drift,
                                        const std::vector<std::vector<double>>& g_samples) {
  if (g_samples.empty()) throw Error(ErrorKind::domain, "sapg: no samples");
  std::vector<double> grad(drift.size(), 0.0);
  for (const auto& g : g_samples) {
    if (g.size() != drift.size()) throw_dimension("g", drift.size(), g.size());
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += drift[i] - g[i];
  }
  for (double& v : grad) v /= static_cast<double>(g_samples.size());
  return grad;
}

std::vector<double> sapg_gradient_two_chain(const std::vector<std::vector<double>>& g_prior,
                                            const std::vector<std::vector<double>>& g_posterior) {
  const auto a = mean_of(g_prior);
  const auto b = mean_of(g_posterior);
  if (a.size() != b.size()) throw_dimension("g_prior", b.size(), a.size());
  std::vector<double> grad(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) grad[i] = a[i] - b[i];
  return grad;
}

double sigma2_gradient(double residual_norm_sq, std::size_t d_y, double sigma2) {
  if (!(sigma2 > 0.0)) throw Error(ErrorKind::domain, "sigma2 gradient: sigma2 must be > 0");
  return residual_norm_sq / (2.0 * sigma2 * sigma2) - static_cast<double>(d_y) / (2.0 * sigma2);
}

std::vector<double> project_theta(std::span<const double> values, const ThetaDomain& domain, bool log_scale) {
  if (values.size() != domain.dim()) throw_dimension("theta", domain.dim(), values.size());
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (log_scale) {
      out[i] = std::exp(std::clamp(values[i], std::log(domain.lower[i]), std::log(domain.upper[i])));
      out[i] = std::clamp(out[i], domain.lower[i], domain.upper[i]);
    } else {
      out[i] = std::clamp(values[i], domain.lower[i], domain.upper[i]);
    }
  }
  return out;
}

ThetaUpdate apply_theta_update(std::span<const double> theta, std::span<const double> step,
                               std::span<const double> gradient, const ThetaDomain& domain, bool log_scale) {
  const std::size_t k = theta.size();
  if (step.size() != k) throw_dimension("step", k, step.size());
  if (gradient.size() != k) throw_dimension("gradient", k, gradient.size());
  ThetaUpdate u;
  u.theta.resize(k);
  u.eta.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (log_scale) {
      const double lo = std::log(domain.lower[i]);
      const double hi = std::log(domain.upper[i]);
      const double eta = std::log(theta[i]) + step[i] * theta[i] * gradient[i];
      u.eta[i] = std::clamp(eta, lo, hi);
      u.saturated = u.saturated || !(eta > lo && eta < hi);
      u.theta[i] = std::clamp(std::exp(u.eta[i]), domain.lower[i], domain.upper[i]);
    } else {
      const double t = theta[i] + step[i] * gradient[i];
      u.theta[i] = std::clamp(t, domain.lower[i], domain.upper[i]);
      u.saturated = u.saturated || !(t > domain.lower[i] && t < domain.upper[i]);
      u.eta[i] = std::log(u.theta[i]);
    }
  }
  return u;
}

std::vector<double> weighted_average(const std::vector<std::vector<double>>& thetas, std::span<const double> weights,
                                     std::size_t count) {
  if (count > thetas.size() || count > weights.size()) {
    throw Error(ErrorKind::domain, "weighted_average: count exceeds trace length");
  }
  if (count == 0) throw Error(ErrorKind::domain, "weighted_average: empty trace");
  std::vector<double> sum(thetas.front().size(), 0.0);
  double total = 0.0;
  for (std::size_t n = 0; n < count; ++n) {
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += weights[n] * thetas[n][i];
    total += weights[n];
  }
  if (!(total > 0.0)) throw Error(ErrorKind::domain, "weighted_average: all weights are zero");
  for (double& v : sum) v /= total;
  return sum;
}

std::vector<double> weighted_average(const ThetaTrace& trace, const WeightScheme& weights, std::size_t count) {
  if (count == 0 || count > trace.records.size()) throw Error(ErrorKind::domain, "weighted_average: bad count");
  const std::size_t stage = trace.records[count - 1].stage;
  std::vector<std::vector<double>> thetas;
  std::vector<double> w;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& r = trace.records[i];
    if (r.stage != stage) continue;
    thetas.push_back(r.theta);
    w.push_back(weights.weight(r.n, r.delta));
  }
  return weighted_average(thetas, w, thetas.size());
}

bool relative_change_below(std::span<const double> previous, std::span<const double> current, double tolerance) {
  double worst = 0.0;
  for (std::size_t i = 0; i < current.size(); ++i) {
    worst = std::max(worst, std::abs(current[i] - previous[i]) / std::abs(previous[i]));
  }
  return worst < tolerance;
}

bool stop_check(const ThetaTrace& trace, const StopRule& rule) {
  if (trace.records.empty()) return false;
  const auto& last = trace.records.back();
  if (last.n >= rule.max_iters) return true;
  if (!(last.weight > 0.0)) return false;
  std::size_t weighted = 0;
  const TraceRecord* previous = nullptr;
  for (auto it = trace.records.rbegin(); it != trace.records.rend() && it->stage == last.stage; ++it) {
    if (it->weight > 0.0) ++weighted;
    if (it != trace.records.rbegin() && previous == nullptr) previous = &*it;
  }
  if (weighted < 2 || previous == nullptr) return false;
  if (!relative_change_below(previous->theta_bar, last.theta_bar, rule.tolerance)) return false;
  if (trace.has_sigma) {
    const double a = previous->sigma2_bar;
    const double b = last.sigma2_bar;
    if (!(std::abs(b - a) / a < rule.tolerance)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

SapgState make_state(const SapgConfig& config, const PosteriorModel& model, const ImageVector& x0,
                     const std::optional<ImageVector>& prior_x0) {
  if (x0.size() != model.dim()) throw_dimension("x0", model.dim(), x0.size());
  SapgState s;
  s.theta = config.theta0;
  s.eta.resize(s.theta.size());
  for (std::size_t i = 0; i < s.theta.size(); ++i) s.eta[i] = std::log(s.theta[i]);
  s.posterior = ChainState(x0, derive_seed(config.seed, 0));
  if (config.algorithm == Algorithm::alg3) {
    const ImageVector& px = prior_x0 ? *prior_x0 : x0;
    if (px.size() != model.dim()) throw_dimension("prior_x0", model.dim(), px.size());
    s.prior = ChainState(px, derive_seed(config.seed, 1));
  }
  if (config.algorithm == Algorithm::alg4) {
    s.sigma2 = config.sigma.initial.value_or(0.5 * (config.sigma.lower + config.sigma.upper));
  }
  s.trace.theta_dim = s.theta.size();
  s.trace.has_prior = config.algorithm == Algorithm::alg3;
  s.trace.has_sigma = config.algorithm == Algorithm::alg4;
  s.weighted_sum.assign(s.theta.size(), 0.0);
  s.theta_bar = s.theta;
  s.sigma2_bar = s.sigma2;
  return s;
}

namespace {

void reset_stage(SapgState& s, std::size_t stage) {
  s.stage = stage;
  s.iteration = 0;
  std::fill(s.weighted_sum.begin(), s.weighted_sum.end(), 0.0);
  s.weight_total = 0.0;
  s.weighted_count = 0;
  s.sigma2_weighted_sum = 0.0;
  s.theta_bar = s.theta;
  s.sigma2_bar = s.sigma2;
}

std::vector<std::vector<double>> draw_statistics(const PosteriorModel& model, ChainState& chain,
                                                 std::span<const double> theta, const KernelParams& params,
                                                 ChainTarget target, std::size_t samples, std::size_t thinning,
                                                 std::vector<ChainRecord>* records) {
  std::vector<std::vector<double>> out;
  out.reserve(samples);
  for (std::size_t m = 0; m < samples; ++m) {
    for (std::size_t t = 0; t < thinning; ++t) myula_step(model, chain, theta, params, target);
    out.push_back(model.regulariser().statistics(chain.x.values()));
    if (records) {
      ChainRecord r;
      r.iteration = chain.step_count;
      r.g = out.back();
      r.log_prob = eval_log_posterior_unnorm(model, chain.x, theta);
      records->push_back(std::move(r));
    }
  }
  return out;
}

std::vector<double> step_vector(const StepSchedule& schedule, std::size_t n, std::size_t k) {
  std::vector<double> step(k);
  for (std::size_t i = 0; i < k; ++i) step[i] = schedule.delta(n, i);
  return step;
}

// Applies the theta update, averages and trace bookkeeping shared by all algorithms.
void finish_iteration(SapgState& s, const PosteriorModel& model, const SapgConfig& config, std::size_t n,
                      const std::vector<double>& gradient, std::vector<double> g_mean,
                      std::vector<double> g_prior_mean, bool sigma_saturated) {
  const auto step = step_vector(config.schedule, n, s.theta.size());
  auto upd = apply_theta_update(s.theta, step, gradient, model.theta_domain(), config.log_scale);
  s.theta = std::move(upd.theta);
  s.eta = std::move(upd.eta);

  const double delta = config.schedule.delta(n);
  const double w = config.weights.weight(n, delta);
  if (w > 0.0) {
    for (std::size_t i = 0; i < s.theta.size(); ++i) s.weighted_sum[i] += w * s.theta[i];
    s.sigma2_weighted_sum += w * s.sigma2;
    s.weight_total += w;
    ++s.weighted_count;
  }
  if (s.weight_total > 0.0) {
    for (std::size_t i = 0; i < s.theta.size(); ++i) s.theta_bar[i] = s.weighted_sum[i] / s.weight_total;
    s.sigma2_bar = s.sigma2_weighted_sum / s.weight_total;
  } else {
    s.theta_bar = s.theta;
    s.sigma2_bar = s.sigma2;
  }

  TraceRecord r;
  r.n = n;
  r.stage = s.stage;
  r.delta = delta;
  r.theta = s.theta;
  r.theta_bar = s.theta_bar;
  r.gradient = gradient;
  r.grad_norm = vec::norm2(gradient);
  r.g = std::move(g_mean);
  r.g_prior = std::move(g_prior_mean);
  r.weight = w;
  r.sigma2 = s.sigma2;
  r.sigma2_bar = s.sigma2_bar;
  r.saturated = upd.saturated || sigma_saturated;
  s.trace.records.push_back(std::move(r));
}

std::vector<double> homogeneous_drift(const PosteriorModel& model, std::span<const double> theta) {
  const auto h = model.regulariser().homogeneity();
  return {grad_logz_drift_homogeneous(model.regulariser().effective_dim(), h.alpha, theta[0])};
}

}  // namespace

void sapg_step_alg1(SapgState& state, const PosteriorModel& model, const SapgConfig& config,
                    const KernelParams& params) {
  const std::size_t n = ++state.iteration;
  auto g = draw_statistics(model, state.posterior, state.theta, params, ChainTarget::posterior,
                           config.samples_per_iteration, config.posterior_thinning,
                           config.record_chains ? &state.posterior_records : nullptr);
  const auto drift = homogeneous_drift(model, state.theta);
  const auto grad = sapg_gradient_drift(drift, g);
  finish_iteration(state, model, config, n, grad, mean_of(g), {}, false);
}

void sapg_step_alg2(SapgState& state, const PosteriorModel& model, const SapgConfig& config,
                    const KernelParams& params) {
  const std::size_t n = ++state.iteration;
  auto g = draw_statistics(model, state.posterior, state.theta, params, ChainTarget::posterior,
                           config.samples_per_iteration, config.posterior_thinning,
                           config.record_chains ? &state.posterior_records : nullptr);
  const auto h = model.regulariser().homogeneity();
  std::vector<double> drift;
  if (h.kind == HomogeneityKind::separable) {
    drift = grad_logz_drift_separable(h.blocks, state.theta);
  } else {
    const BlockList whole{{0, model.regulariser().effective_dim(), h.alpha}};
    drift = grad_logz_drift_separable(whole, state.theta);
  }
  const auto grad = sapg_gradient_drift(drift, g);
  finish_iteration(state, model, config, n, grad, mean_of(g), {}, false);
}

void sapg_step_alg3(SapgState& state, const PosteriorModel& model, const SapgConfig& config,
                    const KernelParams& posterior_params, const KernelParams& prior_params) {
  if (!state.prior) throw Error(ErrorKind::config, "alg3: state has no prior chain");
  const std::size_t n = ++state.iteration;
  auto g_post = draw_statistics(model, state.posterior, state.theta, posterior_params, ChainTarget::posterior,
                                config.samples_per_iteration, config.posterior_thinning,
                                config.record_chains ? &state.posterior_records : nullptr);
  auto g_prior = draw_statistics(model, *state.prior, state.theta, prior_params, ChainTarget::prior,
                                 config.samples_per_iteration, config.prior_thinning,
                                 config.record_chains ? &state.prior_records : nullptr);
  const auto grad = sapg_gradient_two_chain(g_prior, g_post);
  finish_iteration(state, model, config, n, grad, mean_of(g_post), mean_of(g_prior), false);
}

void sapg_step_alg4(SapgState& state, const PosteriorModel& model, const SapgConfig& config,
                    const KernelParams& params) {
  const auto* gl = dynamic_cast<const GaussianLikelihood*>(&model.likelihood());
  if (!gl) throw Error(ErrorKind::config, "alg4: model needs a Gaussian likelihood");
  const std::size_t n = ++state.iteration;
  const PosteriorModel current = model.with_likelihood(gl->with_sigma2(state.sigma2));
  const auto& lik = static_cast<const GaussianLikelihood&>(current.likelihood());

  std::vector<std::vector<double>> g;
  double sigma_grad = 0.0;
  const std::size_t d_y = lik.observation().size();
  for (std::size_t m = 0; m < config.samples_per_iteration; ++m) {
    auto one = draw_statistics(current, state.posterior, state.theta, params, ChainTarget::posterior, 1,
                               config.posterior_thinning, config.record_chains ? &state.posterior_records : nullptr);
    g.push_back(std::move(one.front()));
    sigma_grad += sigma2_gradient(lik.residual_norm_sq(state.posterior.x.values()), d_y, state.sigma2);
  }
  sigma_grad /= static_cast<double>(config.samples_per_iteration);

  const auto drift = homogeneous_drift(current, state.theta);
  const auto grad = sapg_gradient_drift(drift, g);

  // The noise variance moves with the theta of this iteration's samples.
  const auto& sc = config.sigma;
  const double step = sc.schedule.delta(n);
  double next;
  bool saturated;
  if (config.log_scale) {
    const double lo = std::log(sc.lower), hi = std::log(sc.upper);
    const double xi = std::log(state.sigma2) + step * state.sigma2 * sigma_grad;
    saturated = !(xi > lo && xi < hi);
    next = std::clamp(std::exp(std::clamp(xi, lo, hi)), sc.lower, sc.upper);
  } else {
    const double v = state.sigma2 + step * sigma_grad;
    saturated = !(v > sc.lower && v < sc.upper);
    next = std::clamp(v, sc.lower, sc.upper);
  }
  state.sigma2 = next;
  finish_iteration(state, model, config, n, grad, mean_of(g), {}, saturated);
}

// ---------------------------------------------------------------------------

KernelParams derive_posterior_kernel(const KernelSettings& settings, double lipschitz) {
  KernelParams p = posterior_kernel_guideline(lipschitz, settings.lambda_factor, settings.lambda_cap,
                                              settings.gamma_fraction);
  if (settings.lambda) {
    p.lambda = *settings.lambda;
    p.gamma = settings.gamma_fraction / (lipschitz + 1.0 / p.lambda);
  }
  if (settings.gamma) p.gamma = *settings.gamma;
  p.smooth_gradient = settings.smooth_gradient;
  return p;
}

KernelParams derive_prior_kernel(const KernelSettings& settings, const KernelParams& posterior) {
  KernelParams p = prior_kernel_guideline(settings.prior_lambda.value_or(posterior.lambda),
                                          settings.prior_gamma_fraction);
  if (settings.prior_gamma) p.gamma = *settings.prior_gamma;
  p.smooth_gradient = settings.smooth_gradient;
  return p;
}

SapgResult run_sapg(const SapgConfig& config, const PosteriorModel& model, const SapgInputs& inputs) {
  validate_config(config, model);
  const ImageVector x0 = inputs.x0 ? *inputs.x0 : model.likelihood().initial_state();
  SapgState state = make_state(config, model, x0, inputs.prior_x0);

  SapgResult result;
  const auto* gl = dynamic_cast<const GaussianLikelihood*>(&model.likelihood());
  const bool joint = config.algorithm == Algorithm::alg4;
  const std::size_t stages = joint ? config.sigma.stages : 1;
  std::size_t saturated_iterations = 0;
  result.stopped_by = "max_iters";

  try {
    for (std::size_t stage = 1; stage <= stages; ++stage) {
      reset_stage(state, stage);
      StageInfo info;
      info.stage = stage;

      // Algorithm 4 starts from the worst case sigma2 = lower bound and refines the
      // Lipschitz estimate from the averaged variance after each stage.
      std::optional<PosteriorModel> staged;
      if (joint) {
        const double sigma_hat = stage == 1 ? config.sigma.lower : result.stages.back().sigma2_bar;
        info.lipschitz = gl->with_sigma2(sigma_hat)->lipschitz();
        staged.emplace(model.with_likelihood(gl->with_sigma2(state.sigma2)));
      } else {
        info.lipschitz = model.likelihood().lipschitz();
      }
      const PosteriorModel& current = staged ? *staged : model;
      info.posterior = derive_posterior_kernel(config.kernel, info.lipschitz);
      if (config.algorithm == Algorithm::alg3) info.prior = derive_prior_kernel(config.kernel, info.posterior);

      if (config.kernel.enforce_stability) {
        if (joint) {
          require_stable(model.with_likelihood(gl->with_sigma2(stage == 1 ? config.sigma.lower
                                                                          : result.stages.back().sigma2_bar)),
                         state.theta, info.posterior, ChainTarget::posterior);
        } else {
          require_stable(current, state.theta, info.posterior, ChainTarget::posterior);
        }
        if (info.prior) require_stable(current, state.theta, *info.prior, ChainTarget::prior);
      }

      warm_up(current, state.posterior, state.theta, info.posterior, config.warmup, ChainTarget::posterior);
      if (state.prior) warm_up(current, *state.prior, state.theta, *info.prior, config.warmup, ChainTarget::prior);

      bool converged = false;
      std::vector<double> previous_bar;
      double previous_sigma_bar = 0.0;
      while (state.iteration < config.stop.max_iters) {
        switch (config.algorithm) {
          case Algorithm::alg1:
            sapg_step_alg1(state, model, config, info.posterior);
            break;
          case Algorithm::alg2:
            sapg_step_alg2(state, model, config, info.posterior);
            break;
          case Algorithm::alg3:
            sapg_step_alg3(state, model, config, info.posterior, *info.prior);
            break;
          case Algorithm::alg4:
            sapg_step_alg4(state, model, config, info.posterior);
            break;
        }
        ++result.iterations;
        if (state.trace.records.back().saturated) ++saturated_iterations;
        if (state.trace.records.back().weight > 0.0) {
          if (state.weighted_count >= 2) {
            bool ok = relative_change_below(previous_bar, state.theta_bar, config.stop.tolerance);
            if (joint) ok = ok && std::abs(state.sigma2_bar - previous_sigma_bar) / previous_sigma_bar <
                                     config.sigma.tolerance;
            if (ok) {
              converged = true;
              break;
            }
          }
          previous_bar = state.theta_bar;
          previous_sigma_bar = state.sigma2_bar;
        }
      }
      info.iterations = state.iteration;
      info.theta_bar = state.theta_bar;
      info.sigma2_bar = state.sigma2_bar;
      result.stages.push_back(info);
      result.stopped_by = converged ? "tolerance" : "max_iters";

      if (stage < stages) {
        state.theta = state.theta_bar;
        for (std::size_t i = 0; i < state.theta.size(); ++i) state.eta[i] = std::log(state.theta[i]);
        state.sigma2 = state.sigma2_bar;
      }
    }
  } catch (const DivergenceError& e) {
    DivergenceReport d;
    const std::string what = e.what();
    d.chain = what.rfind("prior", 0) == 0 ? "prior" : "posterior";
    d.message = what;
    d.gamma = e.gamma();
    d.lambda = e.lambda();
    d.theta = e.theta();
    d.step = e.step();
    d.iteration = state.iteration;
    result.divergence = d;
    result.stopped_by = "divergence";
  }

  if (saturated_iterations > 0) {
    result.warnings.push_back("projection bounds saturated in " + std::to_string(saturated_iterations) +
                              " iterations");
  }
  result.theta_bar = state.theta_bar;
  if (joint) result.sigma2_bar = state.sigma2_bar;
  result.trace = std::move(state.trace);
  result.posterior_records = std::move(state.posterior_records);
  result.prior_records = std::move(state.prior_records);
  result.final_state = std::move(state.posterior.x);
  return result;
}

// ---------------------------------------------------------------------------

void write_trace_csv(const std::filesystem::path& path, const ThetaTrace& trace, const io::Metadata& metadata) {
  const std::size_t k = trace.theta_dim;

  // theta_bar must be recomputable from theta and weight.
  std::vector<double> sum(k, 0.0);
  double total = 0.0;
  std::size_t stage = 0;
  for (const auto& r : trace.records) {
    if (r.stage != stage) {
      stage = r.stage;
      std::fill(sum.begin(), sum.end(), 0.0);
      total = 0.0;
    }
    if (r.weight > 0.0) {
      for (std::size_t i = 0; i < k; ++i) sum[i] += r.weight * r.theta[i];
      total += r.weight;
    }
    for (std::size_t i = 0; i < k; ++i) {
      const double expect = total > 0.0 ? sum[i] / total : r.theta[i];
      if (std::abs(expect - r.theta_bar[i]) > 1e-10 * std::abs(expect)) {
        throw Error(ErrorKind::io, "trace export: theta_bar at n=" + std::to_string(r.n) +
                                       " does not match the weighted average of theta");
      }
    }
  }

  io::CsvTable t;
  t.metadata = metadata;
  t.columns = {"n", "stage", "delta_n"};
  for (std::size_t i = 0; i < k; ++i) t.columns.push_back("theta_" + std::to_string(i + 1));
  for (std::size_t i = 0; i < k; ++i) t.columns.push_back("theta_bar_" + std::to_string(i + 1));
  t.columns.push_back("grad_norm");
  for (std::size_t i = 0; i < k; ++i) t.columns.push_back("g_" + std::to_string(i + 1));
  if (trace.has_prior) {
    for (std::size_t i = 0; i < k; ++i) t.columns.push_back("g_prior_" + std::to_string(i + 1));
  }
  if (trace.has_sigma) {
    t.columns.push_back("sigma2");
    t.columns.push_back("sigma2_bar");
  }
  t.columns.push_back("weight");
  t.columns.push_back("saturated");
  for (const auto& r : trace.records) {
    std::vector<double> row{static_cast<double>(r.n), static_cast<double>(r.stage), r.delta};
    row.insert(row.end(), r.theta.begin(), r.theta.end());
    row.insert(row.end(), r.theta_bar.begin(), r.theta_bar.end());
    row.push_back(r.grad_norm);
    row.insert(row.end(), r.g.begin(), r.g.end());
    if (trace.has_prior) row.insert(row.end(), r.g_prior.begin(), r.g_prior.end());
    if (trace.has_sigma) {
      row.push_back(r.sigma2);
      row.push_back(r.sigma2_bar);
    }
    row.push_back(r.weight);
    row.push_back(r.saturated ? 1.0 : 0.0);
    t.rows.push_back(std::move(row));
  }
  io::write_csv(path, t);
}

ThetaTrace read_trace_csv(const std::filesystem::path& path) {
  const auto t = io::read_csv(path);
  ThetaTrace trace;
  std::size_t k = 0;
  while (std::find(t.columns.begin(), t.columns.end(), "theta_" + std::to_string(k + 1)) != t.columns.end()) ++k;
  if (k == 0) throw Error(ErrorKind::io, "trace csv '" + path.string() + "' has no theta columns");
  trace.theta_dim = k;
  trace.has_prior = std::find(t.columns.begin(), t.columns.end(), "g_prior_1") != t.columns.end();
  trace.has_sigma = std::find(t.columns.begin(), t.columns.end(), "sigma2") != t.columns.end();
  auto idx = [&](const std::string& name) { return t.column(name); };
  for (const auto& row : t.rows) {
    TraceRecord r;
    r.n = static_cast<std::size_t>(row[idx("n")]);
    r.stage = static_cast<std::size_t>(row[idx("stage")]);
    r.delta = row[idx("delta_n")];
    for (std::size_t i = 1; i <= k; ++i) {
      r.theta.push_back(row[idx("theta_" + std::to_string(i))]);
      r.theta_bar.push_back(row[idx("theta_bar_" + std::to_string(i))]);
      r.g.push_back(row[idx("g_" + std::to_string(i))]);
      if (trace.has_prior) r.g_prior.push_back(row[idx("g_prior_" + std::to_string(i))]);
    }
    r.grad_norm = row[idx("grad_norm")];
    if (trace.has_sigma) {
      r.sigma2 = row[idx("sigma2")];
      r.sigma2_bar = row[idx("sigma2_bar")];
    }
    r.weight = row[idx("weight")];
    r.saturated = row[idx("saturated")] != 0.0;
    trace.records.push_back(std::move(r));
  }
  return trace;
}

std::string summary_json(const SapgResult& result, const SapgConfig& config, const io::Metadata& metadata) {
  nlohmann::ordered_json j;
  j["theta_bar"] = result.theta_bar;
  if (result.sigma2_bar) j["sigma2_bar"] = *result.sigma2_bar;
  j["iterations"] = result.iterations;
  j["stopped_by"] = result.stopped_by;
  j["seed"] = config.seed;
  j["algorithm"] = to_string(config.algorithm);
  j["log_scale"] = config.log_scale;
  auto stages = nlohmann::ordered_json::array();
  for (const auto& s : result.stages) {
    nlohmann::ordered_json e;
    e["stage"] = s.stage;
    e["gamma"] = s.posterior.gamma;
    e["lambda"] = s.posterior.lambda;
    if (s.prior) {
      e["prior_gamma"] = s.prior->gamma;
      e["prior_lambda"] = s.prior->lambda;
    }
    e["lipschitz"] = s.lipschitz;
    e["iterations"] = s.iterations;
    e["theta_bar"] = s.theta_bar;
    if (result.sigma2_bar) e["sigma2_bar"] = s.sigma2_bar;
    stages.push_back(e);
  }
  j["stages"] = stages;
  j["warnings"] = result.warnings;
  if (result.divergence) {
    const auto& d = *result.divergence;
    j["divergence"] = {{"chain", d.chain}, {"gamma", d.gamma},   {"lambda", d.lambda},
                       {"theta", d.theta}, {"step", d.step},     {"iteration", d.iteration},
                       {"message", d.message}};
  }
  for (const auto& [k, v] : metadata) {
    if (!j.contains(k)) j[k] = v;
  }
  return j.dump(2) + "\n";
}

}  // namespace sapg
