#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sapg/image_io.hpp"
#include "sapg/model.hpp"
#include "sapg/sampler.hpp"

namespace sapg {

enum class Algorithm { alg1, alg2, alg3, alg4 };

std::string to_string(Algorithm algorithm);
Algorithm algorithm_from_string(const std::string& s);

/// delta_n = c0 * n^(-exponent), optionally scaled per theta component.
struct StepSchedule {
  double c0 = 1.0;
  double exponent = 0.8;
  /// Diagonal scale D; empty means all ones.
  std::vector<double> scale;

  double delta(std::size_t n) const;
  double delta(std::size_t n, std::size_t component) const;
  void validate(std::size_t theta_dim, const std::string& field) const;
};

enum class WeightTail { uniform, decreasing };

std::string to_string(WeightTail tail);
WeightTail weight_tail_from_string(const std::string& s);

/// omega_n = 0 for n < n0, 1 for n0 <= n <= n1, and delta_n (or 1) beyond.
struct WeightScheme {
  std::size_t n0 = 1;
  std::size_t n1 = std::numeric_limits<std::size_t>::max();
  WeightTail tail = WeightTail::uniform;

  double weight(std::size_t n, double delta_n) const;
  void validate() const;
};

struct StopRule {
  double tolerance = 1e-3;
  std::size_t max_iters = 1000;
};

/// How the MYULA kernel parameters are derived from the model.
struct KernelSettings {
  double lambda_factor = 1.0;
  double lambda_cap = 2.0;
  double gamma_fraction = 0.98;
  double prior_gamma_fraction = 0.98;
  std::optional<double> gamma;
  std::optional<double> lambda;
  std::optional<double> prior_gamma;
  std::optional<double> prior_lambda;
  bool smooth_gradient = false;
  bool enforce_stability = true;
};

/// Noise-variance estimation settings (Algorithm 4).
struct SigmaSettings {
  StepSchedule schedule;
  double lower = 0.0;
  double upper = 0.0;
  /// Defaults to (lower + upper) / 2.
  std::optional<double> initial;
  std::size_t stages = 3;
  double tolerance = 1e-3;
};

struct SapgConfig {
  Algorithm algorithm = Algorithm::alg1;
  std::vector<double> theta0;
  StepSchedule schedule;
  WeightScheme weights;
  StopRule stop;
  KernelSettings kernel;
  std::size_t warmup = 0;
  std::size_t samples_per_iteration = 1;
  std::size_t posterior_thinning = 1;
  std::size_t prior_thinning = 1;
  bool log_scale = false;
  std::uint64_t seed = 0;
  SigmaSettings sigma;
  /// Keep per-sample statistics of every chain for export.
  bool record_chains = false;
};

/// Checks the configuration against the model; throws ErrorKind::config naming the field.
void validate_config(const SapgConfig& config, const PosteriorModel& model);

struct TraceRecord {
  std::size_t n = 0;
  std::size_t stage = 1;
  double delta = 0.0;
  std::vector<double> theta;
  std::vector<double> theta_bar;
  std::vector<double> gradient;
  double grad_norm = 0.0;
  std::vector<double> g;        // mean posterior statistic this iteration
  std::vector<double> g_prior;  // Algorithm 3 only
  double weight = 0.0;
  double sigma2 = 0.0;          // Algorithm 4 only
  double sigma2_bar = 0.0;
  bool saturated = false;
};

struct ThetaTrace {
  std::size_t theta_dim = 0;
  bool has_prior = false;
  bool has_sigma = false;
  std::vector<TraceRecord> records;
};

/// Kernel parameters in force during one stage.
struct StageInfo {
  std::size_t stage = 1;
  KernelParams posterior;
  std::optional<KernelParams> prior;
  double lipschitz = 0.0;
  std::size_t iterations = 0;
  std::vector<double> theta_bar;
  double sigma2_bar = 0.0;
};

struct SapgState {
  std::vector<double> theta;
  std::vector<double> eta;  // log theta when the log scale is enabled
  double sigma2 = 0.0;
  ChainState posterior;
  std::optional<ChainState> prior;
  ThetaTrace trace;
  std::size_t iteration = 0;
  std::size_t stage = 1;

  // Running weighted averages of the current stage.
  std::vector<double> weighted_sum;
  double weight_total = 0.0;
  std::size_t weighted_count = 0;
  double sigma2_weighted_sum = 0.0;
  std::vector<double> theta_bar;
  double sigma2_bar = 0.0;

  std::vector<ChainRecord> posterior_records;
  std::vector<ChainRecord> prior_records;
};

// --- Pure building blocks -------------------------------------------------

/// d_eff / (alpha * theta), the negated derivative of log Z for an alpha-homogeneous g.
double grad_logz_drift_homogeneous(std::size_t d_eff, double alpha, double theta);
/// |A_i| / (alpha_i * theta_i) per block.
std::vector<double> grad_logz_drift_separable(const BlockList& blocks, std::span<const double> theta);
/// Monte Carlo estimate of the marginal likelihood gradient for Algorithms 1/2/4
/// (drift minus mean of g over the samples).
std::vector<double> sapg_gradient_drift(std::span<const double> drift, const std::vector<std::vector<double>>& g_samples);
/// Algorithm 3: mean g over prior samples minus mean g over posterior samples.
std::vector<double> sapg_gradient_two_chain(const std::vector<std::vector<double>>& g_prior,
                                            const std::vector<std::vector<double>>& g_posterior);
/// ||y - A x||^2 / (2 sigma2^2) - d_y / (2 sigma2).
double sigma2_gradient(double residual_norm_sq, std::size_t d_y, double sigma2);

/// Component-wise clamp onto Theta. With log_scale the input is eta = log theta,
/// clamped to log Theta and returned exponentiated.
std::vector<double> project_theta(std::span<const double> values, const ThetaDomain& domain, bool log_scale);

struct ThetaUpdate {
  std::vector<double> theta;
  std::vector<double> eta;
  bool saturated = false;
};

/// theta + step * gradient projected onto Theta; in log scale
/// eta + step * exp(eta) * gradient projected onto log Theta.
ThetaUpdate apply_theta_update(std::span<const double> theta, std::span<const double> step,
                               std::span<const double> gradient, const ThetaDomain& domain, bool log_scale);

/// sum omega_n theta_n / sum omega_n over the first `count` entries.
std::vector<double> weighted_average(const std::vector<std::vector<double>>& thetas, std::span<const double> weights,
                                     std::size_t count);
/// Average of the trace's first `count` records, restricted to the stage of the last one.
std::vector<double> weighted_average(const ThetaTrace& trace, const WeightScheme& weights, std::size_t count);

/// max_i |current_i - previous_i| / previous_i < tolerance.
bool relative_change_below(std::span<const double> previous, std::span<const double> current, double tolerance);
/// Tolerance test on the last two averaged iterates of the current stage, or
/// iteration count reaching max_iters.
bool stop_check(const ThetaTrace& trace, const StopRule& rule);

// --- Iterations -------------------------------------------------------------

/// Creates the state at theta0 with chains started from x0 (and prior_x0).
SapgState make_state(const SapgConfig& config, const PosteriorModel& model, const ImageVector& x0,
                     const std::optional<ImageVector>& prior_x0 = std::nullopt);

/// Homogeneous regulariser, one posterior chain.
void sapg_step_alg1(SapgState& state, const PosteriorModel& model, const SapgConfig& config,
                    const KernelParams& params);
/// Separably homogeneous regulariser, one theta component per block.
void sapg_step_alg2(SapgState& state, const PosteriorModel& model, const SapgConfig& config,
                    const KernelParams& params);
/// General regulariser, posterior and prior chains.
void sapg_step_alg3(SapgState& state, const PosteriorModel& model, const SapgConfig& config,
                    const KernelParams& posterior_params, const KernelParams& prior_params);
/// Joint theta / noise-variance update; the model must have a Gaussian likelihood.
void sapg_step_alg4(SapgState& state, const PosteriorModel& model, const SapgConfig& config,
                    const KernelParams& params);

struct DivergenceReport {
  std::string chain;
  std::string message;
  double gamma = 0.0;
  double lambda = 0.0;
  double theta = 0.0;
  long step = 0;
  std::size_t iteration = 0;
};

struct SapgResult {
  std::vector<double> theta_bar;
  std::optional<double> sigma2_bar;
  std::size_t iterations = 0;  // total over stages
  std::string stopped_by;      // tolerance | max_iters | divergence
  ThetaTrace trace;
  std::vector<StageInfo> stages;
  std::optional<DivergenceReport> divergence;
  std::vector<std::string> warnings;
  std::vector<ChainRecord> posterior_records;
  std::vector<ChainRecord> prior_records;
  ImageVector final_state;
};

struct SapgInputs {
  std::optional<ImageVector> x0;
  std::optional<ImageVector> prior_x0;
};

/// Warm-up, main loop until stop_check, and (for Algorithm 4) the staged
/// refinement of the kernel parameters.
SapgResult run_sapg(const SapgConfig& config, const PosteriorModel& model, const SapgInputs& inputs = {});

/// Posterior kernel derived from the settings for a given likelihood Lipschitz constant.
KernelParams derive_posterior_kernel(const KernelSettings& settings, double lipschitz);
KernelParams derive_prior_kernel(const KernelSettings& settings, const KernelParams& posterior);

// --- Export -------------------------------------------------------------------

/// CSV columns n, stage, delta_n, theta_i, theta_bar_i, grad_norm, g_i,
/// [g_prior_i], [sigma2, sigma2_bar], weight, saturated. Recomputes every
/// theta_bar from the theta and weight columns and throws if they disagree.
void write_trace_csv(const std::filesystem::path& path, const ThetaTrace& trace, const io::Metadata& metadata = {});
ThetaTrace read_trace_csv(const std::filesystem::path& path);

/// {theta_bar, [sigma2_bar], iterations, stopped_by, stages, warnings, seed, ...metadata}.
std::string summary_json(const SapgResult& result, const SapgConfig& config, const io::Metadata& metadata = {});

}  // namespace sapg
