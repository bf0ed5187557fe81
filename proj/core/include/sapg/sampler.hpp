#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sapg/image.hpp"
#include "sapg/image_io.hpp"
#include "sapg/model.hpp"

namespace sapg {

/// Step size gamma and Moreau smoothing lambda of one MYULA kernel.
struct KernelParams {
  double gamma = 0.0;
  double lambda = 0.0;
  /// Smooth regularisers enter through their gradient instead of the prox when set.
  bool smooth_gradient = false;
};

enum class ChainTarget { posterior, prior };

std::string to_string(ChainTarget target);

/// lambda = min(lambda_factor / L, lambda_cap), gamma = gamma_fraction / (L + 1 / lambda).
/// With L = 0 the cap is used for lambda.
KernelParams posterior_kernel_guideline(double lipschitz, double lambda_factor = 1.0, double lambda_cap = 2.0,
                                        double gamma_fraction = 0.98);
/// lambda' = lambda, gamma' = gamma_fraction * lambda'.
KernelParams prior_kernel_guideline(double lambda, double gamma_fraction = 0.98);

/// Largest admissible gamma for the given target and theta.
double stability_bound(const PosteriorModel& model, std::span<const double> theta, const KernelParams& params,
                       ChainTarget target);
bool is_stable(const PosteriorModel& model, std::span<const double> theta, const KernelParams& params,
               ChainTarget target);
/// Throws ErrorKind::domain when gamma is outside the stability range.
void require_stable(const PosteriorModel& model, std::span<const double> theta, const KernelParams& params,
                    ChainTarget target);

/// Position, counter and random stream of one chain. Owned by one thread at a time.
struct ChainState {
  ImageVector x;
  std::size_t step_count = 0;
  std::mt19937_64 rng;
  std::normal_distribution<double> normal{0.0, 1.0};
  bool warm = false;
  ProxWorkspace workspace;

  // Scratch reused between steps.
  std::vector<double> drift;
  std::vector<double> prox_out;
  std::vector<double> noise;

  ChainState() = default;
  ChainState(ImageVector start, std::uint64_t seed) : x(std::move(start)), rng(seed) {}
};

/// Deterministic 64-bit mixing used to derive independent seeds from a master seed.
std::uint64_t splitmix64(std::uint64_t value);
/// Seed of stream `index` derived from `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// One MYULA transition
///   x' = x - gamma grad f(x) - gamma (x - prox_{lambda theta^T g}(x)) / lambda + sqrt(2 gamma) z
/// (the likelihood term is dropped for the prior target). Throws DivergenceError
/// if any coordinate becomes non-finite.
void myula_step(const PosteriorModel& model, ChainState& state, std::span<const double> theta,
                const KernelParams& params, ChainTarget target);
/// Same transition with the standard normal draw `z` supplied by the caller.
void myula_step(const PosteriorModel& model, ChainState& state, std::span<const double> theta,
                const KernelParams& params, ChainTarget target, std::span<const double> z);

inline void myula_posterior_step(const PosteriorModel& model, ChainState& state, std::span<const double> theta,
                                 const KernelParams& params) {
  myula_step(model, state, theta, params, ChainTarget::posterior);
}
inline void myula_prior_step(const PosteriorModel& model, ChainState& state, std::span<const double> theta,
                             const KernelParams& params) {
  myula_step(model, state, theta, params, ChainTarget::prior);
}

/// Runs t0 transitions at fixed theta and marks the chain warm.
void warm_up(const PosteriorModel& model, ChainState& state, std::span<const double> theta,
             const KernelParams& params, std::size_t t0, ChainTarget target = ChainTarget::posterior);

/// `steps` transitions, recording every `thinning`-th state.
std::vector<ImageVector> run_chain(const PosteriorModel& model, ChainState& state, std::span<const double> theta,
                                   const KernelParams& params, std::size_t steps, std::size_t thinning,
                                   ChainTarget target = ChainTarget::posterior);

/// One exported chain record: statistics g(x) and the unnormalised log-posterior.
struct ChainRecord {
  std::size_t iteration = 0;
  std::vector<double> g;
  double log_prob = 0.0;
};

/// Like run_chain but keeps only the statistics of recorded states.
std::vector<ChainRecord> run_chain_statistics(const PosteriorModel& model, ChainState& state,
                                              std::span<const double> theta, const KernelParams& params,
                                              std::size_t steps, std::size_t thinning,
                                              ChainTarget target = ChainTarget::posterior);

/// Trace stabilises when the standard deviation of its last quarter is below
/// 5% of the range of the whole trace. A trace of zero range is stabilised.
bool is_stabilised(std::span<const double> trace);

struct LogProbTrace {
  std::vector<double> values;
  bool stabilised = false;
};

LogProbTrace log_prob_trace(const PosteriorModel& model, std::span<const ImageVector> states,
                            std::span<const double> theta);

/// Normalised sample autocorrelation for lags 0..max_lag.
std::vector<double> autocorrelation(std::span<const double> series, std::size_t max_lag);
/// 1 + 2 sum of autocorrelations, truncated at the first non-positive lag.
double integrated_autocorrelation_time(std::span<const double> series, std::size_t max_lag);

/// CSV with columns iteration, g_1..g_k, log_prob.
void write_chain_csv(const std::filesystem::path& path, std::span<const ChainRecord> records,
                     const io::Metadata& metadata = {});
std::vector<ChainRecord> read_chain_csv(const std::filesystem::path& path);

}  // namespace sapg
