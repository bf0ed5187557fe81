#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sapg/blocks.hpp"
#include "sapg/image.hpp"
#include "sapg/prox.hpp"
#include "sapg/transforms.hpp"

namespace sapg {

// ---------------------------------------------------------------------------
// Likelihood: the data-fidelity term f_y.

class Likelihood {
 public:
  explicit Likelihood(OperatorPtr preconditioner = nullptr) : preconditioner_(std::move(preconditioner)) {}
  virtual ~Likelihood() = default;

  virtual Shape shape() const = 0;
  std::size_t dim() const { return shape().size(); }

  virtual double value(std::span<const double> x) const = 0;
  virtual void gradient(std::span<const double> x, std::span<double> out) const = 0;
  /// Lipschitz constant of the (preconditioned) gradient used to tune the kernels.
  virtual double lipschitz() const = 0;

  /// Optional linear map applied to the gradient inside the samplers.
  const LinearOperator* preconditioner() const { return preconditioner_.get(); }
  const OperatorPtr& preconditioner_ptr() const { return preconditioner_; }
  void preconditioned_gradient(std::span<const double> x, std::span<double> out) const;

  /// Default chain start: the observation mapped into the state space (zeros when unavailable).
  virtual ImageVector initial_state() const;

 private:
  OperatorPtr preconditioner_;
};

using LikelihoodPtr = std::shared_ptr<const Likelihood>;

/// f_y = 0 (prior-only targets).
class ZeroLikelihood final : public Likelihood {
 public:
  explicit ZeroLikelihood(Shape shape) : shape_(shape) {}
  Shape shape() const override { return shape_; }
  double value(std::span<const double>) const override { return 0.0; }
  void gradient(std::span<const double>, std::span<double> out) const override;
  double lipschitz() const override { return 0.0; }

 private:
  Shape shape_;
};

/// f_y(x) = ||y - A x||^2 / (2 sigma2).
class GaussianLikelihood final : public Likelihood {
 public:
  /// `lipschitz_factor` scales the declared constant ||A||^2 / sigma2 (experiments use 0.99^2).
  GaussianLikelihood(OperatorPtr op, ImageVector y, double sigma2, double lipschitz_factor = 1.0,
                     OperatorPtr preconditioner = nullptr);

  Shape shape() const override { return op_->input_shape(); }
  double value(std::span<const double> x) const override;
  void gradient(std::span<const double> x, std::span<double> out) const override;
  double lipschitz() const override { return lipschitz_factor_ * op_->norm_sq() / sigma2_; }

  double residual_norm_sq(std::span<const double> x) const;
  double sigma2() const { return sigma2_; }
  double lipschitz_factor() const { return lipschitz_factor_; }
  const ImageVector& observation() const { return *y_; }
  const OperatorPtr& forward_operator() const { return op_; }
  std::shared_ptr<const GaussianLikelihood> with_sigma2(double sigma2) const;
  /// y itself for a square pixel-domain operator, A^T y otherwise.
  ImageVector initial_state() const override;

 private:
  GaussianLikelihood(OperatorPtr op, std::shared_ptr<const ImageVector> y, double sigma2, double lipschitz_factor,
                     OperatorPtr preconditioner);

  OperatorPtr op_;
  std::shared_ptr<const ImageVector> y_;
  double sigma2_;
  double lipschitz_factor_;
};

/// Moreau-Yosida envelope (parameter `smoothing`) of ||y - A x||_1 / scale, for
/// Laplace noise with scale b. Requires A A^T = I so the envelope is exact in
/// closed form. value() returns the envelope, gradient() its gradient.
class LaplaceLikelihood final : public Likelihood {
 public:
  LaplaceLikelihood(OperatorPtr op, ImageVector y, double scale, double smoothing);

  Shape shape() const override { return op_->input_shape(); }
  double value(std::span<const double> x) const override;
  void gradient(std::span<const double> x, std::span<double> out) const override;
  double lipschitz() const override { return 1.0 / smoothing_; }

  double scale() const { return scale_; }
  double smoothing() const { return smoothing_; }
  ImageVector initial_state() const override;

 private:
  OperatorPtr op_;
  ImageVector y_;
  double scale_;
  double smoothing_;
};

// ---------------------------------------------------------------------------
// Regulariser: the statistic g, its prox, and its homogeneity class.

enum class HomogeneityKind { homogeneous, separable, general };

struct Homogeneity {
  HomogeneityKind kind = HomogeneityKind::general;
  double alpha = 0.0;  // homogeneous only
  BlockList blocks;    // separable only

  static Homogeneity homogeneous(double alpha) { return {HomogeneityKind::homogeneous, alpha, {}}; }
  static Homogeneity separable(BlockList blocks) { return {HomogeneityKind::separable, 0.0, std::move(blocks)}; }
  static Homogeneity general() { return {}; }
};

std::string to_string(HomogeneityKind kind);

/// Per-chain mutable scratch for iterative proximal maps.
struct ProxWorkspace {
  TvWarmStart tv;
  /// Overrides the regulariser's own inner-solver settings (the MAP solver asks for tight prox).
  std::optional<TvProxOptions> tv_override;
};

struct ProxInfo {
  std::size_t inner_iterations = 0;
  double inner_residual = 0.0;
};

class Regulariser {
 public:
  virtual ~Regulariser() = default;

  virtual std::size_t dim() const = 0;
  virtual std::size_t theta_dim() const { return 1; }
  /// All d_Theta statistics in one pass.
  virtual void statistics(std::span<const double> x, std::span<double> out) const = 0;
  /// prox of lambda * (theta^T g + fixed_penalty).
  virtual ProxInfo prox(std::span<const double> x, std::span<const double> theta, double lambda,
                        std::span<double> out, ProxWorkspace* workspace) const = 0;
  virtual Homogeneity homogeneity() const = 0;
  /// Dimension entering the homogeneous log-partition identity (d - 1 for improper TV).
  virtual std::size_t effective_dim() const { return dim(); }

  /// Theta-independent part of the prior potential (zero for most regularisers).
  virtual double fixed_penalty(std::span<const double>) const { return 0.0; }

  /// Smooth regularisers may enter MYULA through their gradient instead of the prox.
  virtual bool has_smooth_gradient() const { return false; }
  virtual void smooth_gradient(std::span<const double> x, std::span<const double> theta, std::span<double> out) const;
  virtual double smooth_lipschitz(std::span<const double> theta) const;

  std::vector<double> statistics(std::span<const double> x) const;
  /// theta^T g(x) + fixed_penalty(x).
  double potential(std::span<const double> x, std::span<const double> theta) const;
};

using RegulariserPtr = std::shared_ptr<const Regulariser>;

class ZeroRegulariser final : public Regulariser {
 public:
  explicit ZeroRegulariser(std::size_t dim) : dim_(dim) {}
  std::size_t dim() const override { return dim_; }
  using Regulariser::statistics;
  void statistics(std::span<const double>, std::span<double> out) const override { out[0] = 0.0; }
  ProxInfo prox(std::span<const double> x, std::span<const double>, double, std::span<double> out,
                ProxWorkspace*) const override;
  Homogeneity homogeneity() const override { return Homogeneity::general(); }

 private:
  std::size_t dim_;
};

/// g(x) = ||x||_1, optionally with a theta-independent ridge fixed_ridge * ||x||^2
/// in the prior (which makes the model non-homogeneous).
class L1Regulariser final : public Regulariser {
 public:
  explicit L1Regulariser(std::size_t dim, double fixed_ridge = 0.0);
  std::size_t dim() const override { return dim_; }
  using Regulariser::statistics;
  void statistics(std::span<const double> x, std::span<double> out) const override;
  ProxInfo prox(std::span<const double> x, std::span<const double> theta, double lambda, std::span<double> out,
                ProxWorkspace*) const override;
  Homogeneity homogeneity() const override;
  double fixed_penalty(std::span<const double> x) const override;

 private:
  std::size_t dim_;
  double fixed_ridge_;
};

/// g(x) = ||x||_1 + (rho / 2) ||x||^2 (not homogeneous).
class ElasticNetRegulariser final : public Regulariser {
 public:
  ElasticNetRegulariser(std::size_t dim, double rho);
  std::size_t dim() const override { return dim_; }
  using Regulariser::statistics;
  void statistics(std::span<const double> x, std::span<double> out) const override;
  ProxInfo prox(std::span<const double> x, std::span<const double> theta, double lambda, std::span<double> out,
                ProxWorkspace*) const override;
  Homogeneity homogeneity() const override { return Homogeneity::general(); }

 private:
  std::size_t dim_;
  double rho_;
};

/// g(x) = coefficient * ||x||^2, 2-homogeneous and smooth.
class SquaredNormRegulariser final : public Regulariser {
 public:
  explicit SquaredNormRegulariser(std::size_t dim, double coefficient = 1.0);
  std::size_t dim() const override { return dim_; }
  using Regulariser::statistics;
  void statistics(std::span<const double> x, std::span<double> out) const override;
  ProxInfo prox(std::span<const double> x, std::span<const double> theta, double lambda, std::span<double> out,
                ProxWorkspace*) const override;
  Homogeneity homogeneity() const override { return Homogeneity::homogeneous(2.0); }
  bool has_smooth_gradient() const override { return true; }
  void smooth_gradient(std::span<const double> x, std::span<const double> theta, std::span<double> out) const override;
  double smooth_lipschitz(std::span<const double> theta) const override { return 2.0 * coefficient_ * theta[0]; }

 private:
  std::size_t dim_;
  double coefficient_;
};

/// Isotropic TV on a 2-D image; the prior is improper so effective_dim = d - 1.
class TotalVariationRegulariser final : public Regulariser {
 public:
  explicit TotalVariationRegulariser(Shape shape, TvProxOptions options = {}, bool warm_start = true);
  std::size_t dim() const override { return shape_.size(); }
  using Regulariser::statistics;
  void statistics(std::span<const double> x, std::span<double> out) const override;
  ProxInfo prox(std::span<const double> x, std::span<const double> theta, double lambda, std::span<double> out,
                ProxWorkspace* workspace) const override;
  Homogeneity homogeneity() const override { return Homogeneity::homogeneous(1.0); }
  std::size_t effective_dim() const override { return shape_.size() - 1; }
  const TvProxOptions& options() const { return options_; }

 private:
  Shape shape_;
  TvProxOptions options_;
  bool warm_start_;
};

/// Level-adapted l1: g_j(x) = ||x_[A_j]||_1 over a partition of the index set.
class BlockL1Regulariser final : public Regulariser {
 public:
  BlockL1Regulariser(std::size_t dim, BlockList blocks);
  std::size_t dim() const override { return dim_; }
  std::size_t theta_dim() const override { return blocks_.size(); }
  using Regulariser::statistics;
  void statistics(std::span<const double> x, std::span<double> out) const override;
  ProxInfo prox(std::span<const double> x, std::span<const double> theta, double lambda, std::span<double> out,
                ProxWorkspace*) const override;
  Homogeneity homogeneity() const override { return Homogeneity::separable(blocks_); }
  const BlockList& blocks() const { return blocks_; }

 private:
  std::size_t dim_;
  BlockList blocks_;
};

// ---------------------------------------------------------------------------

/// Box Theta = [lower, upper] with lower > 0 component-wise.
struct ThetaDomain {
  std::vector<double> lower;
  std::vector<double> upper;

  static ThetaDomain scalar(double lo, double hi) { return {{lo}, {hi}}; }
  static ThetaDomain uniform(std::size_t dim, double lo, double hi) {
    return {std::vector<double>(dim, lo), std::vector<double>(dim, hi)};
  }
  std::size_t dim() const { return lower.size(); }
  void validate() const;
  bool contains(std::span<const double> theta) const;
};

/// Likelihood, regulariser and Theta for one posterior p(x | y, theta).
/// Immutable after construction; safe to share across threads.
class PosteriorModel {
 public:
  PosteriorModel(LikelihoodPtr likelihood, RegulariserPtr regulariser, ThetaDomain domain);

  const Likelihood& likelihood() const { return *likelihood_; }
  const Regulariser& regulariser() const { return *regulariser_; }
  const LikelihoodPtr& likelihood_ptr() const { return likelihood_; }
  const RegulariserPtr& regulariser_ptr() const { return regulariser_; }
  const ThetaDomain& theta_domain() const { return domain_; }
  std::size_t dim() const { return dim_; }
  Shape shape() const { return likelihood_->shape(); }
  std::size_t theta_dim() const { return regulariser_->theta_dim(); }

  PosteriorModel with_likelihood(LikelihoodPtr likelihood) const { return {std::move(likelihood), regulariser_, domain_}; }

 private:
  LikelihoodPtr likelihood_;
  RegulariserPtr regulariser_;
  ThetaDomain domain_;
  std::size_t dim_;
};

/// -f_y(x) - theta^T g(x) (minus any fixed prior penalty).
double eval_log_posterior_unnorm(const PosteriorModel& model, std::span<const double> x,
                                 std::span<const double> theta);
double eval_log_posterior_unnorm(const PosteriorModel& model, const ImageVector& x, std::span<const double> theta);

/// Gradient of the lambda-Moreau envelope of theta^T g: (x - prox(x)) / lambda.
ImageVector moreau_grad(const PosteriorModel& model, const ImageVector& x, std::span<const double> theta,
                        double lambda, ProxWorkspace* workspace = nullptr);
/// Envelope value min_z theta^T g(z) + ||z - x||^2 / (2 lambda), evaluated at the prox.
double moreau_envelope(const PosteriorModel& model, const ImageVector& x, std::span<const double> theta,
                       double lambda);

// ---------------------------------------------------------------------------
// Empirical contract checks run when a model is registered.

struct ModelCheckReport {
  double gradient_fd_rel_error = 0.0;
  double lipschitz_ratio = 0.0;     // max ||grad(u) - grad(v)|| / (L ||u - v||)
  double convexity_violation = 0.0; // max of g(tx+(1-t)z) - [t g(x) + (1-t) g(z)], relative
  double homogeneity_rel_error = 0.0;
  bool blocks_ok = true;
  bool passed = false;
  std::string failure;
};

/// Checks gradient vs central differences (rel. 1e-5), the declared Lipschitz
/// bound, convexity of g along segments and the declared homogeneity (rel. 1e-8)
/// at `trials` random points of standard deviation `scale`.
ModelCheckReport check_model(const PosteriorModel& model, std::uint64_t seed, int trials = 20, double scale = 1.0);
/// Throws ErrorKind::config when check_model fails.
void verify_model(const PosteriorModel& model, std::uint64_t seed, int trials = 3, double scale = 1.0);

}  // namespace sapg
