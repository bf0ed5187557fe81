#include "sapg/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace sapg {

void Likelihood::preconditioned_gradient(std::span<const double> x, std::span<double> out) const {
  gradient(x, out);
  if (preconditioner_) {
    std::vector<double> tmp(out.begin(), out.end());
    preconditioner_->apply(tmp, out);
  }
}

ImageVector Likelihood::initial_state() const {
  return ImageVector(shape(), DomainTag::pixel);
}

void ZeroLikelihood::gradient(std::span<const double>, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
}

// ---------------------------------------------------------------------------

GaussianLikelihood::GaussianLikelihood(OperatorPtr op, ImageVector y, double sigma2, double lipschitz_factor,
                                       OperatorPtr preconditioner)
    : GaussianLikelihood(std::move(op), std::make_shared<const ImageVector>(std::move(y)), sigma2, lipschitz_factor,
                         std::move(preconditioner)) {}

GaussianLikelihood::GaussianLikelihood(OperatorPtr op, std::shared_ptr<const ImageVector> y, double sigma2,
                                       double lipschitz_factor, OperatorPtr preconditioner)
    : Likelihood(std::move(preconditioner)),
      op_(std::move(op)),
      y_(std::move(y)),
      sigma2_(sigma2),
      lipschitz_factor_(lipschitz_factor) {
  if (!op_) throw Error(ErrorKind::config, "GaussianLikelihood: missing forward operator");
  if (!(y_->shape() == op_->output_shape())) {
    throw Error(ErrorKind::dimension, "GaussianLikelihood.y: shape " + to_string(y_->shape()) +
                                          " != operator output " + to_string(op_->output_shape()));
  }
  if (!(sigma2_ > 0.0) || !std::isfinite(sigma2_)) throw Error(ErrorKind::domain, "GaussianLikelihood: sigma2 must be > 0");
  if (!(lipschitz_factor_ > 0.0)) throw Error(ErrorKind::domain, "GaussianLikelihood: lipschitz_factor must be > 0");
}

double GaussianLikelihood::residual_norm_sq(std::span<const double> x) const {
  std::vector<double> ax(y_->size());
  op_->apply(x, ax);
  double s = 0.0;
  for (std::size_t i = 0; i < ax.size(); ++i) {
    const double r = (*y_)[i] - ax[i];
    s += r * r;
  }
  return s;
}

double GaussianLikelihood::value(std::span<const double> x) const { return residual_norm_sq(x) / (2.0 * sigma2_); }

void GaussianLikelihood::gradient(std::span<const double> x, std::span<double> out) const {
  std::vector<double> r(y_->size());
  op_->apply(x, r);
  const double inv = 1.0 / sigma2_;
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = (r[i] - (*y_)[i]) * inv;
  op_->adjoint(r, out);
}

std::shared_ptr<const GaussianLikelihood> GaussianLikelihood::with_sigma2(double sigma2) const {
  return std::shared_ptr<const GaussianLikelihood>(
      new GaussianLikelihood(op_, y_, sigma2, lipschitz_factor_, preconditioner_ptr()));
}

ImageVector GaussianLikelihood::initial_state() const {
  if (op_->input_shape() == y_->shape() && op_->input_tag() == DomainTag::pixel) return *y_;
  return op_->adjoint(*y_);
}

// ---------------------------------------------------------------------------

LaplaceLikelihood::LaplaceLikelihood(OperatorPtr op, ImageVector y, double scale, double smoothing)
    : op_(std::move(op)), y_(std::move(y)), scale_(scale), smoothing_(smoothing) {
  if (!op_) throw Error(ErrorKind::config, "LaplaceLikelihood: missing forward operator");
  if (!op_->is_coisometry()) {
    throw Error(ErrorKind::config, "LaplaceLikelihood: forward operator must satisfy A A^T = I");
  }
  y_.require_same_shape(ImageVector(op_->output_shape()), "LaplaceLikelihood.y");
  if (!(scale_ > 0.0) || !(smoothing_ > 0.0)) {
    throw Error(ErrorKind::domain, "LaplaceLikelihood: scale and smoothing must be > 0");
  }
}

double LaplaceLikelihood::value(std::span<const double> x) const {
  std::vector<double> ax(y_.size());
  op_->apply(x, ax);
  std::vector<double> p = ax;
  prox_l1_residual_inplace(p, y_.values(), smoothing_ / scale_);
  double l1 = 0.0;
  double quad = 0.0;
  for (std::size_t i = 0; i < ax.size(); ++i) {
    l1 += std::abs(y_[i] - p[i]);
    quad += (p[i] - ax[i]) * (p[i] - ax[i]);
  }
  return l1 / scale_ + quad / (2.0 * smoothing_);
}

void LaplaceLikelihood::gradient(std::span<const double> x, std::span<double> out) const {
  std::vector<double> ax(y_.size());
  op_->apply(x, ax);
  std::vector<double> r = ax;
  prox_l1_residual_inplace(r, y_.values(), smoothing_ / scale_);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = (ax[i] - r[i]) / smoothing_;
  op_->adjoint(r, out);
}

ImageVector LaplaceLikelihood::initial_state() const { return op_->adjoint(y_); }

// ---------------------------------------------------------------------------

std::string to_string(HomogeneityKind kind) {
  switch (kind) {
    case HomogeneityKind::homogeneous:
      return "homogeneous";
    case HomogeneityKind::separable:
      return "separable";
    case HomogeneityKind::general:
      return "general";
  }
  return "general";
}

void Regulariser::smooth_gradient(std::span<const double>, std::span<const double>, std::span<double>) const {
  throw Error(ErrorKind::config, "regulariser has no smooth gradient");
}

double Regulariser::smooth_lipschitz(std::span<const double>) const {
  throw Error(ErrorKind::config, "regulariser has no smooth gradient");
}

std::vector<double> Regulariser::statistics(std::span<const double> x) const {
  std::vector<double> g(theta_dim());
  statistics(x, g);
  return g;
}

double Regulariser::potential(std::span<const double> x, std::span<const double> theta) const {
  const auto g = statistics(x);
  double s = fixed_penalty(x);
  for (std::size_t i = 0; i < g.size(); ++i) s += theta[i] * g[i];
  return s;
}

ProxInfo ZeroRegulariser::prox(std::span<const double> x, std::span<const double>, double, std::span<double> out,
                               ProxWorkspace*) const {
  std::copy(x.begin(), x.end(), out.begin());
  return {};
}

L1Regulariser::L1Regulariser(std::size_t dim, double fixed_ridge) : dim_(dim), fixed_ridge_(fixed_ridge) {
  if (fixed_ridge_ < 0.0) throw Error(ErrorKind::domain, "L1Regulariser: fixed_ridge must be >= 0");
}

void L1Regulariser::statistics(std::span<const double> x, std::span<double> out) const { out[0] = vec::norm1(x); }

ProxInfo L1Regulariser::prox(std::span<const double> x, std::span<const double> theta, double lambda,
                             std::span<double> out, ProxWorkspace*) const {
  std::copy(x.begin(), x.end(), out.begin());
  soft_threshold_inplace(out, lambda * theta[0]);
  if (fixed_ridge_ > 0.0) {
    const double shrink = 1.0 / (1.0 + 2.0 * lambda * fixed_ridge_);
    for (double& v : out) v *= shrink;
  }
  return {};
}

Homogeneity L1Regulariser::homogeneity() const {
  return fixed_ridge_ > 0.0 ? Homogeneity::general() : Homogeneity::homogeneous(1.0);
}

double L1Regulariser::fixed_penalty(std::span<const double> x) const {
  return fixed_ridge_ > 0.0 ? fixed_ridge_ * vec::norm2_sq(x) : 0.0;
}

ElasticNetRegulariser::ElasticNetRegulariser(std::size_t dim, double rho) : dim_(dim), rho_(rho) {
  if (rho_ < 0.0) throw Error(ErrorKind::domain, "ElasticNetRegulariser: rho must be >= 0");
}

void ElasticNetRegulariser::statistics(std::span<const double> x, std::span<double> out) const {
  out[0] = vec::norm1(x) + 0.5 * rho_ * vec::norm2_sq(x);
}

ProxInfo ElasticNetRegulariser::prox(std::span<const double> x, std::span<const double> theta, double lambda,
                                     std::span<double> out, ProxWorkspace*) const {
  std::copy(x.begin(), x.end(), out.begin());
  soft_threshold_inplace(out, lambda * theta[0]);
  const double shrink = 1.0 / (1.0 + lambda * theta[0] * rho_);
  for (double& v : out) v *= shrink;
  return {};
}

SquaredNormRegulariser::SquaredNormRegulariser(std::size_t dim, double coefficient)
    : dim_(dim), coefficient_(coefficient) {
  if (!(coefficient_ > 0.0)) throw Error(ErrorKind::domain, "SquaredNormRegulariser: coefficient must be > 0");
}

void SquaredNormRegulariser::statistics(std::span<const double> x, std::span<double> out) const {
  out[0] = coefficient_ * vec::norm2_sq(x);
}

ProxInfo SquaredNormRegulariser::prox(std::span<const double> x, std::span<const double> theta, double lambda,
                                      std::span<double> out, ProxWorkspace*) const {
  const double shrink = 1.0 / (1.0 + 2.0 * lambda * theta[0] * coefficient_);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * shrink;
  return {};
}

void SquaredNormRegulariser::smooth_gradient(std::span<const double> x, std::span<const double> theta,
                                             std::span<double> out) const {
  const double s = 2.0 * coefficient_ * theta[0];
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = s * x[i];
}

TotalVariationRegulariser::TotalVariationRegulariser(Shape shape, TvProxOptions options, bool warm_start)
    : shape_(shape), options_(options), warm_start_(warm_start) {
  if (shape_.size() < 2) throw Error(ErrorKind::dimension, "TotalVariationRegulariser: image too small");
}

void TotalVariationRegulariser::statistics(std::span<const double> x, std::span<double> out) const {
  ImageVector img(shape_, std::vector<double>(x.begin(), x.end()));
  out[0] = tv_iso(img);
}

ProxInfo TotalVariationRegulariser::prox(std::span<const double> x, std::span<const double> theta, double lambda,
                                         std::span<double> out, ProxWorkspace* workspace) const {
  ImageVector img(shape_, std::vector<double>(x.begin(), x.end()));
  TvProxOptions opts = options_;
  TvWarmStart* warm = nullptr;
  if (workspace) {
    if (workspace->tv_override) opts = *workspace->tv_override;
    if (warm_start_ || workspace->tv_override) warm = &workspace->tv;
  }
  auto r = prox_tv_iso(img, lambda * theta[0], opts, warm);
  std::copy(r.point.raw().begin(), r.point.raw().end(), out.begin());
  return {r.inner_iterations, r.inner_residual};
}

BlockL1Regulariser::BlockL1Regulariser(std::size_t dim, BlockList blocks) : dim_(dim), blocks_(std::move(blocks)) {
  if (blocks_.empty()) throw Error(ErrorKind::config, "BlockL1Regulariser: no blocks");
  if (!blocks_partition(blocks_, dim_)) {
    throw Error(ErrorKind::config, "BlockL1Regulariser: blocks must be disjoint and cover all indices");
  }
}

void BlockL1Regulariser::statistics(std::span<const double> x, std::span<double> out) const {
  for (std::size_t j = 0; j < blocks_.size(); ++j) out[j] = vec::norm1(x.subspan(blocks_[j].offset, blocks_[j].size));
}

ProxInfo BlockL1Regulariser::prox(std::span<const double> x, std::span<const double> theta, double lambda,
                                  std::span<double> out, ProxWorkspace*) const {
  std::copy(x.begin(), x.end(), out.begin());
  for (std::size_t j = 0; j < blocks_.size(); ++j) {
    soft_threshold_inplace(out.subspan(blocks_[j].offset, blocks_[j].size), lambda * theta[j]);
  }
  return {};
}

// ---------------------------------------------------------------------------

void ThetaDomain::validate() const {
  if (lower.empty()) throw Error(ErrorKind::config, "theta domain: empty");
  if (upper.size() != lower.size()) throw_dimension("theta_domain.upper", lower.size(), upper.size());
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (!(lower[i] > 0.0)) throw Error(ErrorKind::config, "theta domain: lower bounds must be > 0");
    if (!(upper[i] >= lower[i]) || !std::isfinite(upper[i])) {
      throw Error(ErrorKind::config, "theta domain: upper bound must be finite and >= lower bound");
    }
  }
}

bool ThetaDomain::contains(std::span<const double> theta) const {
  if (theta.size() != lower.size()) return false;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (theta[i] < lower[i] || theta[i] > upper[i]) return false;
  }
  return true;
}

PosteriorModel::PosteriorModel(LikelihoodPtr likelihood, RegulariserPtr regulariser, ThetaDomain domain)
    : likelihood_(std::move(likelihood)), regulariser_(std::move(regulariser)), domain_(std::move(domain)) {
  if (!likelihood_ || !regulariser_) throw Error(ErrorKind::config, "PosteriorModel: missing likelihood or regulariser");
  dim_ = likelihood_->dim();
  if (regulariser_->dim() != dim_) throw_dimension("regulariser.dim", dim_, regulariser_->dim());
  domain_.validate();
  if (domain_.dim() != regulariser_->theta_dim()) {
    throw_dimension("theta_domain.dim", regulariser_->theta_dim(), domain_.dim());
  }
  const auto h = regulariser_->homogeneity();
  if (h.kind == HomogeneityKind::separable && !blocks_partition(h.blocks, dim_)) {
    throw Error(ErrorKind::config, "separable regulariser blocks must partition the index set");
  }
  if (h.kind == HomogeneityKind::homogeneous && h.alpha == 0.0) {
    throw Error(ErrorKind::config, "homogeneous regulariser needs alpha != 0");
  }
}

double eval_log_posterior_unnorm(const PosteriorModel& model, std::span<const double> x,
                                 std::span<const double> theta) {
  if (x.size() != model.dim()) throw_dimension("x", model.dim(), x.size());
  if (theta.size() != model.theta_dim()) throw_dimension("theta", model.theta_dim(), theta.size());
  return -model.likelihood().value(x) - model.regulariser().potential(x, theta);
}

double eval_log_posterior_unnorm(const PosteriorModel& model, const ImageVector& x, std::span<const double> theta) {
  return eval_log_posterior_unnorm(model, x.values(), theta);
}

ImageVector moreau_grad(const PosteriorModel& model, const ImageVector& x, std::span<const double> theta,
                        double lambda, ProxWorkspace* workspace) {
  if (!(lambda > 0.0)) throw Error(ErrorKind::domain, "moreau_grad: lambda must be > 0");
  if (x.size() != model.dim()) throw_dimension("x", model.dim(), x.size());
  if (theta.size() != model.theta_dim()) throw_dimension("theta", model.theta_dim(), theta.size());
  ImageVector p = ImageVector::zeros_like(x);
  model.regulariser().prox(x.values(), theta, lambda, p.values(), workspace);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = (x[i] - p[i]) / lambda;
  return p;
}

double moreau_envelope(const PosteriorModel& model, const ImageVector& x, std::span<const double> theta,
                       double lambda) {
  ImageVector p = ImageVector::zeros_like(x);
  model.regulariser().prox(x.values(), theta, lambda, p.values(), nullptr);
  return model.regulariser().potential(p.values(), theta) + vec::dist_sq(p.values(), x.values()) / (2.0 * lambda);
}

// ---------------------------------------------------------------------------

ModelCheckReport check_model(const PosteriorModel& model, std::uint64_t seed, int trials, double scale) {
  ModelCheckReport rep;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.05, 0.95);
  const std::size_t d = model.dim();
  const auto& lik = model.likelihood();
  const auto& reg = model.regulariser();
  const std::size_t k = reg.theta_dim();
  auto draw = [&] {
    std::vector<double> v(d);
    for (double& e : v) e = scale * normal(rng);
    return v;
  };

  std::vector<double> gu(d), gv(d);
  for (int t = 0; t < trials; ++t) {
    const auto u = draw();
    const auto v = draw();
    // Directional central differences, with a step that keeps both truncation
    // and rounding error small relative to the tolerance.
    auto dir = draw();
    const double dn = vec::norm2(dir);
    for (double& e : dir) e /= dn;
    lik.gradient(u, gu);
    const double analytic = vec::dot(gu, dir);
    const double h = 1e-4 * scale;
    std::vector<double> up = u, um = u;
    for (std::size_t i = 0; i < d; ++i) {
      up[i] += h * dir[i];
      um[i] -= h * dir[i];
    }
    const double fd = (lik.value(up) - lik.value(um)) / (2.0 * h);
    const double denom = std::max({std::abs(analytic), std::abs(fd), vec::norm2(gu) * 1e-3, 1e-12});
    rep.gradient_fd_rel_error = std::max(rep.gradient_fd_rel_error, std::abs(analytic - fd) / denom);

    if (lik.lipschitz() > 0.0) {
      lik.gradient(v, gv);
      const double num = std::sqrt(vec::dist_sq(gu, gv));
      rep.lipschitz_ratio = std::max(rep.lipschitz_ratio, num / (lik.lipschitz() * std::sqrt(vec::dist_sq(u, v))));
    }

    const double s = unif(rng);
    std::vector<double> mid(d);
    for (std::size_t i = 0; i < d; ++i) mid[i] = s * u[i] + (1.0 - s) * v[i];
    const auto gm = reg.statistics(mid);
    const auto gu_s = reg.statistics(u);
    const auto gv_s = reg.statistics(v);
    for (std::size_t j = 0; j < k; ++j) {
      const double rhs = s * gu_s[j] + (1.0 - s) * gv_s[j];
      const double viol = (gm[j] - rhs) / std::max(std::abs(rhs), 1e-12);
      rep.convexity_violation = std::max(rep.convexity_violation, viol);
    }

    const auto h_desc = reg.homogeneity();
    if (h_desc.kind != HomogeneityKind::general) {
      const double tscale = 0.2 + 4.0 * unif(rng);
      std::vector<double> tu(u);
      for (double& e : tu) e *= tscale;
      const auto gt = reg.statistics(tu);
      for (std::size_t j = 0; j < k; ++j) {
        const double alpha =
            h_desc.kind == HomogeneityKind::homogeneous ? h_desc.alpha : h_desc.blocks[j].alpha;
        const double expect = std::pow(tscale, alpha) * gu_s[j];
        const double err = std::abs(gt[j] - expect) / std::max(std::abs(expect), 1e-300);
        rep.homogeneity_rel_error = std::max(rep.homogeneity_rel_error, err);
      }
    }
  }
  const auto h_desc = reg.homogeneity();
  if (h_desc.kind == HomogeneityKind::separable) rep.blocks_ok = blocks_partition(h_desc.blocks, d);

  rep.passed = true;
  auto fail = [&](const std::string& why) {
    if (rep.passed) rep.failure = why;
    rep.passed = false;
  };
  if (rep.gradient_fd_rel_error > 1e-5) fail("likelihood gradient disagrees with finite differences");
  if (rep.lipschitz_ratio > 1.0 + 1e-6) fail("likelihood gradient exceeds declared Lipschitz constant");
  if (rep.convexity_violation > 1e-10) fail("regulariser statistic is not convex along a segment");
  if (rep.homogeneity_rel_error > 1e-8) fail("declared homogeneity does not hold");
  if (!rep.blocks_ok) fail("separable blocks do not partition the index set");
  return rep;
}

void verify_model(const PosteriorModel& model, std::uint64_t seed, int trials, double scale) {
  const auto rep = check_model(model, seed, trials, scale);
  if (!rep.passed) throw Error(ErrorKind::config, "model contract check failed: " + rep.failure);
}

}  // namespace sapg
