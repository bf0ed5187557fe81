#include "sapg_cli/problem.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sapg/error.hpp"
#include "sapg/image_io.hpp"
#include "sapg/sampler.hpp"

namespace sapg::cli {

namespace {

// Stream indices under the repetition seed (0 and 1 are taken by the SAPG chains).
constexpr std::uint64_t kTruthStream = 2;
constexpr std::uint64_t kNoiseStream = 3;

ImageVector load_image(const std::string& source) {
  const std::filesystem::path path(source);
  const auto ext = path.extension().string();
  if (ext == ".pgm") return io::read_pgm(path);
  if (ext == ".raw") return io::read_raw(path);
  throw Error(ErrorKind::config, "input.source: expected 'synthetic', a .pgm or a .raw path, got '" + source + "'");
}

std::shared_ptr<const WaveletBasis> make_basis(const ExperimentConfig& c, Shape image_shape) {
  return std::make_shared<const WaveletBasis>(c.model.wavelet_kind, c.model.wavelet_levels, image_shape);
}

std::vector<double> sample_coefficients(const std::string& generator, std::size_t n, double theta,
                                        double coefficient, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> out(n);
  if (generator == "laplace_coefficients") {
    // Density (theta / 2) exp(-theta |x|).
    std::exponential_distribution<double> expo(theta);
    std::bernoulli_distribution sign(0.5);
    for (double& v : out) v = sign(rng) ? expo(rng) : -expo(rng);
  } else {
    // Density proportional to exp(-theta * coefficient * x^2).
    std::normal_distribution<double> normal(0.0, std::sqrt(1.0 / (2.0 * theta * coefficient)));
    for (double& v : out) v = normal(rng);
  }
  return out;
}

RegulariserPtr make_regulariser(const ExperimentConfig& c, const LinearOperator& forward,
                                const WaveletBasis* basis) {
  const auto& m = c.model;
  const std::size_t d = forward.input_shape().size();
  if (m.regulariser == "l1") return std::make_shared<L1Regulariser>(d, m.fixed_ridge);
  if (m.regulariser == "elastic_net") return std::make_shared<ElasticNetRegulariser>(d, m.elastic_rho);
  if (m.regulariser == "squared_norm") return std::make_shared<SquaredNormRegulariser>(d, m.squared_coefficient);
  if (m.regulariser == "zero") return std::make_shared<ZeroRegulariser>(d);
  if (m.regulariser == "block_l1") {
    if (basis == nullptr) throw Error(ErrorKind::config, "model.regulariser: block_l1 needs a synthesis operator");
    return std::make_shared<BlockL1Regulariser>(d, basis->level_blocks());
  }
  if (m.regulariser == "tv") {
    if (forward.input_tag() != DomainTag::pixel || forward.input_shape().is_1d) {
      throw Error(ErrorKind::config, "model.regulariser: tv needs a pixel-domain 2-D state");
    }
    return std::make_shared<TotalVariationRegulariser>(forward.input_shape(), TvProxOptions{m.tv_inner_iters, 0.0},
                                                       m.tv_warm_start);
  }
  throw Error(ErrorKind::config, "model.regulariser: unknown regulariser '" + m.regulariser + "'");
}

}  // namespace

// Long MYULA prior chain under theta * TV, recentred on mid-grey.
ImageVector tv_prior_draw(Shape shape, double theta, std::size_t steps, std::uint64_t seed) {
  auto reg = std::make_shared<TotalVariationRegulariser>(shape);
  PosteriorModel prior(std::make_shared<ZeroLikelihood>(shape), reg, ThetaDomain::scalar(0.5 * theta, 2.0 * theta));
  ChainState state(ImageVector(shape), seed);
  const double lambda = 0.5;
  const KernelParams kernel{0.98 * lambda, lambda, false};
  const std::vector<double> th{theta};
  for (std::size_t i = 0; i < steps; ++i) myula_prior_step(prior, state, th, kernel);
  ImageVector x = std::move(state.x);
  const double shift = 128.0 - vec::mean(x.values());
  for (double& v : x.raw()) v += shift;
  return x;
}

ImageVector phantom(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  ImageVector img(Shape::image(rows, cols));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double h = static_cast<double>(rows);
  const double w = static_cast<double>(cols);
  auto fill_ellipse = [&](double cy, double cx, double ry, double rx, double angle, double value) {
    const double ca = std::cos(angle);
    const double sa = std::sin(angle);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double dy = (static_cast<double>(r) + 0.5) / h - cy;
        const double dx = (static_cast<double>(c) + 0.5) / w - cx;
        const double u = (ca * dx + sa * dy) / rx;
        const double v = (-sa * dx + ca * dy) / ry;
        if (u * u + v * v <= 1.0) img.at(r, c) = value;
      }
    }
  };
  auto fill_rect = [&](double top, double left, double height, double width, double value) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double y = (static_cast<double>(r) + 0.5) / h;
        const double x = (static_cast<double>(c) + 0.5) / w;
        if (y >= top && y < top + height && x >= left && x < left + width) img.at(r, c) = value;
      }
    }
  };

  std::fill(img.raw().begin(), img.raw().end(), 20.0);
  fill_ellipse(0.5, 0.5, 0.44, 0.36, 0.0, 90.0);
  fill_ellipse(0.5, 0.5, 0.40, 0.32, 0.0, 150.0);
  for (int k = 0; k < 6; ++k) {
    const double cy = 0.25 + 0.5 * unit(rng);
    const double cx = 0.3 + 0.4 * unit(rng);
    const double ry = 0.03 + 0.09 * unit(rng);
    const double rx = 0.03 + 0.09 * unit(rng);
    fill_ellipse(cy, cx, ry, rx, 3.14159 * unit(rng), 40.0 + 200.0 * unit(rng));
  }
  for (int k = 0; k < 3; ++k) {
    fill_rect(0.2 + 0.5 * unit(rng), 0.25 + 0.4 * unit(rng), 0.05 + 0.08 * unit(rng), 0.05 + 0.08 * unit(rng),
              255.0 * unit(rng));
  }
  return img;
}

std::shared_ptr<const PosteriorModel> with_noise_variance(const PosteriorModel& model, double sigma2) {
  const auto* gl = dynamic_cast<const GaussianLikelihood*>(&model.likelihood());
  if (gl == nullptr) throw Error(ErrorKind::config, "sigma2 override needs a Gaussian likelihood");
  return std::make_shared<const PosteriorModel>(model.with_likelihood(gl->with_sigma2(sigma2)));
}

ProblemInstance build_problem(const ExperimentConfig& c, std::size_t rep) {
  ProblemInstance p;
  p.seed = repetition_seed(c.master_seed, rep);
  const auto& m = c.model;

  // Image shape comes from the file when one is given.
  std::optional<ImageVector> loaded;
  if (c.input.source != "synthetic") loaded = load_image(c.input.source);
  const Shape image_shape = loaded ? loaded->shape() : Shape::image(c.input.rows, c.input.cols);

  std::shared_ptr<const WaveletBasis> basis;
  OperatorPtr blur;
  if (m.op == "blur" || m.op == "blur_synthesis") {
    if (m.blur_size <= 1) {
      blur = std::make_shared<IdentityOperator>(image_shape);
    } else {
      blur = std::make_shared<CirculantBlur>(CirculantBlur::uniform(image_shape, m.blur_size));
    }
  }
  if (m.op == "synthesis" || m.op == "blur_synthesis") basis = make_basis(c, image_shape);

  if (m.op == "identity") {
    p.forward = std::make_shared<IdentityOperator>(image_shape);
    p.to_image = p.forward;
  } else if (m.op == "blur") {
    p.forward = blur;
    p.to_image = std::make_shared<IdentityOperator>(image_shape);
  } else if (m.op == "synthesis") {
    p.forward = std::make_shared<SynthesisOperator>(*basis);
    p.to_image = p.forward;
  } else if (m.op == "blur_synthesis") {
    p.to_image = std::make_shared<SynthesisOperator>(*basis);
    p.forward = std::make_shared<ComposedOperator>(blur, p.to_image);
  } else {
    throw Error(ErrorKind::config, "model.operator: unknown operator '" + m.op + "'");
  }

  const std::uint64_t truth_seed = derive_seed(p.seed, kTruthStream);
  if (loaded) {
    p.truth = std::move(*loaded);
  } else if (c.input.generator == "phantom") {
    p.truth = phantom(image_shape.rows, image_shape.cols, truth_seed);
  } else if (c.input.generator == "tv_prior") {
    if (!(c.input.true_theta > 0.0)) throw Error(ErrorKind::config, "input.true_theta: must be > 0");
    p.truth = tv_prior_draw(image_shape, c.input.true_theta, c.input.prior_steps, truth_seed);
  } else if (c.input.generator == "laplace_coefficients" || c.input.generator == "gaussian_coefficients") {
    if (!(c.input.true_theta > 0.0)) throw Error(ErrorKind::config, "input.true_theta: must be > 0");
    const Shape state_shape = p.to_image->input_shape();
    ImageVector state(state_shape,
                      sample_coefficients(c.input.generator, state_shape.size(), c.input.true_theta,
                                          m.squared_coefficient, truth_seed),
                      p.to_image->input_tag());
    p.truth = p.to_image->apply(state);
  } else {
    throw Error(ErrorKind::config, "input.generator: unknown generator '" + c.input.generator + "'");
  }
  if (p.truth.shape() != image_shape) throw_dimension("input.source", image_shape.size(), p.truth.size());

  // Observation: blurred truth plus noise.
  ImageVector clean = blur ? blur->apply(p.truth) : p.truth;
  clean.set_tag(DomainTag::pixel);
  auto noisy = add_noise(clean, c.noise.snr_db, c.noise.kind, derive_seed(p.seed, kNoiseStream));
  p.y = std::move(noisy.y);
  p.sigma2 = noisy.sigma2;

  LikelihoodPtr likelihood;
  if (m.likelihood == "gaussian") {
    likelihood = std::make_shared<GaussianLikelihood>(p.forward, p.y, p.sigma2, m.lipschitz_factor);
  } else {
    const double b = std::sqrt(p.sigma2 / 2.0);
    likelihood = std::make_shared<LaplaceLikelihood>(p.forward, p.y, b, m.laplace_smoothing * b * b);
  }
  auto regulariser = make_regulariser(c, *p.forward, basis.get());
  const std::size_t theta_dim = regulariser->theta_dim();
  p.model = std::make_shared<const PosteriorModel>(likelihood, regulariser,
                                                   ThetaDomain::uniform(theta_dim, c.theta_min, c.theta_max));

  p.sapg = c.sapg;
  p.sapg.seed = p.seed;
  p.sapg.record_chains = true;
  if (p.sapg.theta0.size() == 1 && theta_dim > 1) p.sapg.theta0.assign(theta_dim, p.sapg.theta0[0]);
  const double d = static_cast<double>(p.model->dim());
  if (c.c0) {
    p.sapg.schedule.c0 = *c.c0;
  } else if (c.c0_over_d) {
    p.sapg.schedule.c0 = *c.c0_over_d / d;
  } else {
    p.sapg.schedule.c0 = 1.0 / (p.sapg.theta0[0] * d);
  }
  if (p.sapg.algorithm == Algorithm::alg4) {
    // Noise-variance box from the SNR range, using ||y||^2 / d_y as the signal power.
    const double power = vec::norm2_sq(p.y.values()) / static_cast<double>(p.y.size());
    p.sapg.sigma.lower = power * std::pow(10.0, -c.sigma_snr_max_db / 10.0);
    p.sapg.sigma.upper = power * std::pow(10.0, -c.sigma_snr_min_db / 10.0);
    p.sapg.sigma.schedule.c0 = c.sigma_c0_over_d / static_cast<double>(p.y.size());
  }
  validate_config(p.sapg, *p.model);

  p.map = c.map;
  return p;
}

}  // namespace sapg::cli
