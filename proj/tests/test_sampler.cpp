#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sapg/error.hpp"
#include "sapg/oracle.hpp"
#include "sapg/sampler.hpp"

using namespace sapg;

namespace {

PosteriorModel quadratic_model(std::size_t d, double s2 = 1.0) {
  auto like = std::make_shared<GaussianLikelihood>(std::make_shared<IdentityOperator>(Shape::line(d)),
                                                   ImageVector(Shape::line(d)), s2);
  return PosteriorModel(like, std::make_shared<ZeroRegulariser>(d), ThetaDomain::scalar(0.1, 10));
}

PosteriorModel flat_model(std::size_t d) {
  return PosteriorModel(std::make_shared<ZeroLikelihood>(Shape::line(d)), std::make_shared<ZeroRegulariser>(d),
                        ThetaDomain::scalar(0.1, 10));
}

const std::vector<double> kTheta{1.0};

}  // namespace

TEST(Seeds, SplitMixReferenceValue) {
  EXPECT_EQ(splitmix64(0), 0xE220A8397B1DCDAFULL);
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  EXPECT_EQ(derive_seed(5, 3), derive_seed(5, 3));
}

TEST(KernelGuideline, Formulas) {
  auto p = posterior_kernel_guideline(4.0);
  EXPECT_DOUBLE_EQ(p.lambda, 0.25);
  EXPECT_DOUBLE_EQ(p.gamma, 0.98 / 8.0);
  auto capped = posterior_kernel_guideline(0.1, 5.0, 2.0);
  EXPECT_DOUBLE_EQ(capped.lambda, 2.0);
  EXPECT_DOUBLE_EQ(capped.gamma, 0.98 / (0.1 + 0.5));
  auto prior = prior_kernel_guideline(0.5);
  EXPECT_DOUBLE_EQ(prior.lambda, 0.5);
  EXPECT_DOUBLE_EQ(prior.gamma, 0.49);
}

TEST(Stability, GuidelineIsStableAndOversizedIsNot) {
  auto m = quadratic_model(3);
  auto p = posterior_kernel_guideline(m.likelihood().lipschitz());
  EXPECT_TRUE(is_stable(m, kTheta, p, ChainTarget::posterior));
  KernelParams big{5.0, 1.0, false};
  EXPECT_FALSE(is_stable(m, kTheta, big, ChainTarget::posterior));
  EXPECT_THROW(require_stable(m, kTheta, big, ChainTarget::posterior), Error);
}

TEST(Myula, NoDriftNoNoiseIsFixed) {
  auto m = flat_model(3);
  ChainState s(ImageVector::line({1.0, -2.0, 0.5}), 1);
  const std::vector<double> z(3, 0.0);
  myula_step(m, s, kTheta, {0.3, 1.0, false}, ChainTarget::posterior, z);
  EXPECT_EQ(s.x.raw(), (std::vector<double>{1.0, -2.0, 0.5}));
  EXPECT_EQ(s.step_count, 1u);
}

TEST(Myula, QuadraticContraction) {
  auto m = quadratic_model(2);
  ChainState s(ImageVector::line({2.0, -4.0}), 1);
  const std::vector<double> z(2, 0.0);
  myula_step(m, s, kTheta, {0.1, 1.0, false}, ChainTarget::posterior, z);
  EXPECT_NEAR(s.x[0], 1.8, 1e-15);
  EXPECT_NEAR(s.x[1], -3.6, 1e-15);
}

TEST(Myula, PriorStepMovesTowardOrigin) {
  PosteriorModel m(std::make_shared<ZeroLikelihood>(Shape::line(1)), std::make_shared<SquaredNormRegulariser>(1, 0.5),
                   ThetaDomain::scalar(0.1, 10));
  ChainState s(ImageVector::line({3.0}), 1);
  const std::vector<double> z(1, 0.0);
  // prox of x^2/2 with lambda = 0.1 is x / 1.1.
  myula_step(m, s, kTheta, {0.05, 0.1, false}, ChainTarget::prior, z);
  EXPECT_NEAR(s.x[0], 3.0 - 0.05 * 3.0 / 1.1, 1e-14);
}

TEST(Myula, DivergenceNamesKernel) {
  auto m = quadratic_model(1);
  ChainState s(ImageVector::line({1.0}), 1);
  try {
    for (int k = 0; k < 5000; ++k) myula_posterior_step(m, s, kTheta, {10.0, 1.0, false});
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_DOUBLE_EQ(e.gamma(), 10.0);
    EXPECT_GT(e.step(), 0);
  }
}

TEST(Myula, DeterministicUnderSeed) {
  auto m = quadratic_model(4);
  ChainState a(ImageVector(Shape::line(4)), 42), b(ImageVector(Shape::line(4)), 42);
  for (int k = 0; k < 100; ++k) {
    myula_posterior_step(m, a, kTheta, {0.1, 1.0, false});
    myula_posterior_step(m, b, kTheta, {0.1, 1.0, false});
  }
  EXPECT_EQ(a.x.raw(), b.x.raw());
}

TEST(Myula, StationaryVarianceMatchesBiasLaw) {
  auto m = quadratic_model(1);
  const double gamma = 0.1;
  ChainState s(ImageVector::line({0.0}), 7);
  warm_up(m, s, kTheta, {gamma, 1.0, false}, 1000);
  double sum = 0.0, sumsq = 0.0;
  const int n = 400000;
  for (int k = 0; k < n; ++k) {
    myula_posterior_step(m, s, kTheta, {gamma, 1.0, false});
    sum += s.x[0];
    sumsq += s.x[0] * s.x[0];
  }
  const double var = sumsq / n - (sum / n) * (sum / n);
  EXPECT_NEAR(var / oracle::ula_gaussian_stationary_variance(gamma, 1.0), 1.0, 0.02);
}

TEST(WarmUp, ZeroStepsOnlySetsFlag) {
  auto m = quadratic_model(2);
  ChainState s(ImageVector::line({1.0, 2.0}), 1);
  warm_up(m, s, kTheta, {0.1, 1.0, false}, 0);
  EXPECT_TRUE(s.warm);
  EXPECT_EQ(s.step_count, 0u);
  EXPECT_EQ(s.x.raw(), (std::vector<double>{1.0, 2.0}));
}

TEST(RunChain, ThinningCounts) {
  auto m = quadratic_model(2);
  ChainState s(ImageVector(Shape::line(2)), 1);
  EXPECT_EQ(run_chain(m, s, kTheta, {0.1, 1.0, false}, 12, 1).size(), 12u);
  EXPECT_EQ(run_chain(m, s, kTheta, {0.1, 1.0, false}, 12, 6).size(), 2u);
  EXPECT_EQ(s.step_count, 24u);
  EXPECT_THROW(run_chain(m, s, kTheta, {0.1, 1.0, false}, 12, 0), Error);
  auto records = run_chain_statistics(m, s, kTheta, {0.1, 1.0, false}, 10, 5);
  EXPECT_EQ(records.size(), 2u);
}

TEST(LogProb, StabilisedFlag) {
  std::vector<double> flat(50, -3.0);
  EXPECT_TRUE(is_stabilised(flat));
  std::vector<double> drift(50);
  for (std::size_t i = 0; i < drift.size(); ++i) drift[i] = static_cast<double>(i);
  EXPECT_FALSE(is_stabilised(drift));

  auto m = quadratic_model(2);
  std::vector<ImageVector> states(10, ImageVector::line({1.0, 1.0}));
  auto t = log_prob_trace(m, states, kTheta);
  EXPECT_TRUE(t.stabilised);
  EXPECT_DOUBLE_EQ(t.values.front(), -1.0);
}

TEST(Autocorrelation, LagZeroAndAr1) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::vector<double> series(200000);
  double v = 0.0;
  for (double& s : series) s = v = 0.5 * v + n(rng);
  auto acf = autocorrelation(series, 5);
  EXPECT_DOUBLE_EQ(acf[0], 1.0);
  EXPECT_NEAR(acf[1], 0.5, 0.01);
  EXPECT_NEAR(acf[2], 0.25, 0.01);
  EXPECT_NEAR(integrated_autocorrelation_time(series, 50), 3.0, 0.3);
  std::vector<double> constant(10, 1.0);
  EXPECT_THROW(autocorrelation(constant, 2), Error);
}
