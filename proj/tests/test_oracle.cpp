#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "sapg/error.hpp"
#include "sapg/oracle.hpp"
#include "sapg/prox.hpp"

using namespace sapg;

namespace {

PosteriorModel toy(std::vector<double> y, RegulariserPtr reg, double sigma2 = 1.0) {
  auto obs = ImageVector::line(std::move(y));
  auto like = std::make_shared<GaussianLikelihood>(std::make_shared<IdentityOperator>(obs.shape()), obs, sigma2);
  return PosteriorModel(like, std::move(reg), ThetaDomain::scalar(1e-3, 100));
}

}  // namespace

TEST(QuadratureLogZ, ClosedForms) {
  std::vector<double> one{1.0}, two{2.0}, three{3.0};
  EXPECT_NEAR(oracle::quadrature_log_z(L1Regulariser(1), one), std::log(2.0), 1e-4);
  EXPECT_NEAR(oracle::quadrature_log_z(L1Regulariser(2), two), 0.0, 1e-4);
  EXPECT_NEAR(oracle::quadrature_log_z(SquaredNormRegulariser(2), three), std::log(std::numbers::pi / 3.0), 1e-4);
}

TEST(QuadratureLogZ, ImproperPriorRejected) {
  std::vector<double> one{1.0};
  EXPECT_THROW(oracle::quadrature_log_z(ZeroRegulariser(1), one), Error);
}

TEST(QuadratureLogZ, HomogeneityDerivative) {
  for (double theta : {0.5, 1.0, 3.0}) {
    const double h = 1e-4 * theta;
    std::vector<double> up{theta + h}, down{theta - h};
    const double fd = (oracle::quadrature_log_z(L1Regulariser(2), up) -
                       oracle::quadrature_log_z(L1Regulariser(2), down)) / (2.0 * h);
    EXPECT_NEAR(fd / (-2.0 / theta), 1.0, 1e-3) << theta;
  }
}

TEST(GradMarginal, FisherIdentityMatchesFiniteDifference) {
  auto m = toy({2.5, -1.5}, std::make_shared<L1Regulariser>(2), 0.5);
  for (double theta : {0.5, 1.0, 2.0}) {
    std::vector<double> t{theta};
    const double fisher = oracle::quadrature_grad_marginal(m, t)[0];
    const double fd = oracle::finite_difference_grad_marginal(m, t)[0];
    EXPECT_NEAR(fisher, fd, 1e-3 * std::max(std::abs(fd), 1e-2)) << theta;
  }
}

TEST(GradMarginal, VanishesAtArgmax) {
  auto m = toy({2.5, -1.5}, std::make_shared<L1Regulariser>(2), 0.5);
  const double star = oracle::quadrature_marginal_argmax(m, 0.2, 5.0);
  std::vector<double> t{star};
  EXPECT_LT(std::abs(oracle::quadrature_grad_marginal(m, t)[0]), 1e-3);
}

TEST(GradMarginal, ConjugateGaussianClosedForm) {
  const std::vector<double> y{1.5, -0.7};
  auto m = toy(y, std::make_shared<SquaredNormRegulariser>(2), 0.5);
  const double theta = 0.8;
  std::vector<double> t{theta};
  // log p(y|theta) = sum -0.5 log(v) - y^2/(2v) with v = sigma2 + 1/(2 theta).
  const double v = 0.5 + 1.0 / (2.0 * theta);
  const double dv = -1.0 / (2.0 * theta * theta);
  double expected = 0.0;
  for (double yi : y) expected += (-0.5 / v + yi * yi / (2.0 * v * v)) * dv;
  EXPECT_NEAR(oracle::quadrature_grad_marginal(m, t)[0], expected, 1e-4 * std::abs(expected));
}

TEST(GaussianMle, Examples) {
  const std::vector<double> y{std::sqrt(2.0)};
  EXPECT_NEAR(oracle::gaussian_marginal_mle(y, 1.0, 100.0), 0.5, 1e-12);
  const std::vector<double> small{0.5};
  EXPECT_DOUBLE_EQ(oracle::gaussian_marginal_mle(small, 1.0, 100.0), 100.0);
  const std::vector<double> zero{0.0, 0.0};
  EXPECT_THROW(oracle::gaussian_marginal_mle(zero, 1.0, 100.0), Error);
}

TEST(GaussianMle, MatchesGridSearchInTwoDimensions) {
  const std::vector<double> y{1.9, -1.1};
  const double s2 = 0.6;
  auto logp = [&](double theta) {
    const double v = s2 + 1.0 / (2.0 * theta);
    double l = 0.0;
    for (double yi : y) l += -0.5 * std::log(v) - yi * yi / (2.0 * v);
    return l;
  };
  double best = 0.0, best_l = -1e300;
  for (double lt = std::log(0.2); lt < std::log(0.5); lt += 1e-7) {
    const double l = logp(std::exp(lt));
    if (l > best_l) best_l = l, best = std::exp(lt);
  }
  EXPECT_NEAR(oracle::gaussian_marginal_mle(y, s2, 100.0), best, 1e-6);
}

TEST(UlaVariance, Examples) {
  EXPECT_NEAR(oracle::ula_gaussian_stationary_variance(1e-9, 2.5), 2.5, 1e-8);
  EXPECT_NEAR(oracle::ula_gaussian_stationary_variance(0.1, 1.0), 1.0 / 0.95, 1e-12);
  EXPECT_NEAR(oracle::ula_gaussian_stationary_variance(1.0, 1.0), 2.0, 1e-12);
  EXPECT_THROW(oracle::ula_gaussian_stationary_variance(2.0, 1.0), Error);
}

TEST(BruteProx, ReferenceCases) {
  auto x = ImageVector::line({2.0, -0.3, 0.9});
  const std::vector<double> ones(3, 1.0);
  auto l1 = oracle::brute_prox(oracle::NormSum::weighted_l1(ones), 0.5, x);
  auto st = soft_threshold(x, 0.5);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(l1.point[i], st[i], 1e-6);

  auto pair = oracle::brute_prox(oracle::NormSum::tv(Shape::line(2), 1.0), 1.0, ImageVector::line({0.0, 4.0}));
  EXPECT_NEAR(pair.point[0], 1.0, 1e-6);
  EXPECT_NEAR(pair.point[1], 3.0, 1e-6);

  auto id = oracle::brute_prox(oracle::NormSum::zero(3), 1.0, x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(id.point[i], x[i], 1e-10);
}
