#include <gtest/gtest.h>

#include <random>

#include "sapg/error.hpp"
#include "sapg/oracle.hpp"
#include "sapg/prox.hpp"

using namespace sapg;

namespace {

const TvProxOptions kTightTv{20000, 0.0};

ImageVector random_image(Shape s, std::mt19937_64& rng, double scale = 2.0) {
  std::normal_distribution<double> n(0.0, scale);
  ImageVector x(s);
  for (double& v : x.raw()) v = n(rng);
  return x;
}

double max_abs_diff(const ImageVector& a, const ImageVector& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// <P x - P y, x - y> >= ||P x - P y||^2 up to `slack`.
template <class Prox>
void expect_firmly_nonexpansive(Prox prox, Shape s, std::uint64_t seed, double slack) {
  std::mt19937_64 rng(seed);
  for (int k = 0; k < 100; ++k) {
    auto x = random_image(s, rng), y = random_image(s, rng);
    auto px = prox(x), py = prox(y);
    const auto dp = px - py;
    const double lhs = vec::dot(dp.values(), (x - y).values());
    EXPECT_GE(lhs + slack, vec::norm2_sq(dp.values())) << "pair " << k;
  }
}

}  // namespace

TEST(SoftThreshold, Scalars) {
  EXPECT_DOUBLE_EQ(soft_threshold(ImageVector::line({3.0}), 1.0)[0], 2.0);
  EXPECT_DOUBLE_EQ(soft_threshold(ImageVector::line({-0.5}), 1.0)[0], 0.0);
  EXPECT_DOUBLE_EQ(soft_threshold(ImageVector::line({-4.0}), 1.5)[0], -2.5);
}

TEST(SoftThreshold, MatchesBruteProx) {
  std::mt19937_64 rng(1);
  const std::vector<double> ones(3, 1.0);
  for (int k = 0; k < 10; ++k) {
    auto x = random_image(Shape::line(3), rng);
    auto brute = oracle::brute_prox(oracle::NormSum::weighted_l1(ones), 0.7, x);
    EXPECT_LT(max_abs_diff(soft_threshold(x, 0.7), brute.point), 1e-6);
  }
}

TEST(SoftThreshold, FirmlyNonexpansive) {
  expect_firmly_nonexpansive([](const ImageVector& x) { return soft_threshold(x, 0.8); }, Shape::line(4), 2, 1e-12);
}

TEST(WeightedL1Blocks, ReducesToSoftThreshold) {
  std::mt19937_64 rng(4);
  auto x = random_image(Shape::line(6), rng);
  std::vector<double> theta{0.9};
  auto a = prox_weighted_l1_blocks(x, theta, {{0, 6, 1.0}}, 1.0);
  EXPECT_EQ(a.raw(), soft_threshold(x, 0.9).raw());
}

TEST(WeightedL1Blocks, ZeroWeightBlockUnchanged) {
  ImageVector x = ImageVector::line({0.5, -3.0, 0.5, -3.0});
  std::vector<double> theta{0.0, 1.0};
  auto p = prox_weighted_l1_blocks(x, theta, {{0, 2, 1.0}, {2, 2, 1.0}}, 1.0);
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], -3.0);
  EXPECT_DOUBLE_EQ(p[2], 0.0);
  EXPECT_DOUBLE_EQ(p[3], -2.0);
}

TEST(WeightedL1Blocks, MatchesBruteProx) {
  std::mt19937_64 rng(5);
  const BlockList blocks{{0, 1, 1.0}, {1, 3, 1.0}};
  std::vector<double> theta{0.4, 1.3};
  const std::vector<double> weights{0.4 * 0.6, 1.3 * 0.6, 1.3 * 0.6, 1.3 * 0.6};
  for (int k = 0; k < 10; ++k) {
    auto x = random_image(Shape::line(4), rng);
    auto brute = oracle::brute_prox(oracle::NormSum::weighted_l1(weights), 1.0, x);
    EXPECT_LT(max_abs_diff(prox_weighted_l1_blocks(x, theta, blocks, 0.6), brute.point), 1e-4);
  }
}

TEST(WeightedL1Blocks, LengthMismatch) {
  std::vector<double> theta{1.0};
  EXPECT_THROW(prox_weighted_l1_blocks(ImageVector::line({1, 2}), theta, {{0, 1, 1.0}, {1, 1, 1.0}}), Error);
}

TEST(ProjectNonneg, Examples) {
  auto p = project_nonneg(ImageVector::line({-1.0, 2.0}));
  EXPECT_DOUBLE_EQ(p[0], 0.0);
  EXPECT_DOUBLE_EQ(p[1], 2.0);
  auto q = ImageVector::line({0.0, 3.0, 1e-9});
  EXPECT_EQ(project_nonneg(q).raw(), q.raw());
}

TEST(ProjectUnitLinf, Clamps) {
  auto p = project_unit_linf(ImageVector::line({-3.0, 0.25, 2.0}));
  EXPECT_DOUBLE_EQ(p[0], -1.0);
  EXPECT_DOUBLE_EQ(p[1], 0.25);
  EXPECT_DOUBLE_EQ(p[2], 1.0);
}

TEST(L1Residual, ReducesAndFixedPoint) {
  std::mt19937_64 rng(6);
  auto x = random_image(Shape::line(5), rng);
  ImageVector zero(Shape::line(5));
  EXPECT_EQ(prox_l1_residual(x, zero, 0.6).raw(), soft_threshold(x, 0.6).raw());
  EXPECT_EQ(prox_l1_residual(x, x, 2.0).raw(), x.raw());
  EXPECT_THROW(prox_l1_residual(x, ImageVector(Shape::line(4)), 1.0), Error);
}

TEST(L1Residual, MatchesBruteProx) {
  std::mt19937_64 rng(7);
  const std::vector<double> ones(3, 1.0);
  for (int k = 0; k < 10; ++k) {
    auto x = random_image(Shape::line(3), rng);
    auto y = random_image(Shape::line(3), rng);
    auto brute = oracle::brute_prox(oracle::NormSum::weighted_l1(ones, y.values()), 0.9, x);
    EXPECT_LT(max_abs_diff(prox_l1_residual(x, y, 0.9), brute.point), 1e-4);
  }
}

TEST(L1Residual, FirmlyNonexpansive) {
  std::mt19937_64 rng(8);
  auto y = random_image(Shape::line(4), rng);
  expect_firmly_nonexpansive([&](const ImageVector& x) { return prox_l1_residual(x, y, 0.5); }, Shape::line(4), 9,
                             1e-12);
}

TEST(TvProx, ConstantImageUnchanged) {
  ImageVector c(Shape::image(5, 5));
  for (double& v : c.raw()) v = 7.0;
  auto r = prox_tv_iso(c, 3.0, kTightTv);
  for (double v : r.point.values()) EXPECT_NEAR(v, 7.0, 1e-10);
}

TEST(TvProx, TwoPixelLine) {
  auto r = prox_tv_iso(ImageVector::line({0.0, 4.0}), 1.0, kTightTv);
  EXPECT_NEAR(r.point[0], 1.0, 1e-8);
  EXPECT_NEAR(r.point[1], 3.0, 1e-8);
  auto big = prox_tv_iso(ImageVector::line({0.0, 4.0}), 100.0, kTightTv);
  EXPECT_NEAR(big.point[0], 2.0, 1e-8);
  EXPECT_NEAR(big.point[1], 2.0, 1e-8);
}

TEST(TvProx, MatchesBruteProxSmallImages) {
  std::mt19937_64 rng(10);
  for (std::size_t n : {2u, 3u}) {
    const Shape s = Shape::image(n, n);
    for (int k = 0; k < 3; ++k) {
      auto x = random_image(s, rng);
      auto brute = oracle::brute_prox(oracle::NormSum::tv(s, 1.0), 0.8, x);
      EXPECT_LT(max_abs_diff(prox_tv_iso(x, 0.8, kTightTv).point, brute.point), 1e-4) << n << "x" << n;
    }
  }
}

TEST(TvProx, ToleranceCertificate) {
  std::mt19937_64 rng(11);
  auto x = random_image(Shape::image(8, 8), rng);
  auto ref = prox_tv_iso(x, 0.5, {50000, 0.0});
  auto r = prox_tv_iso(x, 0.5, {20000, 1e-3});
  EXPECT_LT(r.inner_iterations, 20000u);
  EXPECT_LT(vec::norm2((r.point - ref.point).values()) / vec::norm2(ref.point.values()), 1e-3);
  EXPECT_THROW(prox_tv_iso(x, 0.5, {10, 1e-12}), ConvergenceError);
}

TEST(TvProx, WarmStartHelps) {
  std::mt19937_64 rng(12);
  auto x = random_image(Shape::image(16, 16), rng);
  auto ref = prox_tv_iso(x, 1.0, {40000, 0.0});
  TvWarmStart warm;
  prox_tv_iso(x, 1.0, {200, 0.0}, &warm);
  auto warmed = prox_tv_iso(x, 1.0, {20, 0.0}, &warm);
  auto cold = prox_tv_iso(x, 1.0, {20, 0.0});
  EXPECT_LT(max_abs_diff(warmed.point, ref.point), max_abs_diff(cold.point, ref.point));
}

TEST(TvProx, FirmlyNonexpansive) {
  expect_firmly_nonexpansive([](const ImageVector& x) { return prox_tv_iso(x, 0.6, kTightTv).point; },
                             Shape::image(3, 3), 13, 1e-6);
}

TEST(TvProx, RejectsNonFinite) {
  ImageVector x(Shape::image(2, 2), {0, 1, std::nan(""), 2});
  EXPECT_THROW(prox_tv_iso(x, 1.0), Error);
}

TEST(TvOperators, GradientAdjoint) {
  std::mt19937_64 rng(14);
  const Shape s = Shape::image(5, 7);
  auto x = random_image(s, rng);
  std::vector<double> p(2 * s.size()), dx(2 * s.size()), dtp(s.size());
  std::normal_distribution<double> n;
  for (double& v : p) v = n(rng);
  tv_gradient(x, dx);
  tv_gradient_adjoint(s, p, dtp);
  EXPECT_NEAR(vec::dot(dx, p), vec::dot(x.values(), dtp), 1e-10);
}
