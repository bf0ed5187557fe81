#include <benchmark/benchmark.h>

#include <random>

#include "sapg/prox.hpp"
#include "sapg/sampler.hpp"
#include "sapg/transforms.hpp"

using namespace sapg;

namespace {

ImageVector noisy_image(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 10.0);
  ImageVector x(Shape::image(n, n));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) x.at(r, c) = (r < n / 2 ? 100.0 : 160.0) + noise(rng);
  }
  return x;
}

}  // namespace

static void BM_TvProx(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = noisy_image(n, 1);
  TvProxOptions opts{static_cast<std::size_t>(state.range(1)), 0.0};
  for (auto _ : state) benchmark::DoNotOptimize(prox_tv_iso(x, 5.0, opts));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}
BENCHMARK(BM_TvProx)->Args({64, 25})->Args({256, 25})->Args({256, 50})->Unit(benchmark::kMillisecond);

static void BM_HaarAnalysis(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  WaveletBasis w(WaveletKind::orthogonal, 4, Shape::image(n, n));
  const auto x = noisy_image(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(w.analysis(x));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}
BENCHMARK(BM_HaarAnalysis)->Arg(64)->Arg(256)->Arg(512);

static void BM_UndecimatedHaarRoundTrip(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  WaveletBasis w(WaveletKind::undecimated, 3, Shape::image(n, n));
  const auto x = noisy_image(n, 3);
  for (auto _ : state) benchmark::DoNotOptimize(w.synthesis(w.analysis(x)));
}
BENCHMARK(BM_UndecimatedHaarRoundTrip)->Arg(64)->Arg(256);

static void BM_MyulaStepTvDeblur(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Shape s = Shape::image(n, n);
  const auto y = noisy_image(n, 4);
  auto blur = std::make_shared<CirculantBlur>(CirculantBlur::uniform(s, 9));
  auto like = std::make_shared<GaussianLikelihood>(blur, y, 4.0);
  PosteriorModel model(like, std::make_shared<TotalVariationRegulariser>(s), ThetaDomain::scalar(1e-3, 10));
  const auto params = posterior_kernel_guideline(like->lipschitz());
  ChainState chain(y, 7);
  const std::vector<double> theta{0.1};
  for (auto _ : state) myula_posterior_step(model, chain, theta, params);
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_MyulaStepTvDeblur)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
