#include "vibus/mesh_geometry.hpp"
#include "vibus/mixture.hpp"
#include "vibus/spectral.hpp"
#include "vibus/synthetic.hpp"
#include "vibus/transforms.hpp"
#include "vibus/viewpoint_bottleneck.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace vibus;

static void BM_Fps(benchmark::State& state) {
  const SceneMesh m = make_random_mesh(1, 100, 100);
  for (auto _ : state) benchmark::DoNotOptimize(fps(m.vertices, static_cast<std::size_t>(state.range(0)), 0));
}
BENCHMARK(BM_Fps)->Arg(256)->Arg(1024);

static void BM_VbLossGrad(benchmark::State& state) {
  const auto d = static_cast<Eigen::Index>(state.range(0));
  const Eigen::MatrixXd zp = Eigen::MatrixXd::Random(1024, d), zq = Eigen::MatrixXd::Random(1024, d);
  VBConfig cfg;
  cfg.lambda = 0.25;
  cfg.feature_dim = static_cast<int>(d);
  for (auto _ : state) benchmark::DoNotOptimize(vb_loss_grad(zp, zq, cfg));
}
BENCHMARK(BM_VbLossGrad)->Arg(64)->Arg(256);

static void BM_Lanczos(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  Eigen::MatrixXd a = Eigen::MatrixXd::Random(n, n);
  a = ((a + a.transpose()) / 2.0).eval();
  for (auto _ : state) benchmark::DoNotOptimize(top_k_eigenvectors(a, 50));
}
BENCHMARK(BM_Lanczos)->Arg(200)->Arg(1000)->Unit(benchmark::kMillisecond);

static void BM_HeatGeodesics(benchmark::State& state) {
  const SceneMesh m = make_icosphere(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(heat_geodesics(m));
}
BENCHMARK(BM_HeatGeodesics)->Arg(2)->Arg(3)->Unit(benchmark::kMillisecond);

static void BM_GammaEm(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution pick(0.6);
  std::vector<double> xs(static_cast<std::size_t>(state.range(0)));
  for (double& x : xs)
    x = pick(rng) ? std::gamma_distribution<double>(2.0, 0.25)(rng) : std::gamma_distribution<double>(8.0, 1.0)(rng);
  for (auto _ : state) benchmark::DoNotOptimize(fit_mixture_em(xs, MixtureKind::Gamma));
}
BENCHMARK(BM_GammaEm)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
