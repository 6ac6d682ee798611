#include <benchmark/benchmark.h>

#include <memory>
#include <random>

#include "hmf/conditions.hpp"
#include "hmf/control.hpp"
#include "hmf/model.hpp"
#include "hmf/solver.hpp"
#include "hmf/transport.hpp"

namespace {

using namespace hmf;

WeightedCloud gaussian_cloud(int n, int dim, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Mat pts(n, dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) pts(i, j) = normal(rng);
  return uniform_cloud(pts);
}

struct LqSetup {
  std::unique_ptr<CoefficientModel> model;
  TypeAtlas atlas;
  InitialLaw law;
  TimeGrid grid;

  explicit LqSetup(int steps) {
    ModelParams params;
    params.horizon = 1.0;
    model = make_model("lq", params);
    atlas = build_type_atlas({AtlasMode::Grid, 1, 0.0, 1.0, 0});
    law.kind = InitialLaw::Kind::Gaussian;
    law.center = Vec::Constant(1, 1.0);
    law.spread = Vec::Constant(1, 0.3);
    grid = TimeGrid{1.0, steps};
  }
};

void bm_w2_quantile(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const WeightedCloud a = gaussian_cloud(n, 1, 1);
  const WeightedCloud b = gaussian_cloud(n, 1, 2);
  for (auto _ : state) benchmark::DoNotOptimize(wasserstein2_quantile(a, b));
  state.SetComplexityN(n);
}
BENCHMARK(bm_w2_quantile)->RangeMultiplier(4)->Range(256, 16384)->Complexity();

void bm_w2_lp(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const WeightedCloud a = gaussian_cloud(n, 2, 3);
  const WeightedCloud b = gaussian_cloud(n, 2, 4);
  for (auto _ : state) benchmark::DoNotOptimize(wasserstein2_lp(a, b));
  state.SetComplexityN(n);
}
BENCHMARK(bm_w2_lp)->RangeMultiplier(2)->Range(32, 256)->Complexity();

void bm_certify_base(benchmark::State& state) {
  ConstantSheet sheet;
  sheet.lambda1 = -1.0;
  sheet.lambda2 = -1.0;
  sheet.rho4 = 1.0;
  for (auto _ : state)
    benchmark::DoNotOptimize(certify(sheet, ConditionVariant::Base));
}
BENCHMARK(bm_certify_base);

// One full forward-backward solve; lq is measure-free under mean_weight=0 so
// this times the Euler sweep plus the LSMC backward pass without outer loops.
void bm_picard_lq(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const LqSetup s(50);
  const ControlField zero =
      ControlField::open_loop(s.model->dims(), s.grid, s.atlas, {});
  for (auto _ : state)
    benchmark::DoNotOptimize(
        picard_solve(*s.model, zero, s.law, s.atlas, n, s.grid, 7));
  state.SetComplexityN(n);
}
BENCHMARK(bm_picard_lq)
    ->RangeMultiplier(4)
    ->Range(256, 4096)
    ->Unit(benchmark::kMillisecond)
    ->Complexity();

void bm_adjoint_lq(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const LqSetup s(50);
  const ControlField zero =
      ControlField::open_loop(s.model->dims(), s.grid, s.atlas, {});
  const PicardResult res =
      picard_solve(*s.model, zero, s.law, s.atlas, n, s.grid, 7);
  const NoiseEnsemble noise = simulate_noise(*s.model, s.law, s.atlas, n, s.grid, 7);
  for (auto _ : state)
    benchmark::DoNotOptimize(
        solve_adjoint(*s.model, res.ensemble, res.flow, noise));
  state.SetComplexityN(n);
}
BENCHMARK(bm_adjoint_lq)
    ->RangeMultiplier(4)
    ->Range(256, 4096)
    ->Unit(benchmark::kMillisecond)
    ->Complexity();

void bm_gradient_step(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const LqSetup s(50);
  const ControlField zero =
      ControlField::open_loop(s.model->dims(), s.grid, s.atlas, {});
  OptimizeOptions opts;
  opts.max_iters = 1;
  opts.mp_probes = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(
        optimize_control(*s.model, s.law, s.atlas, n, s.grid, 7, zero, opts));
  state.SetComplexityN(n);
}
BENCHMARK(bm_gradient_step)
    ->Range(512, 512)
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
