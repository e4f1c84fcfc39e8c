// Microbenchmarks for the characteristic-function kernels that dominate the
// aggregation paths: descriptor evaluation, inversion, and mixture fitting.
#include <benchmark/benchmark.h>

#include "ustream/charfn.hpp"
#include "ustream/random.hpp"

using namespace ustream;

namespace {

CharFn random_product(int tuples, uint64_t seed) {
  Rng rng(seed);
  std::vector<CharFn> cfs;
  for (int i = 0; i < tuples; ++i) {
    const int ncomp = 1 + static_cast<int>(rng.below(3));
    std::vector<std::pair<double, CharFn>> parts;
    double total = 0.0;
    for (int c = 0; c < ncomp; ++c) {
      const double w = rng.uniform(0.2, 1.0);
      const double sd = rng.uniform(0.3, 2.0);
      parts.emplace_back(w, CharFn::gaussian(rng.uniform(-5, 5), sd * sd));
      total += w;
    }
    cfs.push_back(CharFn::mixture(std::move(parts)));
  }
  return cf_product(cfs);
}

}  // namespace

static void BM_CfEvaluate(benchmark::State& state) {
  const CharFn prod = random_product(static_cast<int>(state.range(0)), 1);
  double t = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(prod(0.1 + t));
    t += 1e-6;
  }
}
BENCHMARK(BM_CfEvaluate)->Arg(10)->Arg(100)->Arg(1000);

static void BM_CfInvert(benchmark::State& state) {
  const CharFn prod = random_product(100, 2);
  GridSpec grid = GridSpec::for_cf(prod, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(cf_invert(prod, grid));
}
BENCHMARK(BM_CfInvert)->Arg(1024)->Arg(2048)->Arg(4096);

static void BM_CfFitGmm(benchmark::State& state) {
  const CharFn prod = random_product(100, 3);
  for (auto _ : state)
    benchmark::DoNotOptimize(cf_fit_gmm(prod, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_CfFitGmm)->Arg(1)->Arg(3);
