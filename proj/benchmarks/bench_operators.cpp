// Window-level aggregation and particle-filter step benchmarks.
#include <benchmark/benchmark.h>

#include "ustream/operators.hpp"
#include "ustream/rfid.hpp"

using namespace ustream;

namespace {

std::vector<ProbTuple> mixture_window(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<ProbTuple> out;
  for (int i = 0; i < n; ++i) {
    const int ncomp = 1 + static_cast<int>(rng.below(3));
    std::vector<MixtureComponent> comps;
    double total = 0.0;
    for (int c = 0; c < ncomp; ++c) {
      MixtureComponent mc;
      mc.weight = rng.uniform(0.2, 1.0);
      mc.mean = rng.uniform(-5, 5);
      const double sd = rng.uniform(0.3, 2.0);
      mc.var = sd * sd;
      total += mc.weight;
      comps.push_back(mc);
    }
    for (auto& c : comps) c.weight /= total;
    out.push_back(make_base_tuple(i, {{"v", UncertainValue(GaussianMixture(comps))}}));
  }
  return out;
}

}  // namespace

static void BM_AggSum(benchmark::State& state) {
  const auto window = mixture_window(100, 7);
  ops::AggConfig cfg;
  switch (state.range(0)) {
    case 0: cfg.method = ops::SumMethod::CfInvert; break;
    case 1: cfg.method = ops::SumMethod::CfFit; break;
    case 2: cfg.method = ops::SumMethod::Clt; break;
    default: cfg.method = ops::SumMethod::HistSample; break;
  }
  for (auto _ : state)
    benchmark::DoNotOptimize(
        ops::agg_sum(std::span<const ProbTuple>(window.data(), window.size()), "v", cfg));
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_AggSum)->Arg(0)->Arg(1)->Arg(2)->Arg(3);

static void BM_PfStep(benchmark::State& state) {
  rfid::WorldConfig world;
  world.area = {10, 10, 3};
  uint32_t id = 1000;
  for (int ix = 0; ix < 4; ++ix)
    for (int iy = 0; iy < 4; ++iy)
      world.shelves.push_back({id++, {1.5 + 2.3 * ix, 1.5 + 2.3 * iy, 1.0}});
  world.object_count = 50;
  world.beta = {1.0, -0.6, -0.3};
  world.reader_range = 3.0;
  for (int i = 0; i < 32; ++i) {
    rfid::ReaderPose pose;
    pose.time = i;
    pose.pos = {1.0 + 0.25 * i, 5.0, 1.2};
    pose.heading = {1, 0, 0};
    world.reader_path.push_back(pose);
  }
  const rfid::SimulationResult sim = rfid::simulate(world);
  rfid::FilterConfig fcfg;
  fcfg.particle_count = static_cast<int>(state.range(0));
  fcfg.seed = 5;
  rfid::ParticleFilterBank bank(world, fcfg);
  size_t cycle = 0;
  for (auto _ : state) {
    bank.step(sim.cycles[cycle % sim.cycles.size()]);
    ++cycle;
  }
}
BENCHMARK(BM_PfStep)->Arg(32)->Arg(128)->Arg(512);
