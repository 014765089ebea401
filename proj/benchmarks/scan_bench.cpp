#include <benchmark/benchmark.h>

#include "rom/ssm.hpp"

namespace {

using namespace rom;

struct ScanFixture {
  Tensor<float> u, abar, bbar, c;
  explicit ScanFixture(int64_t L, int64_t de, int64_t ds) {
    Rng rng(7);
    auto mk = [&](Shape s, double lo, double hi) {
      std::vector<float> v(static_cast<size_t>(shape_numel(s)));
      for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
      return Tensor<float>::from_vector(std::move(s), std::move(v));
    };
    u = mk({L, de}, -1, 1);
    abar = mk({L, de, ds}, 0.1, 0.99);
    bbar = mk({L, de, ds}, -1, 1);
    c = mk({L, ds}, -1, 1);
  }
};

void BM_ScanSequential(benchmark::State& state) {
  const int64_t L = state.range(0);
  ScanFixture f(L, 128, 16);
  for (auto _ : state) {
    auto y = selective_scan_sequential(f.u, f.abar, f.bbar, f.c);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * L);
}
BENCHMARK(BM_ScanSequential)->Arg(256)->Arg(1024);

void BM_ScanChunked(benchmark::State& state) {
  const int64_t L = 1024;
  ScanFixture f(L, 128, 16);
  for (auto _ : state) {
    auto y = selective_scan_chunked(f.u, f.abar, f.bbar, f.c, nullptr, state.range(0));
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * L);
}
BENCHMARK(BM_ScanChunked)->Arg(8)->Arg(64)->Arg(256);

}  // namespace
