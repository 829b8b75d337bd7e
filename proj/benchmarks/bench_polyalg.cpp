#include <benchmark/benchmark.h>

#include <random>

#include "paraman/polyalg.hpp"

using namespace paraman::polyalg;

namespace {

GradedMapJet random_jet(int n, int maxdeg, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GradedMapJet jet(n, n, maxdeg);
  for (int d = 1; d <= maxdeg; ++d) {
    HomogeneousComponent c(d, n, n);
    for (const auto& e : exponents_of_degree(n, d)) {
      Vec v(n);
      for (int i = 0; i < n; ++i) v[i] = u(rng);
      c.add_term(e, v);
    }
    jet.set(c);
  }
  return jet;
}

}  // namespace

static void BM_Evaluate(benchmark::State& state) {
  auto jet = random_jet(3, static_cast<int>(state.range(0)), 1);
  Vec x(3);
  x << 0.1, -0.05, 0.07;
  for (auto _ : state) benchmark::DoNotOptimize(jet.eval(x));
}
BENCHMARK(BM_Evaluate)->Arg(4)->Arg(8)->Arg(12);

static void BM_ComposeTruncated(benchmark::State& state) {
  int deg = static_cast<int>(state.range(0));
  auto f = random_jet(2, deg, 2);
  auto g = random_jet(2, deg, 3);
  for (auto _ : state)
    benchmark::DoNotOptimize(compose_truncated(f, g, deg + 2));
}
BENCHMARK(BM_ComposeTruncated)->Arg(4)->Arg(8)->Arg(12);

static void BM_Jacobian(benchmark::State& state) {
  auto jet = random_jet(4, 8, 4);
  Vec x(4);
  x << 0.1, -0.05, 0.07, 0.02;
  for (auto _ : state) benchmark::DoNotOptimize(jet.jacobian_at(x));
}
BENCHMARK(BM_Jacobian);

BENCHMARK_MAIN();
