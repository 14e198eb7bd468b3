#include "dsm/kernels.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

namespace k = dsm::kernels;

namespace {

std::vector<double> random_values(std::size_t n, unsigned seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> n01;
  std::vector<double> v(n);
  for (double& x : v) x = n01(eng);
  return v;
}

template <auto Fn>
void dense_forward(benchmark::State& state) {
  const k::DenseDims d{std::size_t(state.range(0)), 128, 128};
  const auto w = random_values(d.in * d.out, 1), b = random_values(d.out, 2), x = random_values(d.rows * d.in, 3);
  std::vector<double> y(d.rows * d.out);
  for (auto _ : state) {
    Fn(w, b, x, d, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(d.rows));
}

template <auto Fn>
void dense_backward_params(benchmark::State& state) {
  const k::DenseDims d{std::size_t(state.range(0)), 128, 128};
  const auto delta = random_values(d.rows * d.out, 4), x = random_values(d.rows * d.in, 5);
  std::vector<double> dw(d.in * d.out), db(d.out);
  for (auto _ : state) {
    Fn(delta, x, d, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(d.rows));
}

template <auto Fn>
void rbf_pair_sum(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  const auto a = random_values(n * 2, 6), b = random_values(n * 2, 7);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(a, n, b, n, 2, 50.0, false));
  state.SetItemsProcessed(state.iterations() * std::int64_t(n * n));
}

}  // namespace

BENCHMARK(dense_forward<k::serial::dense_forward>)->Name("dense_forward/serial")->Arg(32)->Arg(256);
BENCHMARK(dense_forward<k::parallel::dense_forward>)->Name("dense_forward/parallel")->Arg(32)->Arg(256);
BENCHMARK(dense_backward_params<k::serial::dense_backward_params>)->Name("dense_backward_params/serial")->Arg(32)->Arg(256);
BENCHMARK(dense_backward_params<k::parallel::dense_backward_params>)->Name("dense_backward_params/parallel")->Arg(32)->Arg(256);
BENCHMARK(rbf_pair_sum<k::serial::rbf_pair_sum>)->Name("rbf_pair_sum/serial")->Arg(1000)->Arg(4000);
BENCHMARK(rbf_pair_sum<k::parallel::rbf_pair_sum>)->Name("rbf_pair_sum/parallel")->Arg(1000)->Arg(4000);

BENCHMARK_MAIN();
