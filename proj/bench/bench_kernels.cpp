//
// Copyright 2026 The dstprobe Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// Serial reference kernels against the OpenMP ones, at the shapes the
// encoder uses (sequence x embed x embed, sequence x embed x vocab).

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dstprobe/kernels.hpp"

namespace {

namespace k = dstprobe::kernels;

std::vector<double> random_vec(size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <bool Parallel, int Variant>
void BM_Gemm(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  const int kk = static_cast<int>(state.range(1));
  const int n = static_cast<int>(state.range(2));
  const auto a = random_vec(static_cast<size_t>(m) * kk, 1);
  const auto b = random_vec(static_cast<size_t>(kk) * n, 2);
  std::vector<double> c(static_cast<size_t>(m) * n);
  for (auto _ : state) {
    if constexpr (Variant == 0) {
      Parallel ? k::gemm(a, b, c, m, kk, n) : k::serial::gemm(a, b, c, m, kk, n);
    } else if constexpr (Variant == 1) {
      Parallel ? k::gemm_nt(a, b, c, m, kk, n) : k::serial::gemm_nt(a, b, c, m, kk, n);
    } else {
      Parallel ? k::gemm_tn(a, b, c, m, kk, n) : k::serial::gemm_tn(a, b, c, m, kk, n);
    }
    benchmark::DoNotOptimize(c.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(m) * kk * n);
}

void Shapes(benchmark::internal::Benchmark* b) {
  b->Args({96, 64, 64})->Args({96, 64, 256})->Args({96, 256, 64})->Args({64, 64, 240})->Args({256, 256, 256});
}

BENCHMARK(BM_Gemm<false, 0>)->Name("gemm/serial")->Apply(Shapes);
BENCHMARK(BM_Gemm<true, 0>)->Name("gemm/openmp")->Apply(Shapes);
BENCHMARK(BM_Gemm<false, 1>)->Name("gemm_nt/serial")->Apply(Shapes);
BENCHMARK(BM_Gemm<true, 1>)->Name("gemm_nt/openmp")->Apply(Shapes);
BENCHMARK(BM_Gemm<false, 2>)->Name("gemm_tn/serial")->Apply(Shapes);
BENCHMARK(BM_Gemm<true, 2>)->Name("gemm_tn/openmp")->Apply(Shapes);

void BM_Softmax(benchmark::State& state, bool parallel) {
  const int rows = static_cast<int>(state.range(0));
  const int cols = static_cast<int>(state.range(1));
  const auto base = random_vec(static_cast<size_t>(rows) * cols, 3);
  std::vector<double> x;
  for (auto _ : state) {
    x = base;
    parallel ? k::softmax_rows(x, rows, cols) : k::serial::softmax_rows(x, rows, cols);
    benchmark::DoNotOptimize(x.data());
  }
}
BENCHMARK_CAPTURE(BM_Softmax, serial, false)->Args({96, 96})->Args({64, 240});
BENCHMARK_CAPTURE(BM_Softmax, openmp, true)->Args({96, 96})->Args({64, 240});

}  // namespace

BENCHMARK_MAIN();
