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

#ifndef DSTPROBE_KERNELS_HPP_
#define DSTPROBE_KERNELS_HPP_

#include <span>

namespace dstprobe::kernels {

// Dense row-major matrix products used by the transformer. Every variant
// writes C (m x n); with accumulate=false C is overwritten.
//
//   gemm    : C = A (m x k)   * B (k x n)
//   gemm_nt : C = A (m x k)   * B^T, B stored (n x k)
//   gemm_tn : C = A^T, A stored (k x m) * B (k x n)
//
// The default entry points parallelize over output rows with OpenMP once the
// product is large enough to amortize the fork. Each output element is
// produced by exactly one thread with a fixed summation order, so results are
// bit-identical to the serial reference regardless of the thread count.
void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, int m, int k, int n, bool accumulate = false);
void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, int m, int k, int n,
             bool accumulate = false);
void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, int m, int k, int n,
             bool accumulate = false);

// Row-wise numerically stable softmax over a (rows x cols) block, in place.
void softmax_rows(std::span<double> x, int rows, int cols);

// Serial reference kernels. Kept for tests and the benchmark.
namespace serial {
void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, int m, int k, int n, bool accumulate = false);
void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, int m, int k, int n,
             bool accumulate = false);
void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, int m, int k, int n,
             bool accumulate = false);
void softmax_rows(std::span<double> x, int rows, int cols);
}  // namespace serial

// Work threshold (m*k*n multiply-adds) below which the parallel kernels run
// serially.
inline constexpr long kParallelThreshold = 1L << 16;

}  // namespace dstprobe::kernels

#endif  // DSTPROBE_KERNELS_HPP_
