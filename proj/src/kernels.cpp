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

#include "dstprobe/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace dstprobe::kernels {
namespace {

// Row kernels shared by the serial and OpenMP paths so both produce the same
// floating point sequence for every output element.

inline void gemm_row(const double* a, const double* b, double* c, int i, int k,
                     int n, bool accumulate) {
  double* crow = c + static_cast<long>(i) * n;
  if (!accumulate) std::fill(crow, crow + n, 0.0);
  const double* arow = a + static_cast<long>(i) * k;
  for (int p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = b + static_cast<long>(p) * n;
    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void gemm_nt_row(const double* a, const double* b, double* c, int i,
                        int k, int n, bool accumulate) {
  double* crow = c + static_cast<long>(i) * n;
  const double* arow = a + static_cast<long>(i) * k;
  for (int j = 0; j < n; ++j) {
    const double* brow = b + static_cast<long>(j) * k;
    double s = 0.0;
    for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
    crow[j] = accumulate ? crow[j] + s : s;
  }
}

inline void gemm_tn_row(const double* a, const double* b, double* c, int i,
                        int m, int k, int n, bool accumulate) {
  double* crow = c + static_cast<long>(i) * n;
  if (!accumulate) std::fill(crow, crow + n, 0.0);
  for (int p = 0; p < k; ++p) {
    const double av = a[static_cast<long>(p) * m + i];
    if (av == 0.0) continue;
    const double* brow = b + static_cast<long>(p) * n;
    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void softmax_row(double* x, int cols) {
  double mx = x[0];
  for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (int j = 0; j < cols; ++j) {
    x[j] = std::exp(x[j] - mx);
    sum += x[j];
  }
  const double inv = 1.0 / sum;
  for (int j = 0; j < cols; ++j) x[j] *= inv;
}

bool worth_parallel(int m, int k, int n) {
  return static_cast<long>(m) * k * n >= kParallelThreshold && m > 1;
}

}  // namespace

namespace serial {

void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i)
    gemm_row(a.data(), b.data(), c.data(), i, k, n, accumulate);
}

void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i)
    gemm_nt_row(a.data(), b.data(), c.data(), i, k, n, accumulate);
}

void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i)
    gemm_tn_row(a.data(), b.data(), c.data(), i, m, k, n, accumulate);
}

void softmax_rows(std::span<double> x, int rows, int cols) {
  for (int r = 0; r < rows; ++r) softmax_row(x.data() + static_cast<long>(r) * cols, cols);
}

}  // namespace serial

void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, int m, int k, int n, bool accumulate) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel for schedule(static) if (worth_parallel(m, k, n))
  for (int i = 0; i < m; ++i) gemm_row(ap, bp, cp, i, k, n, accumulate);
}

void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, int m, int k, int n, bool accumulate) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel for schedule(static) if (worth_parallel(m, k, n))
  for (int i = 0; i < m; ++i) gemm_nt_row(ap, bp, cp, i, k, n, accumulate);
}

void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, int m, int k, int n, bool accumulate) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel for schedule(static) if (worth_parallel(m, k, n))
  for (int i = 0; i < m; ++i) gemm_tn_row(ap, bp, cp, i, m, k, n, accumulate);
}

void softmax_rows(std::span<double> x, int rows, int cols) {
  double* xp = x.data();
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * cols >= kParallelThreshold)
  for (int r = 0; r < rows; ++r) softmax_row(xp + static_cast<long>(r) * cols, cols);
}

}  // namespace dstprobe::kernels
