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

#include "dstprobe/params.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <stdexcept>

namespace dstprobe {

Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.rows == 0) return bottom;
  if (bottom.rows == 0) return top;
  if (top.cols != bottom.cols) throw std::invalid_argument("vstack: column mismatch");
  Matrix out(top.rows + bottom.rows, top.cols);
  std::copy(top.data.begin(), top.data.end(), out.data.begin());
  std::copy(bottom.data.begin(), bottom.data.end(), out.data.begin() + top.data.size());
  return out;
}

ParamRef ParameterSet::add(std::string name, int rows, int cols) {
  ParamRef ref{data_.size(), rows, cols};
  data_.resize(data_.size() + ref.size(), 0.0);
  entries_.push_back({std::move(name), ref});
  return ref;
}

void ParameterSet::fill_normal(ParamRef r, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& x : view(r)) x = dist(rng);
}

void ParameterSet::fill_constant(ParamRef r, double value) {
  auto v = view(r);
  std::fill(v.begin(), v.end(), value);
}

LinearWarmupSchedule::LinearWarmupSchedule(double base_lr, long total_steps,
                                           double warmup_fraction)
    : base_lr_(base_lr),
      total_steps_(std::max(1L, total_steps)),
      warmup_steps_(static_cast<long>(std::floor(warmup_fraction * static_cast<double>(total_steps)))) {}

double LinearWarmupSchedule::at(long step) const {
  if (warmup_steps_ > 0 && step < warmup_steps_)
    return base_lr_ * static_cast<double>(step + 1) / static_cast<double>(warmup_steps_);
  const double remaining = static_cast<double>(total_steps_ - step);
  const double span = static_cast<double>(std::max(1L, total_steps_ - warmup_steps_));
  return base_lr_ * std::max(0.0, remaining / span);
}

double clip_grad_norm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& g : grad) g *= scale;
  }
  return norm;
}

Adam::Adam(size_t n, double beta1, double beta2, double eps, double weight_decay)
    : m_(n, 0.0), v_(n, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void Adam::step(std::span<double> params, std::span<const double> grad, double lr) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw std::invalid_argument("Adam::step: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * params[i]);
  }
}

double batch_mean_gradient(std::span<const size_t> batch, size_t n_params,
                           const std::function<double(size_t, std::span<double>)>& example_fn,
                           std::vector<double>& grad) {
  const int n = static_cast<int>(batch.size());
  grad.assign(n_params, 0.0);
  if (n == 0) return 0.0;
  std::vector<std::vector<double>> per(static_cast<size_t>(n));
  std::vector<double> losses(static_cast<size_t>(n), 0.0);
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 1)
  for (int b = 0; b < n; ++b) {
    try {
      per[b].assign(n_params, 0.0);
      losses[b] = example_fn(batch[b], per[b]);
    } catch (...) {
#pragma omp critical(batch_mean_gradient_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  double loss = 0.0;
  for (int b = 0; b < n; ++b) {
    loss += losses[b];
    const double* g = per[b].data();
    for (size_t i = 0; i < n_params; ++i) grad[i] += g[i];
  }
  const double inv = 1.0 / n;
  for (double& g : grad) g *= inv;
  return loss * inv;
}

}  // namespace dstprobe
