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

#ifndef DSTPROBE_PARAMS_HPP_
#define DSTPROBE_PARAMS_HPP_

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dstprobe {

// Row-major dense matrix.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  std::span<double> row(int r) { return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }
  size_t size() const { return data.size(); }
  bool operator==(const Matrix&) const = default;
};

// Stacks `top` above `bottom`; both must have equal column counts.
Matrix vstack(const Matrix& top, const Matrix& bottom);

// A named slice of a ParameterSet's flat storage.
struct ParamRef {
  size_t offset = 0;
  int rows = 0;
  int cols = 0;
  size_t size() const { return static_cast<size_t>(rows) * cols; }
};

// All trainable tensors of a model live in one flat buffer. Gradients,
// optimizer moments, checkpoints and content hashes all operate on the flat
// view.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    ParamRef ref;
  };

  ParamRef add(std::string name, int rows, int cols);

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> view(ParamRef r) { return {data_.data() + r.offset, r.size()}; }
  std::span<const double> view(ParamRef r) const { return {data_.data() + r.offset, r.size()}; }
  const std::vector<Entry>& entries() const { return entries_; }
  size_t size() const { return data_.size(); }

  void fill_normal(ParamRef r, double stddev, std::mt19937_64& rng);
  void fill_constant(ParamRef r, double value);

 private:
  std::vector<double> data_;
  std::vector<Entry> entries_;
};

inline std::span<double> grad_view(std::span<double> grad, ParamRef r) {
  return grad.empty() ? std::span<double>{} : grad.subspan(r.offset, r.size());
}

// Linear warmup followed by linear decay to zero, the usual fine-tuning
// schedule.
class LinearWarmupSchedule {
 public:
  LinearWarmupSchedule(double base_lr, long total_steps, double warmup_fraction);
  double at(long step) const;

 private:
  double base_lr_;
  long total_steps_;
  long warmup_steps_;
};

// Scales `grad` in place so its L2 norm is at most `max_norm`; returns the
// norm before clipping.
double clip_grad_norm(std::span<double> grad, double max_norm);

class Adam {
 public:
  explicit Adam(size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                double weight_decay = 0.0);
  void step(std::span<double> params, std::span<const double> grad, double lr);

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
};

// Mean loss and mean gradient over the examples in `batch`. `example_fn`
// receives an example index and a zeroed gradient buffer, accumulates that
// example's gradient and returns its loss. Examples run in parallel; per
// example gradients are summed in batch order so the result is independent
// of the thread count.
double batch_mean_gradient(std::span<const size_t> batch, size_t n_params,
                           const std::function<double(size_t, std::span<double>)>& example_fn,
                           std::vector<double>& grad);

}  // namespace dstprobe

#endif  // DSTPROBE_PARAMS_HPP_
