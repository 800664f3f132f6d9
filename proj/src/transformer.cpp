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

#include "dstprobe/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dstprobe/errors.hpp"
#include "dstprobe/kernels.hpp"

namespace dstprobe {
namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// y = x W + b, W stored (in x out).
void linear(const ParameterSet& p, ParamRef w, ParamRef b, const Matrix& x, Matrix& y) {
  y = Matrix(x.rows, w.cols);
  const auto bias = p.view(b);
  for (int r = 0; r < x.rows; ++r) std::copy(bias.begin(), bias.end(), y.row(r).begin());
  kernels::gemm(x.data, p.view(w), y.data, x.rows, w.rows, w.cols, /*accumulate=*/true);
}

// Given dY for y = x W + b: accumulates dW, db (when grad is non-empty) and
// returns dX.
Matrix linear_backward(const ParameterSet& p, ParamRef w, ParamRef b, const Matrix& x,
                       const Matrix& dy, std::span<double> grad) {
  if (!grad.empty()) {
    kernels::gemm_tn(x.data, dy.data, grad_view(grad, w), w.rows, x.rows, w.cols, true);
    auto db = grad_view(grad, b);
    for (int r = 0; r < dy.rows; ++r) {
      const auto row = dy.row(r);
      for (int c = 0; c < dy.cols; ++c) db[c] += row[c];
    }
  }
  Matrix dx(x.rows, w.rows);
  kernels::gemm_nt(dy.data, p.view(w), dx.data, dy.rows, w.cols, w.rows);
  return dx;
}

void layer_norm(const ParameterSet& p, ParamRef g, ParamRef b, const Matrix& x, Matrix& xhat,
                std::vector<double>& rstd, Matrix& y) {
  const int n = x.cols;
  xhat = Matrix(x.rows, n);
  y = Matrix(x.rows, n);
  rstd.assign(x.rows, 0.0);
  const auto gamma = p.view(g);
  const auto beta = p.view(b);
  for (int r = 0; r < x.rows; ++r) {
    const auto xr = x.row(r);
    double mu = 0.0;
    for (double v : xr) mu += v;
    mu /= n;
    double var = 0.0;
    for (double v : xr) var += (v - mu) * (v - mu);
    var /= n;
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    rstd[r] = rs;
    auto hr = xhat.row(r);
    auto yr = y.row(r);
    for (int c = 0; c < n; ++c) {
      hr[c] = (xr[c] - mu) * rs;
      yr[c] = gamma[c] * hr[c] + beta[c];
    }
  }
}

Matrix layer_norm_backward(const ParameterSet& p, ParamRef g, ParamRef b, const Matrix& xhat,
                           const std::vector<double>& rstd, const Matrix& dy, std::span<double> grad) {
  const int n = dy.cols;
  const auto gamma = p.view(g);
  Matrix dx(dy.rows, n);
  std::span<double> dg = grad_view(grad, g), dbeta = grad_view(grad, b);
  std::vector<double> dxhat(n);
  for (int r = 0; r < dy.rows; ++r) {
    const auto dyr = dy.row(r);
    const auto hr = xhat.row(r);
    double mean_d = 0.0, mean_dh = 0.0;
    for (int c = 0; c < n; ++c) {
      dxhat[c] = dyr[c] * gamma[c];
      mean_d += dxhat[c];
      mean_dh += dxhat[c] * hr[c];
      if (!grad.empty()) {
        dg[c] += dyr[c] * hr[c];
        dbeta[c] += dyr[c];
      }
    }
    mean_d /= n;
    mean_dh /= n;
    auto dxr = dx.row(r);
    for (int c = 0; c < n; ++c) dxr[c] = rstd[r] * (dxhat[c] - mean_d - hr[c] * mean_dh);
  }
  return dx;
}

void add_into(Matrix& dst, const Matrix& src) {
  for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

void EncoderConfig::validate() const {
  if (vocab_size <= 0) throw ConfigError("encoder: vocab_size must be positive");
  if (embed_dim <= 0 || heads <= 0 || layers <= 0 || max_len <= 0)
    throw ConfigError("encoder: dimensions must be positive");
  if (embed_dim % heads != 0) throw ConfigError("encoder: embed_dim must be divisible by heads");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"embed_dim", embed_dim}, {"layers", layers},
          {"heads", heads},           {"max_len", max_len},     {"causal", causal}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.causal = j.at("causal").get<bool>();
  return c;
}

Encoder::Encoder(const EncoderConfig& config, ParameterSet& params) : config_(config) {
  config_.validate();
  const int d = config_.embed_dim, f = config_.ffn_dim();
  tok_ = params.add("tok_embedding", config_.vocab_size, d);
  pos_ = params.add("pos_embedding", config_.max_len, d);
  for (int l = 0; l < config_.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    LayerParams lp;
    lp.ln1_g = params.add(pre + "ln1.gamma", 1, d);
    lp.ln1_b = params.add(pre + "ln1.beta", 1, d);
    lp.wq = params.add(pre + "attn.wq", d, d);
    lp.bq = params.add(pre + "attn.bq", 1, d);
    lp.wk = params.add(pre + "attn.wk", d, d);
    lp.bk = params.add(pre + "attn.bk", 1, d);
    lp.wv = params.add(pre + "attn.wv", d, d);
    lp.bv = params.add(pre + "attn.bv", 1, d);
    lp.wo = params.add(pre + "attn.wo", d, d);
    lp.bo = params.add(pre + "attn.bo", 1, d);
    lp.ln2_g = params.add(pre + "ln2.gamma", 1, d);
    lp.ln2_b = params.add(pre + "ln2.beta", 1, d);
    lp.w1 = params.add(pre + "ffn.w1", d, f);
    lp.b1 = params.add(pre + "ffn.b1", 1, f);
    lp.w2 = params.add(pre + "ffn.w2", f, d);
    lp.b2 = params.add(pre + "ffn.b2", 1, d);
    layers_.push_back(lp);
  }
  lnf_g_ = params.add("final_ln.gamma", 1, d);
  lnf_b_ = params.add("final_ln.beta", 1, d);
}

void Encoder::initialize(ParameterSet& params, std::mt19937_64& rng) const {
  constexpr double kStd = 0.02;
  const double out_std = kStd / std::sqrt(2.0 * config_.layers);
  params.fill_normal(tok_, kStd, rng);
  params.fill_normal(pos_, kStd, rng);
  for (const auto& lp : layers_) {
    params.fill_constant(lp.ln1_g, 1.0);
    params.fill_constant(lp.ln2_g, 1.0);
    params.fill_normal(lp.wq, kStd, rng);
    params.fill_normal(lp.wk, kStd, rng);
    params.fill_normal(lp.wv, kStd, rng);
    params.fill_normal(lp.wo, out_std, rng);
    params.fill_normal(lp.w1, kStd, rng);
    params.fill_normal(lp.w2, out_std, rng);
  }
  params.fill_constant(lnf_g_, 1.0);
}

Matrix Encoder::embed(const ParameterSet& params, std::span<const int> ids) const {
  const int d = config_.embed_dim;
  Matrix out(static_cast<int>(ids.size()), d);
  const auto table = params.view(tok_);
  for (size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= config_.vocab_size) throw std::out_of_range("token id out of range");
    std::copy_n(table.begin() + static_cast<long>(id) * d, d, out.row(static_cast<int>(i)).begin());
  }
  return out;
}

Matrix Encoder::forward(const ParameterSet& params, const Matrix& input, Cache* cache) const {
  const int L = input.rows, d = config_.embed_dim, H = config_.heads, dh = config_.head_dim();
  if (input.cols != d) throw std::invalid_argument("encoder input width != embed_dim");
  if (L == 0) throw EmptyInputError("encoder: empty input");
  if (L > config_.max_len) throw std::length_error("encoder: sequence longer than max_len");

  Cache local;
  Cache& c = cache ? *cache : local;
  c.layers.assign(layers_.size(), {});

  Matrix x = input;
  const auto pos = params.view(pos_);
  for (int r = 0; r < L; ++r) {
    auto xr = x.row(r);
    for (int j = 0; j < d; ++j) xr[j] += pos[static_cast<size_t>(r) * d + j];
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (size_t li = 0; li < layers_.size(); ++li) {
    const LayerParams& lp = layers_[li];
    LayerCache& lc = c.layers[li];
    lc.x = x;
    layer_norm(params, lp.ln1_g, lp.ln1_b, x, lc.ln1_hat, lc.ln1_rstd, lc.a);
    linear(params, lp.wq, lp.bq, lc.a, lc.q);
    linear(params, lp.wk, lp.bk, lc.a, lc.k);
    linear(params, lp.wv, lp.bv, lc.a, lc.v);
    lc.probs.assign(H, Matrix(L, L));
    lc.attn_concat = Matrix(L, d);
    for (int h = 0; h < H; ++h) {
      Matrix& P = lc.probs[h];
      const int off = h * dh;
      for (int i = 0; i < L; ++i) {
        const double* qi = &lc.q.data[static_cast<size_t>(i) * d + off];
        for (int j = 0; j < L; ++j) {
          if (config_.causal && j > i) {
            P(i, j) = -std::numeric_limits<double>::infinity();
            continue;
          }
          const double* kj = &lc.k.data[static_cast<size_t>(j) * d + off];
          double s = 0.0;
          for (int t = 0; t < dh; ++t) s += qi[t] * kj[t];
          P(i, j) = s * scale;
        }
      }
      kernels::softmax_rows(P.data, L, L);
      for (int i = 0; i < L; ++i) {
        double* oi = &lc.attn_concat.data[static_cast<size_t>(i) * d + off];
        for (int j = 0; j < L; ++j) {
          const double pij = P(i, j);
          if (pij == 0.0) continue;
          const double* vj = &lc.v.data[static_cast<size_t>(j) * d + off];
          for (int t = 0; t < dh; ++t) oi[t] += pij * vj[t];
        }
      }
    }
    Matrix attn_out;
    linear(params, lp.wo, lp.bo, lc.attn_concat, attn_out);
    lc.h = x;
    add_into(lc.h, attn_out);

    layer_norm(params, lp.ln2_g, lp.ln2_b, lc.h, lc.ln2_hat, lc.ln2_rstd, lc.b);
    linear(params, lp.w1, lp.b1, lc.b, lc.f1);
    lc.g = lc.f1;
    for (double& v : lc.g.data) v = gelu(v);
    Matrix f2;
    linear(params, lp.w2, lp.b2, lc.g, f2);
    x = lc.h;
    add_into(x, f2);
  }
  Matrix out;
  layer_norm(params, lnf_g_, lnf_b_, x, c.final_hat, c.final_rstd, out);
  return out;
}

Matrix Encoder::backward(const ParameterSet& params, const Cache& c, const Matrix& d_out,
                         std::span<double> grad) const {
  const int L = d_out.rows, d = config_.embed_dim, H = config_.heads, dh = config_.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix dx = layer_norm_backward(params, lnf_g_, lnf_b_, c.final_hat, c.final_rstd, d_out, grad);

  for (int li = static_cast<int>(layers_.size()) - 1; li >= 0; --li) {
    const LayerParams& lp = layers_[li];
    const LayerCache& lc = c.layers[li];

    // y = h + W2 gelu(W1 ln2(h)).
    Matrix dg = linear_backward(params, lp.w2, lp.b2, lc.g, dx, grad);
    for (size_t i = 0; i < dg.data.size(); ++i) dg.data[i] *= gelu_grad(lc.f1.data[i]);
    Matrix db = linear_backward(params, lp.w1, lp.b1, lc.b, dg, grad);
    Matrix dh_res = layer_norm_backward(params, lp.ln2_g, lp.ln2_b, lc.ln2_hat, lc.ln2_rstd, db, grad);
    add_into(dh_res, dx);

    // h = x + Wo attn(ln1(x)).
    Matrix d_concat = linear_backward(params, lp.wo, lp.bo, lc.attn_concat, dh_res, grad);
    Matrix dq(L, d), dk(L, d), dv(L, d);
    std::vector<double> dp(static_cast<size_t>(L) * L);
    for (int h = 0; h < H; ++h) {
      const Matrix& P = lc.probs[h];
      const int off = h * dh;
      // dP = dO V^T ; dV = P^T dO.
      for (int i = 0; i < L; ++i) {
        const double* doi = &d_concat.data[static_cast<size_t>(i) * d + off];
        double rowdot = 0.0;
        for (int j = 0; j < L; ++j) {
          const double pij = P(i, j);
          double s = 0.0;
          if (pij != 0.0) {
            const double* vj = &lc.v.data[static_cast<size_t>(j) * d + off];
            for (int t = 0; t < dh; ++t) s += doi[t] * vj[t];
            double* dvj = &dv.data[static_cast<size_t>(j) * d + off];
            for (int t = 0; t < dh; ++t) dvj[t] += pij * doi[t];
          }
          dp[static_cast<size_t>(i) * L + j] = s;
          rowdot += s * pij;
        }
        // Softmax backward into scores, scaled.
        for (int j = 0; j < L; ++j) {
          const double pij = P(i, j);
          dp[static_cast<size_t>(i) * L + j] = pij == 0.0 ? 0.0 : pij * (dp[static_cast<size_t>(i) * L + j] - rowdot) * scale;
        }
      }
      // dQ = dS K ; dK = dS^T Q.
      for (int i = 0; i < L; ++i) {
        double* dqi = &dq.data[static_cast<size_t>(i) * d + off];
        const double* qi = &lc.q.data[static_cast<size_t>(i) * d + off];
        for (int j = 0; j < L; ++j) {
          const double ds = dp[static_cast<size_t>(i) * L + j];
          if (ds == 0.0) continue;
          const double* kj = &lc.k.data[static_cast<size_t>(j) * d + off];
          double* dkj = &dk.data[static_cast<size_t>(j) * d + off];
          for (int t = 0; t < dh; ++t) {
            dqi[t] += ds * kj[t];
            dkj[t] += ds * qi[t];
          }
        }
      }
    }
    Matrix da = linear_backward(params, lp.wq, lp.bq, lc.a, dq, grad);
    add_into(da, linear_backward(params, lp.wk, lp.bk, lc.a, dk, grad));
    add_into(da, linear_backward(params, lp.wv, lp.bv, lc.a, dv, grad));
    dx = layer_norm_backward(params, lp.ln1_g, lp.ln1_b, lc.ln1_hat, lc.ln1_rstd, da, grad);
    add_into(dx, dh_res);
  }

  if (!grad.empty()) {
    auto gpos = grad_view(grad, pos_);
    for (int r = 0; r < L; ++r)
      for (int j = 0; j < d; ++j) gpos[static_cast<size_t>(r) * d + j] += dx(r, j);
  }
  return dx;
}

void Encoder::scatter_token_grad(std::span<const int> ids, const Matrix& d_input, int offset,
                                 std::span<double> grad) const {
  if (grad.empty()) return;
  const int d = config_.embed_dim;
  auto gtok = grad_view(grad, tok_);
  for (size_t i = 0; i < ids.size(); ++i) {
    const auto row = d_input.row(offset + static_cast<int>(i));
    double* dst = &gtok[static_cast<size_t>(ids[i]) * d];
    for (int j = 0; j < d; ++j) dst[j] += row[j];
  }
}

}  // namespace dstprobe
