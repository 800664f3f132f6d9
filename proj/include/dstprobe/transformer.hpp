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

#ifndef DSTPROBE_TRANSFORMER_HPP_
#define DSTPROBE_TRANSFORMER_HPP_

#include <random>
#include <span>
#include <vector>

#include "dstprobe/params.hpp"
#include "json.hpp"

namespace dstprobe {

struct EncoderConfig {
  int vocab_size = 0;
  int embed_dim = 64;
  int layers = 2;
  int heads = 4;
  int max_len = 64;
  bool causal = false;

  int ffn_dim() const { return 4 * embed_dim; }
  int head_dim() const { return embed_dim / heads; }
  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  bool operator==(const EncoderConfig&) const = default;
};

// Pre-LayerNorm transformer encoder over input-embedding sequences.
//
// forward() consumes an (L x d) matrix of input vectors rather than token ids:
// callers look token rows up with embed() and may prepend arbitrary vectors
// (soft prompts). Learned position embeddings are added to every row,
// including prepended ones. backward() returns the gradient with respect to
// that input matrix; scattering it into token-embedding rows is the caller's
// job.
class Encoder {
 public:
  struct LayerCache {
    Matrix x;            // block input
    Matrix ln1_hat;      // normalized input of attention
    std::vector<double> ln1_rstd;
    Matrix a;            // ln1 output
    Matrix q, k, v;      // projections
    std::vector<Matrix> probs;  // per head (L x L)
    Matrix attn_concat;  // per-head outputs, concatenated
    Matrix h;            // residual after attention
    Matrix ln2_hat;
    std::vector<double> ln2_rstd;
    Matrix b;            // ln2 output
    Matrix f1;           // pre-activation
    Matrix g;            // gelu(f1)
  };
  struct Cache {
    std::vector<LayerCache> layers;
    Matrix final_hat;
    std::vector<double> final_rstd;
  };

  Encoder() = default;
  Encoder(const EncoderConfig& config, ParameterSet& params);

  void initialize(ParameterSet& params, std::mt19937_64& rng) const;

  Matrix embed(const ParameterSet& params, std::span<const int> ids) const;
  Matrix forward(const ParameterSet& params, const Matrix& input, Cache* cache) const;
  // Accumulates parameter gradients into `grad` (skipped when empty) and
  // returns dLoss/dInput.
  Matrix backward(const ParameterSet& params, const Cache& cache, const Matrix& d_out,
                  std::span<double> grad) const;
  // Adds the rows of `d_input` for positions [offset, offset+ids.size()) into
  // the token-embedding gradient.
  void scatter_token_grad(std::span<const int> ids, const Matrix& d_input, int offset,
                          std::span<double> grad) const;

  const EncoderConfig& config() const { return config_; }
  ParamRef token_embedding() const { return tok_; }

 private:
  struct LayerParams {
    ParamRef ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  EncoderConfig config_;
  ParamRef tok_, pos_, lnf_g_, lnf_b_;
  std::vector<LayerParams> layers_;
};

// Reference GELU (tanh form) and its derivative, exposed for tests.
double gelu(double x);
double gelu_grad(double x);

}  // namespace dstprobe

#endif  // DSTPROBE_TRANSFORMER_HPP_
