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

#ifndef DSTPROBE_LM_HPP_
#define DSTPROBE_LM_HPP_

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dstprobe/checkpoint.hpp"
#include "dstprobe/dialogue.hpp"
#include "dstprobe/params.hpp"
#include "dstprobe/transformer.hpp"
#include "dstprobe/vocab.hpp"
#include "json.hpp"

namespace dstprobe {

enum class LmMode { kMasked, kCausal };
enum class SelectionRule { kTop1, kLowestOfTopK, kSampleTopK };

std::string to_string(LmMode mode);
LmMode lm_mode_from_string(const std::string& s);
std::string to_string(SelectionRule rule);
SelectionRule selection_rule_from_string(const std::string& s);

struct LmConfig {
  int vocab_size = 0;
  int embed_dim = 64;
  int layers = 2;
  int heads = 4;
  int max_len = 64;
  LmMode mode = LmMode::kMasked;

  EncoderConfig encoder() const;
  nlohmann::json to_json() const;
  static LmConfig from_json(const nlohmann::json& j);
  bool operator==(const LmConfig&) const = default;
};

struct LmTrainOptions {
  int epochs = 8;
  int batch_size = 32;
  double lr = 2e-3;
  double warmup_fraction = 0.1;
  double mask_prob = 0.15;
  double clip_norm = 1.0;
  uint64_t seed = 1;

  nlohmann::json to_json() const;
  static LmTrainOptions from_json(const nlohmann::json& j);
};

struct FillResult {
  int position = 0;
  std::vector<std::pair<std::string, double>> candidates;  // descending
  std::string chosen;
};

class LmModel {
 public:
  LmModel() = default;
  LmModel(const LmConfig& config, Vocabulary vocab, uint64_t init_seed);

  const LmConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& mutable_params() { return params_; }
  int embed_dim() const { return config_.embed_dim; }
  // SHA-256 of the parameter values.
  std::string hash() const;

  Matrix embed(std::span<const int> ids) const;
  Matrix embed(const std::vector<std::string>& tokens) const;
  // (L x V) logits for every input row.
  Matrix logits(const Matrix& input) const;
  // Full-vocabulary distribution at `position` of `input`.
  std::vector<double> distribution(const Matrix& input, int position) const;

  // Mean cross-entropy over rows of [prefix; embed(ids)] whose target is
  // >= 0. `targets` indexes the combined sequence. Fills d_prefix when
  // non-null and accumulates parameter gradients when `grad` is non-empty.
  double loss(const Matrix& prefix, std::span<const int> ids, std::span<const int> targets,
              Matrix* d_prefix, std::span<double> grad) const;

  Checkpoint to_checkpoint() const;
  static LmModel from_checkpoint(const Checkpoint& ckpt);
  void save(const std::filesystem::path& path) const;
  static LmModel load(const std::filesystem::path& path);

 private:
  void build();

  LmConfig config_;
  Vocabulary vocab_;
  ParameterSet params_;
  Encoder encoder_;
  ParamRef out_bias_;
};

struct LmTrainLog {
  std::vector<double> epoch_loss;
};

// Masked LM over training-split "system [SEP] user" pairs and bare user
// utterances; 15% dynamic masking with the usual 80/10/10 corruption.
LmModel train_mlm(const std::vector<Dialogue>& train, const Vocabulary& vocab, const LmConfig& config,
                  const LmTrainOptions& options, LmTrainLog* log = nullptr);
// Left-to-right LM over "[SEP] text" for user utterances and system responses.
LmModel train_causal_lm(const std::vector<Dialogue>& train, const Vocabulary& vocab,
                        const LmConfig& config, const LmTrainOptions& options,
                        LmTrainLog* log = nullptr);

// Fills every [MASK] of `tokens` left to right, each fill conditioning on the
// previous ones. `prefix` rows (possibly none) are prepended in embedding
// space. Positions refer to `tokens`. `rng` is only used by kSampleTopK.
// Vocabulary ids flagged in `banned` are never candidates.
std::vector<FillResult> fill_mask(const LmModel& lm, const Matrix& prefix,
                                  std::vector<std::string>& tokens, int top_k, SelectionRule rule,
                                  std::mt19937_64* rng = nullptr, const std::vector<bool>* banned = nullptr);
std::vector<FillResult> fill_mask(const LmModel& lm, std::vector<std::string>& tokens, int top_k,
                                  SelectionRule rule, std::mt19937_64* rng = nullptr);

// Corpus-level perplexity: exp of the token-weighted mean negative
// log-likelihood over all utterances. Each utterance is scored as
// "[SEP] t1 .. tn" with no end token.
double perplexity(const LmModel& lm, const std::vector<std::string>& utterances);

inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kSepToken = "[SEP]";

}  // namespace dstprobe

#endif  // DSTPROBE_LM_HPP_
