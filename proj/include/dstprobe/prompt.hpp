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

#ifndef DSTPROBE_PROMPT_HPP_
#define DSTPROBE_PROMPT_HPP_

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dstprobe/dialogue.hpp"
#include "dstprobe/dst.hpp"
#include "dstprobe/lm.hpp"
#include "dstprobe/params.hpp"
#include "json.hpp"

namespace dstprobe {

struct SourceSlot {
  std::string slot;
  std::string predicted;
  std::string replacement;
  bool operator==(const SourceSlot&) const = default;
};

struct DiscretePrompt {
  std::string text;
  std::vector<SourceSlot> source_slots;
  bool no_op = false;

  // One "belief states: <slot> = <value>;" string per source slot.
  std::vector<std::string> fragments() const;
  nlohmann::json to_json() const;
  static DiscretePrompt from_json(const nlohmann::json& j);
  bool operator==(const DiscretePrompt&) const = default;
};

std::string prompt_fragment(const std::string& slot, const std::string& value);

// Builds the prompt from a predicted state: one fragment per non-none slot in
// slot order, each with a uniformly drawn different value of the same slot.
DiscretePrompt discrete_prompt_from_state(const BeliefState& predicted, const Ontology& ontology,
                                          std::mt19937_64& rng);
// Queries the victim (output only) and builds the prompt from its prediction.
DiscretePrompt build_discrete_prompt(const DstModel& victim, std::span<const Turn> history,
                                     const std::string& system_response, const std::string& utterance,
                                     std::mt19937_64& rng);

enum class PromptObjective { kMaximize, kMinimize };
std::string to_string(PromptObjective o);
PromptObjective objective_from_string(const std::string& s);

struct CurvePoint {
  int epoch = 0;
  double train_loss = 0.0;  // mean objective loss L over the epoch's batches
  double val_jga = 0.0;     // validation JGA with the prompt prepended
};

struct ContinuousPrompt {
  Matrix matrix;  // m x d
  PromptObjective objective = PromptObjective::kMaximize;
  std::string victim_id;
  uint64_t seed = 0;
  int selected_epoch = -1;  // -1: the initialization was kept
  std::vector<CurvePoint> curve;

  int m() const { return matrix.rows; }
  int d() const { return matrix.cols; }
  nlohmann::json sidecar() const;
  // Matrix plus sidecar in one blob.
  Checkpoint to_checkpoint() const;
  static ContinuousPrompt from_checkpoint(const Checkpoint& ckpt);
};

struct PromptTuneOptions {
  int m = 5;
  double lr = 1e-4;
  int epochs = 10;
  int batch_size = 32;
  double warmup_fraction = 0.1;
  double clip_norm = 1.0;
  double init_std = 0.02;
  uint64_t seed = 1;

  nlohmann::json to_json() const;
  static PromptTuneOptions from_json(const nlohmann::json& j);
};

// Every non-none value becomes none.
BeliefState empty_target(const BeliefState& state);
std::vector<BeliefState> empty_targets(const std::vector<BeliefState>& states);

Matrix initial_prompt(int m, int d, double init_std, uint64_t seed);

// Mean DST loss over `examples` with `prompt` prepended, against the gold
// states (or their emptied versions for kMinimize).
double mean_prompt_loss(const DstModel& victim, const std::vector<DstExample>& examples, const Matrix& prompt,
                        PromptObjective objective);

ContinuousPrompt tune_continuous_prompt(const DstModel& victim, const std::vector<Dialogue>& train,
                                        const std::vector<Dialogue>& validation, PromptObjective objective,
                                        const PromptTuneOptions& options);

void save_discrete_prompt(const DiscretePrompt& prompt, const std::filesystem::path& path);
DiscretePrompt load_discrete_prompt(const std::filesystem::path& path);
// Writes `<stem>.bin` (matrix) and `<stem>.json` (sidecar).
void save_continuous_prompt(const ContinuousPrompt& prompt, const std::filesystem::path& stem);
ContinuousPrompt load_continuous_prompt(const std::filesystem::path& stem);

// Affine map from DST token-embedding space to LM token-embedding space,
// fitted by least squares over the tokens both vocabularies share.
struct EmbeddingAdapter {
  Matrix weight;  // (d_dst + 1) x d_lm, last row is the bias
  double rmse = 0.0;
  int fitted_tokens = 0;

  int in_dim() const { return weight.rows - 1; }
  int out_dim() const { return weight.cols; }
  Matrix apply(const Matrix& x) const;
};

EmbeddingAdapter fit_embedding_adapter(const DstModel& dst, const LmModel& lm);

}  // namespace dstprobe

#endif  // DSTPROBE_PROMPT_HPP_
