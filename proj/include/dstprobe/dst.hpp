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

#ifndef DSTPROBE_DST_HPP_
#define DSTPROBE_DST_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dstprobe/checkpoint.hpp"
#include "dstprobe/dialogue.hpp"
#include "dstprobe/params.hpp"
#include "dstprobe/transformer.hpp"
#include "dstprobe/vocab.hpp"
#include "json.hpp"

namespace dstprobe {

struct DstConfig {
  int embed_dim = 64;
  int layers = 2;
  int heads = 4;
  int max_len = 96;
  uint64_t seed = 7;
  // Training.
  int epochs = 22;
  int batch_size = 32;
  double lr = 5e-3;
  double warmup_fraction = 0.1;
  double clip_norm = 1.0;
  int patience = 4;

  EncoderConfig encoder(int vocab_size) const;
  nlohmann::json to_json() const;
  static DstConfig from_json(const nlohmann::json& j);
  bool operator==(const DstConfig&) const = default;
};

// Same architecture with a different seed and one extra layer.
DstConfig transfer_victim_config(const DstConfig& base);

struct DstPrediction {
  BeliefState state;
  // Per slot, logits over ["none", candidate values in ontology order].
  std::map<std::string, std::vector<double>> logits;
};

class DstModel {
 public:
  DstModel() = default;
  DstModel(const DstConfig& config, Vocabulary vocab, Ontology ontology);

  const DstConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const Ontology& ontology() const { return ontology_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& mutable_params() { return params_; }
  int embed_dim() const { return config_.embed_dim; }
  std::string hash() const;

  Matrix embed(std::span<const int> ids) const;
  Matrix embed(const std::vector<std::string>& tokens) const;

  // "r1 [SEP] u1 [SEP] ... r_t [SEP] u_t" as ids, truncated from the left to
  // leave `reserved_rows` positions for a prompt. Throws std::length_error if
  // the user utterance alone does not fit.
  std::vector<int> encode_input(std::span<const Turn> history, const std::string& system_response,
                                const std::string& user_utterance, int reserved_rows = 0) const;

  // Per-slot logits (slot_names() order) for [prefix; embed(ids)].
  std::vector<std::vector<double>> slot_logits(const Matrix& prefix, std::span<const int> ids) const;
  DstPrediction predict_ids(const Matrix& prefix, std::span<const int> ids) const;
  DstPrediction predict(std::span<const Turn> history, const std::string& user_utterance,
                        const std::string& system_response = {}) const;

  // Index per slot into the logit vector (0 is "none").
  std::vector<int> target_indices(const BeliefState& target) const;
  // Sum over slots of the cross-entropy. Weights are read-only here: d_prefix
  // gets dL/dprefix when non-null, parameter gradients go to `grad` when it is
  // non-empty.
  double loss(const Matrix& prefix, std::span<const int> ids, const BeliefState& target, Matrix* d_prefix,
              std::span<double> grad) const;

  Checkpoint to_checkpoint() const;
  static DstModel from_checkpoint(const Checkpoint& ckpt);
  void save(const std::filesystem::path& path) const;
  static DstModel load(const std::filesystem::path& path);

 private:
  void build();

  DstConfig config_;
  Vocabulary vocab_;
  Ontology ontology_;
  ParameterSet params_;
  Encoder encoder_;
  std::vector<ParamRef> head_q_, head_w_, head_b_;
};

// Summed cross-entropy of per-slot logit vectors against target indices.
double summed_cross_entropy(const std::vector<std::vector<double>>& logits, const std::vector<int>& targets);

// One DST training example: a turn with its history.
struct DstExample {
  std::string dialogue_id;
  int turn_index = 0;
  std::vector<Turn> history;
  Turn turn;
};

// Every turn of `dialogues`, sorted by (dialogue_id, turn_index).
std::vector<DstExample> make_examples(const std::vector<Dialogue>& dialogues);

struct DstTrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> val_jga;
  int best_epoch = -1;
};

// Trains on `train_examples`, early-stopping on validation JGA. The examples
// are put in canonical order first, so the input order does not matter.
DstModel train_dst_examples(std::vector<DstExample> train_examples, const std::vector<Dialogue>& validation,
                            const Vocabulary& vocab, const Ontology& ontology, const DstConfig& config,
                            DstTrainLog* log = nullptr);
DstModel train_dst(const std::vector<Dialogue>& train, const std::vector<Dialogue>& validation,
                   const Vocabulary& vocab, const Ontology& ontology, const DstConfig& config,
                   DstTrainLog* log = nullptr);

// Predictions for every turn of `dialogues` (make_examples order), with an
// optional prompt prefix.
std::vector<BeliefState> predict_states(const DstModel& model, const std::vector<DstExample>& examples,
                                        const Matrix& prefix = Matrix());
double evaluate_jga(const DstModel& model, const std::vector<Dialogue>& dialogues,
                    const Matrix& prefix = Matrix());

}  // namespace dstprobe

#endif  // DSTPROBE_DST_HPP_
