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

#ifndef DSTPROBE_ATTACK_HPP_
#define DSTPROBE_ATTACK_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dstprobe/dialogue.hpp"
#include "dstprobe/dst.hpp"
#include "dstprobe/lm.hpp"
#include "dstprobe/prompt.hpp"
#include "json.hpp"

namespace dstprobe {

enum class AttackMethod { kPromptDiscrete, kPromptContMax, kPromptContMin, kScEda, kSd, kBertM };

// Display names: prompt-d, prompt-cx, prompt-cn, sc-eda, sd, bert-m.
std::string display_name(AttackMethod m);
// Config names: prompt_discrete, prompt_cont_max, prompt_cont_min, sc_eda, sd,
// bert_m. Display names are accepted as well.
std::string config_name(AttackMethod m);
AttackMethod attack_method_from_string(const std::string& s);
const std::vector<AttackMethod>& all_attack_methods();
bool is_prompt_method(AttackMethod m);
bool is_continuous_method(AttackMethod m);

struct AttackConfig {
  double perturbation_ratio = 1.0;
  SelectionRule selection_rule = SelectionRule::kTop1;
  int top_k = 20;
  AttackMethod method = AttackMethod::kPromptDiscrete;
  uint64_t seed = 1;
  // Keep ontology value tokens and slot words out of mask fills.
  bool ban_slot_value_fills = false;

  void validate() const;
  nlohmann::json to_json() const;
  static AttackConfig from_json(const nlohmann::json& j);
};

using Thesaurus = std::map<std::string, std::vector<std::string>>;
// One entry per line: a word followed by its synonyms, whitespace separated.
Thesaurus load_thesaurus(const std::filesystem::path& path);

struct AttackRecord {
  std::string dialogue_id;
  int turn_index = 0;
  std::string method;
  std::string original_utterance;
  std::vector<std::string> original_tokens;
  std::vector<bool> maskable;
  std::vector<int> masked_positions;
  std::vector<std::string> masked_tokens;
  std::string adversarial_utterance;
  std::vector<std::string> adversarial_tokens;
  DstPrediction original_prediction;
  DstPrediction adversarial_prediction;
  BeliefState gold;
  std::string prompt_text;
  std::vector<FillResult> fills;
  int budget = 0;
  int n_perturbed = 0;
  bool changed = false;
  bool no_maskable = false;
  bool no_op = false;
  bool prompt_truncated = false;
  bool introduces_new_slot_values = false;

  int l_o() const { return static_cast<int>(original_tokens.size()); }
  int l_t() const;
  bool originally_correct() const { return original_prediction.state == gold; }
  bool success() const { return originally_correct() && adversarial_prediction.state != gold; }
  // The dataset-level "attack" object.
  nlohmann::json attack_json() const;
  nlohmann::json to_json() const;
};

// max(1, floor(ratio * l_t)) for l_t >= 1, else 0.
int perturbation_budget(double ratio, int l_t);

// Uniformly samples min(budget, maskable count) maskable positions without
// replacement, replaces them with [MASK], and reports them (ascending).
std::vector<std::string> mask_utterance(const TokenizedUtterance& tu, int budget, std::mt19937_64& rng,
                                        std::vector<int>* positions = nullptr);

// Everything an attack reads; all models are frozen.
struct AttackResources {
  const DstModel* victim = nullptr;
  const LmModel* mlm = nullptr;
  const MaskPolicy* policy = nullptr;
  const ContinuousPrompt* prompt = nullptr;    // continuous methods
  const EmbeddingAdapter* adapter = nullptr;   // continuous methods
  const Thesaurus* thesaurus = nullptr;        // sc-eda
  // Called with the ids the victim sees when re-predicting on the
  // adversarial utterance. Test hook; must be thread safe.
  std::function<void(std::span<const int>)> victim_input_probe;
};

// Fill candidates that would add slot information: every token of every
// ontology value and every slot-related word, as a mask over `vocab` ids.
std::vector<bool> slot_value_fill_ban(const Vocabulary& vocab, const Ontology& ontology, const MaskPolicy& policy);

// Per-turn generator seed: derive_seed(seed, dialogue_id, turn_index).
uint64_t turn_seed(uint64_t seed, const std::string& dialogue_id, int turn_index);

AttackRecord generate_adversarial(const AttackResources& res, const DstExample& turn, const AttackConfig& config);
AttackRecord attack_bert_m(const AttackResources& res, const DstExample& turn, const AttackConfig& config);
AttackRecord attack_sc_eda(const AttackResources& res, const DstExample& turn, const AttackConfig& config);
AttackRecord attack_sd(const AttackResources& res, const DstExample& turn, const AttackConfig& config);
// Dispatches on config.method.
AttackRecord attack_turn(const AttackResources& res, const DstExample& turn, const AttackConfig& config);
// All turns, in parallel; output order follows `turns`.
std::vector<AttackRecord> run_attack(const AttackResources& res, const std::vector<DstExample>& turns,
                                     const AttackConfig& config);

struct AuditResult {
  bool protected_preserved = true;
  bool within_budget = true;
  std::string detail;
  bool ok() const { return protected_preserved && within_budget; }
};
// Protected tokens (not maskable in the record) must survive in order and
// unmodified; insertions are tolerated only for SD. n_perturbed must respect
// the budget for every method but SD.
AuditResult audit_record(const AttackRecord& r);

// Dataset JSON with user utterances replaced by their adversarial versions
// and a per-turn "attack" object.
nlohmann::json adversarial_dataset_json(const std::vector<Dialogue>& dialogues,
                                        const std::vector<AttackRecord>& records);

// Token-level Levenshtein distance.
int token_edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b);

}  // namespace dstprobe

#endif  // DSTPROBE_ATTACK_HPP_
