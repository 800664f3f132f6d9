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

#include "dstprobe/defense.hpp"

#include <map>
#include <set>
#include <utility>

#include "dstprobe/errors.hpp"
#include "dstprobe/hashing.hpp"

namespace dstprobe {

std::string dataset_hash(const std::vector<Dialogue>& dialogues) {
  return sha256_hex(dialogues_to_json(dialogues).dump());
}

std::vector<DstExample> augment_with_twins(const std::vector<DstExample>& train,
                                           const std::vector<AttackRecord>& records,
                                           const std::vector<Dialogue>& held_out) {
  std::set<std::string> held;
  for (const auto& d : held_out) held.insert(d.dialogue_id);
  std::map<std::pair<std::string, int>, const DstExample*> by_turn;
  for (const auto& e : train) {
    if (held.count(e.dialogue_id))
      throw ContaminationError("defense: training dialogue " + e.dialogue_id + " is also held out");
    by_turn[{e.dialogue_id, e.turn_index}] = &e;
  }
  std::vector<DstExample> out = train;
  for (const auto& r : records) {
    if (held.count(r.dialogue_id))
      throw ContaminationError("defense: adversarial example from held-out dialogue " + r.dialogue_id);
    const auto it = by_turn.find({r.dialogue_id, r.turn_index});
    if (it == by_turn.end())
      throw ContaminationError("defense: adversarial example " + r.dialogue_id + "#" + std::to_string(r.turn_index) +
                               " is not a training turn");
    if (!r.changed) continue;
    DstExample twin = *it->second;
    twin.turn.user_utterance = r.adversarial_utterance;
    out.push_back(std::move(twin));
  }
  return out;
}

DefenseRow defense_row(const std::string& method, const std::vector<AttackRecord>& on_defended,
                       const std::vector<AttackRecord>& on_original) {
  const auto d = summarize_records(method, on_defended);
  const auto o = summarize_records(method, on_original);
  DefenseRow row;
  row.method = method;
  row.jga_d = d.jga;
  row.jga_o = o.jga;
  row.asr_d = d.asr;
  row.asr_o = o.asr;
  row.asr_d_defined = d.asr_defined;
  row.asr_o_defined = o.asr_defined;
  return row;
}

nlohmann::json DefenseRun::to_json() const {
  nlohmann::json rj = nlohmann::json::array();
  for (const auto& r : rows)
    rj.push_back({{"method", r.method},
                  {"jga_d", r.jga_d},
                  {"jga_o", r.jga_o},
                  {"asr_d", r.asr_d_defined ? nlohmann::json(r.asr_d) : nlohmann::json(nullptr)},
                  {"asr_o", r.asr_o_defined ? nlohmann::json(r.asr_o) : nlohmann::json(nullptr)}});
  return {{"base_victim_id", base_victim_id},
          {"defended_victim_id", defended_victim_id},
          {"augmentation", {{"method", augmentation_method}, {"mixing_ratio", "1:1"}, {"n_twins", n_twins}}},
          {"n_train", n_train},
          {"clean_jga_before", clean_jga_before},
          {"clean_jga_after", clean_jga_after},
          {"test_hash_before", test_hash_before},
          {"test_hash_after", test_hash_after},
          {"rows", rj}};
}

std::string DefenseRun::markdown() const { return render_defense_table(rows, clean_jga_after, clean_jga_before); }

}  // namespace dstprobe
