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

#ifndef DSTPROBE_DEFENSE_HPP_
#define DSTPROBE_DEFENSE_HPP_

#include <string>
#include <vector>

#include "dstprobe/attack.hpp"
#include "dstprobe/dialogue.hpp"
#include "dstprobe/dst.hpp"
#include "dstprobe/metrics.hpp"
#include "json.hpp"

namespace dstprobe {

// sha256 of the canonical dataset JSON.
std::string dataset_hash(const std::vector<Dialogue>& dialogues);

// Training examples followed by one twin per changed record: the same turn
// and history with the adversarial user utterance and the original gold
// state. Records must come from `train`; a record or training dialogue that
// shares an id with `held_out` raises ContaminationError.
std::vector<DstExample> augment_with_twins(const std::vector<DstExample>& train,
                                           const std::vector<AttackRecord>& records,
                                           const std::vector<Dialogue>& held_out);

struct DefenseRun {
  std::string base_victim_id;
  std::string defended_victim_id;
  std::string augmentation_method;
  long n_train = 0;
  long n_twins = 0;
  double clean_jga_before = 0.0;
  double clean_jga_after = 0.0;
  std::string test_hash_before;
  std::string test_hash_after;
  std::vector<DefenseRow> rows;

  bool test_split_unchanged() const { return test_hash_before == test_hash_after; }
  nlohmann::json to_json() const;
  std::string markdown() const;
};

DefenseRow defense_row(const std::string& method, const std::vector<AttackRecord>& on_defended,
                       const std::vector<AttackRecord>& on_original);

}  // namespace dstprobe

#endif  // DSTPROBE_DEFENSE_HPP_
