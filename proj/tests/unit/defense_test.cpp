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

#include <gtest/gtest.h>

#include <map>
#include <string>
#include <vector>

#include "dstprobe/defense.hpp"
#include "dstprobe/errors.hpp"
#include "toy_setup.hpp"

namespace {

using namespace dstprobe;
using dstprobe::testkit::toy;

std::vector<AttackRecord> train_records() {
  auto& ex = toy();
  static const auto cell = ex.attack(ex.victim(true), AttackMethod::kBertM, 1.0, 0, 1, Split::kTrain);
  return cell.records;
}

std::vector<Dialogue> held_out() {
  const auto& c = toy().corpus(true);
  auto h = c.validation;
  h.insert(h.end(), c.test.begin(), c.test.end());
  return h;
}

TEST(Augment, AppendsOneTwinPerChangedRecord) {
  const auto train = make_examples(toy().corpus(true).train);
  const auto records = train_records();
  long changed = 0;
  for (const auto& r : records) changed += r.changed;
  const auto aug = augment_with_twins(train, records, held_out());
  ASSERT_EQ(aug.size(), train.size() + static_cast<size_t>(changed));
  for (size_t i = 0; i < train.size(); ++i) EXPECT_EQ(aug[i].turn, train[i].turn);
  std::map<std::pair<std::string, int>, const DstExample*> by_turn;
  for (const auto& e : train) by_turn[{e.dialogue_id, e.turn_index}] = &e;
  for (size_t i = train.size(); i < aug.size(); ++i) {
    const auto& twin = aug[i];
    const auto* orig = by_turn.at({twin.dialogue_id, twin.turn_index});
    EXPECT_EQ(twin.turn.gold_state, orig->turn.gold_state);
    EXPECT_EQ(twin.history, orig->history);
    EXPECT_NE(twin.turn.user_utterance, orig->turn.user_utterance);
  }
}

TEST(Augment, RefusesHeldOutRecords) {
  auto& ex = toy();
  const auto test_cell = ex.attack(ex.victim(true), AttackMethod::kBertM, 1.0, 0, 1, Split::kTest);
  const auto train = make_examples(ex.corpus(true).train);
  EXPECT_THROW(augment_with_twins(train, test_cell.records, held_out()), ContaminationError);
  auto leaky = train;
  leaky.push_back(make_examples(ex.corpus(true).test).front());
  EXPECT_THROW(augment_with_twins(leaky, train_records(), held_out()), ContaminationError);
}

TEST(Defense, RetrainsAndReportsEveryMethod) {
  auto& ex = toy();
  const auto before = dataset_hash(ex.corpus(true).test);
  const auto out = ex.defend(1);
  EXPECT_TRUE(out.run.test_split_unchanged());
  EXPECT_EQ(out.run.test_hash_before, before);
  EXPECT_NE(out.run.defended_victim_id, out.run.base_victim_id);
  EXPECT_EQ(out.run.base_victim_id, ex.victim(true).hash());
  EXPECT_EQ(out.run.rows.size(), ex.config().methods.size());
  EXPECT_EQ(out.run.augmentation_method, "prompt-cn");
  long changed = 0;
  for (const auto& r : ex.attack(ex.victim(true), ex.config().defense_method, ex.config().ratio,
                                 ex.config().prompt.m, 1, Split::kTrain)
                           .records)
    changed += r.changed;
  EXPECT_EQ(out.run.n_twins, changed);
  const auto md = out.run.markdown();
  for (const char* col : {"JGA_d", "JGA_o", "ASR_d", "ASR_o"}) EXPECT_NE(md.find(col), std::string::npos) << col;
  const auto j = out.run.to_json();
  EXPECT_EQ(j.at("rows").size(), out.run.rows.size());
}

TEST(Defense, RowComparesBothVictims) {
  const auto records = train_records();
  const auto row = defense_row("bert-m", records, records);
  EXPECT_DOUBLE_EQ(row.jga_d, row.jga_o);
  EXPECT_EQ(row.asr_d_defined, row.asr_o_defined);
}

}  // namespace
