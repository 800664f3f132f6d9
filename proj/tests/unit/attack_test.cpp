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

#include <algorithm>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dstprobe/attack.hpp"
#include "dstprobe/errors.hpp"
#include "toy_setup.hpp"

namespace {

using namespace dstprobe;
using dstprobe::testkit::toy;

struct Fixture {
  const DstModel* victim;
  const LmModel* mlm;
  EmbeddingAdapter adapter;
  std::vector<DstExample> test_turns;
  std::vector<DstExample> train_turns;

  static Fixture& get() {
    static Fixture f = [] {
      auto& ex = toy();
      Fixture x;
      x.victim = &ex.victim(true);
      x.mlm = &ex.mlm(true);
      x.adapter = fit_embedding_adapter(*x.victim, *x.mlm);
      x.test_turns = make_examples(ex.corpus(true).test);
      x.train_turns = make_examples(ex.corpus(true).train);
      return x;
    }();
    return f;
  }

  AttackResources resources(AttackMethod m) {
    auto& ex = toy();
    AttackResources r;
    r.victim = victim;
    r.mlm = mlm;
    r.policy = &ex.policy();
    r.thesaurus = &ex.thesaurus();
    if (is_continuous_method(m)) {
      const auto obj = m == AttackMethod::kPromptContMax ? PromptObjective::kMaximize : PromptObjective::kMinimize;
      r.prompt = &ex.prompt(*victim, obj, 5, 1, true);
      r.adapter = &adapter;
    }
    return r;
  }
};

AttackConfig config(AttackMethod m, double ratio = 1.0, uint64_t seed = 1) {
  AttackConfig c;
  c.method = m;
  c.perturbation_ratio = ratio;
  c.seed = seed;
  return c;
}

DstExample single_turn(const std::string& user, const BeliefState& gold, const std::string& id = "t0") {
  DstExample e;
  e.dialogue_id = id;
  e.turn = Turn{"", user, gold};
  return e;
}

TEST(Budget, Examples) {
  EXPECT_EQ(perturbation_budget(0.1, 3), 1);
  EXPECT_EQ(perturbation_budget(0.5, 8), 4);
  EXPECT_EQ(perturbation_budget(1.0, 0), 0);
  EXPECT_EQ(perturbation_budget(0.3, 10), 3);
  for (int lt = 1; lt < 40; ++lt)
    for (double r : {0.1, 0.3, 0.5, 0.8, 1.0}) {
      const int b = perturbation_budget(r, lt);
      EXPECT_GE(b, 1);
      EXPECT_LE(b, lt);
    }
}

TEST(AttackConfig, Validation) {
  EXPECT_THROW(config(AttackMethod::kSd, 0.0).validate(), ConfigError);
  EXPECT_THROW(config(AttackMethod::kSd, 1.5).validate(), ConfigError);
  auto c = config(AttackMethod::kBertM);
  c.top_k = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  const auto back = AttackConfig::from_json(config(AttackMethod::kScEda, 0.3, 9).to_json());
  EXPECT_EQ(back.method, AttackMethod::kScEda);
  EXPECT_DOUBLE_EQ(back.perturbation_ratio, 0.3);
  EXPECT_EQ(back.seed, 9u);
}

TEST(AttackMethod, NamesRoundTrip) {
  const std::vector<std::string> display = {"prompt-d", "prompt-cx", "prompt-cn", "sc-eda", "sd", "bert-m"};
  ASSERT_EQ(all_attack_methods().size(), display.size());
  for (size_t i = 0; i < display.size(); ++i) {
    const auto m = all_attack_methods()[i];
    EXPECT_EQ(display_name(m), display[i]);
    EXPECT_EQ(attack_method_from_string(display[i]), m);
    EXPECT_EQ(attack_method_from_string(config_name(m)), m);
  }
  EXPECT_THROW(attack_method_from_string("tp"), ConfigError);
}

TEST(MaskUtterance, SingleChoice) {
  TokenizedUtterance tu = tokenize("i am looking for cheap food");
  tu.maskable = {false, false, true, false, false, false};
  std::mt19937_64 rng(1);
  std::vector<int> pos;
  EXPECT_EQ(mask_utterance(tu, 1, rng, &pos),
            (std::vector<std::string>{"i", "am", "[MASK]", "for", "cheap", "food"}));
  EXPECT_EQ(pos, std::vector<int>{2});
  EXPECT_EQ(mask_utterance(tu, 0, rng, &pos), tu.tokens);
  EXPECT_TRUE(pos.empty());
}

TEST(MaskUtterance, UniformFrequency) {
  TokenizedUtterance tu = tokenize("a b c d e f g");
  tu.maskable = {true, false, true, true, false, true, true};
  std::mt19937_64 rng(42);
  std::map<int, int> hits;
  for (int i = 0; i < 1000; ++i) {
    std::vector<int> pos;
    mask_utterance(tu, 2, rng, &pos);
    ASSERT_EQ(pos.size(), 2u);
    for (int p : pos) ++hits[p];
  }
  EXPECT_EQ(hits.count(1) + hits.count(4), 0u);
  for (int p : {0, 2, 3, 5, 6}) EXPECT_NEAR(hits[p] / 1000.0, 0.4, 0.05) << p;
}

TEST(EditDistance, Basic) {
  EXPECT_EQ(token_edit_distance({"a", "b", "c"}, {"a", "x", "c"}), 1);
  EXPECT_EQ(token_edit_distance({"a", "b"}, {"a", "b", "c"}), 1);
  EXPECT_EQ(token_edit_distance({}, {"a", "b"}), 2);
}

TEST(PromptAttack, FigureTwoWalkThrough) {
  auto& f = Fixture::get();
  const auto res = f.resources(AttackMethod::kPromptDiscrete);
  const BeliefState gold{{"restaurant-price range", "cheap"}};
  const auto turn = single_turn("i am looking for cheap food .", gold);
  const auto r = generate_adversarial(res, turn, config(AttackMethod::kPromptDiscrete));
  ASSERT_EQ(r.masked_positions, std::vector<int>{2});
  ASSERT_EQ(r.adversarial_tokens.size(), r.original_tokens.size());
  EXPECT_EQ(r.adversarial_tokens[4], "cheap");
  // The fill is the lm's top-1 for "<prompt> [SEP] <masked utterance>".
  std::vector<std::string> seq;
  if (!r.prompt_text.empty()) {
    seq = tokenize_words(r.prompt_text);
    seq.push_back(std::string(kSepToken));
  }
  const size_t offset = seq.size();
  seq.insert(seq.end(), r.masked_tokens.begin(), r.masked_tokens.end());
  const auto fills = fill_mask(*f.mlm, seq, 20, SelectionRule::kTop1);
  EXPECT_EQ(r.adversarial_tokens[2], seq[offset + 2]);
  EXPECT_EQ(r.fills.size(), fills.size());
  if (!r.original_prediction.state.empty()) EXPECT_NE(r.prompt_text.find("belief states:"), std::string::npos);
}

TEST(PromptAttack, NoMaskableTokensIsANoOp) {
  auto& f = Fixture::get();
  const auto res = f.resources(AttackMethod::kPromptDiscrete);
  const auto r = generate_adversarial(res, single_turn("i am for the", {}), config(AttackMethod::kPromptDiscrete));
  EXPECT_TRUE(r.no_maskable);
  EXPECT_FALSE(r.changed);
  EXPECT_EQ(r.adversarial_utterance, detokenize(r.original_tokens));
  EXPECT_FALSE(r.success());
}

TEST(PromptAttack, RecordInvariantsForReplacementMethods) {
  auto& f = Fixture::get();
  for (auto m : {AttackMethod::kPromptDiscrete, AttackMethod::kPromptContMax, AttackMethod::kPromptContMin,
                 AttackMethod::kBertM}) {
    for (double ratio : {0.1, 0.5, 1.0}) {
      const auto records = run_attack(f.resources(m), f.test_turns, config(m, ratio));
      ASSERT_EQ(records.size(), f.test_turns.size());
      for (size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        EXPECT_EQ(r.dialogue_id, f.test_turns[i].dialogue_id);
        EXPECT_EQ(r.adversarial_tokens.size(), r.original_tokens.size());
        EXPECT_EQ(token_edit_distance(r.original_tokens, r.adversarial_tokens), r.n_perturbed)
            << display_name(m) << " " << r.original_utterance << " -> " << r.adversarial_utterance;
        EXPECT_LE(r.n_perturbed, perturbation_budget(ratio, r.l_t()));
        const auto audit = audit_record(r);
        EXPECT_TRUE(audit.ok()) << audit.detail;
        EXPECT_EQ(r.changed, r.n_perturbed > 0);
      }
    }
  }
}

TEST(PromptAttack, VictimNeverSeesThePrompt) {
  auto& f = Fixture::get();
  for (auto m : {AttackMethod::kPromptDiscrete, AttackMethod::kPromptContMin}) {
    auto res = f.resources(m);
    std::mutex mu;
    std::vector<std::vector<int>> seen;
    res.victim_input_probe = [&](std::span<const int> ids) {
      std::lock_guard<std::mutex> lock(mu);
      seen.emplace_back(ids.begin(), ids.end());
    };
    const size_t n = std::min<size_t>(20, f.test_turns.size());
    std::vector<DstExample> turns(f.test_turns.begin(), f.test_turns.begin() + static_cast<long>(n));
    const auto records = run_attack(res, turns, config(m));
    ASSERT_EQ(seen.size(), turns.size());
    for (size_t i = 0; i < turns.size(); ++i) {
      const auto& e = turns[i];
      const auto expect = f.victim->encode_input(e.history, e.turn.system_response, records[i].adversarial_utterance);
      EXPECT_NE(std::find(seen.begin(), seen.end(), expect), seen.end());
    }
    const int belief = f.victim->vocab().id("belief");
    for (const auto& ids : seen) {
      if (belief == Vocabulary::kUnk) break;
      size_t n_belief = static_cast<size_t>(std::count(ids.begin(), ids.end(), belief));
      EXPECT_EQ(n_belief, 0u);
    }
  }
}

TEST(PromptAttack, ParallelRunMatchesSerialTurns) {
  auto& f = Fixture::get();
  const auto res = f.resources(AttackMethod::kPromptDiscrete);
  const auto cfg = config(AttackMethod::kPromptDiscrete, 0.5, 3);
  const auto all = run_attack(res, f.test_turns, cfg);
  for (size_t i = 0; i < f.test_turns.size(); i += 7)
    EXPECT_EQ(attack_turn(res, f.test_turns[i], cfg).adversarial_utterance, all[i].adversarial_utterance);
}

TEST(PromptAttack, ContinuousNeedsMatchingObjective) {
  auto& f = Fixture::get();
  auto res = f.resources(AttackMethod::kPromptContMax);
  EXPECT_THROW(generate_adversarial(res, f.test_turns[0], config(AttackMethod::kPromptContMin)),
               std::invalid_argument);
}

TEST(BertM, ChoosesLowestOfTopK) {
  auto& f = Fixture::get();
  const auto records = run_attack(f.resources(AttackMethod::kBertM), f.test_turns, config(AttackMethod::kBertM));
  for (const auto& r : records)
    for (const auto& fill : r.fills) {
      ASSERT_EQ(fill.candidates.size(), 20u);
      EXPECT_EQ(fill.chosen, fill.candidates.back().first);
      for (const auto& c : fill.candidates) EXPECT_LE(fill.candidates.back().second, c.second);
    }
}

TEST(BertM, TopOneEqualsPromptFreeFill) {
  auto& f = Fixture::get();
  auto cfg = config(AttackMethod::kBertM, 0.5);
  cfg.top_k = 1;
  const auto res = f.resources(AttackMethod::kBertM);
  for (size_t i = 0; i < f.test_turns.size(); ++i) {
    const auto r = attack_bert_m(res, f.test_turns[i], cfg);
    if (r.no_op) continue;
    auto toks = r.masked_tokens;
    fill_mask(*f.mlm, toks, 20, SelectionRule::kTop1);
    EXPECT_EQ(r.adversarial_tokens, toks);
  }
}

std::vector<std::string> gold_value_tokens(const BeliefState& s) {
  std::vector<std::string> out;
  for (const auto& [slot, value] : s.assignments())
    for (const auto& w : tokenize_words(value)) out.push_back(w);
  return out;
}

bool is_subsequence(const std::vector<std::string>& small, const std::vector<std::string>& big) {
  size_t k = 0;
  for (const auto& t : big)
    if (k < small.size() && t == small[k]) ++k;
  return k == small.size();
}

TEST(ScEda, ProtectedTokensSurviveAndLengthsAddUp) {
  auto& f = Fixture::get();
  const auto res = f.resources(AttackMethod::kScEda);
  int trials = 0;
  for (uint64_t seed = 1; trials < 1000; ++seed)
    for (const auto& e : f.train_turns) {
      if (trials++ >= 1000) break;
      const auto r = attack_sc_eda(res, e, config(AttackMethod::kScEda, 0.1, seed));
      EXPECT_TRUE(audit_record(r).ok()) << audit_record(r).detail;
      for (const auto& w : gold_value_tokens(r.gold))
        EXPECT_GE(std::count(r.adversarial_tokens.begin(), r.adversarial_tokens.end(), w),
                  std::count(r.original_tokens.begin(), r.original_tokens.end(), w));
      // Budget 1: one synonym, insertion or deletion, or nothing.
      const long delta = static_cast<long>(r.adversarial_tokens.size()) - static_cast<long>(r.original_tokens.size());
      ASSERT_LE(std::abs(delta), 1);
      if (delta == 1) EXPECT_TRUE(is_subsequence(r.original_tokens, r.adversarial_tokens));
      if (delta == -1) EXPECT_TRUE(is_subsequence(r.adversarial_tokens, r.original_tokens));
      EXPECT_LE(r.n_perturbed, 1);
      EXPECT_TRUE(r.no_op || r.n_perturbed == 1);
    }
}

TEST(ScEda, SwapPreservesTheMultiset) {
  auto& f = Fixture::get();
  const auto res = f.resources(AttackMethod::kScEda);
  int swaps = 0;
  for (uint64_t seed = 1; seed < 40; ++seed)
    for (size_t i = 0; i < f.train_turns.size(); i += 3) {
      const auto r = attack_sc_eda(res, f.train_turns[i], config(AttackMethod::kScEda, 1.0, seed));
      // A lone swap shows as two positions with a length-preserving permutation.
      if (r.n_perturbed != 2 || r.masked_positions.size() != 2 || r.budget != 2) continue;
      if (r.adversarial_tokens.size() != r.original_tokens.size()) continue;
      auto a = r.original_tokens, b = r.adversarial_tokens;
      const auto p = r.masked_positions;
      if (a[static_cast<size_t>(p[0])] != b[static_cast<size_t>(p[1])] ||
          a[static_cast<size_t>(p[1])] != b[static_cast<size_t>(p[0])])
        continue;
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      EXPECT_EQ(a, b);
      ++swaps;
    }
  EXPECT_GT(swaps, 0);
}

TEST(Sd, RepairInsertsAnotherValueBeforeTheOriginal) {
  auto& f = Fixture::get();
  const auto res = f.resources(AttackMethod::kSd);
  const BeliefState gold{{"restaurant-price range", "cheap"}};
  const auto turn = single_turn("i want cheap food", gold);
  std::set<std::string> repaired;
  for (uint64_t seed = 1; seed < 400; ++seed) {
    const auto r = attack_sd(res, turn, config(AttackMethod::kSd, 1.0, seed));
    EXPECT_TRUE(r.introduces_new_slot_values);
    EXPECT_TRUE(audit_record(r).ok());
    if (r.adversarial_tokens.size() != r.original_tokens.size() + 5) continue;
    if (std::find(r.adversarial_tokens.begin(), r.adversarial_tokens.end(), "sorry") == r.adversarial_tokens.end())
      continue;
    repaired.insert(r.adversarial_utterance);
  }
  EXPECT_TRUE(repaired.count("i want expensive sorry , i mean cheap food")) << repaired.size();
  for (const auto& u : repaired) EXPECT_NE(u.find("sorry , i mean cheap food"), std::string::npos) << u;
}

TEST(Sd, RestartAndGoldSurvival) {
  auto& f = Fixture::get();
  const auto res = f.resources(AttackMethod::kSd);
  int trials = 0, restarts = 0;
  for (uint64_t seed = 1; trials < 1000; ++seed)
    for (const auto& e : f.train_turns) {
      if (trials++ >= 1000) break;
      const auto r = attack_sd(res, e, config(AttackMethod::kSd, 1.0, seed));
      EXPECT_TRUE(is_subsequence(r.original_tokens, r.adversarial_tokens)) << r.adversarial_utterance;
      const auto golds = gold_value_tokens(r.gold);
      for (const auto& w : golds)
        if (std::count(r.original_tokens.begin(), r.original_tokens.end(), w))
          EXPECT_TRUE(std::count(r.adversarial_tokens.begin(), r.adversarial_tokens.end(), w));
      EXPECT_TRUE(r.changed);
      if (r.adversarial_utterance.rfind("i just ", 0) == 0) ++restarts;
    }
  EXPECT_GT(restarts, 0);
}

TEST(AdversarialDataset, CarriesTheAttackObject) {
  auto& f = Fixture::get();
  const auto& test = toy().corpus(true).test;
  const auto records =
      run_attack(f.resources(AttackMethod::kBertM), make_examples(test), config(AttackMethod::kBertM));
  const auto j = adversarial_dataset_json(test, records);
  const auto& t0 = j.at("dialogues").at(0).at("turns").at(0);
  for (const char* k : {"method", "masked_positions", "n_perturbed", "changed", "introduces_new_slot_values"})
    EXPECT_TRUE(t0.at("attack").contains(k)) << k;
  EXPECT_EQ(t0.at("user").get<std::string>(), records[0].adversarial_utterance);
}

}  // namespace
