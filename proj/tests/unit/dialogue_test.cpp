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

#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dstprobe/corpus.hpp"
#include "dstprobe/dialogue.hpp"
#include "dstprobe/errors.hpp"
#include "toy_setup.hpp"

namespace {

using namespace dstprobe;

const Ontology& onto() {
  static const Ontology o = Ontology::load(default_data_dir() / "ontology.json");
  return o;
}

const MaskPolicy& policy() {
  static const MaskPolicy p = MaskPolicy::load_default(onto(), default_data_dir());
  return p;
}

std::string strip_ws(const std::string& s) {
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) out += c;
  return out;
}

TEST(Tokenize, SplitsOnWhitespaceAndPunctuation) {
  EXPECT_EQ(tokenize("I am looking for cheap food.").tokens,
            (std::vector<std::string>{"i", "am", "looking", "for", "cheap", "food", "."}));
  EXPECT_EQ(tokenize("Hello").tokens, std::vector<std::string>{"hello"});
}

TEST(Tokenize, ApostropheGolden) {
  EXPECT_EQ(tokenize("don't stop").tokens, (std::vector<std::string>{"don", "'", "t", "stop"}));
}

TEST(Tokenize, StartsAllMaskable) {
  const auto tu = tokenize("a b c");
  EXPECT_EQ(tu.num_maskable(), 3u);
}

TEST(Tokenize, EmptyInputThrows) {
  EXPECT_THROW(tokenize(""), EmptyInputError);
  EXPECT_THROW(tokenize("   \t "), EmptyInputError);
}

TEST(Tokenize, RoundTripKeepsNonWhitespaceCharacters) {
  std::mt19937_64 rng(11);
  const std::string alphabet = "abcXYZ019 .,?!'-:;  ";
  for (int trial = 0; trial < 300; ++trial) {
    std::string s;
    const int n = 1 + static_cast<int>(rng() % 40);
    for (int i = 0; i < n; ++i) s += alphabet[rng() % alphabet.size()];
    if (strip_ws(s).empty()) s += "x";
    const auto tu = tokenize(s);
    std::string lowered;
    for (char c : strip_ws(s)) lowered += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    EXPECT_EQ(strip_ws(detokenize(tu.tokens)), lowered) << s;
  }
}

TEST(Maskable, OnlyLookingSurvivesThePolicy) {
  const auto tu = compute_maskable(tokenize("I am looking for cheap food."),
                                   BeliefState{{"restaurant-price range", "cheap"}}, policy());
  std::vector<bool> expected = {false, false, true, false, false, false, false};
  EXPECT_EQ(tu.maskable, expected);
}

TEST(Maskable, AllStopwordsProtectsEverything) {
  const auto tu = compute_maskable(tokenize("i am for the"), BeliefState{}, policy());
  EXPECT_EQ(tu.num_maskable(), 0u);
}

TEST(Maskable, NothingProtectedLeavesAllMaskable) {
  MaskPolicy empty;
  const auto tu = compute_maskable(tokenize("zebra quietly sings"), BeliefState{}, empty);
  EXPECT_EQ(tu.num_maskable(), 3u);
}

TEST(Maskable, MultiTokenValueProtectsAllTokens) {
  MaskPolicy empty;
  const auto tu = compute_maskable(tokenize("zebra grand central"), BeliefState{{"taxi-destination", "grand central"}}, empty);
  ASSERT_EQ(tu.size(), 3u);
  EXPECT_TRUE(tu.maskable[0]);
  EXPECT_FALSE(tu.maskable[1]);
  EXPECT_FALSE(tu.maskable[2]);
}

TEST(Maskable, NeverMarksGoldValueTokens) {
  const auto corpus = generate_synthetic_corpus(onto(), 200, 3);
  for (const auto& d : corpus.all()) {
    for (const auto& t : d.turns) {
      const auto tu = compute_maskable(tokenize(t.user_utterance), t.gold_state, policy());
      std::set<std::string> value_tokens;
      for (const auto& [slot, value] : t.gold_state.assignments())
        for (const auto& w : tokenize_words(value)) value_tokens.insert(w);
      for (size_t i = 0; i < tu.size(); ++i)
        if (value_tokens.count(tu.tokens[i])) EXPECT_FALSE(tu.maskable[i]) << d.dialogue_id;
    }
  }
}

TEST(Ontology, RejectsValuesOutsideTheSlot) {
  EXPECT_THROW((BeliefState{{"restaurant-price range", "purple"}}.validate(onto())), SchemaError);
  EXPECT_THROW((BeliefState{{"restaurant-colour", "cheap"}}.validate(onto())), SchemaError);
  EXPECT_NO_THROW((BeliefState{{"restaurant-price range", "cheap"}}.validate(onto())));
}

TEST(Ontology, SlotNamesAreSortedAndPrefixed) {
  const auto& names = onto().slot_names();
  EXPECT_TRUE(std::is_sorted(names.begin(), names.end()));
  for (const auto& s : names) EXPECT_TRUE(onto().domains().count(Ontology::domain_of(s))) << s;
}

TEST(Dataset, SaveLoadRoundTrip) {
  const auto corpus = generate_synthetic_corpus(onto(), 30, 5);
  const auto path = testkit::temp_dir("dataset") / "d.json";
  save_dataset(corpus.train, path);
  EXPECT_EQ(load_dataset(path, onto()), corpus.train);
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p);
  f << s;
}

TEST(Dataset, UnknownSlotIsSchemaError) {
  const auto path = testkit::temp_dir("dataset") / "bad.json";
  write_text(path,
             R"({"dialogues":[{"dialogue_id":"x","turns":[{"system":"","user":"hi","belief_state":{"restaurant-colour":"red"}}]}]})");
  try {
    load_dataset(path, onto());
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("restaurant-colour"), std::string::npos) << e.what();
  }
}

TEST(Dataset, MissingTurnsIsSchemaError) {
  const auto path = testkit::temp_dir("dataset") / "bad.json";
  write_text(path, R"({"dialogues":[{"dialogue_id":"x"}]})");
  try {
    load_dataset(path, onto());
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_NE(e.field().find("turns"), std::string::npos) << e.field();
  }
}

}  // namespace
