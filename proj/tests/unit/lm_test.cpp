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
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dstprobe/errors.hpp"
#include "dstprobe/lm.hpp"
#include "toy_setup.hpp"

namespace {

using namespace dstprobe;
using dstprobe::testkit::toy;

// Whitespace split, so "[MASK]" stays one token.
std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

TEST(Lm, TrainingIsDeterministic) {
  auto& ex = toy();
  const auto& c = ex.corpus(true);
  const auto vocab = Vocabulary::build(c.train, ex.ontology());
  LmConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.embed_dim = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  LmTrainOptions o;
  o.epochs = 5;
  o.batch_size = 16;
  LmTrainLog a, b;
  const auto m1 = train_mlm(c.train, vocab, cfg, o, &a);
  const auto m2 = train_mlm(c.train, vocab, cfg, o, &b);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_EQ(m1.hash(), m2.hash());
  ASSERT_EQ(a.epoch_loss.size(), 5u);
  EXPECT_LT(a.epoch_loss[4], a.epoch_loss[0]);
}

TEST(Lm, DistributionSumsToOneAtEveryPosition) {
  const auto& lm = toy().mlm(true);
  const auto x = lm.embed(words("i am [MASK] for cheap food"));
  for (int p = 0; p < x.rows; ++p) {
    const auto d = lm.distribution(x, p);
    EXPECT_NEAR(std::accumulate(d.begin(), d.end(), 0.0), 1.0, 1e-5);
  }
}

TEST(FillMask, TopOneChoosesMaximalProbability) {
  const auto& lm = toy().mlm(true);
  auto toks = words("i am [MASK] for cheap food");
  const auto x = lm.embed(toks);
  const auto dist = lm.distribution(x, 2);
  const auto fills = fill_mask(lm, toks, 5, SelectionRule::kTop1);
  ASSERT_EQ(fills.size(), 1u);
  const auto& f = fills[0];
  EXPECT_EQ(f.position, 2);
  EXPECT_EQ(f.chosen, f.candidates.front().first);
  EXPECT_EQ(toks[2], f.chosen);
  double best = 0.0;
  for (int id = Vocabulary::kNumSpecial; id < lm.vocab().size(); ++id) best = std::max(best, dist[id]);
  EXPECT_DOUBLE_EQ(f.candidates.front().second, best);
}

TEST(FillMask, CandidatesAreDescendingAndExcludeSpecials) {
  const auto& lm = toy().mlm(true);
  auto toks = words("[MASK] want [MASK] food");
  const auto fills = fill_mask(lm, toks, 8, SelectionRule::kTop1);
  ASSERT_EQ(fills.size(), 2u);
  EXPECT_LT(fills[0].position, fills[1].position);
  for (const auto& f : fills) {
    double sum = 0.0;
    for (size_t i = 0; i < f.candidates.size(); ++i) {
      const auto& [tok, p] = f.candidates[i];
      EXPECT_GT(p, 0.0);
      EXPECT_LE(p, 1.0);
      if (i) EXPECT_LE(p, f.candidates[i - 1].second);
      EXPECT_FALSE(lm.vocab().is_special(lm.vocab().id(tok))) << tok;
      sum += p;
    }
    EXPECT_LE(sum, 1.0 + 1e-9);
  }
}

TEST(FillMask, LowestOfTopKPicksLastCandidate) {
  const auto& lm = toy().mlm(true);
  auto toks = words("i am [MASK] for cheap food");
  const auto f = fill_mask(lm, toks, 6, SelectionRule::kLowestOfTopK)[0];
  ASSERT_EQ(f.candidates.size(), 6u);
  EXPECT_EQ(f.chosen, f.candidates.back().first);
}

TEST(FillMask, SampleIsDeterministicForFixedSeed) {
  const auto& lm = toy().mlm(true);
  auto a = words("i [MASK] [MASK] for cheap food");
  auto b = a;
  std::mt19937_64 r1(4), r2(4);
  fill_mask(lm, a, 10, SelectionRule::kSampleTopK, &r1);
  fill_mask(lm, b, 10, SelectionRule::kSampleTopK, &r2);
  EXPECT_EQ(a, b);
}

TEST(FillMask, Errors) {
  const auto& lm = toy().mlm(true);
  auto none = words("no masks here");
  EXPECT_THROW(fill_mask(lm, none, 3, SelectionRule::kTop1), std::invalid_argument);
  std::vector<std::string> lng(static_cast<size_t>(lm.config().max_len) + 1, "a");
  lng[0] = std::string(kMaskToken);
  EXPECT_THROW(fill_mask(lm, lng, 3, SelectionRule::kTop1), std::length_error);
}

TEST(Perplexity, SingleTokenIsInverseProbability) {
  const auto& judge = toy().judge(true);
  const std::string tok = "hello";
  const auto x = judge.embed(std::vector<std::string>{std::string(kSepToken), tok});
  const double p = judge.distribution(x, 0)[judge.vocab().id(tok)];
  EXPECT_NEAR(perplexity(judge, {tok}), 1.0 / p, 1e-6 * (1.0 / p));
}

TEST(Perplexity, DuplicatingTheListLeavesItUnchanged) {
  const auto& judge = toy().judge(true);
  std::vector<std::string> us = {"i want cheap food", "book a taxi please", "hello"};
  auto twice = us;
  twice.insert(twice.end(), us.begin(), us.end());
  EXPECT_NEAR(perplexity(judge, twice), perplexity(judge, us), 1e-9);
}

TEST(Perplexity, Errors) {
  EXPECT_THROW(perplexity(toy().judge(true), {}), EmptyInputError);
  EXPECT_THROW(perplexity(toy().mlm(true), {"hi"}), std::invalid_argument);
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

TEST(Lm, PrefixGradientMatchesFiniteDifferences) {
  const auto& lm = toy().mlm(true);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 0.5);
  Matrix prefix(2, lm.embed_dim());
  for (auto& v : prefix.data) v = n(rng);
  auto ids = lm.vocab().encode(words("i am looking for cheap food"));
  std::vector<int> targets(ids.size() + 2, -1);
  targets[2 + 2] = ids[2];
  ids[2] = Vocabulary::kMask;
  Matrix grad;
  lm.loss(prefix, ids, targets, &grad, {});
  for (int probe = 0; probe < 10; ++probe) {
    const size_t i = rng() % prefix.size();
    const double h = 1e-5;
    Matrix a = prefix, b = prefix;
    a.data[i] += h;
    b.data[i] -= h;
    const double fd = (lm.loss(a, ids, targets, nullptr, {}) - lm.loss(b, ids, targets, nullptr, {})) / (2 * h);
    EXPECT_LE(relative_error(fd, grad.data[i]), 1e-4) << fd << " vs " << grad.data[i];
  }
}

TEST(Lm, CheckpointRoundTrip) {
  const auto& lm = toy().judge(true);
  const auto path = testkit::temp_dir("lm") / "judge.ckpt";
  lm.save(path);
  const auto back = LmModel::load(path);
  EXPECT_EQ(back.hash(), lm.hash());
  EXPECT_EQ(back.config(), lm.config());
  EXPECT_EQ(perplexity(back, {"i want cheap food"}), perplexity(lm, {"i want cheap food"}));
}

}  // namespace
