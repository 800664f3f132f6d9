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
#include <random>
#include <string>
#include <vector>

#include "dstprobe/dst.hpp"
#include "dstprobe/errors.hpp"
#include "toy_setup.hpp"

namespace {

using namespace dstprobe;
using dstprobe::testkit::toy;

DstModel fresh_model(int layers = 1) {
  auto& ex = toy();
  DstConfig cfg;
  cfg.embed_dim = 8;
  cfg.layers = layers;
  cfg.heads = 2;
  return DstModel(cfg, Vocabulary::build(ex.corpus(true).train, ex.ontology()), ex.ontology());
}

void zero_heads(DstModel& m) {
  for (const auto& e : m.params().entries())
    if (e.name.starts_with("dst.head.")) m.mutable_params().fill_constant(e.ref, 0.0);
}

TEST(Dst, UniformLogitsGiveClosedFormLoss) {
  auto m = fresh_model();
  zero_heads(m);
  const auto ids = m.encode_input({}, "", "i want cheap food");
  double expected = 0.0;
  for (const auto& slot : m.ontology().slot_names())
    expected += std::log(static_cast<double>(m.ontology().values(slot).size()) + 1.0);
  EXPECT_NEAR(m.loss(Matrix(), ids, BeliefState{{"restaurant-price range", "cheap"}}, nullptr, {}), expected,
              1e-6);
}

TEST(Dst, SaturatedLogitsGiveNearZeroLoss) {
  auto m = fresh_model();
  zero_heads(m);
  const BeliefState target{{"hotel-area", "north"}};
  const auto idx = m.target_indices(target);
  size_t s = 0;
  for (const auto& e : m.params().entries()) {
    if (!e.name.starts_with("dst.head.") || !e.name.ends_with(".b")) continue;
    m.mutable_params().view(e.ref)[static_cast<size_t>(idx[s++])] = 30.0;
  }
  const auto ids = m.encode_input({}, "", "i want cheap food");
  EXPECT_LT(m.loss(Matrix(), ids, target, nullptr, {}), 0.1);
  EXPECT_EQ(m.predict_ids(Matrix(), ids).state, target);
}

TEST(Dst, PredictReturnsEverySlotAndIsDeterministic) {
  const auto& v = toy().victim(true);
  const auto a = v.predict({}, "i am looking for a cheap restaurant in the center");
  const auto b = v.predict({}, "i am looking for a cheap restaurant in the center");
  EXPECT_EQ(a.state, b.state);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.logits.size(), v.ontology().num_slots());
  for (const auto& [slot, lg] : a.logits) {
    ASSERT_EQ(lg.size(), v.ontology().values(slot).size() + 1);
    const auto best = std::max_element(lg.begin(), lg.end()) - lg.begin();
    const std::string expect = best == 0 ? std::string(kNoneValue) : v.ontology().values(slot)[best - 1];
    EXPECT_EQ(a.state.get(slot), expect) << slot;
  }
}

TEST(Dst, PredictMatchesLossPathForward) {
  auto& ex = toy();
  const auto& v = ex.victim(true);
  const auto examples = make_examples(ex.corpus(true).validation);
  for (size_t i = 0; i < std::min<size_t>(examples.size(), 20); ++i) {
    const auto& e = examples[i];
    const auto ids = v.encode_input(e.history, e.turn.system_response, e.turn.user_utterance);
    const auto pred = v.predict_ids(Matrix(), ids);
    const auto logits = v.slot_logits(Matrix(), ids);
    EXPECT_NEAR(v.loss(Matrix(), ids, pred.state, nullptr, {}),
                summed_cross_entropy(logits, v.target_indices(pred.state)), 1e-9);
    EXPECT_EQ(pred.state, v.predict(e.history, e.turn.user_utterance, e.turn.system_response).state);
  }
}

TEST(Dst, EmbedKeepsLengthAndConcatenatesPrefix) {
  const auto& v = toy().victim(true);
  const std::vector<std::string> toks = {"i", "want", "zzzunknownzzz", "food"};
  const auto e = v.embed(toks);
  EXPECT_EQ(e.rows, 4);
  EXPECT_EQ(e.cols, v.embed_dim());
  EXPECT_EQ(e, v.embed(toks));
  EXPECT_EQ(v.vocab().encode(toks)[2], Vocabulary::kUnk);
  EXPECT_EQ(vstack(Matrix(3, v.embed_dim()), e).rows, 3 + 4);
}

TEST(Dst, LongHistoryIsTruncatedFromTheLeft) {
  const auto& v = toy().victim(true);
  std::vector<Turn> history;
  for (int i = 0; i < 40; ++i) history.push_back(Turn{"what area do you like ?", "somewhere in the north please", {}});
  const std::string user = "i want cheap food";
  const auto ids = v.encode_input(history, "ok", user, 5);
  EXPECT_LE(static_cast<int>(ids.size()) + 5, v.config().max_len);
  const auto tail = v.vocab().encode(tokenize_words(user));
  ASSERT_GE(ids.size(), tail.size());
  EXPECT_TRUE(std::equal(tail.begin(), tail.end(), ids.end() - static_cast<long>(tail.size())));
  std::string huge;
  for (int i = 0; i < v.config().max_len + 5; ++i) huge += "food ";
  EXPECT_THROW(v.encode_input({}, "", huge), std::length_error);
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

TEST(Dst, PrefixGradientMatchesFiniteDifferences) {
  auto& ex = toy();
  const auto& v = ex.victim(true);
  const auto examples = make_examples(ex.corpus(true).train);
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 0.5);
  for (int probe = 0; probe < 10; ++probe) {
    const auto& e = examples[rng() % examples.size()];
    Matrix prefix(3, v.embed_dim());
    for (auto& x : prefix.data) x = n(rng);
    const auto ids = v.encode_input(e.history, e.turn.system_response, e.turn.user_utterance, 3);
    Matrix grad;
    v.loss(prefix, ids, e.turn.gold_state, &grad, {});
    const size_t i = rng() % prefix.size();
    const double h = 1e-5;
    Matrix a = prefix, b = prefix;
    a.data[i] += h;
    b.data[i] -= h;
    const double fd =
        (v.loss(a, ids, e.turn.gold_state, nullptr, {}) - v.loss(b, ids, e.turn.gold_state, nullptr, {})) / (2 * h);
    EXPECT_LE(relative_error(fd, grad.data[i]), 1e-4) << fd << " vs " << grad.data[i];
  }
}

TEST(Dst, ParameterGradientMatchesFiniteDifferences) {
  auto m = fresh_model(2);
  std::mt19937_64 rng(2);
  for (const auto& e : m.params().entries())
    if (e.name.ends_with(".q")) m.mutable_params().fill_normal(e.ref, 0.5, rng);
  const auto ids = m.encode_input({}, "hello", "i want cheap food in the north");
  const BeliefState target{{"restaurant-price range", "cheap"}};
  std::vector<double> g(m.params().size(), 0.0);
  m.loss(Matrix(), ids, target, nullptr, g);
  for (int probe = 0; probe < 20; ++probe) {
    const size_t i = rng() % g.size();
    auto p = m.mutable_params().values();
    const double o = p[i], h = 1e-5;
    p[i] = o + h;
    const double lp = m.loss(Matrix(), ids, target, nullptr, {});
    p[i] = o - h;
    const double lm = m.loss(Matrix(), ids, target, nullptr, {});
    p[i] = o;
    const double fd = (lp - lm) / (2 * h);
    EXPECT_LE(std::abs(fd - g[i]), 1e-6 + 1e-4 * std::abs(fd)) << i;
  }
}

TEST(Dst, TrainingIgnoresExampleOrder) {
  auto& ex = toy();
  const auto& c = ex.corpus(true);
  auto cfg = ex.config().dst;
  cfg.epochs = 3;
  DstTrainLog log;
  auto examples = make_examples(c.train);
  const auto vocab = Vocabulary::build(c.train, ex.ontology());
  const auto a = train_dst_examples(examples, c.validation, vocab, ex.ontology(), cfg, &log);
  std::mt19937_64 rng(99);
  std::shuffle(examples.begin(), examples.end(), rng);
  const auto b = train_dst_examples(examples, c.validation, vocab, ex.ontology(), cfg);
  EXPECT_EQ(a.hash(), b.hash());
  ASSERT_EQ(log.epoch_loss.size(), 3u);
  EXPECT_LT(log.epoch_loss[1], log.epoch_loss[0]);
  EXPECT_LT(log.epoch_loss[2], log.epoch_loss[1]);
}

TEST(Dst, CheckpointRoundTrip) {
  const auto& v = toy().victim(true);
  const auto path = testkit::temp_dir("dst") / "v.ckpt";
  v.save(path);
  const auto back = DstModel::load(path);
  EXPECT_EQ(back.hash(), v.hash());
  EXPECT_EQ(back.ontology(), v.ontology());
  EXPECT_EQ(back.predict({}, "i want cheap food").logits, v.predict({}, "i want cheap food").logits);
}

TEST(Dst, TransferVictimDiffersInSeedAndDepth) {
  DstConfig base;
  const auto t = transfer_victim_config(base);
  EXPECT_EQ(t.layers, base.layers + 1);
  EXPECT_NE(t.seed, base.seed);
  EXPECT_EQ(t.embed_dim, base.embed_dim);
}

}  // namespace
