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

#include "dstprobe/prompt.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <stdexcept>

#include "dstprobe/checkpoint.hpp"
#include "dstprobe/errors.hpp"
#include "dstprobe/hashing.hpp"

namespace dstprobe {

std::string prompt_fragment(const std::string& slot, const std::string& value) {
  return "belief states: " + slot + " = " + value + ";";
}

std::vector<std::string> DiscretePrompt::fragments() const {
  std::vector<std::string> out;
  for (const auto& s : source_slots) out.push_back(prompt_fragment(s.slot, s.replacement));
  return out;
}

nlohmann::json DiscretePrompt::to_json() const {
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& s : source_slots)
    slots.push_back({{"slot", s.slot}, {"predicted_value", s.predicted}, {"replacement_value", s.replacement}});
  return {{"text", text}, {"source_slots", slots}, {"no_op", no_op}};
}

DiscretePrompt DiscretePrompt::from_json(const nlohmann::json& j) {
  DiscretePrompt p;
  try {
    p.text = j.at("text").get<std::string>();
    for (const auto& s : j.at("source_slots"))
      p.source_slots.push_back({s.at("slot").get<std::string>(), s.at("predicted_value").get<std::string>(),
                                s.at("replacement_value").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("prompt", std::string("malformed discrete prompt: ") + e.what());
  }
  p.no_op = j.value("no_op", p.source_slots.empty());
  return p;
}

DiscretePrompt discrete_prompt_from_state(const BeliefState& predicted, const Ontology& ontology,
                                          std::mt19937_64& rng) {
  DiscretePrompt p;
  for (const auto& slot : ontology.slot_names()) {
    const std::string& v = predicted.get(slot);
    if (v == kNoneValue) continue;
    std::vector<std::string> others;
    for (const auto& c : ontology.values(slot))
      if (c != v) others.push_back(c);
    std::uniform_int_distribution<size_t> pick(0, others.size() - 1);
    p.source_slots.push_back({slot, v, others[pick(rng)]});
  }
  const auto frags = p.fragments();
  for (size_t i = 0; i < frags.size(); ++i) p.text += (i ? " " : "") + frags[i];
  p.no_op = p.source_slots.empty();
  return p;
}

DiscretePrompt build_discrete_prompt(const DstModel& victim, std::span<const Turn> history,
                                     const std::string& system_response, const std::string& utterance,
                                     std::mt19937_64& rng) {
  const auto pred = victim.predict(history, utterance, system_response);
  return discrete_prompt_from_state(pred.state, victim.ontology(), rng);
}

std::string to_string(PromptObjective o) { return o == PromptObjective::kMaximize ? "maximize" : "minimize"; }

PromptObjective objective_from_string(const std::string& s) {
  if (s == "maximize" || s == "max") return PromptObjective::kMaximize;
  if (s == "minimize" || s == "min") return PromptObjective::kMinimize;
  throw ConfigError("unknown prompt objective '" + s + "'");
}

nlohmann::json ContinuousPrompt::sidecar() const {
  nlohmann::json c = nlohmann::json::array();
  for (const auto& p : curve) c.push_back({{"epoch", p.epoch}, {"train_loss", p.train_loss}, {"val_jga", p.val_jga}});
  return {{"m", m()},
          {"d", d()},
          {"objective", to_string(objective)},
          {"victim_id", victim_id},
          {"seed", seed},
          {"selected_epoch", selected_epoch},
          {"curve", c}};
}

nlohmann::json PromptTuneOptions::to_json() const {
  return {{"m", m},
          {"lr", lr},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"warmup_fraction", warmup_fraction},
          {"clip_norm", clip_norm},
          {"init_std", init_std},
          {"seed", seed}};
}

PromptTuneOptions PromptTuneOptions::from_json(const nlohmann::json& j) {
  PromptTuneOptions o;
  o.m = j.value("m", o.m);
  o.lr = j.value("lr", o.lr);
  o.epochs = j.value("epochs", o.epochs);
  o.batch_size = j.value("batch_size", o.batch_size);
  o.warmup_fraction = j.value("warmup_fraction", o.warmup_fraction);
  o.clip_norm = j.value("clip_norm", o.clip_norm);
  o.init_std = j.value("init_std", o.init_std);
  o.seed = j.value("seed", o.seed);
  return o;
}

BeliefState empty_target(const BeliefState& state) {
  (void)state;
  return BeliefState();
}

std::vector<BeliefState> empty_targets(const std::vector<BeliefState>& states) {
  std::vector<BeliefState> out;
  out.reserve(states.size());
  for (const auto& s : states) out.push_back(empty_target(s));
  return out;
}

Matrix initial_prompt(int m, int d, double init_std, uint64_t seed) {
  if (m < 1 || d < 1) throw std::invalid_argument("initial_prompt: m and d must be >= 1");
  Matrix p(m, d);
  std::mt19937_64 rng(derive_seed(seed, "prompt-init"));
  std::normal_distribution<double> dist(0.0, init_std);
  for (double& x : p.data) x = dist(rng);
  return p;
}

namespace {

struct PromptData {
  std::vector<std::vector<int>> ids;
  std::vector<BeliefState> targets;
};

PromptData prepare(const DstModel& victim, const std::vector<DstExample>& examples, int m,
                   PromptObjective objective) {
  PromptData d;
  for (const auto& e : examples) {
    d.ids.push_back(victim.encode_input(e.history, e.turn.system_response, e.turn.user_utterance, m));
    d.targets.push_back(objective == PromptObjective::kMinimize ? empty_target(e.turn.gold_state)
                                                                : e.turn.gold_state);
  }
  return d;
}

// Per-example losses and (optionally) prompt gradients, reduced in order.
double prompt_batch(const DstModel& victim, const PromptData& data, std::span<const size_t> batch,
                    const Matrix& prompt, Matrix* grad) {
  const int n = static_cast<int>(batch.size());
  std::vector<double> losses(static_cast<size_t>(n));
  std::vector<Matrix> grads(grad ? static_cast<size_t>(n) : 0);
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 1)
  for (int b = 0; b < n; ++b) {
    try {
      const size_t i = batch[b];
      losses[b] = victim.loss(prompt, data.ids[i], data.targets[i], grad ? &grads[b] : nullptr, {});
    } catch (...) {
#pragma omp critical(prompt_batch_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  double total = 0.0;
  for (double l : losses) total += l;
  if (grad) {
    *grad = Matrix(prompt.rows, prompt.cols);
    for (const auto& g : grads)
      for (size_t k = 0; k < g.size(); ++k) grad->data[k] += g.data[k];
    for (double& x : grad->data) x /= n;
  }
  return total / n;
}

}  // namespace

double mean_prompt_loss(const DstModel& victim, const std::vector<DstExample>& examples, const Matrix& prompt,
                        PromptObjective objective) {
  if (examples.empty()) throw EmptyInputError("mean_prompt_loss: no examples");
  const auto data = prepare(victim, examples, prompt.rows, objective);
  std::vector<size_t> all(examples.size());
  std::iota(all.begin(), all.end(), size_t{0});
  return prompt_batch(victim, data, all, prompt, nullptr);
}

ContinuousPrompt tune_continuous_prompt(const DstModel& victim, const std::vector<Dialogue>& train,
                                        const std::vector<Dialogue>& validation, PromptObjective objective,
                                        const PromptTuneOptions& options) {
  if (options.m < 1) throw ConfigError("prompt length m must be >= 1");
  if (options.epochs < 1 || options.batch_size < 1) throw ConfigError("prompt tuning: epochs and batch_size must be >= 1");
  const auto examples = make_examples(train);
  if (examples.empty()) throw EmptyInputError("tune_continuous_prompt: empty training corpus");
  const auto val_examples = make_examples(validation);
  const auto data = prepare(victim, examples, options.m, objective);

  ContinuousPrompt out;
  out.objective = objective;
  out.victim_id = victim.hash();
  out.seed = options.seed;
  Matrix prompt = initial_prompt(options.m, victim.embed_dim(), options.init_std, options.seed);
  out.matrix = prompt;

  const size_t n = examples.size();
  const size_t B = static_cast<size_t>(options.batch_size);
  const long steps_per_epoch = static_cast<long>((n + B - 1) / B);
  LinearWarmupSchedule schedule(options.lr, steps_per_epoch * options.epochs, options.warmup_fraction);
  Adam adam(prompt.size());
  double best_jga = INFINITY;
  long step = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937_64 rng(derive_seed(options.seed, "prompt-shuffle", static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (size_t start = 0; start < n; start += B) {
      const size_t end = std::min(n, start + B);
      Matrix grad;
      const double l = prompt_batch(victim, data, std::span<const size_t>(order.data() + start, end - start),
                                    prompt, &grad);
      if (!std::isfinite(l)) throw DivergenceError("prompt tuning diverged at epoch " + std::to_string(epoch));
      epoch_loss += l * static_cast<double>(end - start);
      // Ascent on L is descent on -L.
      if (objective == PromptObjective::kMaximize)
        for (double& g : grad.data) g = -g;
      clip_grad_norm(grad.data, options.clip_norm);
      adam.step(prompt.data, grad.data, schedule.at(step++));
    }
    for (double x : prompt.data)
      if (!std::isfinite(x)) throw DivergenceError("prompt tuning produced non-finite prompt entries");
    CurvePoint cp;
    cp.epoch = epoch;
    cp.train_loss = epoch_loss / static_cast<double>(n);
    if (!val_examples.empty()) {
      const auto preds = predict_states(victim, val_examples, prompt);
      size_t correct = 0;
      for (size_t i = 0; i < preds.size(); ++i) correct += preds[i] == val_examples[i].turn.gold_state;
      cp.val_jga = static_cast<double>(correct) / static_cast<double>(preds.size());
    }
    out.curve.push_back(cp);
    // Lowest validation JGA wins; ties keep the earlier epoch. Without a
    // validation split the last epoch is kept.
    if (val_examples.empty() || cp.val_jga < best_jga) {
      best_jga = cp.val_jga;
      out.matrix = prompt;
      out.selected_epoch = epoch;
    }
  }
  return out;
}

void save_discrete_prompt(const DiscretePrompt& prompt, const std::filesystem::path& path) {
  write_file_atomic(path, prompt.to_json().dump(2) + "\n");
}

DiscretePrompt load_discrete_prompt(const std::filesystem::path& path) {
  return DiscretePrompt::from_json(nlohmann::json::parse(read_file(path)));
}

Checkpoint ContinuousPrompt::to_checkpoint() const {
  Checkpoint c;
  c.header = {{"kind", "prompt_matrix"}, {"rows", m()}, {"cols", d()}, {"sidecar", sidecar()}};
  c.params = matrix.data;
  return c;
}

namespace {

ContinuousPrompt prompt_from_parts(const Checkpoint& c, const nlohmann::json& j) {
  if (c.header.value("kind", "") != "prompt_matrix") throw SchemaError("prompt.kind", "not a prompt matrix");
  ContinuousPrompt p;
  p.matrix = Matrix(c.header.at("rows").get<int>(), c.header.at("cols").get<int>());
  if (p.matrix.size() != c.params.size()) throw SchemaError("prompt.matrix", "prompt size mismatch");
  p.matrix.data = c.params;
  p.objective = objective_from_string(j.at("objective").get<std::string>());
  p.victim_id = j.at("victim_id").get<std::string>();
  p.seed = j.at("seed").get<uint64_t>();
  p.selected_epoch = j.value("selected_epoch", -1);
  for (const auto& cp : j.at("curve"))
    p.curve.push_back({cp.at("epoch").get<int>(), cp.at("train_loss").get<double>(), cp.at("val_jga").get<double>()});
  return p;
}

}  // namespace

ContinuousPrompt ContinuousPrompt::from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.header.contains("sidecar")) throw SchemaError("prompt.sidecar", "prompt checkpoint without metadata");
  return prompt_from_parts(ckpt, ckpt.header.at("sidecar"));
}

void save_continuous_prompt(const ContinuousPrompt& prompt, const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".bin";
  auto side = stem;
  side += ".json";
  write_checkpoint(prompt.to_checkpoint(), bin);
  write_file_atomic(side, prompt.sidecar().dump(2) + "\n");
}

ContinuousPrompt load_continuous_prompt(const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".bin";
  auto side = stem;
  side += ".json";
  return prompt_from_parts(read_checkpoint(bin), nlohmann::json::parse(read_file(side)));
}

Matrix EmbeddingAdapter::apply(const Matrix& x) const {
  if (x.cols != in_dim()) throw std::invalid_argument("adapter: input width mismatch");
  Matrix out(x.rows, out_dim());
  for (int r = 0; r < x.rows; ++r)
    for (int c = 0; c < out_dim(); ++c) {
      double s = weight(in_dim(), c);
      for (int k = 0; k < in_dim(); ++k) s += x(r, k) * weight(k, c);
      out(r, c) = s;
    }
  return out;
}

EmbeddingAdapter fit_embedding_adapter(const DstModel& dst, const LmModel& lm) {
  std::vector<int> dst_ids, lm_ids;
  const auto& dv = dst.vocab();
  for (int i = 0; i < dv.size(); ++i) {
    if (i == Vocabulary::kPad || i == Vocabulary::kUnk || i == Vocabulary::kMask) continue;
    const int j = lm.vocab().id(dv.token(i));
    if (j == Vocabulary::kUnk) continue;
    dst_ids.push_back(i);
    lm_ids.push_back(j);
  }
  const int din = dst.embed_dim();
  const int dout = lm.embed_dim();
  const int n = static_cast<int>(dst_ids.size());
  if (n <= din) throw std::runtime_error("adapter: too few shared tokens for a least-squares fit");
  const Matrix xs = dst.embed(dst_ids);
  const Matrix ys = lm.embed(lm_ids);
  Eigen::MatrixXd X(n, din + 1), Y(n, dout);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < din; ++c) X(r, c) = xs(r, c);
    X(r, din) = 1.0;
    for (int c = 0; c < dout; ++c) Y(r, c) = ys(r, c);
  }
  // Raw token rows, without position embeddings: embed() adds none.
  const Eigen::MatrixXd W = X.colPivHouseholderQr().solve(Y);
  EmbeddingAdapter a;
  a.weight = Matrix(din + 1, dout);
  for (int r = 0; r <= din; ++r)
    for (int c = 0; c < dout; ++c) a.weight(r, c) = W(r, c);
  a.rmse = std::sqrt((X * W - Y).squaredNorm() / (static_cast<double>(n) * dout));
  a.fitted_tokens = n;
  return a;
}

}  // namespace dstprobe
