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

#include "dstprobe/dst.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "dstprobe/errors.hpp"
#include "dstprobe/hashing.hpp"
#include "dstprobe/kernels.hpp"

namespace dstprobe {

EncoderConfig DstConfig::encoder(int vocab_size) const {
  EncoderConfig e;
  e.vocab_size = vocab_size;
  e.embed_dim = embed_dim;
  e.layers = layers;
  e.heads = heads;
  e.max_len = max_len;
  e.causal = false;
  return e;
}

nlohmann::json DstConfig::to_json() const {
  return {{"embed_dim", embed_dim},   {"layers", layers},
          {"heads", heads},           {"max_len", max_len},
          {"seed", seed},             {"epochs", epochs},
          {"batch_size", batch_size}, {"lr", lr},
          {"warmup_fraction", warmup_fraction}, {"clip_norm", clip_norm},
          {"patience", patience}};
}

DstConfig DstConfig::from_json(const nlohmann::json& j) {
  DstConfig c;
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.max_len = j.value("max_len", c.max_len);
  c.seed = j.value("seed", c.seed);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.patience = j.value("patience", c.patience);
  return c;
}

DstConfig transfer_victim_config(const DstConfig& base) {
  DstConfig c = base;
  c.seed = derive_seed(base.seed, "transfer-victim");
  c.layers = base.layers + 1;
  return c;
}

DstModel::DstModel(const DstConfig& config, Vocabulary vocab, Ontology ontology)
    : config_(config), vocab_(std::move(vocab)), ontology_(std::move(ontology)) {
  build();
  std::mt19937_64 rng(derive_seed(config_.seed, "dst-init"));
  encoder_.initialize(params_, rng);
  for (const auto& w : head_w_) params_.fill_normal(w, 0.02, rng);
}

void DstModel::build() {
  if (ontology_.num_slots() == 0) throw ConfigError("dst: ontology has no slots");
  config_.encoder(vocab_.size()).validate();
  params_ = ParameterSet();
  encoder_ = Encoder(config_.encoder(vocab_.size()), params_);
  head_q_.clear();
  head_w_.clear();
  head_b_.clear();
  for (const auto& slot : ontology_.slot_names()) {
    const int n = static_cast<int>(ontology_.values(slot).size()) + 1;
    // Zero query: pooling starts as a plain mean.
    head_q_.push_back(params_.add("dst.head." + slot + ".q", 1, config_.embed_dim));
    head_w_.push_back(params_.add("dst.head." + slot + ".w", config_.embed_dim, n));
    head_b_.push_back(params_.add("dst.head." + slot + ".b", 1, n));
  }
}

std::string DstModel::hash() const { return sha256_hex(params_.values()); }

Matrix DstModel::embed(std::span<const int> ids) const { return encoder_.embed(params_, ids); }

Matrix DstModel::embed(const std::vector<std::string>& tokens) const {
  const auto ids = vocab_.encode(tokens);
  return embed(ids);
}

std::vector<int> DstModel::encode_input(std::span<const Turn> history, const std::string& system_response,
                                        const std::string& user_utterance, int reserved_rows) const {
  const auto user = vocab_.encode(tokenize(user_utterance).tokens);
  const long budget = static_cast<long>(config_.max_len) - reserved_rows;
  if (static_cast<long>(user.size()) > budget)
    throw std::length_error("dst input: user utterance longer than the available length");
  std::vector<int> context;
  auto append = [&](const std::string& text) {
    const auto ids = vocab_.encode(tokenize_words(text));
    context.insert(context.end(), ids.begin(), ids.end());
    context.push_back(Vocabulary::kSep);
  };
  for (const auto& t : history) {
    append(t.system_response);
    append(t.user_utterance);
  }
  append(system_response);
  const size_t room = static_cast<size_t>(budget) - user.size();
  std::vector<int> ids;
  if (context.size() > room) {
    ids.assign(context.end() - static_cast<long>(room), context.end());
  } else {
    ids = std::move(context);
  }
  ids.insert(ids.end(), user.begin(), user.end());
  return ids;
}

namespace {

Matrix join(const Matrix& prefix, const Matrix& tok) { return prefix.rows ? vstack(prefix, tok) : tok; }

// softmax_r(z_r . q / sqrt(d)) weights and the weighted row sum.
std::vector<double> attend(const Matrix& z, std::span<const double> q, std::vector<double>& weights) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(z.cols));
  weights.assign(static_cast<size_t>(z.rows), 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < z.rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < z.cols; ++c) s += z(r, c) * q[c];
    weights[r] = s * scale;
    mx = std::max(mx, weights[r]);
  }
  double sum = 0.0;
  for (double& w : weights) sum += (w = std::exp(w - mx));
  std::vector<double> pooled(static_cast<size_t>(z.cols), 0.0);
  for (int r = 0; r < z.rows; ++r) {
    weights[r] /= sum;
    for (int c = 0; c < z.cols; ++c) pooled[c] += weights[r] * z(r, c);
  }
  return pooled;
}

}  // namespace

std::vector<std::vector<double>> DstModel::slot_logits(const Matrix& prefix, std::span<const int> ids) const {
  if (prefix.rows && prefix.cols != config_.embed_dim)
    throw std::invalid_argument("dst: prefix width does not match embed_dim");
  const Matrix z = encoder_.forward(params_, join(prefix, embed(ids)), nullptr);
  std::vector<std::vector<double>> out;
  std::vector<double> a;
  for (size_t s = 0; s < head_w_.size(); ++s) {
    const auto pooled = attend(z, params_.view(head_q_[s]), a);
    const int n = head_w_[s].cols;
    std::vector<double> lg(params_.view(head_b_[s]).begin(), params_.view(head_b_[s]).end());
    kernels::serial::gemm(pooled, params_.view(head_w_[s]), lg, 1, config_.embed_dim, n, true);
    out.push_back(std::move(lg));
  }
  return out;
}

DstPrediction DstModel::predict_ids(const Matrix& prefix, std::span<const int> ids) const {
  auto logits = slot_logits(prefix, ids);
  DstPrediction pred;
  const auto& slots = ontology_.slot_names();
  for (size_t s = 0; s < slots.size(); ++s) {
    const auto& lg = logits[s];
    const int best = static_cast<int>(std::max_element(lg.begin(), lg.end()) - lg.begin());
    if (best > 0) pred.state.set(slots[s], ontology_.values(slots[s])[static_cast<size_t>(best - 1)]);
    pred.logits[slots[s]] = std::move(logits[s]);
  }
  return pred;
}

DstPrediction DstModel::predict(std::span<const Turn> history, const std::string& user_utterance,
                                const std::string& system_response) const {
  return predict_ids(Matrix(), encode_input(history, system_response, user_utterance));
}

std::vector<int> DstModel::target_indices(const BeliefState& target) const {
  std::vector<int> idx;
  for (const auto& [slot, value] : target.assignments())
    if (!ontology_.has_slot(slot)) throw SchemaError("belief_state." + slot, "unknown slot '" + slot + "'");
  for (const auto& slot : ontology_.slot_names()) {
    const std::string& v = target.get(slot);
    if (v == kNoneValue) {
      idx.push_back(0);
      continue;
    }
    const int i = ontology_.value_index(slot, v);
    if (i < 0) throw SchemaError("belief_state." + slot, "value '" + v + "' is not a candidate of " + slot);
    idx.push_back(i + 1);
  }
  return idx;
}

double summed_cross_entropy(const std::vector<std::vector<double>>& logits, const std::vector<int>& targets) {
  if (logits.size() != targets.size()) throw std::invalid_argument("summed_cross_entropy: size mismatch");
  double total = 0.0;
  for (size_t s = 0; s < logits.size(); ++s) {
    const auto& lg = logits[s];
    const double mx = *std::max_element(lg.begin(), lg.end());
    double z = 0.0;
    for (double x : lg) z += std::exp(x - mx);
    total += std::log(z) + mx - lg[static_cast<size_t>(targets[s])];
  }
  return total;
}

double DstModel::loss(const Matrix& prefix, std::span<const int> ids, const BeliefState& target, Matrix* d_prefix,
                      std::span<double> grad) const {
  if (prefix.rows && prefix.cols != config_.embed_dim)
    throw std::invalid_argument("dst: prefix width does not match embed_dim");
  const auto targets = target_indices(target);
  const Matrix input = join(prefix, embed(ids));
  Encoder::Cache cache;
  const Matrix z = encoder_.forward(params_, input, &cache);
  const int d = config_.embed_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix dz(z.rows, d);
  std::vector<double> a, da(static_cast<size_t>(z.rows));
  double total = 0.0;
  for (size_t s = 0; s < head_w_.size(); ++s) {
    const auto q = params_.view(head_q_[s]);
    const auto pooled = attend(z, q, a);
    std::vector<double> d_pooled(static_cast<size_t>(d), 0.0);
    const int n = head_w_[s].cols;
    const auto w = params_.view(head_w_[s]);
    std::vector<double> p(params_.view(head_b_[s]).begin(), params_.view(head_b_[s]).end());
    kernels::serial::gemm(pooled, w, p, 1, d, n, true);
    const double mx = *std::max_element(p.begin(), p.end());
    double sum = 0.0;
    for (double x : p) sum += std::exp(x - mx);
    total += std::log(sum) + mx - p[static_cast<size_t>(targets[s])];
    for (double& x : p) x = std::exp(x - mx) / sum;
    p[static_cast<size_t>(targets[s])] -= 1.0;
    // dpooled += W p
    kernels::serial::gemm_nt(p, w, d_pooled, 1, n, d, true);
    if (!grad.empty()) {
      kernels::serial::gemm_tn(pooled, p, grad_view(grad, head_w_[s]), d, 1, n, true);
      auto gb = grad_view(grad, head_b_[s]);
      for (int j = 0; j < n; ++j) gb[j] += p[j];
    }
    // Through the attention pooling.
    double mean_da = 0.0;
    for (int r = 0; r < z.rows; ++r) {
      double x = 0.0;
      for (int c = 0; c < d; ++c) x += z(r, c) * d_pooled[c];
      da[r] = x;
      mean_da += a[r] * x;
    }
    std::span<double> gq = grad.empty() ? std::span<double>() : grad_view(grad, head_q_[s]);
    for (int r = 0; r < z.rows; ++r) {
      const double ds = a[r] * (da[r] - mean_da) * scale;
      for (int c = 0; c < d; ++c) {
        dz(r, c) += a[r] * d_pooled[c] + ds * q[c];
        if (!gq.empty()) gq[c] += ds * z(r, c);
      }
    }
  }
  if (!d_prefix && grad.empty()) return total;
  const Matrix d_input = encoder_.backward(params_, cache, dz, grad);
  if (!grad.empty()) encoder_.scatter_token_grad(ids, d_input, prefix.rows, grad);
  if (d_prefix) {
    *d_prefix = Matrix(prefix.rows, prefix.cols);
    std::copy_n(d_input.data.begin(), prefix.size(), d_prefix->data.begin());
  }
  return total;
}

Checkpoint DstModel::to_checkpoint() const {
  Checkpoint c;
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& e : params_.entries()) layout.push_back({e.name, e.ref.rows, e.ref.cols});
  c.header = {{"kind", "dst"},
              {"config", config_.to_json()},
              {"vocab", vocab_.to_json()},
              {"ontology", ontology_.to_json()},
              {"layout", layout}};
  c.params.assign(params_.values().begin(), params_.values().end());
  return c;
}

DstModel DstModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.header.value("kind", "") != "dst") throw SchemaError("checkpoint.kind", "not a dst checkpoint");
  DstModel m;
  m.config_ = DstConfig::from_json(ckpt.header.at("config"));
  m.vocab_ = Vocabulary::from_json(ckpt.header.at("vocab"));
  m.ontology_ = Ontology::from_json(ckpt.header.at("ontology"));
  m.build();
  if (m.params_.size() != ckpt.params.size())
    throw SchemaError("checkpoint.params", "parameter count does not match the config");
  std::copy(ckpt.params.begin(), ckpt.params.end(), m.params_.values().begin());
  return m;
}

void DstModel::save(const std::filesystem::path& path) const { write_checkpoint(to_checkpoint(), path); }

DstModel DstModel::load(const std::filesystem::path& path) { return from_checkpoint(read_checkpoint(path)); }

std::vector<DstExample> make_examples(const std::vector<Dialogue>& dialogues) {
  std::vector<DstExample> out;
  for (const auto& d : dialogues)
    for (size_t t = 0; t < d.turns.size(); ++t) {
      DstExample e;
      e.dialogue_id = d.dialogue_id;
      e.turn_index = static_cast<int>(t);
      e.history.assign(d.turns.begin(), d.turns.begin() + static_cast<long>(t));
      e.turn = d.turns[t];
      out.push_back(std::move(e));
    }
  std::stable_sort(out.begin(), out.end(), [](const DstExample& a, const DstExample& b) {
    return a.dialogue_id != b.dialogue_id ? a.dialogue_id < b.dialogue_id : a.turn_index < b.turn_index;
  });
  return out;
}

std::vector<BeliefState> predict_states(const DstModel& model, const std::vector<DstExample>& examples,
                                        const Matrix& prefix) {
  const int n = static_cast<int>(examples.size());
  std::vector<BeliefState> out(static_cast<size_t>(n));
#pragma omp parallel for schedule(dynamic, 8)
  for (int i = 0; i < n; ++i) {
    const auto& e = examples[i];
    const auto ids = model.encode_input(e.history, e.turn.system_response, e.turn.user_utterance, prefix.rows);
    out[i] = model.predict_ids(prefix, ids).state;
  }
  return out;
}

double evaluate_jga(const DstModel& model, const std::vector<Dialogue>& dialogues, const Matrix& prefix) {
  const auto examples = make_examples(dialogues);
  if (examples.empty()) throw EmptyInputError("evaluate_jga: no turns");
  const auto preds = predict_states(model, examples, prefix);
  size_t correct = 0;
  for (size_t i = 0; i < examples.size(); ++i) correct += preds[i] == examples[i].turn.gold_state;
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

DstModel train_dst_examples(std::vector<DstExample> examples, const std::vector<Dialogue>& validation,
                            const Vocabulary& vocab, const Ontology& ontology, const DstConfig& config,
                            DstTrainLog* log) {
  if (examples.empty()) throw EmptyInputError("train_dst: no training turns");
  if (config.epochs < 1 || config.batch_size < 1) throw ConfigError("train_dst: epochs and batch_size must be >= 1");
  for (const auto& e : examples) e.turn.gold_state.validate(ontology);
  for (const auto& d : validation)
    for (const auto& t : d.turns) t.gold_state.validate(ontology);
  // Canonical order; ties (twins of one turn) keep a content order.
  std::stable_sort(examples.begin(), examples.end(), [](const DstExample& a, const DstExample& b) {
    if (a.dialogue_id != b.dialogue_id) return a.dialogue_id < b.dialogue_id;
    if (a.turn_index != b.turn_index) return a.turn_index < b.turn_index;
    return a.turn.user_utterance < b.turn.user_utterance;
  });

  DstModel model(config, vocab, ontology);
  std::vector<std::vector<int>> ids;
  ids.reserve(examples.size());
  for (const auto& e : examples)
    ids.push_back(model.encode_input(e.history, e.turn.system_response, e.turn.user_utterance));

  const size_t n = examples.size();
  const size_t B = static_cast<size_t>(config.batch_size);
  const long steps_per_epoch = static_cast<long>((n + B - 1) / B);
  LinearWarmupSchedule schedule(config.lr, steps_per_epoch * config.epochs, config.warmup_fraction);
  Adam adam(model.params().size());
  std::vector<double> grad;
  std::vector<double> best_params(model.params().values().begin(), model.params().values().end());
  double best_jga = -1.0;
  int since_best = 0;
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937_64 rng(derive_seed(config.seed, "dst-shuffle", static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (size_t start = 0; start < n; start += B) {
      const size_t end = std::min(n, start + B);
      std::span<const size_t> batch(order.data() + start, end - start);
      const double l = batch_mean_gradient(
          batch, model.params().size(),
          [&](size_t i, std::span<double> g) {
            return model.loss(Matrix(), ids[i], examples[i].turn.gold_state, nullptr, g);
          },
          grad);
      if (!std::isfinite(l)) throw DivergenceError("dst training diverged at epoch " + std::to_string(epoch));
      epoch_loss += l * static_cast<double>(end - start);
      clip_grad_norm(grad, config.clip_norm);
      adam.step(model.mutable_params().values(), grad, schedule.at(step++));
    }
    // Without a validation split every epoch counts as an improvement.
    const double jga = validation.empty() ? static_cast<double>(epoch) : evaluate_jga(model, validation);
    if (log) {
      log->epoch_loss.push_back(epoch_loss / static_cast<double>(n));
      log->val_jga.push_back(jga);
    }
    if (jga > best_jga) {
      best_jga = jga;
      since_best = 0;
      best_params.assign(model.params().values().begin(), model.params().values().end());
      if (log) log->best_epoch = epoch;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  std::copy(best_params.begin(), best_params.end(), model.mutable_params().values().begin());
  return model;
}

DstModel train_dst(const std::vector<Dialogue>& train, const std::vector<Dialogue>& validation,
                   const Vocabulary& vocab, const Ontology& ontology, const DstConfig& config, DstTrainLog* log) {
  return train_dst_examples(make_examples(train), validation, vocab, ontology, config, log);
}

}  // namespace dstprobe
