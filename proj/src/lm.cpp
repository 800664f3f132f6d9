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

#include "dstprobe/lm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dstprobe/errors.hpp"
#include "dstprobe/hashing.hpp"
#include "dstprobe/kernels.hpp"

namespace dstprobe {

std::string to_string(LmMode mode) { return mode == LmMode::kMasked ? "masked" : "causal"; }

LmMode lm_mode_from_string(const std::string& s) {
  if (s == "masked") return LmMode::kMasked;
  if (s == "causal") return LmMode::kCausal;
  throw ConfigError("unknown lm mode '" + s + "'");
}

std::string to_string(SelectionRule rule) {
  switch (rule) {
    case SelectionRule::kTop1: return "top1";
    case SelectionRule::kLowestOfTopK: return "lowest_of_topK";
    case SelectionRule::kSampleTopK: return "sample_topK";
  }
  return "top1";
}

SelectionRule selection_rule_from_string(const std::string& s) {
  if (s == "top1") return SelectionRule::kTop1;
  if (s == "lowest_of_topK" || s == "lowest_of_topk" || s == "lowest_of_top_k") return SelectionRule::kLowestOfTopK;
  if (s == "sample_topK" || s == "sample_topk" || s == "sample_top_k") return SelectionRule::kSampleTopK;
  throw ConfigError("unknown selection rule '" + s + "'");
}

EncoderConfig LmConfig::encoder() const {
  EncoderConfig e;
  e.vocab_size = vocab_size;
  e.embed_dim = embed_dim;
  e.layers = layers;
  e.heads = heads;
  e.max_len = max_len;
  e.causal = mode == LmMode::kCausal;
  return e;
}

nlohmann::json LmConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"embed_dim", embed_dim}, {"layers", layers},
          {"heads", heads},           {"max_len", max_len},     {"mode", to_string(mode)}};
}

LmConfig LmConfig::from_json(const nlohmann::json& j) {
  LmConfig c;
  c.vocab_size = j.value("vocab_size", 0);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.max_len = j.value("max_len", c.max_len);
  c.mode = lm_mode_from_string(j.value("mode", std::string("masked")));
  return c;
}

nlohmann::json LmTrainOptions::to_json() const {
  return {{"epochs", epochs}, {"batch_size", batch_size}, {"lr", lr}, {"warmup_fraction", warmup_fraction},
          {"mask_prob", mask_prob}, {"clip_norm", clip_norm}, {"seed", seed}};
}

LmTrainOptions LmTrainOptions::from_json(const nlohmann::json& j) {
  LmTrainOptions o;
  o.epochs = j.value("epochs", o.epochs);
  o.batch_size = j.value("batch_size", o.batch_size);
  o.lr = j.value("lr", o.lr);
  o.warmup_fraction = j.value("warmup_fraction", o.warmup_fraction);
  o.mask_prob = j.value("mask_prob", o.mask_prob);
  o.clip_norm = j.value("clip_norm", o.clip_norm);
  o.seed = j.value("seed", o.seed);
  return o;
}

LmModel::LmModel(const LmConfig& config, Vocabulary vocab, uint64_t init_seed)
    : config_(config), vocab_(std::move(vocab)) {
  if (config_.vocab_size != vocab_.size())
    throw ConfigError("lm config vocab_size " + std::to_string(config_.vocab_size) +
                      " does not match vocabulary size " + std::to_string(vocab_.size()));
  build();
  std::mt19937_64 rng(init_seed);
  encoder_.initialize(params_, rng);
}

void LmModel::build() {
  config_.encoder().validate();
  params_ = ParameterSet();
  encoder_ = Encoder(config_.encoder(), params_);
  out_bias_ = params_.add("lm.out_bias", 1, config_.vocab_size);
}

std::string LmModel::hash() const { return sha256_hex(params_.values()); }

Matrix LmModel::embed(std::span<const int> ids) const { return encoder_.embed(params_, ids); }

Matrix LmModel::embed(const std::vector<std::string>& tokens) const {
  const auto ids = vocab_.encode(tokens);
  return embed(ids);
}

Matrix LmModel::logits(const Matrix& input) const {
  const Matrix h = encoder_.forward(params_, input, nullptr);
  Matrix out(h.rows, config_.vocab_size);
  kernels::gemm_nt(h.data, params_.view(encoder_.token_embedding()), out.data, h.rows, h.cols,
                   config_.vocab_size);
  const auto bias = params_.view(out_bias_);
  for (int r = 0; r < out.rows; ++r)
    for (int v = 0; v < out.cols; ++v) out(r, v) += bias[v];
  return out;
}

std::vector<double> LmModel::distribution(const Matrix& input, int position) const {
  if (position < 0 || position >= input.rows) throw std::out_of_range("distribution: bad position");
  const Matrix h = encoder_.forward(params_, input, nullptr);
  const int V = config_.vocab_size;
  std::vector<double> p(static_cast<size_t>(V));
  kernels::serial::gemm_nt(h.row(position), params_.view(encoder_.token_embedding()), p, 1, h.cols, V);
  const auto bias = params_.view(out_bias_);
  for (int v = 0; v < V; ++v) p[v] += bias[v];
  kernels::serial::softmax_rows(p, 1, V);
  return p;
}

double LmModel::loss(const Matrix& prefix, std::span<const int> ids, std::span<const int> targets,
                     Matrix* d_prefix, std::span<double> grad) const {
  const Matrix tok = embed(ids);
  const Matrix input = prefix.rows ? vstack(prefix, tok) : tok;
  if (static_cast<int>(targets.size()) != input.rows)
    throw std::invalid_argument("lm loss: targets must cover prefix and tokens");
  std::vector<int> rows;
  for (int r = 0; r < input.rows; ++r)
    if (targets[r] >= 0) rows.push_back(r);
  if (rows.empty()) throw std::invalid_argument("lm loss: no target positions");

  Encoder::Cache cache;
  const Matrix h = encoder_.forward(params_, input, &cache);
  const int T = static_cast<int>(rows.size());
  const int V = config_.vocab_size;
  const int d = config_.embed_dim;
  // Only target rows need logits.
  Matrix ht(T, d);
  for (int t = 0; t < T; ++t) std::copy_n(h.row(rows[t]).begin(), d, ht.row(t).begin());
  const auto emb = params_.view(encoder_.token_embedding());
  Matrix p(T, V);
  kernels::gemm_nt(ht.data, emb, p.data, T, d, V);
  const auto bias = params_.view(out_bias_);
  double total = 0.0;
  for (int t = 0; t < T; ++t) {
    auto row = p.row(t);
    double mx = -INFINITY;
    for (int v = 0; v < V; ++v) {
      row[v] += bias[v];
      mx = std::max(mx, row[v]);
    }
    double sum = 0.0;
    for (int v = 0; v < V; ++v) sum += std::exp(row[v] - mx);
    const int y = targets[rows[t]];
    total += std::log(sum) + mx - row[y];
    for (int v = 0; v < V; ++v) row[v] = std::exp(row[v] - mx) / sum;
    row[y] -= 1.0;
  }
  const double inv = 1.0 / T;
  for (double& x : p.data) x *= inv;  // p now holds dLoss/dlogits

  Matrix dht(T, d);
  kernels::gemm(p.data, emb, dht.data, T, V, d);
  Matrix dh(input.rows, d);
  for (int t = 0; t < T; ++t) std::copy_n(dht.row(t).begin(), d, dh.row(rows[t]).begin());
  if (!grad.empty()) {
    kernels::gemm_tn(p.data, ht.data, grad_view(grad, encoder_.token_embedding()), V, T, d, true);
    auto gb = grad_view(grad, out_bias_);
    for (int t = 0; t < T; ++t)
      for (int v = 0; v < V; ++v) gb[v] += p(t, v);
  }
  const Matrix d_input = encoder_.backward(params_, cache, dh, grad);
  if (!grad.empty()) encoder_.scatter_token_grad(ids, d_input, prefix.rows, grad);
  if (d_prefix) {
    *d_prefix = Matrix(prefix.rows, prefix.cols);
    std::copy_n(d_input.data.begin(), prefix.size(), d_prefix->data.begin());
  }
  return total * inv;
}

Checkpoint LmModel::to_checkpoint() const {
  Checkpoint c;
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& e : params_.entries()) layout.push_back({e.name, e.ref.rows, e.ref.cols});
  c.header = {{"kind", "lm"}, {"config", config_.to_json()}, {"vocab", vocab_.to_json()}, {"layout", layout}};
  c.params.assign(params_.values().begin(), params_.values().end());
  return c;
}

LmModel LmModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.header.value("kind", "") != "lm") throw SchemaError("checkpoint.kind", "not an lm checkpoint");
  LmModel m;
  m.config_ = LmConfig::from_json(ckpt.header.at("config"));
  m.vocab_ = Vocabulary::from_json(ckpt.header.at("vocab"));
  if (m.config_.vocab_size != m.vocab_.size())
    throw SchemaError("checkpoint.config.vocab_size", "vocab size mismatch in checkpoint");
  m.build();
  if (m.params_.size() != ckpt.params.size())
    throw SchemaError("checkpoint.params", "parameter count does not match the config");
  std::copy(ckpt.params.begin(), ckpt.params.end(), m.params_.values().begin());
  return m;
}

void LmModel::save(const std::filesystem::path& path) const { write_checkpoint(to_checkpoint(), path); }

LmModel LmModel::load(const std::filesystem::path& path) { return from_checkpoint(read_checkpoint(path)); }

namespace {

std::vector<int> encode_text(const Vocabulary& vocab, const std::string& text) {
  return vocab.encode(tokenize_words(text));
}

// Runs the shared optimizer loop on `model` in place. `example_loss(index, epoch, grad)` returns
// one example's loss.
void run_training(LmModel& model, size_t n_examples, const LmTrainOptions& opt,
                     const std::function<double(size_t, int, std::span<double>)>& example_loss,
                     LmTrainLog* log) {
  if (n_examples == 0) throw EmptyInputError("lm training: no training sequences");
  if (opt.epochs < 1 || opt.batch_size < 1) throw ConfigError("lm training: epochs and batch_size must be >= 1");
  const size_t B = static_cast<size_t>(opt.batch_size);
  const long steps_per_epoch = static_cast<long>((n_examples + B - 1) / B);
  LinearWarmupSchedule schedule(opt.lr, steps_per_epoch * opt.epochs, opt.warmup_fraction);
  Adam adam(model.params().size());
  std::vector<double> grad;
  long step = 0;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::vector<size_t> order(n_examples);
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937_64 rng(derive_seed(opt.seed, "lm-shuffle", static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (size_t start = 0; start < n_examples; start += B) {
      const size_t end = std::min(n_examples, start + B);
      std::span<const size_t> batch(order.data() + start, end - start);
      const double l = batch_mean_gradient(
          batch, model.params().size(),
          [&](size_t i, std::span<double> g) { return example_loss(i, epoch, g); }, grad);
      if (!std::isfinite(l)) throw DivergenceError("lm training diverged at epoch " + std::to_string(epoch));
      epoch_loss += l * static_cast<double>(end - start);
      clip_grad_norm(grad, opt.clip_norm);
      adam.step(model.mutable_params().values(), grad, schedule.at(step++));
    }
    if (log) log->epoch_loss.push_back(epoch_loss / static_cast<double>(n_examples));
  }
}

}  // namespace

LmModel train_mlm(const std::vector<Dialogue>& train, const Vocabulary& vocab, const LmConfig& config,
                  const LmTrainOptions& options, LmTrainLog* log) {
  if (config.mode != LmMode::kMasked) throw ConfigError("train_mlm requires mode=masked");
  LmModel model(config, vocab, derive_seed(options.seed, "lm-init"));
  const size_t max_len = static_cast<size_t>(config.max_len);
  std::vector<std::vector<int>> seqs;
  for (const auto& d : train)
    for (const auto& t : d.turns) {
      auto user = encode_text(vocab, t.user_utterance);
      if (user.size() > max_len) user.resize(max_len);
      auto sys = encode_text(vocab, t.system_response);
      if (!sys.empty() && user.size() + 1 < max_len) {
        const size_t keep = std::min(sys.size(), max_len - user.size() - 1);
        std::vector<int> pair(sys.end() - static_cast<long>(keep), sys.end());
        pair.push_back(Vocabulary::kSep);
        pair.insert(pair.end(), user.begin(), user.end());
        seqs.push_back(std::move(pair));
      }
      seqs.push_back(std::move(user));
    }
  const int V = vocab.size();
  auto example = [&](size_t i, int epoch, std::span<double> g) {
    std::vector<int> ids = seqs[i];
    std::vector<int> targets(ids.size(), -1);
    std::mt19937_64 rng(derive_seed(options.seed, "mlm-mask", static_cast<uint64_t>(epoch) * seqs.size() + i));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> random_token(Vocabulary::kNumSpecial, V - 1);
    std::vector<size_t> candidates;
    for (size_t p = 0; p < ids.size(); ++p)
      if (ids[p] != Vocabulary::kSep) candidates.push_back(p);
    for (size_t p : candidates)
      if (u(rng) < options.mask_prob) targets[p] = ids[p];
    if (std::all_of(targets.begin(), targets.end(), [](int t) { return t < 0; })) {
      std::uniform_int_distribution<size_t> pick(0, candidates.size() - 1);
      const size_t p = candidates[pick(rng)];
      targets[p] = ids[p];
    }
    for (size_t p = 0; p < ids.size(); ++p) {
      if (targets[p] < 0) continue;
      const double r = u(rng);
      if (r < 0.8)
        ids[p] = Vocabulary::kMask;
      else if (r < 0.9)
        ids[p] = random_token(rng);
    }
    return model.loss(Matrix(), ids, targets, nullptr, g);
  };
  run_training(model, seqs.size(), options, example, log);
  return model;
}

LmModel train_causal_lm(const std::vector<Dialogue>& train, const Vocabulary& vocab,
                        const LmConfig& config, const LmTrainOptions& options, LmTrainLog* log) {
  if (config.mode != LmMode::kCausal) throw ConfigError("train_causal_lm requires mode=causal");
  LmModel model(config, vocab, derive_seed(options.seed, "lm-init"));
  const size_t max_len = static_cast<size_t>(config.max_len);
  std::vector<std::vector<int>> seqs;
  auto add = [&](const std::string& text) {
    auto ids = encode_text(vocab, text);
    if (ids.empty()) return;
    if (ids.size() + 1 > max_len) ids.resize(max_len - 1);
    ids.insert(ids.begin(), Vocabulary::kSep);
    seqs.push_back(std::move(ids));
  };
  for (const auto& d : train)
    for (const auto& t : d.turns) {
      add(t.user_utterance);
      add(t.system_response);
    }
  auto example = [&](size_t i, int, std::span<double> g) {
    const auto& ids = seqs[i];
    std::vector<int> targets(ids.size(), -1);
    for (size_t p = 0; p + 1 < ids.size(); ++p) targets[p] = ids[p + 1];
    return model.loss(Matrix(), ids, targets, nullptr, g);
  };
  run_training(model, seqs.size(), options, example, log);
  return model;
}

std::vector<FillResult> fill_mask(const LmModel& lm, const Matrix& prefix, std::vector<std::string>& tokens,
                                  int top_k, SelectionRule rule, std::mt19937_64* rng,
                                  const std::vector<bool>* banned) {
  if (top_k < 1) throw std::invalid_argument("fill_mask: top_k must be >= 1");
  std::vector<int> masks;
  for (size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] == kMaskToken) masks.push_back(static_cast<int>(i));
  if (masks.empty()) throw std::invalid_argument("fill_mask: sequence has no [MASK] position");
  if (prefix.rows + static_cast<int>(tokens.size()) > lm.config().max_len)
    throw std::length_error("fill_mask: sequence longer than max_len");
  if (prefix.rows && prefix.cols != lm.embed_dim())
    throw std::invalid_argument("fill_mask: prefix width does not match the lm");
  if (rule == SelectionRule::kSampleTopK && !rng) throw std::invalid_argument("fill_mask: sampling needs an rng");

  const auto& vocab = lm.vocab();
  std::vector<FillResult> out;
  for (int pos : masks) {
    const Matrix tok = lm.embed(tokens);
    const Matrix input = prefix.rows ? vstack(prefix, tok) : tok;
    const auto p = lm.distribution(input, prefix.rows + pos);
    std::vector<int> ids;
    for (int v = Vocabulary::kNumSpecial; v < vocab.size(); ++v)
      if (!banned || !(*banned)[static_cast<size_t>(v)]) ids.push_back(v);
    if (ids.empty()) throw std::invalid_argument("fill_mask: every candidate is banned");
    const size_t k = std::min(ids.size(), static_cast<size_t>(top_k));
    std::partial_sort(ids.begin(), ids.begin() + static_cast<long>(k), ids.end(),
                      [&](int a, int b) { return p[a] != p[b] ? p[a] > p[b] : a < b; });
    FillResult r;
    r.position = pos;
    for (size_t i = 0; i < k; ++i) r.candidates.emplace_back(vocab.token(ids[i]), p[ids[i]]);
    switch (rule) {
      case SelectionRule::kTop1:
        r.chosen = r.candidates.front().first;
        break;
      case SelectionRule::kLowestOfTopK:
        r.chosen = r.candidates.back().first;
        break;
      case SelectionRule::kSampleTopK: {
        std::vector<double> w;
        for (const auto& c : r.candidates) w.push_back(c.second);
        std::discrete_distribution<size_t> d(w.begin(), w.end());
        r.chosen = r.candidates[d(*rng)].first;
        break;
      }
    }
    tokens[pos] = r.chosen;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<FillResult> fill_mask(const LmModel& lm, std::vector<std::string>& tokens, int top_k,
                                  SelectionRule rule, std::mt19937_64* rng) {
  return fill_mask(lm, Matrix(), tokens, top_k, rule, rng);
}

double perplexity(const LmModel& lm, const std::vector<std::string>& utterances) {
  if (lm.config().mode != LmMode::kCausal) throw std::invalid_argument("perplexity needs a causal lm");
  if (utterances.empty()) throw EmptyInputError("perplexity: no utterances");
  const int n = static_cast<int>(utterances.size());
  std::vector<double> nll(static_cast<size_t>(n), 0.0);
  std::vector<long> count(static_cast<size_t>(n), 0);
  const size_t max_tokens = static_cast<size_t>(lm.config().max_len - 1);
#pragma omp parallel for schedule(dynamic, 4)
  for (int u = 0; u < n; ++u) {
    auto ids = lm.vocab().encode(tokenize_words(utterances[u]));
    if (ids.empty()) continue;
    if (ids.size() > max_tokens) ids.resize(max_tokens);
    ids.insert(ids.begin(), Vocabulary::kSep);
    const Matrix lg = lm.logits(lm.embed(ids));
    double s = 0.0;
    for (size_t p = 0; p + 1 < ids.size(); ++p) {
      const auto row = lg.row(static_cast<int>(p));
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double x : row) z += std::exp(x - mx);
      s += std::log(z) + mx - row[ids[p + 1]];
    }
    nll[u] = s;
    count[u] = static_cast<long>(ids.size() - 1);
  }
  double total = 0.0;
  long tokens = 0;
  for (int u = 0; u < n; ++u) {
    total += nll[u];
    tokens += count[u];
  }
  if (tokens == 0) throw EmptyInputError("perplexity: utterances contain no tokens");
  return std::exp(total / static_cast<double>(tokens));
}

}  // namespace dstprobe
