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

#include "dstprobe/attack.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dstprobe/errors.hpp"
#include "dstprobe/hashing.hpp"

namespace dstprobe {

namespace {

struct MethodNames {
  AttackMethod method;
  const char* display;
  const char* config;
};

constexpr MethodNames kMethodNames[] = {
    {AttackMethod::kPromptDiscrete, "prompt-d", "prompt_discrete"},
    {AttackMethod::kPromptContMax, "prompt-cx", "prompt_cont_max"},
    {AttackMethod::kPromptContMin, "prompt-cn", "prompt_cont_min"},
    {AttackMethod::kScEda, "sc-eda", "sc_eda"},
    {AttackMethod::kSd, "sd", "sd"},
    {AttackMethod::kBertM, "bert-m", "bert_m"},
};

}  // namespace

std::string display_name(AttackMethod m) {
  for (const auto& n : kMethodNames)
    if (n.method == m) return n.display;
  return "unknown";
}

std::string config_name(AttackMethod m) {
  for (const auto& n : kMethodNames)
    if (n.method == m) return n.config;
  return "unknown";
}

AttackMethod attack_method_from_string(const std::string& s) {
  for (const auto& n : kMethodNames)
    if (s == n.display || s == n.config) return n.method;
  throw ConfigError("unknown attack method '" + s + "'");
}

const std::vector<AttackMethod>& all_attack_methods() {
  static const std::vector<AttackMethod> kAll = {AttackMethod::kPromptDiscrete, AttackMethod::kPromptContMax,
                                                 AttackMethod::kPromptContMin,  AttackMethod::kScEda,
                                                 AttackMethod::kSd,             AttackMethod::kBertM};
  return kAll;
}

bool is_prompt_method(AttackMethod m) {
  return m == AttackMethod::kPromptDiscrete || is_continuous_method(m);
}

bool is_continuous_method(AttackMethod m) {
  return m == AttackMethod::kPromptContMax || m == AttackMethod::kPromptContMin;
}

void AttackConfig::validate() const {
  if (!(perturbation_ratio > 0.0 && perturbation_ratio <= 1.0))
    throw ConfigError("perturbation_ratio must be in (0, 1]");
  if (top_k < 1) throw ConfigError("top_k must be >= 1");
}

nlohmann::json AttackConfig::to_json() const {
  return {{"perturbation_ratio", perturbation_ratio},
          {"selection_rule", to_string(selection_rule)},
          {"top_k", top_k},
          {"method", config_name(method)},
          {"seed", seed},
          {"ban_slot_value_fills", ban_slot_value_fills}};
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
  AttackConfig c;
  c.perturbation_ratio = j.value("perturbation_ratio", c.perturbation_ratio);
  c.selection_rule = selection_rule_from_string(j.value("selection_rule", std::string("top1")));
  c.top_k = j.value("top_k", c.top_k);
  c.method = attack_method_from_string(j.value("method", std::string("prompt_discrete")));
  c.seed = j.value("seed", c.seed);
  c.ban_slot_value_fills = j.value("ban_slot_value_fills", c.ban_slot_value_fills);
  c.validate();
  return c;
}

Thesaurus load_thesaurus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError(path.string(), "cannot open thesaurus " + path.string());
  Thesaurus t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string head, w;
    if (!(ss >> head)) continue;
    auto& syns = t[head];
    while (ss >> w)
      if (w != head && std::find(syns.begin(), syns.end(), w) == syns.end()) syns.push_back(w);
  }
  return t;
}

int AttackRecord::l_t() const { return static_cast<int>(std::count(maskable.begin(), maskable.end(), true)); }

nlohmann::json AttackRecord::attack_json() const {
  return {{"method", method},
          {"masked_positions", masked_positions},
          {"n_perturbed", n_perturbed},
          {"changed", changed},
          {"introduces_new_slot_values", introduces_new_slot_values}};
}

nlohmann::json AttackRecord::to_json() const {
  nlohmann::json fj = nlohmann::json::array();
  for (const auto& f : fills) {
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& [tok, p] : f.candidates) cands.push_back({tok, p});
    fj.push_back({{"position", f.position}, {"chosen", f.chosen}, {"candidates", cands}});
  }
  return {{"dialogue_id", dialogue_id},
          {"turn_index", turn_index},
          {"method", method},
          {"original_utterance", original_utterance},
          {"masked_utterance", detokenize(masked_tokens)},
          {"adversarial_utterance", adversarial_utterance},
          {"masked_positions", masked_positions},
          {"maskable", maskable},
          {"budget", budget},
          {"n_perturbed", n_perturbed},
          {"l_o", l_o()},
          {"l_t", l_t()},
          {"changed", changed},
          {"no_maskable", no_maskable},
          {"no_op", no_op},
          {"prompt_text", prompt_text},
          {"prompt_truncated", prompt_truncated},
          {"introduces_new_slot_values", introduces_new_slot_values},
          {"gold", gold.to_json()},
          {"original_prediction", original_prediction.state.to_json()},
          {"adversarial_prediction", adversarial_prediction.state.to_json()},
          {"fills", fj}};
}

int perturbation_budget(double ratio, int l_t) {
  if (l_t <= 0) return 0;
  const int b = static_cast<int>(std::floor(ratio * l_t + 1e-9));
  return std::max(1, std::min(b, l_t));
}

std::vector<std::string> mask_utterance(const TokenizedUtterance& tu, int budget, std::mt19937_64& rng,
                                        std::vector<int>* positions) {
  std::vector<int> cand;
  for (size_t i = 0; i < tu.tokens.size(); ++i)
    if (tu.maskable[i]) cand.push_back(static_cast<int>(i));
  const size_t k = std::min(cand.size(), static_cast<size_t>(std::max(0, budget)));
  // Partial Fisher-Yates: the first k entries are a uniform k-subset.
  for (size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<size_t> pick(i, cand.size() - 1);
    std::swap(cand[i], cand[pick(rng)]);
  }
  std::vector<int> chosen(cand.begin(), cand.begin() + static_cast<long>(k));
  std::sort(chosen.begin(), chosen.end());
  std::vector<std::string> out = tu.tokens;
  for (int p : chosen) out[static_cast<size_t>(p)] = std::string(kMaskToken);
  if (positions) *positions = chosen;
  return out;
}

std::vector<bool> slot_value_fill_ban(const Vocabulary& vocab, const Ontology& ontology, const MaskPolicy& policy) {
  std::vector<bool> banned(static_cast<size_t>(vocab.size()), false);
  auto ban = [&](const std::string& w) {
    const int id = vocab.id(w);
    if (id != Vocabulary::kUnk) banned[static_cast<size_t>(id)] = true;
  };
  for (const auto& slot : ontology.slot_names())
    for (const auto& v : ontology.values(slot))
      for (const auto& w : tokenize_words(v)) ban(w);
  for (const auto& w : policy.slot_words) ban(w);
  return banned;
}

uint64_t turn_seed(uint64_t seed, const std::string& dialogue_id, int turn_index) {
  return derive_seed(seed, dialogue_id, static_cast<uint64_t>(turn_index));
}

namespace {

struct Prepared {
  AttackRecord rec;
  TokenizedUtterance tu;
  std::mt19937_64 rng;
};

Prepared prepare_turn(const AttackResources& res, const DstExample& ex, const AttackConfig& config) {
  if (!res.victim || !res.policy) throw std::invalid_argument("attack: victim and mask policy are required");
  config.validate();
  Prepared p;
  AttackRecord& r = p.rec;
  r.dialogue_id = ex.dialogue_id;
  r.turn_index = ex.turn_index;
  r.method = display_name(config.method);
  r.original_utterance = ex.turn.user_utterance;
  r.gold = ex.turn.gold_state;
  r.original_prediction = res.victim->predict(ex.history, ex.turn.user_utterance, ex.turn.system_response);
  p.tu = compute_maskable(tokenize(ex.turn.user_utterance), {&r.gold, &r.original_prediction.state}, *res.policy);
  r.original_tokens = p.tu.tokens;
  r.maskable = p.tu.maskable;
  const int l_t = static_cast<int>(p.tu.num_maskable());
  r.no_maskable = l_t == 0;
  r.budget = perturbation_budget(config.perturbation_ratio, l_t);
  p.rng.seed(turn_seed(config.seed, ex.dialogue_id, ex.turn_index));
  return p;
}

void finish(const AttackResources& res, const DstExample& ex, AttackRecord& r) {
  r.adversarial_utterance = detokenize(r.adversarial_tokens);
  r.changed = r.adversarial_tokens != r.original_tokens;
  const auto ids = res.victim->encode_input(ex.history, ex.turn.system_response, r.adversarial_utterance);
  if (res.victim_input_probe) res.victim_input_probe(ids);
  r.adversarial_prediction = res.victim->predict_ids(Matrix(), ids);
}

// Masks with the turn generator; returns false (record finalized as a no-op)
// when there is nothing to mask.
bool mask_step(Prepared& p) {
  AttackRecord& r = p.rec;
  if (r.budget == 0) {
    r.masked_tokens = r.original_tokens;
    r.adversarial_tokens = r.original_tokens;
    r.no_op = true;
    return false;
  }
  r.masked_tokens = mask_utterance(p.tu, r.budget, p.rng, &r.masked_positions);
  return true;
}

// Fills the masked utterance after `context` tokens and `prefix` rows.
void fill_step(const AttackResources& res, Prepared& p, const Matrix& prefix,
               const std::vector<std::string>& context, SelectionRule rule, int top_k, bool ban) {
  AttackRecord& r = p.rec;
  std::vector<std::string> seq = context;
  seq.insert(seq.end(), r.masked_tokens.begin(), r.masked_tokens.end());
  std::vector<bool> banned;
  if (ban) banned = slot_value_fill_ban(res.mlm->vocab(), res.victim->ontology(), *res.policy);
  r.fills = fill_mask(*res.mlm, prefix, seq, top_k, rule, &p.rng, ban ? &banned : nullptr);
  const int offset = static_cast<int>(context.size());
  for (auto& f : r.fills) f.position -= offset;
  r.adversarial_tokens.assign(seq.begin() + offset, seq.end());
  r.n_perturbed = 0;
  for (size_t i = 0; i < r.original_tokens.size(); ++i)
    r.n_perturbed += r.adversarial_tokens[i] != r.original_tokens[i];
}

std::vector<std::string> discrete_context(const DiscretePrompt& prompt, size_t utterance_len, int max_len,
                                          AttackRecord& r) {
  std::vector<std::vector<std::string>> frags;
  for (const auto& f : prompt.fragments()) frags.push_back(tokenize_words(f));
  auto total = [&] {
    size_t n = 0;
    for (const auto& f : frags) n += f.size();
    return n;
  };
  // Drop fragments from the right until prompt + [SEP] + utterance fits.
  while (!frags.empty() && total() + 1 + utterance_len > static_cast<size_t>(max_len)) {
    frags.pop_back();
    r.prompt_truncated = true;
  }
  std::vector<std::string> ctx;
  const auto texts = prompt.fragments();
  for (size_t i = 0; i < frags.size(); ++i) {
    ctx.insert(ctx.end(), frags[i].begin(), frags[i].end());
    r.prompt_text += (i ? " " : "") + texts[i];
  }
  if (!ctx.empty()) ctx.push_back(std::string(kSepToken));
  return ctx;
}

}  // namespace

AttackRecord generate_adversarial(const AttackResources& res, const DstExample& turn, const AttackConfig& config) {
  if (!is_prompt_method(config.method)) throw std::invalid_argument("generate_adversarial: not a prompt method");
  if (!res.mlm) throw std::invalid_argument("generate_adversarial: masked lm required");
  Prepared p = prepare_turn(res, turn, config);
  if (mask_step(p)) {
    const int max_len = res.mlm->config().max_len;
    const size_t len = p.rec.original_tokens.size();
    if (config.method == AttackMethod::kPromptDiscrete) {
      const auto prompt = discrete_prompt_from_state(p.rec.original_prediction.state, res.victim->ontology(), p.rng);
      const auto ctx = discrete_context(prompt, len, max_len, p.rec);
      fill_step(res, p, Matrix(), ctx, config.selection_rule, config.top_k, config.ban_slot_value_fills);
    } else {
      if (!res.prompt || !res.adapter) throw std::invalid_argument("continuous attack needs a prompt and an adapter");
      const auto want = config.method == AttackMethod::kPromptContMax ? PromptObjective::kMaximize
                                                                      : PromptObjective::kMinimize;
      if (res.prompt->objective != want)
        throw std::invalid_argument("continuous attack: prompt objective does not match the method");
      Matrix adapted = res.adapter->apply(res.prompt->matrix);
      const int sep = Vocabulary::kSep;
      Matrix prefix = vstack(adapted, res.mlm->embed(std::span<const int>(&sep, 1)));
      const int room = max_len - static_cast<int>(len) - 1;
      if (adapted.rows > room) {
        // Keep the leftmost prompt rows.
        Matrix kept(std::max(0, room), adapted.cols);
        std::copy_n(adapted.data.begin(), kept.size(), kept.data.begin());
        prefix = vstack(kept, res.mlm->embed(std::span<const int>(&sep, 1)));
        p.rec.prompt_truncated = true;
      }
      p.rec.prompt_text = "<continuous m=" + std::to_string(res.prompt->m()) + ">";
      fill_step(res, p, prefix, {}, config.selection_rule, config.top_k, config.ban_slot_value_fills);
    }
  }
  finish(res, turn, p.rec);
  return p.rec;
}

AttackRecord attack_bert_m(const AttackResources& res, const DstExample& turn, const AttackConfig& config) {
  if (!res.mlm) throw std::invalid_argument("attack_bert_m: masked lm required");
  Prepared p = prepare_turn(res, turn, config);
  if (mask_step(p))
    fill_step(res, p, Matrix(), {}, SelectionRule::kLowestOfTopK, config.top_k, config.ban_slot_value_fills);
  finish(res, turn, p.rec);
  return p.rec;
}

AttackRecord attack_sc_eda(const AttackResources& res, const DstExample& turn, const AttackConfig& config) {
  if (!res.thesaurus) throw std::invalid_argument("attack_sc_eda: thesaurus required");
  Prepared p = prepare_turn(res, turn, config);
  AttackRecord& r = p.rec;
  auto& rng = p.rng;
  struct Tok {
    std::string text;
    int orig;  // -1 for inserted tokens
    bool editable;
  };
  std::vector<Tok> toks;
  for (size_t i = 0; i < r.original_tokens.size(); ++i)
    toks.push_back({r.original_tokens[i], static_cast<int>(i), static_cast<bool>(r.maskable[i])});
  const Thesaurus& th = *res.thesaurus;
  auto synonyms = [&](const std::string& w) -> const std::vector<std::string>* {
    auto it = th.find(w);
    return it == th.end() || it->second.empty() ? nullptr : &it->second;
  };
  auto pick_index = [&](const std::vector<size_t>& v) {
    std::uniform_int_distribution<size_t> d(0, v.size() - 1);
    return v[d(rng)];
  };
  int remaining = r.budget;
  while (remaining > 0) {
    std::vector<size_t> editable, with_syn;
    for (size_t i = 0; i < toks.size(); ++i)
      if (toks[i].editable) {
        editable.push_back(i);
        if (synonyms(toks[i].text)) with_syn.push_back(i);
      }
    std::vector<std::pair<size_t, size_t>> swaps;
    if (remaining >= 2)
      for (size_t a = 0; a < editable.size(); ++a)
        for (size_t b = a + 1; b < editable.size(); ++b)
          if (toks[editable[a]].text != toks[editable[b]].text) swaps.emplace_back(editable[a], editable[b]);
    enum Op { kSyn, kIns, kSwap, kDel };
    std::vector<Op> legal;
    if (!with_syn.empty()) legal.insert(legal.end(), {kSyn, kIns});
    if (!swaps.empty()) legal.push_back(kSwap);
    if (!editable.empty() && toks.size() > 1) legal.push_back(kDel);
    if (legal.empty()) break;
    std::uniform_int_distribution<size_t> op_dist(0, legal.size() - 1);
    switch (legal[op_dist(rng)]) {
      case kSyn: {
        const size_t i = pick_index(with_syn);
        const auto& syn = *synonyms(toks[i].text);
        std::uniform_int_distribution<size_t> d(0, syn.size() - 1);
        toks[i].text = syn[d(rng)];
        toks[i].editable = false;
        r.masked_positions.push_back(toks[i].orig);
        remaining -= 1;
        r.n_perturbed += 1;
        break;
      }
      case kIns: {
        const auto& syn = *synonyms(toks[pick_index(with_syn)].text);
        std::uniform_int_distribution<size_t> d(0, syn.size() - 1);
        std::uniform_int_distribution<size_t> at(0, toks.size());
        const std::string w = syn[d(rng)];
        toks.insert(toks.begin() + static_cast<long>(at(rng)), Tok{w, -1, false});
        remaining -= 1;
        r.n_perturbed += 1;
        break;
      }
      case kSwap: {
        std::uniform_int_distribution<size_t> d(0, swaps.size() - 1);
        const auto [a, b] = swaps[d(rng)];
        std::swap(toks[a].text, toks[b].text);
        toks[a].editable = toks[b].editable = false;
        r.masked_positions.push_back(toks[a].orig);
        r.masked_positions.push_back(toks[b].orig);
        remaining -= 2;
        r.n_perturbed += 2;
        break;
      }
      case kDel: {
        const size_t i = pick_index(editable);
        r.masked_positions.push_back(toks[i].orig);
        toks.erase(toks.begin() + static_cast<long>(i));
        remaining -= 1;
        r.n_perturbed += 1;
        break;
      }
    }
  }
  std::sort(r.masked_positions.begin(), r.masked_positions.end());
  r.masked_tokens = r.original_tokens;
  for (const auto& t : toks) r.adversarial_tokens.push_back(t.text);
  r.no_op = r.n_perturbed == 0;
  finish(res, turn, r);
  return r;
}

AttackRecord attack_sd(const AttackResources& res, const DstExample& turn, const AttackConfig& config) {
  Prepared p = prepare_turn(res, turn, config);
  AttackRecord& r = p.rec;
  auto& rng = p.rng;
  std::vector<std::string> toks = r.original_tokens;
  const Ontology& ontology = res.victim->ontology();

  // Gold values present verbatim, as (slot, token span start, value tokens).
  struct Found {
    std::string slot;
    std::vector<std::string> value;
  };
  std::vector<Found> found;
  for (const auto& [slot, value] : r.gold.assignments()) {
    const auto vt = tokenize_words(value);
    if (vt.empty() || ontology.values(slot).size() < 2) continue;
    if (std::search(toks.begin(), toks.end(), vt.begin(), vt.end()) != toks.end()) found.push_back({slot, vt});
  }
  enum Op { kPause, kRepeat, kRestart, kRepair };
  std::vector<Op> legal = {kPause, kRepeat, kRestart};
  if (!found.empty()) legal.push_back(kRepair);
  std::bernoulli_distribution half(0.5);
  std::vector<bool> use(4, false);
  for (Op op : legal) use[op] = half(rng);
  if (std::none_of(use.begin(), use.end(), [](bool b) { return b; })) {
    std::uniform_int_distribution<size_t> d(0, legal.size() - 1);
    use[legal[d(rng)]] = true;
  }
  int inserted = 0;
  if (use[kRepair]) {
    std::uniform_int_distribution<size_t> d(0, found.size() - 1);
    const Found& f = found[d(rng)];
    std::vector<std::string> others;
    const std::string original = detokenize(f.value);
    for (const auto& v : ontology.values(f.slot))
      if (v != original && tokenize_words(v) != f.value) others.push_back(v);
    std::uniform_int_distribution<size_t> o(0, others.size() - 1);
    std::vector<std::string> ins = tokenize_words(others[o(rng)]);
    for (const char* w : {"sorry", ",", "i", "mean"}) ins.push_back(w);
    const auto at = std::search(toks.begin(), toks.end(), f.value.begin(), f.value.end());
    inserted += static_cast<int>(ins.size());
    toks.insert(at, ins.begin(), ins.end());
  }
  if (use[kRepeat]) {
    std::vector<size_t> words;
    for (size_t i = 0; i < toks.size(); ++i)
      if (!is_punctuation(toks[i])) words.push_back(i);
    if (!words.empty()) {
      std::uniform_int_distribution<size_t> d(0, words.size() - 1);
      const size_t i = words[d(rng)];
      toks.insert(toks.begin() + static_cast<long>(i) + 1, toks[i]);
      inserted += 1;
    }
  }
  if (use[kPause]) {
    std::uniform_int_distribution<size_t> d(0, toks.size());
    toks.insert(toks.begin() + static_cast<long>(d(rng)), "um");
    inserted += 1;
  }
  if (use[kRestart]) {
    toks.insert(toks.begin(), {"i", "just"});
    inserted += 2;
  }
  r.masked_tokens = r.original_tokens;
  r.adversarial_tokens = std::move(toks);
  r.n_perturbed = inserted;
  r.introduces_new_slot_values = true;
  finish(res, turn, r);
  return r;
}

AttackRecord attack_turn(const AttackResources& res, const DstExample& turn, const AttackConfig& config) {
  switch (config.method) {
    case AttackMethod::kPromptDiscrete:
    case AttackMethod::kPromptContMax:
    case AttackMethod::kPromptContMin:
      return generate_adversarial(res, turn, config);
    case AttackMethod::kBertM:
      return attack_bert_m(res, turn, config);
    case AttackMethod::kScEda:
      return attack_sc_eda(res, turn, config);
    case AttackMethod::kSd:
      return attack_sd(res, turn, config);
  }
  throw std::logic_error("unhandled attack method");
}

std::vector<AttackRecord> run_attack(const AttackResources& res, const std::vector<DstExample>& turns,
                                     const AttackConfig& config) {
  config.validate();
  const int n = static_cast<int>(turns.size());
  std::vector<AttackRecord> out(static_cast<size_t>(n));
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 4)
  for (int i = 0; i < n; ++i) {
    try {
      out[i] = attack_turn(res, turns[i], config);
    } catch (...) {
#pragma omp critical(run_attack_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

AuditResult audit_record(const AttackRecord& r) {
  AuditResult a;
  const bool insertions_ok = r.method == display_name(AttackMethod::kSd) ||
                             r.method == display_name(AttackMethod::kScEda);
  std::vector<std::string> prot;
  for (size_t i = 0; i < r.original_tokens.size(); ++i)
    if (!r.maskable[i]) prot.push_back(r.original_tokens[i]);
  if (!insertions_ok) {
    if (r.adversarial_tokens.size() != r.original_tokens.size()) {
      a.protected_preserved = false;
      a.detail = "length changed";
    } else {
      for (size_t i = 0; i < r.original_tokens.size(); ++i)
        if (!r.maskable[i] && r.adversarial_tokens[i] != r.original_tokens[i]) {
          a.protected_preserved = false;
          a.detail = "protected token '" + r.original_tokens[i] + "' at " + std::to_string(i) + " changed";
          break;
        }
    }
  } else {
    // Protected tokens must survive as an ordered subsequence.
    size_t k = 0;
    for (const auto& t : r.adversarial_tokens)
      if (k < prot.size() && t == prot[k]) ++k;
    if (k != prot.size()) {
      a.protected_preserved = false;
      a.detail = "protected token '" + prot[k] + "' missing";
    }
  }
  if (r.method != display_name(AttackMethod::kSd) && r.n_perturbed > r.budget) {
    a.within_budget = false;
    a.detail += (a.detail.empty() ? "" : "; ") + std::string("n_perturbed exceeds budget");
  }
  return a;
}

nlohmann::json adversarial_dataset_json(const std::vector<Dialogue>& dialogues,
                                        const std::vector<AttackRecord>& records) {
  std::map<std::pair<std::string, int>, const AttackRecord*> by_turn;
  for (const auto& r : records) by_turn[{r.dialogue_id, r.turn_index}] = &r;
  nlohmann::json j = dialogues_to_json(dialogues);
  for (auto& d : j.at("dialogues")) {
    const std::string id = d.at("dialogue_id").get<std::string>();
    auto& turns = d.at("turns");
    for (size_t t = 0; t < turns.size(); ++t) {
      auto it = by_turn.find({id, static_cast<int>(t)});
      if (it == by_turn.end()) continue;
      turns[t]["user"] = it->second->adversarial_utterance;
      turns[t]["attack"] = it->second->attack_json();
    }
  }
  return j;
}

int token_edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace dstprobe
