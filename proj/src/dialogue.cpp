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

#include "dstprobe/dialogue.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dstprobe/errors.hpp"

namespace dstprobe {

using nlohmann::json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

const json& require(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key))
    throw SchemaError(path + "." + key, "missing required field '" + path + "." + key + "'");
  return j.at(key);
}

std::string require_string(const json& j, const std::string& key, const std::string& path) {
  const json& v = require(j, key, path);
  if (!v.is_string())
    throw SchemaError(path + "." + key, "field '" + path + "." + key + "' must be a string");
  return v.get<std::string>();
}

}  // namespace

Ontology::Ontology(std::set<std::string> domains,
                   std::map<std::string, std::vector<std::string>> slots)
    : domains_(std::move(domains)), slots_(std::move(slots)) {
  for (const auto& [name, values] : slots_) {
    const auto dash = name.find('-');
    if (dash == std::string::npos || name.find('-', dash + 1) != std::string::npos)
      throw SchemaError("slots." + name, "slot name '" + name + "' must contain exactly one '-'");
    if (!domains_.contains(name.substr(0, dash)))
      throw SchemaError("slots." + name, "slot '" + name + "' has an unknown domain");
    if (values.size() < 2)
      throw SchemaError("slots." + name, "slot '" + name + "' needs at least 2 values");
    std::set<std::string> seen;
    for (const auto& v : values) {
      if (v == kNoneValue)
        throw SchemaError("slots." + name, "reserved value 'none' listed for slot '" + name + "'");
      if (!seen.insert(v).second)
        throw SchemaError("slots." + name, "duplicate value '" + v + "' in slot '" + name + "'");
    }
    slot_names_.push_back(name);
  }
}

Ontology Ontology::from_json(const json& j) {
  const json& d = require(j, "domains", "ontology");
  const json& s = require(j, "slots", "ontology");
  if (!d.is_array()) throw SchemaError("ontology.domains", "'domains' must be an array");
  if (!s.is_object()) throw SchemaError("ontology.slots", "'slots' must be an object");
  std::set<std::string> domains;
  for (const auto& x : d) domains.insert(x.get<std::string>());
  std::map<std::string, std::vector<std::string>> slots;
  for (const auto& [k, v] : s.items()) {
    if (!v.is_array()) throw SchemaError("ontology.slots." + k, "slot values must be an array");
    slots[k] = v.get<std::vector<std::string>>();
  }
  return Ontology(std::move(domains), std::move(slots));
}

Ontology Ontology::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("ontology", "cannot open ontology file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw SchemaError("ontology", std::string("ontology is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

json Ontology::to_json() const {
  json j;
  j["domains"] = std::vector<std::string>(domains_.begin(), domains_.end());
  j["slots"] = slots_;
  return j;
}

bool Ontology::has_slot(std::string_view slot) const {
  return slots_.find(std::string(slot)) != slots_.end();
}

const std::vector<std::string>& Ontology::values(std::string_view slot) const {
  auto it = slots_.find(std::string(slot));
  if (it == slots_.end()) throw std::out_of_range("unknown slot " + std::string(slot));
  return it->second;
}

int Ontology::value_index(std::string_view slot, std::string_view value) const {
  const auto& vals = values(slot);
  auto it = std::find(vals.begin(), vals.end(), value);
  return it == vals.end() ? -1 : static_cast<int>(it - vals.begin());
}

std::string Ontology::domain_of(std::string_view slot) {
  return std::string(slot.substr(0, slot.find('-')));
}

BeliefState::BeliefState(std::initializer_list<std::pair<const std::string, std::string>> init) {
  for (const auto& [k, v] : init) set(k, v);
}

void BeliefState::set(const std::string& slot, const std::string& value) {
  if (value == kNoneValue || value.empty())
    values_.erase(slot);
  else
    values_[slot] = value;
}

const std::string& BeliefState::get(const std::string& slot) const {
  static const std::string none(kNoneValue);
  auto it = values_.find(slot);
  return it == values_.end() ? none : it->second;
}

void BeliefState::validate(const Ontology& ontology) const {
  for (const auto& [slot, value] : values_) {
    if (!ontology.has_slot(slot))
      throw SchemaError("belief_state." + slot, "unknown slot name '" + slot + "'");
    const std::string norm = lower(trim(value));
    if (ontology.value_index(slot, norm) < 0)
      throw SchemaError("belief_state." + slot,
                        "value '" + value + "' is not a candidate of slot '" + slot + "'");
  }
}

json BeliefState::to_json() const { return json(values_); }

BeliefState BeliefState::from_json(const json& j, const Ontology* ontology, const std::string& field) {
  if (!j.is_object()) throw SchemaError(field, "'" + field + "' must be an object");
  BeliefState s;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) throw SchemaError(field + "." + k, "slot values must be strings");
    s.set(k, lower(trim(v.get<std::string>())));
  }
  if (ontology) {
    for (const auto& [k, v] : j.items()) {
      if (!ontology->has_slot(k))
        throw SchemaError(field + "." + k, "unknown slot name '" + k + "' in '" + field + "'");
    }
    s.validate(*ontology);
  }
  return s;
}

size_t TokenizedUtterance::num_maskable() const {
  return static_cast<size_t>(std::count(maskable.begin(), maskable.end(), true));
}

bool is_punctuation(std::string_view token) {
  return token.size() == 1 && std::ispunct(static_cast<unsigned char>(token[0]));
}

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) tokens.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      tokens.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return tokens;
}

TokenizedUtterance tokenize(std::string_view utterance) {
  TokenizedUtterance tu;
  tu.tokens = tokenize_words(utterance);
  if (tu.tokens.empty()) throw EmptyInputError("tokenize: empty utterance");
  tu.maskable.assign(tu.tokens.size(), true);
  tu.source = std::string(utterance);
  return tu;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::set<std::string> load_word_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError(path.filename().string(), "cannot open word list " + path.string());
  std::set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = lower(trim(line));
    if (t.empty() || t[0] == '#') continue;
    words.insert(t);
  }
  return words;
}

MaskPolicy MaskPolicy::build(const Ontology& ontology, std::set<std::string> stopwords,
                             const std::set<std::string>& lexicon) {
  MaskPolicy p;
  p.stopwords = std::move(stopwords);
  for (const auto& slot : ontology.slot_names())
    for (auto& t : tokenize_words(slot)) p.slot_words.insert(std::move(t));
  for (const auto& d : ontology.domains())
    for (auto& t : tokenize_words(d)) p.slot_words.insert(std::move(t));
  for (const auto& w : lexicon)
    for (auto& t : tokenize_words(w)) p.slot_words.insert(std::move(t));
  return p;
}

MaskPolicy MaskPolicy::load_default(const Ontology& ontology, const std::filesystem::path& data_dir) {
  return build(ontology, load_word_list(data_dir / "stopwords.txt"),
               load_word_list(data_dir / "slot_lexicon.txt"));
}

TokenizedUtterance compute_maskable(const TokenizedUtterance& tu,
                                    const std::vector<const BeliefState*>& states,
                                    const MaskPolicy& policy) {
  std::set<std::string> value_tokens;
  for (const BeliefState* s : states) {
    if (!s) continue;
    for (const auto& [slot, value] : s->assignments())
      for (auto& t : tokenize_words(value)) value_tokens.insert(std::move(t));
  }
  TokenizedUtterance out = tu;
  out.maskable.assign(tu.tokens.size(), true);
  for (size_t i = 0; i < tu.tokens.size(); ++i) {
    const std::string& t = tu.tokens[i];
    if (is_punctuation(t) || policy.stopwords.contains(t) || policy.slot_words.contains(t) ||
        value_tokens.contains(t))
      out.maskable[i] = false;
  }
  return out;
}

TokenizedUtterance compute_maskable(const TokenizedUtterance& tu, const BeliefState& state,
                                    const MaskPolicy& policy) {
  return compute_maskable(tu, std::vector<const BeliefState*>{&state}, policy);
}

json dialogues_to_json(const std::vector<Dialogue>& dialogues) {
  json arr = json::array();
  for (const auto& d : dialogues) {
    json turns = json::array();
    for (const auto& t : d.turns) {
      turns.push_back(json{{"system", t.system_response},
                           {"user", t.user_utterance},
                           {"belief_state", t.gold_state.to_json()}});
    }
    arr.push_back(json{{"dialogue_id", d.dialogue_id}, {"turns", std::move(turns)}});
  }
  return json{{"dialogues", std::move(arr)}};
}

std::vector<Dialogue> dialogues_from_json(const json& j, const Ontology& ontology) {
  const json& arr = require(j, "dialogues", "dataset");
  if (!arr.is_array()) throw SchemaError("dataset.dialogues", "'dialogues' must be an array");
  std::vector<Dialogue> out;
  std::set<std::string> ids;
  for (size_t i = 0; i < arr.size(); ++i) {
    const std::string path = "dialogues[" + std::to_string(i) + "]";
    Dialogue d;
    d.dialogue_id = require_string(arr[i], "dialogue_id", path);
    if (!ids.insert(d.dialogue_id).second)
      throw SchemaError(path + ".dialogue_id", "duplicate dialogue_id '" + d.dialogue_id + "'");
    const json& turns = require(arr[i], "turns", path);
    if (!turns.is_array() || turns.empty())
      throw SchemaError(path + ".turns", "'turns' must be a non-empty array");
    for (size_t t = 0; t < turns.size(); ++t) {
      const std::string tpath = path + ".turns[" + std::to_string(t) + "]";
      Turn turn;
      turn.system_response = require_string(turns[t], "system", tpath);
      turn.user_utterance = require_string(turns[t], "user", tpath);
      if (trim(turn.user_utterance).empty())
        throw SchemaError(tpath + ".user", "user utterance must be non-empty");
      turn.gold_state = BeliefState::from_json(require(turns[t], "belief_state", tpath), &ontology,
                                               tpath + ".belief_state");
      d.turns.push_back(std::move(turn));
    }
    out.push_back(std::move(d));
  }
  return out;
}

void save_dataset(const std::vector<Dialogue>& dialogues, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  out << dialogues_to_json(dialogues).dump(1) << '\n';
}

std::vector<Dialogue> load_dataset(const std::filesystem::path& path, const Ontology& ontology) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("dataset", "cannot open dataset " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw SchemaError("dataset", std::string("dataset is not valid JSON: ") + e.what());
  }
  return dialogues_from_json(j, ontology);
}

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("DSTPROBE_DATA_DIR"); env && *env) return env;
  return DSTPROBE_DATA_DIR;
}

}  // namespace dstprobe
