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

// Dialogue data model: ontology, belief states, turns, tokenization and the
// policy deciding which tokens an attack may touch.

#ifndef DSTPROBE_DIALOGUE_HPP_
#define DSTPROBE_DIALOGUE_HPP_

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace dstprobe {

inline constexpr std::string_view kNoneValue = "none";

// Slot-value dictionary. Slot names have the form "domain-slot label".
class Ontology {
 public:
  Ontology() = default;
  // Validates invariants; throws SchemaError.
  Ontology(std::set<std::string> domains, std::map<std::string, std::vector<std::string>> slots);

  static Ontology from_json(const nlohmann::json& j);
  static Ontology load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  const std::set<std::string>& domains() const { return domains_; }
  const std::map<std::string, std::vector<std::string>>& slots() const { return slots_; }
  // Slot names in canonical (sorted) order; this order indexes DST heads.
  const std::vector<std::string>& slot_names() const { return slot_names_; }
  size_t num_slots() const { return slot_names_.size(); }

  bool has_slot(std::string_view slot) const;
  const std::vector<std::string>& values(std::string_view slot) const;
  // Index of `value` in the slot's candidate list, or -1.
  int value_index(std::string_view slot, std::string_view value) const;
  static std::string domain_of(std::string_view slot);

  bool operator==(const Ontology&) const = default;

 private:
  std::set<std::string> domains_;
  std::map<std::string, std::vector<std::string>> slots_;
  std::vector<std::string> slot_names_;
};

// Slot -> value map. Slots mapped to "none" are not stored, so two states are
// equal exactly when they agree on every slot.
class BeliefState {
 public:
  BeliefState() = default;
  BeliefState(std::initializer_list<std::pair<const std::string, std::string>> init);

  void set(const std::string& slot, const std::string& value);
  const std::string& get(const std::string& slot) const;
  const std::map<std::string, std::string>& assignments() const { return values_; }
  bool empty() const { return values_.empty(); }

  // Throws SchemaError if a key is not an ontology slot or a value is not a
  // candidate of its slot.
  void validate(const Ontology& ontology) const;

  nlohmann::json to_json() const;
  static BeliefState from_json(const nlohmann::json& j, const Ontology* ontology,
                               const std::string& field = "belief_state");

  bool operator==(const BeliefState&) const = default;

 private:
  std::map<std::string, std::string> values_;
};

struct Turn {
  std::string system_response;
  std::string user_utterance;
  BeliefState gold_state;  // cumulative up to and including this turn

  bool operator==(const Turn&) const = default;
};

struct Dialogue {
  std::string dialogue_id;
  std::vector<Turn> turns;

  bool operator==(const Dialogue&) const = default;
};

struct TokenizedUtterance {
  std::vector<std::string> tokens;
  std::vector<bool> maskable;
  std::string source;

  size_t size() const { return tokens.size(); }
  size_t num_maskable() const;
};

// Lower-cased whitespace and punctuation segmentation; each ASCII punctuation
// character is its own token. Throws EmptyInputError on blank input.
TokenizedUtterance tokenize(std::string_view utterance);
std::vector<std::string> tokenize_words(std::string_view text);
std::string detokenize(const std::vector<std::string>& tokens);
bool is_punctuation(std::string_view token);

// One token per line; blank lines and '#' comments ignored.
std::set<std::string> load_word_list(const std::filesystem::path& path);

// Tokens an attack must never alter: stopwords and slot-related words (every
// token of every slot name plus the domain lexicon). Value protection is
// per-turn and passed separately.
struct MaskPolicy {
  std::set<std::string> stopwords;
  std::set<std::string> slot_words;

  static MaskPolicy build(const Ontology& ontology, std::set<std::string> stopwords,
                          const std::set<std::string>& lexicon);
  // Loads data/stopwords.txt and data/slot_lexicon.txt from `data_dir`.
  static MaskPolicy load_default(const Ontology& ontology,
                                 const std::filesystem::path& data_dir);
};

// Marks tokens maskable unless they are punctuation, stopwords, slot-related
// words, or tokens of any non-"none" value in `states`.
TokenizedUtterance compute_maskable(const TokenizedUtterance& tu,
                                    const std::vector<const BeliefState*>& states,
                                    const MaskPolicy& policy);
TokenizedUtterance compute_maskable(const TokenizedUtterance& tu, const BeliefState& state,
                                    const MaskPolicy& policy);

// Dataset JSON: {"dialogues":[{"dialogue_id","turns":[{"system","user","belief_state"}]}]}.
nlohmann::json dialogues_to_json(const std::vector<Dialogue>& dialogues);
std::vector<Dialogue> dialogues_from_json(const nlohmann::json& j, const Ontology& ontology);
void save_dataset(const std::vector<Dialogue>& dialogues, const std::filesystem::path& path);
std::vector<Dialogue> load_dataset(const std::filesystem::path& path, const Ontology& ontology);

std::filesystem::path default_data_dir();

}  // namespace dstprobe

#endif  // DSTPROBE_DIALOGUE_HPP_
