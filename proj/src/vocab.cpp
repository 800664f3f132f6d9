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

#include "dstprobe/vocab.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace dstprobe {
namespace {
const std::vector<std::string> kSpecials = {"[PAD]", "[UNK]", "[MASK]", "[SEP]"};
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  tokens_ = kSpecials;
  for (const auto& w : words)
    if (std::find(kSpecials.begin(), kSpecials.end(), w) == kSpecials.end()) tokens_.push_back(w);
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw std::invalid_argument("duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

Vocabulary Vocabulary::build(const std::vector<Dialogue>& train, const Ontology& ontology) {
  std::set<std::string> words;
  auto add = [&](const std::string& text) {
    for (auto& t : tokenize_words(text)) words.insert(std::move(t));
  };
  for (const auto& d : train)
    for (const auto& t : d.turns) {
      add(t.system_response);
      add(t.user_utterance);
    }
  for (const auto& [slot, values] : ontology.slots()) {
    add(slot);
    for (const auto& v : values) add(v);
  }
  add("belief states : = ;");
  return Vocabulary(std::vector<std::string>(words.begin(), words.end()));
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  std::vector<std::string> all = j.get<std::vector<std::string>>();
  if (all.size() < kSpecials.size() || !std::equal(kSpecials.begin(), kSpecials.end(), all.begin()))
    throw std::invalid_argument("vocabulary must start with the special tokens");
  return Vocabulary(std::vector<std::string>(all.begin() + kNumSpecial, all.end()));
}

}  // namespace dstprobe
