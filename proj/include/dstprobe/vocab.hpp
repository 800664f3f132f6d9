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

#ifndef DSTPROBE_VOCAB_HPP_
#define DSTPROBE_VOCAB_HPP_

#include <string>
#include <unordered_map>
#include <vector>

#include "dstprobe/dialogue.hpp"
#include "json.hpp"

namespace dstprobe {

// Word-level vocabulary shared by the language model and the tracker.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kMask = 2;
  static constexpr int kSep = 3;
  static constexpr int kNumSpecial = 4;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& words);

  // Specials, then every token of the training dialogues, the ontology (slot
  // names and values) and the discrete prompt template, in sorted order.
  static Vocabulary build(const std::vector<Dialogue>& train, const Ontology& ontology);

  int id(const std::string& token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<size_t>(id)); }
  int size() const { return static_cast<int>(tokens_.size()); }
  bool is_special(int id) const { return id < kNumSpecial; }
  std::vector<int> encode(const std::vector<std::string>& tokens) const;

  nlohmann::json to_json() const { return tokens_; }
  static Vocabulary from_json(const nlohmann::json& j);
  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace dstprobe

#endif  // DSTPROBE_VOCAB_HPP_
