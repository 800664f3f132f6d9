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

#ifndef DSTPROBE_CORPUS_HPP_
#define DSTPROBE_CORPUS_HPP_

#include <cstdint>
#include <vector>

#include "dstprobe/dialogue.hpp"

namespace dstprobe {

struct CorpusSplits {
  std::vector<Dialogue> train;
  std::vector<Dialogue> validation;
  std::vector<Dialogue> test;

  std::vector<Dialogue> all() const;
  bool operator==(const CorpusSplits&) const = default;
};

// Templated task-oriented dialogues whose gold states are exact by
// construction: every value a user mentions is inserted verbatim and no other
// candidate value ever appears in a user utterance. Dialogues have 1-3 turns;
// states are cumulative. The 80/10/10 split is a seeded shuffle, so the whole
// result is a pure function of (ontology, n_dialogues, seed).
//
// Throws std::invalid_argument if n_dialogues < 1 and SchemaError if the
// ontology has no slots to template.
CorpusSplits generate_synthetic_corpus(const Ontology& ontology, int n_dialogues, uint64_t seed);

// Number of template families the generator can draw from for `ontology`.
int num_template_families(const Ontology& ontology);

}  // namespace dstprobe

#endif  // DSTPROBE_CORPUS_HPP_
