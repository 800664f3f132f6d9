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

#include "dstprobe/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dstprobe/errors.hpp"

namespace dstprobe {
namespace {

using Rng = std::mt19937_64;

// Interchangeable filler words. None of them is a stopword, a slot word or a
// candidate value, so they are exactly the tokens an attack may rewrite.
const std::map<std::string, std::vector<std::string>>& filler_classes() {
  static const std::map<std::string, std::vector<std::string>> kFillers = {
      {"open", {"hi", "hello", "hey", "well", "okay", "alright", "right", "sure", "hmm", "great"}},
      {"close", {"please", "thanks", "cheers", "quickly", "today", "tonight"}},
      {"seek", {"looking", "searching", "hunting", "asking", "hoping", "scouting", "shopping", "fishing"}},
      {"want", {"want", "need", "prefer", "require", "seek", "fancy", "desire", "crave"}},
      {"find", {"find", "locate", "recommend", "suggest", "get", "show", "pick", "choose"}},
      {"adj", {"nice", "good", "lovely", "decent", "great", "pleasant", "quiet", "popular", "cosy",
               "friendly", "charming", "comfortable", "clean", "fine", "cool", "solid", "proper",
               "reliable", "excellent", "wonderful"}},
      {"place", {"place", "spot", "venue", "option", "choice", "location"}},
      {"eat", {"eat", "dine", "try", "enjoy", "sample", "grab", "taste"}},
      {"travel", {"travelling", "going", "heading", "commuting", "journeying", "riding", "returning", "moving"}},
      {"leaving", {"leaving", "departing", "starting", "coming", "travelling"}},
      {"book", {"book", "order", "arrange", "call", "reserve", "schedule", "organise", "get"}},
      {"visit", {"visit", "see", "explore", "tour", "discover", "enjoy"}},
      {"sys_hi", {"hello", "hi", "welcome", "greetings", "hey"}},
      {"ack", {"done", "great", "certainly", "perfect", "excellent", "okay"}},
  };
  return kFillers;
}

// First-mention user templates per domain. {v:label} inserts a value of slot
// "<domain>-<label>"; {name?} is an optional filler.
const std::map<std::string, std::vector<std::string>>& first_mention_templates() {
  static const std::map<std::string, std::vector<std::string>> kTemplates = {
      {"restaurant",
       {"{open?} i am {seek} for a {adj} {v:price range} restaurant in the {v:area} .",
        "i {want} a {v:price range} {v:food} restaurant {close?} .",
        "{open?} can you {find} me a {adj} {place} to {eat} {v:food} food ?",
        "i would like a {adj} restaurant in the {v:area} that serves {v:food} food .",
        "{open?} i {want} a {adj} restaurant , {v:price range} if possible {close?} ."}},
      {"hotel",
       {"{open?} i am {seek} for a {adj} hotel in the {v:area} .",
        "i {want} a {v:price range} hotel with {v:stars} stars {close?} .",
        "can you {find} me a {v:stars} star hotel in the {v:area} ?",
        "{open?} i {want} a {adj} {v:price range} hotel {close?} ."}},
      {"train",
       {"i {want} a train from {v:departure} to {v:destination} on {v:day} .",
        "{open?} i am {travel} to {v:destination} on {v:day} by train .",
        "{open?} i will be {leaving} from {v:departure} by train on {v:day} .",
        "can you {find} me a {adj} train to {v:destination} {close?} ?"}},
      {"taxi",
       {"i {want} a taxi to the {v:destination} at {v:leave at} .",
        "{open?} please {book} a taxi , i want to leave at {v:leave at} .",
        "can you {book} me a {adj} taxi to the {v:destination} ?"}},
      {"attraction",
       {"{open?} i am {seek} for a {v:type} to {visit} in the {v:area} .",
        "are there any {adj} {v:type} attractions {close?} ?",
        "{open?} i {want} to {visit} a {adj} attraction in the {v:area} ."}},
  };
  return kTemplates;
}

// Follow-up templates keyed by slot label; the domain comes from the
// dialogue history.
const std::map<std::string, std::vector<std::string>>& continuation_templates() {
  static const std::map<std::string, std::vector<std::string>> kTemplates = {
      {"price range",
       {"{open?} i {want} something {v} {close?} .", "{open?} make it {v} , {close} ."}},
      {"area", {"{open?} it should be in the {v} {close?} .", "{open?} the {v} would be {adj} ."}},
      {"food", {"{open?} i would like {v} food {close?} .", "{open?} {v} food sounds {adj} ."}},
      {"stars", {"{open?} it should have {v} stars .", "{v} stars would be {adj} {close?} ."}},
      {"day", {"{open?} i am {travel} on {v} .", "{open?} {v} would be {adj} ."}},
      {"departure", {"{open?} i will be {leaving} from {v} ."}},
      {"destination", {"{open?} i am {travel} to the {v} .", "{open?} i am {travel} to {v} {close?} ."}},
      {"leave at", {"{open?} i want to leave at {v} {close?} ."}},
      {"type", {"{open?} i want to {visit} a {v} .", "{open?} a {v} would be {adj} ."}},
  };
  return kTemplates;
}

std::string label_of(const std::string& slot) { return slot.substr(slot.find('-') + 1); }

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  std::uniform_int_distribution<size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

bool coin(Rng& rng, double p) {
  std::bernoulli_distribution d(p);
  return d(rng);
}

struct Utterance {
  std::string text;
  std::vector<std::pair<std::string, std::string>> values;  // slot, value
};

class TemplateFiller {
 public:
  TemplateFiller(const Ontology& ontology, Rng& rng) : ontology_(ontology), rng_(rng) {}

  // Expands `pattern` for `domain`. `cont_slot` resolves bare {v}.
  Utterance expand(const std::string& pattern, const std::string& domain,
                   const std::string& cont_slot, const std::string& forced_value = "") {
    Utterance u;
    std::vector<std::string> out;
    std::istringstream in(pattern);
    std::string tok;
    while (in >> tok) {
      if (tok.front() != '{') {
        out.push_back(tok);
        continue;
      }
      // Placeholders may contain spaces ("{v:price range}").
      while (tok.back() != '}') {
        std::string more;
        if (!(in >> more)) throw std::logic_error("unterminated placeholder in " + pattern);
        tok += " " + more;
      }
      std::string name = tok.substr(1, tok.size() - 2);
      if (name == "v" || name.rfind("v:", 0) == 0) {
        const std::string slot = name == "v" ? cont_slot : domain + "-" + name.substr(2);
        std::string value = forced_value;
        if (value.empty()) value = fresh_value(slot, u);
        u.values.emplace_back(slot, value);
        out.push_back(value);
        continue;
      }
      const bool optional = name.back() == '?';
      if (optional) name.pop_back();
      if (optional && coin(rng_, 0.5)) continue;
      out.push_back(pick(filler_classes().at(name), rng_));
    }
    std::ostringstream s;
    for (size_t i = 0; i < out.size(); ++i) s << (i ? " " : "") << out[i];
    u.text = s.str();
    return u;
  }

 private:
  // Values within one utterance are kept distinct ("from ely to ely" never
  // appears).
  std::string fresh_value(const std::string& slot, const Utterance& u) {
    const auto& vals = ontology_.values(slot);
    for (int attempt = 0; attempt < 16; ++attempt) {
      const std::string& v = pick(vals, rng_);
      bool clash = false;
      for (const auto& [s, x] : u.values) clash |= (x == v);
      if (!clash) return v;
    }
    return pick(vals, rng_);
  }

  const Ontology& ontology_;
  Rng& rng_;
};

bool template_usable(const std::string& pattern, const std::string& domain, const Ontology& ontology) {
  size_t pos = 0;
  while ((pos = pattern.find("{v:", pos)) != std::string::npos) {
    const size_t end = pattern.find('}', pos);
    if (!ontology.has_slot(domain + "-" + pattern.substr(pos + 3, end - pos - 3))) return false;
    pos = end;
  }
  return true;
}

struct DomainTemplates {
  std::vector<std::string> first;  // usable first-mention patterns
};

std::map<std::string, DomainTemplates> usable_templates(const Ontology& ontology) {
  std::map<std::string, DomainTemplates> out;
  for (const auto& slot : ontology.slot_names()) out[Ontology::domain_of(slot)];
  for (auto& [domain, dt] : out) {
    auto it = first_mention_templates().find(domain);
    if (it != first_mention_templates().end())
      for (const auto& p : it->second)
        if (template_usable(p, domain, ontology)) dt.first.push_back(p);
    // Generic fallback so any valid ontology can be templated.
    for (const auto& slot : ontology.slot_names()) {
      if (Ontology::domain_of(slot) != domain) continue;
      bool covered = false;
      for (const auto& p : dt.first) covered |= p.find("{v:" + label_of(slot) + "}") != std::string::npos;
      if (!covered) dt.first.push_back("{open?} i {want} a " + domain + " with the " + label_of(slot) +
                                       " {v:" + label_of(slot) + "} {close?} .");
    }
  }
  return out;
}

std::vector<std::string> continuation_for(const std::string& slot) {
  auto it = continuation_templates().find(label_of(slot));
  if (it != continuation_templates().end()) return it->second;
  return {"{open?} for the " + Ontology::domain_of(slot) + " , the " + label_of(slot) + " should be {v} ."};
}

}  // namespace

std::vector<Dialogue> CorpusSplits::all() const {
  std::vector<Dialogue> out = train;
  out.insert(out.end(), validation.begin(), validation.end());
  out.insert(out.end(), test.begin(), test.end());
  return out;
}

int num_template_families(const Ontology& ontology) {
  int n = 0;
  for (const auto& [d, dt] : usable_templates(ontology)) n += static_cast<int>(dt.first.size());
  std::set<std::string> labels;
  for (const auto& slot : ontology.slot_names()) labels.insert(label_of(slot));
  for (const auto& l : labels) n += static_cast<int>(continuation_for(std::string("x-") + l).size());
  return n;
}

CorpusSplits generate_synthetic_corpus(const Ontology& ontology, int n_dialogues, uint64_t seed) {
  if (n_dialogues < 1) throw std::invalid_argument("generate_synthetic_corpus: n_dialogues must be >= 1");
  if (ontology.num_slots() == 0) throw SchemaError("ontology.slots", "ontology has no slots to template");
  const auto templates = usable_templates(ontology);
  std::vector<std::string> domains;
  for (const auto& [d, dt] : templates)
    if (!dt.first.empty()) domains.push_back(d);
  if (domains.empty()) throw SchemaError("ontology.slots", "no template family fits the ontology");

  static const std::vector<std::string> kGreetings = {
      "{sys_hi} , how can i help you ?", "{sys_hi} , what can i do for you today ?",
      "{sys_hi} , what are you looking for ?"};
  static const std::vector<std::string> kAcks = {
      "{ack} , i have booked that for you . anything else ?",
      "{ack} , your DOMAIN is reserved . can i help with anything else ?",
      "{ack} . is there anything else you need ?"};

  Rng rng(seed);
  TemplateFiller filler(ontology, rng);
  std::vector<Dialogue> dialogues;
  dialogues.reserve(n_dialogues);

  for (int di = 0; di < n_dialogues; ++di) {
    Dialogue dlg;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "syn-%05d", di);
    dlg.dialogue_id = idbuf;
    std::uniform_int_distribution<int> nturns_dist(1, 3);
    const int n_turns = nturns_dist(rng);
    BeliefState state;
    std::string domain;
    std::set<std::string> used_domains;

    for (int t = 0; t < n_turns; ++t) {
      // Candidate follow-up slots in the current domain.
      std::vector<std::string> open_slots;
      if (!domain.empty())
        for (const auto& slot : ontology.slot_names())
          if (Ontology::domain_of(slot) == domain && state.get(slot) == kNoneValue) open_slots.push_back(slot);
      std::vector<std::string> fresh_domains;
      for (const auto& d : domains)
        if (!used_domains.contains(d)) fresh_domains.push_back(d);

      const bool continue_domain =
          !open_slots.empty() && (fresh_domains.empty() || coin(rng, 0.55));
      if (!continue_domain && fresh_domains.empty()) break;

      Turn turn;
      Utterance user;
      if (continue_domain) {
        const std::string slot = pick(open_slots, rng);
        const auto& vals = ontology.values(slot);
        const std::string value = pick(vals, rng);
        if (coin(rng, 0.5)) {
          // Offer two candidates, the user picks one.
          std::string other = value;
          while (other == value) other = pick(vals, rng);
          const bool first = coin(rng, 0.5);
          const std::string& a = first ? value : other;
          const std::string& b = first ? other : value;
          static const std::vector<std::string> kOffers = {
              "would you prefer the A or the B ?", "there are options for A and B . which do you {want} ?",
              "{ack} . A or B ?"};
          std::string offer = pick(kOffers, rng);
          offer.replace(offer.find('A'), 1, a);
          offer.replace(offer.find('B'), 1, b);
          turn.system_response = filler.expand(offer, "", "").text;
        } else {
          static const std::vector<std::string> kQuestions = {
              "what LABEL would you like ?", "do you have a LABEL in mind ?", "any preference for the LABEL ?"};
          std::string q = pick(kQuestions, rng);
          q.replace(q.find("LABEL"), 5, label_of(slot));
          turn.system_response = q;
        }
        user = filler.expand(pick(continuation_for(slot), rng), domain, slot, value);
      } else {
        const std::string prev_domain = domain;
        domain = pick(fresh_domains, rng);
        used_domains.insert(domain);
        if (t == 0) {
          turn.system_response = filler.expand(pick(kGreetings, rng), "", "").text;
        } else {
          std::string ack = pick(kAcks, rng);
          if (auto p = ack.find("DOMAIN"); p != std::string::npos) ack.replace(p, 6, prev_domain);
          turn.system_response = filler.expand(ack, "", "").text;
        }
        user = filler.expand(pick(templates.at(domain).first, rng), domain, "");
      }
      for (const auto& [slot, value] : user.values) state.set(slot, value);
      turn.user_utterance = user.text;
      turn.gold_state = state;
      dlg.turns.push_back(std::move(turn));
    }
    dialogues.push_back(std::move(dlg));
  }

  std::vector<size_t> order(dialogues.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const size_t n = dialogues.size();
  const size_t n_train = n * 8 / 10;
  const size_t n_val = n / 10;
  CorpusSplits splits;
  for (size_t i = 0; i < n; ++i) {
    Dialogue& d = dialogues[order[i]];
    if (i < n_train)
      splits.train.push_back(std::move(d));
    else if (i < n_train + n_val)
      splits.validation.push_back(std::move(d));
    else
      splits.test.push_back(std::move(d));
  }
  auto by_id = [](const Dialogue& a, const Dialogue& b) { return a.dialogue_id < b.dialogue_id; };
  std::sort(splits.train.begin(), splits.train.end(), by_id);
  std::sort(splits.validation.begin(), splits.validation.end(), by_id);
  std::sort(splits.test.begin(), splits.test.end(), by_id);
  return splits;
}

}  // namespace dstprobe
