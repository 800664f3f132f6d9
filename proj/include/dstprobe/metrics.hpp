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

#ifndef DSTPROBE_METRICS_HPP_
#define DSTPROBE_METRICS_HPP_

#include <optional>
#include <string>
#include <vector>

#include "dstprobe/attack.hpp"
#include "dstprobe/dialogue.hpp"
#include "dstprobe/lm.hpp"
#include "json.hpp"

namespace dstprobe {

double joint_goal_accuracy(const std::vector<BeliefState>& predictions, const std::vector<BeliefState>& golds);

// Numerator: originally correct and flipped. Denominator: originally correct.
struct AsrResult {
  double value = 0.0;
  bool defined = false;  // false when no record was originally correct
  long numerator = 0;
  long denominator = 0;
};
AsrResult attack_success_rate(const std::vector<AttackRecord>& records);

// Mean over records of n_perturbed / l_o.
double perturbation_ratio(const std::vector<AttackRecord>& records);
// Fraction of records with changed == true.
double success_generation_rate(const std::vector<AttackRecord>& records);

struct Histogram {
  std::vector<std::string> labels;  // "0-4", "5-9", ...
  std::vector<long> counts;
  std::vector<double> percent;
  nlohmann::json to_json() const;
};

struct CorpusStats {
  long n_turns = 0;
  Histogram l_o;    // original utterance length
  Histogram l_t;    // maskable tokens
  Histogram delta;  // l_o - l_t
  double frac_l_t_below_10 = 0.0;
  nlohmann::json to_json() const;
};

std::string bucket_label(int value, int width = 5);
Histogram bucket_histogram(const std::vector<int>& values, int width = 5);
// Maskable positions follow the gold state of each turn.
CorpusStats corpus_stats(const std::vector<Dialogue>& dialogues, const MaskPolicy& policy);

struct MetricsReport {
  std::string method;
  double jga = 0.0;
  double jga_original = 0.0;
  double delta_jga = 0.0;
  double asr = 0.0;
  bool asr_defined = false;
  double per = 0.0;
  std::optional<double> ppl;
  double sgr = 0.0;
  long n = 0;
  nlohmann::json sweep = nlohmann::json::object();

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

// Aggregates one method's records. `judge` (causal) scores the adversarial
// utterances when given.
MetricsReport summarize_records(const std::string& method, const std::vector<AttackRecord>& records,
                                const LmModel* judge = nullptr, nlohmann::json sweep = nlohmann::json::object());

// Markdown renderings.
std::string render_method_table(const std::vector<MetricsReport>& reports, double clean_jga);
// Rows sorted ascending by sweep[key].
std::string render_sweep_table(std::vector<MetricsReport> reports, const std::string& key);

struct DefenseRow {
  std::string method;
  double jga_d = 0.0, jga_o = 0.0, asr_d = 0.0, asr_o = 0.0;
  bool asr_d_defined = false, asr_o_defined = false;
};
std::string render_defense_table(const std::vector<DefenseRow>& rows, double clean_d, double clean_o);

std::string format_percent(double x);

}  // namespace dstprobe

#endif  // DSTPROBE_METRICS_HPP_
