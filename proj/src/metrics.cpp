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

#include "dstprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "dstprobe/errors.hpp"

namespace dstprobe {

double joint_goal_accuracy(const std::vector<BeliefState>& predictions, const std::vector<BeliefState>& golds) {
  if (predictions.size() != golds.size())
    throw std::invalid_argument("joint_goal_accuracy: predictions and golds differ in length");
  if (golds.empty()) throw EmptyInputError("joint_goal_accuracy: no turns");
  size_t correct = 0;
  for (size_t i = 0; i < golds.size(); ++i) correct += predictions[i] == golds[i];
  return static_cast<double>(correct) / static_cast<double>(golds.size());
}

AsrResult attack_success_rate(const std::vector<AttackRecord>& records) {
  if (records.empty()) throw EmptyInputError("attack_success_rate: no records");
  AsrResult a;
  for (const auto& r : records) {
    if (!r.originally_correct()) continue;
    ++a.denominator;
    a.numerator += r.adversarial_prediction.state != r.gold;
  }
  a.defined = a.denominator > 0;
  a.value = a.defined ? static_cast<double>(a.numerator) / static_cast<double>(a.denominator) : 0.0;
  return a;
}

double perturbation_ratio(const std::vector<AttackRecord>& records) {
  if (records.empty()) throw EmptyInputError("perturbation_ratio: no records");
  double s = 0.0;
  for (const auto& r : records) {
    if (r.l_o() == 0) throw std::invalid_argument("perturbation_ratio: record with empty utterance");
    s += static_cast<double>(r.n_perturbed) / r.l_o();
  }
  return s / static_cast<double>(records.size());
}

double success_generation_rate(const std::vector<AttackRecord>& records) {
  if (records.empty()) throw EmptyInputError("success_generation_rate: no records");
  long changed = 0;
  for (const auto& r : records) changed += r.changed;
  return static_cast<double>(changed) / static_cast<double>(records.size());
}

std::string bucket_label(int value, int width) {
  const int lo = (value / width) * width;
  return std::to_string(lo) + "-" + std::to_string(lo + width - 1);
}

Histogram bucket_histogram(const std::vector<int>& values, int width) {
  Histogram h;
  if (values.empty()) return h;
  const int top = *std::max_element(values.begin(), values.end());
  const int nb = top / width + 1;
  h.counts.assign(static_cast<size_t>(nb), 0);
  for (int b = 0; b < nb; ++b) h.labels.push_back(bucket_label(b * width, width));
  for (int v : values) {
    if (v < 0) throw std::invalid_argument("bucket_histogram: negative value");
    ++h.counts[static_cast<size_t>(v / width)];
  }
  for (long c : h.counts) h.percent.push_back(100.0 * static_cast<double>(c) / static_cast<double>(values.size()));
  return h;
}

nlohmann::json Histogram::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (size_t i = 0; i < labels.size(); ++i)
    j.push_back({{"bucket", labels[i]}, {"count", counts[i]}, {"percent", percent[i]}});
  return j;
}

nlohmann::json CorpusStats::to_json() const {
  return {{"n_turns", n_turns},
          {"l_o", l_o.to_json()},
          {"l_t", l_t.to_json()},
          {"delta", delta.to_json()},
          {"frac_l_t_below_10", frac_l_t_below_10}};
}

CorpusStats corpus_stats(const std::vector<Dialogue>& dialogues, const MaskPolicy& policy) {
  std::vector<int> lo, lt, dl;
  for (const auto& d : dialogues)
    for (const auto& t : d.turns) {
      const auto tu = compute_maskable(tokenize(t.user_utterance), t.gold_state, policy);
      const int o = static_cast<int>(tu.size());
      const int m = static_cast<int>(tu.num_maskable());
      lo.push_back(o);
      lt.push_back(m);
      dl.push_back(o - m);
    }
  CorpusStats s;
  s.n_turns = static_cast<long>(lo.size());
  s.l_o = bucket_histogram(lo);
  s.l_t = bucket_histogram(lt);
  s.delta = bucket_histogram(dl);
  if (!lt.empty())
    s.frac_l_t_below_10 = static_cast<double>(std::count_if(lt.begin(), lt.end(), [](int v) { return v < 10; })) /
                          static_cast<double>(lt.size());
  return s;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j = {{"method", method},
                      {"jga", jga},
                      {"jga_original", jga_original},
                      {"delta_jga", delta_jga},
                      {"asr", asr_defined ? nlohmann::json(asr) : nlohmann::json(nullptr)},
                      {"per", per},
                      {"ppl", ppl ? nlohmann::json(*ppl) : nlohmann::json(nullptr)},
                      {"sgr", sgr},
                      {"n", n},
                      {"sweep", sweep}};
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.method = j.at("method").get<std::string>();
  r.jga = j.at("jga").get<double>();
  r.jga_original = j.value("jga_original", r.jga);
  r.delta_jga = j.at("delta_jga").get<double>();
  r.asr_defined = !j.at("asr").is_null();
  r.asr = r.asr_defined ? j.at("asr").get<double>() : 0.0;
  r.per = j.at("per").get<double>();
  if (!j.at("ppl").is_null()) r.ppl = j.at("ppl").get<double>();
  r.sgr = j.at("sgr").get<double>();
  r.n = j.at("n").get<long>();
  r.sweep = j.value("sweep", nlohmann::json::object());
  return r;
}

MetricsReport summarize_records(const std::string& method, const std::vector<AttackRecord>& records,
                                const LmModel* judge, nlohmann::json sweep) {
  if (records.empty()) throw EmptyInputError("summarize_records: no records for " + method);
  MetricsReport r;
  r.method = method;
  std::vector<BeliefState> adv, orig, gold;
  std::vector<std::string> texts;
  for (const auto& rec : records) {
    adv.push_back(rec.adversarial_prediction.state);
    orig.push_back(rec.original_prediction.state);
    gold.push_back(rec.gold);
    texts.push_back(rec.adversarial_utterance);
  }
  r.jga = joint_goal_accuracy(adv, gold);
  r.jga_original = joint_goal_accuracy(orig, gold);
  r.delta_jga = r.jga_original - r.jga;
  const auto asr = attack_success_rate(records);
  r.asr = asr.value;
  r.asr_defined = asr.defined;
  r.per = perturbation_ratio(records);
  r.sgr = success_generation_rate(records);
  r.n = static_cast<long>(records.size());
  if (judge) r.ppl = perplexity(*judge, texts);
  r.sweep = std::move(sweep);
  return r;
}

std::string format_percent(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * x);
  return buf;
}

namespace {

std::string fmt(double x, const char* spec) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), spec, x);
  return buf;
}

}  // namespace

std::string render_method_table(const std::vector<MetricsReport>& reports, double clean_jga) {
  std::ostringstream s;
  s << "| Method | JGA ↓ | Δ | ASR ↑ | PER | PPL ↓ | SGR ↑ | n |\n";
  s << "|---|---|---|---|---|---|---|---|\n";
  s << "| clean | " << format_percent(clean_jga) << " | - | - | - | - | - | - |\n";
  for (const auto& r : reports) {
    s << "| " << r.method << " | " << format_percent(r.jga) << " | " << format_percent(r.delta_jga) << " | "
      << (r.asr_defined ? format_percent(r.asr) : std::string("n/a")) << " | " << format_percent(r.per) << " | "
      << (r.ppl ? fmt(*r.ppl, "%.1f") : std::string("-")) << " | " << format_percent(r.sgr) << " | " << r.n
      << " |\n";
  }
  return s.str();
}

std::string render_sweep_table(std::vector<MetricsReport> reports, const std::string& key) {
  std::stable_sort(reports.begin(), reports.end(), [&](const MetricsReport& a, const MetricsReport& b) {
    const double ka = a.sweep.value(key, 0.0);
    const double kb = b.sweep.value(key, 0.0);
    return ka != kb ? ka < kb : a.method < b.method;
  });
  std::ostringstream s;
  s << "| " << key << " | Method | JGA ↓ | ASR ↑ | PER | n_perturbed | SGR ↑ |\n";
  s << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : reports) {
    const double k = r.sweep.value(key, 0.0);
    s << "| " << (key == "ratio" ? fmt(100.0 * k, "%.0f%%") : fmt(k, "%.0f")) << " | " << r.method << " | "
      << format_percent(r.jga) << " | " << (r.asr_defined ? format_percent(r.asr) : std::string("n/a")) << " | "
      << format_percent(r.per) << " | " << fmt(r.sweep.value("mean_n_perturbed", 0.0), "%.2f") << " | "
      << format_percent(r.sgr) << " |\n";
  }
  return s.str();
}

std::string render_defense_table(const std::vector<DefenseRow>& rows, double clean_d, double clean_o) {
  std::ostringstream s;
  s << "| Method | JGA_d ↓ | JGA_o ↓ | ASR_d ↑ | ASR_o ↑ |\n";
  s << "|---|---|---|---|---|\n";
  s << "| clean | " << format_percent(clean_d) << " | " << format_percent(clean_o) << " | - | - |\n";
  for (const auto& r : rows)
    s << "| " << r.method << " | " << format_percent(r.jga_d) << " | " << format_percent(r.jga_o) << " | "
      << (r.asr_d_defined ? format_percent(r.asr_d) : std::string("n/a")) << " | "
      << (r.asr_o_defined ? format_percent(r.asr_o) : std::string("n/a")) << " |\n";
  return s.str();
}

}  // namespace dstprobe
