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

// Acceptance run on the shipped toy setup. Trains everything into a fresh
// store under --workdir and prints one PASS/FAIL line per criterion; the exit
// status is non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dstprobe/experiment.hpp"
#include "dstprobe/hashing.hpp"
#include "json.hpp"

namespace {

using namespace dstprobe;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string pct(double x) { return format_percent(x); }

std::string fmt(const char* spec, double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, x);
  return buf;
}

struct Outcome {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

class Ledger {
 public:
  void record(int id, const std::string& name, bool pass, const std::string& detail) {
    out_.push_back({id, name, pass, detail});
    std::cout << (pass ? "PASS" : "FAIL") << " C" << id << " " << name << ": " << detail << std::endl;
  }
  bool all_pass() const {
    return std::all_of(out_.begin(), out_.end(), [](const Outcome& o) { return o.pass; });
  }
  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& o : out_) j.push_back({{"criterion", o.id}, {"name", o.name}, {"pass", o.pass}, {"detail", o.detail}});
    return j;
  }

 private:
  std::vector<Outcome> out_;
};

double relative_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

// Central differences against analytic prefix gradients.
double worst_prefix_gradient_error(const std::function<double(const Matrix&, Matrix*)>& loss, int rows, int cols,
                                   std::mt19937_64& rng, int probes) {
  std::normal_distribution<double> n(0.0, 0.5);
  Matrix prefix(rows, cols);
  for (auto& x : prefix.data) x = n(rng);
  Matrix grad;
  loss(prefix, &grad);
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    const size_t i = rng() % prefix.size();
    const double h = 1e-5;
    Matrix a = prefix, b = prefix;
    a.data[i] += h;
    b.data[i] -= h;
    const double fd = (loss(a, nullptr) - loss(b, nullptr)) / (2 * h);
    worst = std::max(worst, relative_error(fd, grad.data[i]));
  }
  return worst;
}

// Brute-force recounts written independently of the metrics module.
std::string slot_value(const BeliefState& s, const std::string& slot) {
  for (const auto& [k, v] : s.assignments())
    if (k == slot) return v;
  return std::string(kNoneValue);
}

bool same_state(const BeliefState& a, const BeliefState& b, const Ontology& o) {
  for (const auto& slot : o.slot_names())
    if (slot_value(a, slot) != slot_value(b, slot)) return false;
  return true;
}

BeliefState random_state(const Ontology& o, std::mt19937_64& rng, double p) {
  BeliefState s;
  std::bernoulli_distribution fill(p);
  for (const auto& slot : o.slot_names())
    if (fill(rng)) {
      const auto& v = o.values(slot);
      s.set(slot, v[rng() % v.size()]);
    }
  return s;
}

double fraction_non_none(const std::vector<BeliefState>& states, const Ontology& o) {
  long filled = 0;
  for (const auto& s : states) filled += static_cast<long>(s.assignments().size());
  return static_cast<double>(filled) / static_cast<double>(states.size() * o.num_slots());
}

struct Series {
  std::vector<double> jga, asr;
};

// Non-increasing (sign = -1) or non-decreasing (sign = +1) with at most one
// inversion no larger than `slack`.
bool near_monotone(const std::vector<double>& v, int sign, double slack, std::string* why) {
  int inversions = 0;
  double worst = 0.0;
  for (size_t i = 1; i < v.size(); ++i) {
    const double step = sign * (v[i] - v[i - 1]);
    if (step < 0) {
      ++inversions;
      worst = std::max(worst, -step);
    }
  }
  *why = std::to_string(inversions) + " inversion(s), largest " + fmt("%.2f", 100 * worst) + " pts";
  return inversions == 0 || (inversions == 1 && worst <= slack + 1e-12);
}

std::string series_text(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : "/") + pct(x);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dstprobe acceptance run"};
  std::string workdir = "acceptance";
  std::string config_path;
  bool keep = false;
  app.add_option("--workdir", workdir, "Directory for the artifact store and the summary");
  app.add_option("--config", config_path, "Run configuration (default: data/configs/default.json)");
  app.add_flag("--keep", keep, "Reuse an existing store instead of starting fresh");
  CLI11_PARSE(app, argc, argv);

  std::setvbuf(stdout, nullptr, _IOLBF, 0);
  const auto t_all = Clock::now();
  const fs::path root = fs::path(workdir) / "store";
  if (!keep) fs::remove_all(root);
  fs::create_directories(root);
  const RunConfig config = load_run_config(
      config_path.empty() ? fs::path(default_data_dir() / "configs" / "default.json") : fs::path(config_path));
  StoreLock lock(root);
  ArtifactStore store(root);
  Experiment ex(config, store, [](const std::string& m) { std::cerr << "[acceptance] " << m << std::endl; });
  Ledger ledger;
  nlohmann::json timings;

  // Shared models: corpus, victim, masked LM and judge.
  auto t0 = Clock::now();
  const auto& corpus = ex.corpus(true);
  const auto& victim = ex.victim(true);
  const auto& mlm = ex.mlm(true);
  const auto& judge = ex.judge(true);
  const double clean = ex.clean_jga(victim);
  const std::string victim_hash = victim.hash();
  timings["shared_models_s"] = since(t0);
  std::cerr << "[acceptance] clean test JGA " << pct(clean) << ", shared models in " << fmt("%.0f", since(t0))
            << " s" << std::endl;
  const auto& onto = ex.ontology();
  const auto test_examples = make_examples(corpus.test);
  const auto train_examples = make_examples(corpus.train);
  const auto val_examples = make_examples(corpus.validation);

  // C7: gradient fidelity.
  {
    std::mt19937_64 rng(2026);
    double worst_dst = 0.0, worst_lm = 0.0;
    for (int p = 0; p < 10; ++p) {
      const auto& e = train_examples[rng() % train_examples.size()];
      const auto ids = victim.encode_input(e.history, e.turn.system_response, e.turn.user_utterance, 3);
      worst_dst = std::max(worst_dst, worst_prefix_gradient_error(
                                          [&](const Matrix& pre, Matrix* g) {
                                            return victim.loss(pre, ids, e.turn.gold_state, g, {});
                                          },
                                          3, victim.embed_dim(), rng, 1));
    }
    for (int p = 0; p < 10; ++p) {
      const auto& e = train_examples[rng() % train_examples.size()];
      auto ids = mlm.vocab().encode(tokenize(e.turn.user_utterance).tokens);
      const int rows = 3;
      std::vector<int> targets(ids.size() + rows, -1);
      const size_t at = rng() % ids.size();
      targets[at + rows] = ids[at];
      ids[at] = Vocabulary::kMask;
      worst_lm = std::max(worst_lm, worst_prefix_gradient_error(
                                        [&](const Matrix& pre, Matrix* g) { return mlm.loss(pre, ids, targets, g, {}); },
                                        rows, mlm.embed_dim(), rng, 1));
    }
    ledger.record(7, "gradient fidelity", worst_dst <= 1e-4 && worst_lm <= 1e-4,
                  "worst relative error DST " + fmt("%.2e", worst_dst) + ", LM " + fmt("%.2e", worst_lm) +
                      " over 10 probes each");
  }

  // C8: metric oracles.
  {
    std::mt19937_64 rng(8);
    int mismatches = 0;
    for (int c = 0; c < 500; ++c) {
      const int n = 1 + static_cast<int>(rng() % 12);
      std::vector<AttackRecord> recs;
      for (int i = 0; i < n; ++i) {
        AttackRecord r;
        r.gold = random_state(onto, rng, 0.15);
        r.original_prediction.state = rng() % 2 ? r.gold : random_state(onto, rng, 0.15);
        r.adversarial_prediction.state = rng() % 2 ? r.original_prediction.state : random_state(onto, rng, 0.15);
        const int lo = 1 + static_cast<int>(rng() % 20);
        r.original_tokens.assign(static_cast<size_t>(lo), "w");
        r.n_perturbed = static_cast<int>(rng() % static_cast<uint64_t>(lo + 1));
        r.changed = r.n_perturbed > 0 || rng() % 4 == 0;
        recs.push_back(r);
      }
      long ok_adv = 0, correct = 0, flipped = 0, changed = 0;
      double per_sum = 0.0;
      std::vector<BeliefState> preds, golds;
      for (const auto& r : recs) {
        preds.push_back(r.adversarial_prediction.state);
        golds.push_back(r.gold);
        ok_adv += same_state(r.adversarial_prediction.state, r.gold, onto);
        const bool was = same_state(r.original_prediction.state, r.gold, onto);
        correct += was;
        flipped += was && !same_state(r.adversarial_prediction.state, r.gold, onto);
        changed += r.changed;
        per_sum += static_cast<double>(r.n_perturbed) / static_cast<double>(r.original_tokens.size());
      }
      const double nn = static_cast<double>(n);
      const auto asr = attack_success_rate(recs);
      mismatches += joint_goal_accuracy(preds, golds) != static_cast<double>(ok_adv) / nn;
      mismatches += asr.defined != (correct > 0);
      if (correct > 0) mismatches += asr.value != static_cast<double>(flipped) / static_cast<double>(correct);
      mismatches += perturbation_ratio(recs) != per_sum / nn;
      mismatches += success_generation_rate(recs) != static_cast<double>(changed) / nn;
    }
    double worst_ppl = 0.0;
    for (const std::string tok : {"hello", "cheap", "taxi", "please"}) {
      const auto x = judge.embed(std::vector<std::string>{std::string(kSepToken), tok});
      const double p = judge.distribution(x, 0)[static_cast<size_t>(judge.vocab().id(tok))];
      worst_ppl = std::max(worst_ppl, relative_error(perplexity(judge, {tok}), 1.0 / p));
    }
    ledger.record(8, "metric oracles", mismatches == 0 && worst_ppl <= 1e-6,
                  std::to_string(mismatches) + " mismatches over 500 record sets; single-token PPL rel. error " +
                      fmt("%.1e", worst_ppl));
  }

  // C1: main comparison at ratio 1.0 over three seeds.
  std::map<std::string, std::vector<double>> jga_by_method;
  std::map<std::string, std::vector<double>> sgr_by_method;
  std::vector<const std::vector<AttackRecord>*> audited;
  std::vector<CellResult> kept;
  kept.reserve(128);
  t0 = Clock::now();
  for (uint64_t seed : config.seeds) {
    for (auto& cell : ex.attack_all(seed)) {
      jga_by_method[cell.metrics.method].push_back(cell.metrics.jga);
      sgr_by_method[cell.metrics.method].push_back(cell.metrics.sgr);
      kept.push_back(std::move(cell));
    }
  }
  const double c1_seconds = since(t0);
  timings["c1_s"] = c1_seconds;
  {
    const double bert = median(jga_by_method["bert-m"]), eda = median(jga_by_method["sc-eda"]);
    bool ok = c1_seconds <= 600.0;
    std::string detail = "clean " + pct(clean) + "; median JGA";
    for (const auto& [m, v] : jga_by_method) detail += " " + m + "=" + pct(median(v));
    for (const char* m : {"prompt-d", "prompt-cx", "prompt-cn"}) {
      const double j = median(jga_by_method[m]);
      const bool drop = clean - j >= 0.03 - 1e-12;
      const bool below = j < bert && j < eda;
      if (!drop || !below)
        detail += std::string("; ") + m + (drop ? "" : " drops < 3 pts") + (below ? "" : " not below bert-m/sc-eda");
      ok = ok && drop && below;
    }
    detail += "; " + fmt("%.0f", c1_seconds) + " s";
    ledger.record(1, "attack effectiveness", ok, detail);
  }

  // C2: ratio sweep for the continuous prompts (every method is run so the
  // constraint audit and the fluency check see the same cells).
  t0 = Clock::now();
  std::map<std::string, std::map<double, std::vector<double>>> sweep_jga, sweep_asr, sweep_ppl;
  for (uint64_t seed : config.seeds) {
    for (auto m : {AttackMethod::kPromptContMax, AttackMethod::kPromptContMin, AttackMethod::kBertM}) {
      for (double r : config.ratios) {
        if (m == AttackMethod::kBertM && r != config.ratios.front()) continue;
        auto cell = ex.attack(victim, m, r, is_continuous_method(m) ? config.prompt.m : 0, seed);
        const auto& mm = cell.metrics;
        sweep_jga[mm.method][r].push_back(mm.jga);
        sweep_asr[mm.method][r].push_back(mm.asr_defined ? mm.asr : 0.0);
        if (mm.ppl) sweep_ppl[mm.method][r].push_back(*mm.ppl);
        kept.push_back(std::move(cell));
      }
    }
  }
  timings["c2_s"] = since(t0);
  {
    bool ok = true;
    std::string detail;
    for (const char* m : {"prompt-cx", "prompt-cn"}) {
      std::vector<double> j, a;
      for (double r : config.ratios) {
        j.push_back(median(sweep_jga[m][r]));
        a.push_back(median(sweep_asr[m][r]));
      }
      std::string wj, wa;
      const bool okj = near_monotone(j, -1, 0.005, &wj);
      const bool oka = near_monotone(a, +1, 0.005, &wa);
      ok = ok && okj && oka;
      detail += std::string(detail.empty() ? "" : "; ") + m + " JGA " + series_text(j) + " (" + wj + "), ASR " +
                series_text(a) + " (" + wa + ")";
    }
    ledger.record(2, "monotone ratio sweep", ok, detail);
  }

  // C3: prompt-length grid for seed 1, rendered through the report.
  t0 = Clock::now();
  const auto sweep = ex.sweep(config.seed);
  timings["c3_s"] = since(t0);
  {
    std::map<std::string, std::vector<int>> lengths;
    for (const auto& c : sweep.length_cells) lengths[c.metrics.method].push_back(c.m);
    for (const auto& c : sweep.ratio_cells) audited.push_back(&c.records);
    const auto rep = ex.report();
    bool ok = true;
    for (const char* m : {"prompt-cx", "prompt-cn"}) {
      auto v = lengths[m];
      std::sort(v.begin(), v.end());
      ok = ok && v == config.prompt_lengths;
    }
    const auto& rows = rep.json.value("length_sweep", nlohmann::json::array());
    ok = ok && rows.size() == 2 * config.prompt_lengths.size();
    std::ofstream(fs::path(workdir) / "report.md") << rep.markdown;
    ledger.record(3, "prompt-length sweep", ok,
                  std::to_string(rows.size()) + " length cells rendered (m = 5/10/15 for prompt-cx and prompt-cn)");
  }

  // C4: constraint preservation over every record of C1 and C2.
  {
    long n = 0, bad = 0;
    std::string first;
    for (const auto& cell : kept)
      for (const auto& r : cell.records) {
        ++n;
        const auto a = audit_record(r);
        bool ok = a.ok();
        if (r.method != "sd" && r.n_perturbed > perturbation_budget(cell.ratio, r.l_t())) ok = false;
        if (!ok) {
          ++bad;
          if (first.empty()) first = r.method + " " + r.dialogue_id + ": " + a.detail;
        }
      }
    ledger.record(4, "constraint preservation", bad == 0,
                  std::to_string(n - bad) + "/" + std::to_string(n) + " records pass" + (first.empty() ? "" : "; " + first));
  }

  // C5: success generation rate of the prompt attacks, every seed.
  {
    bool ok = true;
    std::string detail;
    for (const char* m : {"prompt-d", "prompt-cx", "prompt-cn"}) {
      const auto& v = sgr_by_method[m];
      ok = ok && std::all_of(v.begin(), v.end(), [](double x) { return x >= 0.9; });
      detail += std::string(detail.empty() ? "" : "; ") + m + " min SGR " + pct(*std::min_element(v.begin(), v.end()));
    }
    ledger.record(5, "success generation rate", ok, detail);
  }

  // C6: objective correctness on every seed.
  {
    bool ok = true;
    std::string detail;
    const double base_fill = fraction_non_none(predict_states(victim, val_examples), onto);
    for (uint64_t seed : config.seeds) {
      const auto& px = ex.prompt(victim, PromptObjective::kMaximize, config.prompt.m, seed, true);
      const auto& pn = ex.prompt(victim, PromptObjective::kMinimize, config.prompt.m, seed, true);
      const auto init = initial_prompt(config.prompt.m, victim.embed_dim(), config.prompt.init_std, seed);
      const double l_tuned = mean_prompt_loss(victim, train_examples, px.matrix, PromptObjective::kMaximize);
      const double l_init = mean_prompt_loss(victim, train_examples, init, PromptObjective::kMaximize);
      const double f_tuned = fraction_non_none(predict_states(victim, val_examples, pn.matrix), onto);
      const double f_init = fraction_non_none(predict_states(victim, val_examples, init), onto);
      const bool same = victim.hash() == victim_hash;
      ok = ok && l_tuned > l_init && f_tuned < base_fill && same;
      detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": loss " +
                fmt("%.4f", l_init) + "->" + fmt("%.4f", l_tuned) + ", non-none " + pct(base_fill) + "->" +
                pct(f_tuned) + " (init prompt " + pct(f_init) + ")" + (same ? "" : ", victim changed");
    }
    ledger.record(6, "objective correctness", ok, detail);
  }

  // C9: fluency at ratio 0.10.
  {
    const double r = config.ratios.front();
    std::vector<std::string> texts;
    for (const auto& e : test_examples) texts.push_back(e.turn.user_utterance);
    const double clean_ppl = perplexity(judge, texts);
    const double cn = median(sweep_ppl["prompt-cn"][r]);
    const double bert = median(sweep_ppl["bert-m"][r]);
    ledger.record(9, "fluency", cn <= bert && cn <= 1.5 * clean_ppl,
                  "median PPL at ratio " + fmt("%.2f", r) + ": prompt-cn " + fmt("%.1f", cn) + ", bert-m " +
                      fmt("%.1f", bert) + ", clean " + fmt("%.1f", clean_ppl));
  }

  // C10: defense.
  t0 = Clock::now();
  {
    const auto out = ex.defend(config.seed);
    const double secs = since(t0);
    timings["c10_s"] = secs;
    const auto& run = out.run;
    bool all_asr = true;
    std::string asr_list;
    for (const auto& row : run.rows) {
      all_asr = all_asr && row.asr_d_defined && row.asr_d > 0.0;
      asr_list += (asr_list.empty() ? "" : " ") + row.method + "=" + (row.asr_d_defined ? pct(row.asr_d) : "n/a");
    }
    const bool keep_clean = run.clean_jga_after >= run.clean_jga_before - 0.01 - 1e-12;
    std::ofstream(fs::path(workdir) / "defense.md") << run.markdown();
    ledger.record(10, "defense", keep_clean && run.test_split_unchanged() && all_asr && secs <= 1200.0,
                  "clean " + pct(run.clean_jga_before) + "->" + pct(run.clean_jga_after) + ", test hash " +
                      (run.test_split_unchanged() ? "unchanged" : "CHANGED") + ", ASR_d " + asr_list + ", " +
                      fmt("%.0f", secs) + " s");
  }

  timings["total_s"] = since(t_all);
  std::ofstream(fs::path(workdir) / "acceptance.json")
      << nlohmann::json({{"criteria", ledger.to_json()}, {"timings", timings}, {"clean_jga", clean}}).dump(2) << "\n";
  std::cout << (ledger.all_pass() ? "ALL PASS" : "SOME CRITERIA FAILED") << " (" << fmt("%.0f", since(t_all))
            << " s total)" << std::endl;
  return ledger.all_pass() ? 0 : 1;
}
