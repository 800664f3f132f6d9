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

#include <chrono>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dstprobe/errors.hpp"
#include "dstprobe/experiment.hpp"
#include "json.hpp"

namespace {

using dstprobe::Experiment;

enum ExitCode { kOk = 0, kConfigError = 2, kMissingArtifact = 3, kRuntimeFailure = 4 };

int report_error(const std::string& type, const std::string& message, int code,
                 const std::string& artifact = {}) {
  nlohmann::json err = {{"type", type}, {"message", message}, {"exit_code", code}};
  if (!artifact.empty()) err["artifact"] = artifact;
  std::cerr << nlohmann::json({{"error", err}}).dump() << std::endl;
  return code;
}

struct GlobalOptions {
  std::optional<std::string> config;
  std::vector<std::string> sets;
  std::optional<uint64_t> seed;
  std::optional<std::string> out;
  int jobs = 1;
  bool quiet = false;
};

void print_cells(const std::vector<dstprobe::CellResult>& cells, double clean) {
  std::vector<dstprobe::MetricsReport> reps;
  for (const auto& c : cells) reps.push_back(c.metrics);
  std::cout << dstprobe::render_method_table(reps, clean);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dstprobe: adversarial prompt attacks against a toy dialogue state tracker"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_option("--set", g.sets, "Override a config key, e.g. --set prompt.lr=0.01 (repeatable)");
  app.add_option("--seed", g.seed, "Prompt and attack seed");
  app.add_option("--out", g.out, "Artifact store root (default: $PROMPTATTACK_HOME or ./artifacts)");
  app.add_option("--jobs", g.jobs, "Attack cells run concurrently")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", g.quiet, "No progress messages on stderr");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
  auto* train_dst = app.add_subcommand("train-dst", "Train the DST victim");
  auto* train_lm = app.add_subcommand("train-lm", "Train the masked and causal language models");
  std::string lm_kind = "both";
  train_lm->add_option("--kind", lm_kind, "mlm, causal or both")->check(CLI::IsMember({"mlm", "causal", "both"}));
  auto* tune = app.add_subcommand("tune-prompt", "Tune continuous adversarial prompts");
  std::string objective = "both";
  std::optional<int> tune_m;
  tune->add_option("--objective", objective, "maximize, minimize or both")
      ->check(CLI::IsMember({"maximize", "minimize", "max", "min", "both"}));
  tune->add_option("--m", tune_m, "Prompt length")->check(CLI::PositiveNumber);
  auto* attack = app.add_subcommand("attack", "Attack the test split with every configured method");
  std::vector<std::string> methods;
  std::optional<double> ratio;
  attack->add_option("--method", methods, "Restrict to these methods (repeatable)");
  attack->add_option("--ratio", ratio, "Perturbation ratio of maskable tokens");
  auto* sweep = app.add_subcommand("sweep", "Ratio and prompt-length grids");
  auto* defend = app.add_subcommand("defend", "Adversarial training and re-evaluation");
  auto* report = app.add_subcommand("report", "Aggregate stored results into comparison tables");
  bool report_json = false;
  report->add_flag("--json", report_json, "Print the JSON report instead of markdown");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), kConfigError);
  }

  try {
    std::vector<std::string> overrides = g.sets;
    if (g.seed) overrides.push_back("seed=" + std::to_string(*g.seed));
    if (!methods.empty()) {
      nlohmann::json arr = methods;
      overrides.push_back("attack.methods=" + arr.dump());
    }
    if (ratio) overrides.push_back("attack.ratio=" + nlohmann::json(*ratio).dump());
    const auto config = dstprobe::load_run_config(
        g.config ? std::optional<std::filesystem::path>(*g.config) : std::nullopt, overrides);
    const std::filesystem::path root =
        g.out ? std::filesystem::path(*g.out)
              : (config.out_dir.empty() ? dstprobe::ArtifactStore::default_root() : config.out_dir);
    dstprobe::StoreLock lock(root);
    dstprobe::ArtifactStore store(root);
    const bool quiet = g.quiet;
    Experiment ex(config, store, [quiet](const std::string& msg) {
      if (!quiet) std::cerr << "[dstprobe] " << msg << std::endl;
    });
    ex.set_build_upstream(false);
    const auto t0 = std::chrono::steady_clock::now();

    if (*gen) {
      const auto& c = ex.corpus(true);
      std::cout << "corpus " << ex.corpus_key() << ": " << c.train.size() << " train, " << c.validation.size()
                << " validation, " << c.test.size() << " test dialogues\n";
    } else if (*train_dst) {
      const auto& v = ex.victim(true);
      std::cout << "dst " << ex.victim_key() << " victim_id " << v.hash() << " clean test JGA "
                << dstprobe::format_percent(ex.clean_jga(v)) << "\n";
    } else if (*train_lm) {
      if (lm_kind != "causal") ex.mlm(true);
      if (lm_kind != "mlm") ex.judge(true);
      std::cout << "lm ok (" << lm_kind << ")\n";
    } else if (*tune) {
      const auto& v = ex.victim(false);
      const int m = tune_m.value_or(config.prompt.m);
      std::vector<dstprobe::PromptObjective> objs;
      if (objective == "both")
        objs = {dstprobe::PromptObjective::kMaximize, dstprobe::PromptObjective::kMinimize};
      else
        objs = {dstprobe::objective_from_string(objective)};
      for (auto o : objs) {
        const auto& p = ex.prompt(v, o, m, config.seed, true);
        std::cout << "prompt " << dstprobe::to_string(o) << " m=" << m << " seed=" << config.seed
                  << " selected_epoch=" << p.selected_epoch << "\n";
      }
    } else if (*attack) {
      const auto cells = ex.attack_all(config.seed, g.jobs);
      print_cells(cells, ex.clean_jga(ex.victim(false)));
    } else if (*sweep) {
      std::cout << ex.sweep(config.seed, g.jobs).markdown();
    } else if (*defend) {
      const auto out = ex.defend(config.seed, g.jobs);
      std::cout << out.run.markdown();
      std::cout << "test split unchanged: " << (out.run.test_split_unchanged() ? "yes" : "no") << "\n";
    } else if (*report) {
      const auto rep = ex.report();
      std::cout << (report_json ? rep.json.dump(2) + "\n" : rep.markdown);
    }
    if (!quiet)
      std::cerr << "[dstprobe] done in "
                << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s" << std::endl;
    return kOk;
  } catch (const dstprobe::ConfigError& e) {
    return report_error("config", e.what(), kConfigError);
  } catch (const dstprobe::MissingArtifactError& e) {
    return report_error("missing_artifact", e.what(), kMissingArtifact, e.artifact());
  } catch (const dstprobe::SchemaError& e) {
    return report_error("schema", e.what(), kRuntimeFailure, e.field());
  } catch (const dstprobe::StoreLockedError& e) {
    return report_error("store_locked", e.what(), kRuntimeFailure);
  } catch (const std::exception& e) {
    return report_error("runtime", e.what(), kRuntimeFailure);
  }
}
