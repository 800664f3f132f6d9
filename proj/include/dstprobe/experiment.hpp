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

#ifndef DSTPROBE_EXPERIMENT_HPP_
#define DSTPROBE_EXPERIMENT_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dstprobe/attack.hpp"
#include "dstprobe/corpus.hpp"
#include "dstprobe/defense.hpp"
#include "dstprobe/dst.hpp"
#include "dstprobe/lm.hpp"
#include "dstprobe/metrics.hpp"
#include "dstprobe/prompt.hpp"
#include "json.hpp"

namespace dstprobe {

inline LmTrainOptions lm_train_defaults(int epochs) {
  LmTrainOptions o;
  o.epochs = epochs;
  return o;
}

struct RunConfig {
  std::filesystem::path ontology_path;  // empty: <data_dir>/ontology.json
  std::filesystem::path data_dir;       // empty: default_data_dir()
  int n_dialogues = 1000;
  uint64_t corpus_seed = 7;
  DstConfig dst;
  LmConfig lm;  // vocab_size and mode are filled in per model
  LmTrainOptions mlm_train = lm_train_defaults(10);
  LmTrainOptions causal_train = lm_train_defaults(6);
  PromptTuneOptions prompt;
  std::vector<int> prompt_lengths{5, 10, 15};
  std::vector<AttackMethod> methods = all_attack_methods();
  double ratio = 1.0;
  std::vector<double> ratios{0.10, 0.30, 0.50, 0.80, 1.00};
  SelectionRule selection_rule = SelectionRule::kTop1;
  int top_k = 20;
  bool ban_slot_value_fills = false;
  AttackMethod defense_method = AttackMethod::kPromptContMin;
  uint64_t seed = 1;
  std::vector<uint64_t> seeds{1, 2, 3};
  std::filesystem::path out_dir;  // empty: ArtifactStore::default_root()

  std::filesystem::path resolved_data_dir() const;
  std::filesystem::path resolved_ontology() const;
  // ConfigError on out-of-range values or missing files.
  void validate() const;
  nlohmann::json to_json() const;
  // Relative paths resolve against `base_dir`.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
};

// "a.b.c=value". The key must exist in `j`; the value is parsed as JSON and
// falls back to a plain string.
void apply_override(nlohmann::json& j, const std::string& assignment);
// Defaults, then the file (keys must be known), then the overrides.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides = {});

struct StoredArtifact {
  std::filesystem::path path;
  std::string sha256;
};

// Layout under the root:
//   <stage>/<stage>-<content sha prefix>.<ext>   artifact bytes
//   refs/<stage>-<key>.json                      {"file", "sha256"}
//   manifests/<stage>-<key>.json                 run manifest
// Keys hash the stage's full specification, so a ref names its inputs.
class ArtifactStore {
 public:
  explicit ArtifactStore(std::filesystem::path root);
  // $PROMPTATTACK_HOME, else ./artifacts.
  static std::filesystem::path default_root();

  const std::filesystem::path& root() const { return root_; }
  StoredArtifact put(const std::string& stage, const std::string& key, const std::string& ext,
                     const std::string& bytes);
  std::optional<StoredArtifact> find(const std::string& stage, const std::string& key) const;
  // Verifies the content hash.
  std::string read(const StoredArtifact& artifact) const;
  void write_manifest(const std::string& stage, const std::string& key, const nlohmann::json& manifest);
  std::filesystem::path manifest_path(const std::string& stage, const std::string& key) const;

 private:
  std::filesystem::path root_;
  mutable std::mutex mu_;
};

// Exclusive advisory lock on <root>/.lock for the holder's lifetime; a second
// writer gets StoreLockedError.
class StoreLock {
 public:
  explicit StoreLock(const std::filesystem::path& root);
  ~StoreLock();
  StoreLock(const StoreLock&) = delete;
  StoreLock& operator=(const StoreLock&) = delete;

 private:
  int fd_ = -1;
};

std::string spec_key(const nlohmann::json& spec);

enum class Split { kTrain, kTest };

struct CellResult {
  AttackMethod method = AttackMethod::kPromptDiscrete;
  double ratio = 1.0;
  int m = 0;
  uint64_t seed = 0;
  std::string key;
  std::vector<AttackRecord> records;
  MetricsReport metrics;
  double wall_seconds = 0.0;
};

struct SweepResult {
  std::vector<CellResult> ratio_cells;
  std::vector<CellResult> length_cells;
  nlohmann::json to_json() const;
  std::string markdown() const;
};

struct ExperimentReport {
  nlohmann::json json;
  std::string markdown;
};

class Experiment {
 public:
  using Logger = std::function<void(const std::string&)>;

  Experiment(RunConfig config, ArtifactStore& store, Logger log = {});

  // When false, a stage that needs an upstream artifact which is not in the
  // store fails with MissingArtifactError instead of building it.
  void set_build_upstream(bool build) { build_upstream_ = build; }
  const RunConfig& config() const { return config_; }
  ArtifactStore& store() { return store_; }

  const Ontology& ontology();
  const MaskPolicy& policy();
  const Thesaurus& thesaurus();

  const CorpusSplits& corpus(bool build);
  const DstModel& victim(bool build);
  const LmModel& mlm(bool build);
  const LmModel& judge(bool build);
  const ContinuousPrompt& prompt(const DstModel& victim, PromptObjective objective, int m, uint64_t seed,
                                 bool build);
  // Clean test JGA of `victim`.
  double clean_jga(const DstModel& victim);

  // Runs one attack cell; test-split cells are written to the store.
  CellResult attack(const DstModel& victim, AttackMethod method, double ratio, int m, uint64_t seed,
                    Split split = Split::kTest);
  // Every configured method at config().ratio.
  std::vector<CellResult> attack_all(uint64_t seed, int jobs = 1);
  // Ratio grid for every method, prompt-length grid for the continuous ones.
  SweepResult sweep(uint64_t seed, int jobs = 1);

  struct DefenseOutcome {
    DefenseRun run;
    std::vector<CellResult> defended_cells;
    std::vector<CellResult> original_cells;
    std::vector<DstExample> augmented;
  };
  DefenseOutcome defend(uint64_t seed, int jobs = 1);
  const DstModel& defended_victim(uint64_t seed, bool build);

  // Table-shaped summary of what the store holds for config().seed; the
  // main method table is required, sweeps and defense are included when
  // present.
  ExperimentReport report();

  std::string corpus_key();
  std::string victim_key();
  std::string lm_key(LmMode mode);

 private:
  void info(const std::string& msg) const;
  std::string data_files_hash();
  const EmbeddingAdapter& adapter(const DstModel& victim);
  nlohmann::json attack_spec(const DstModel& victim, AttackMethod method, double ratio, int m, uint64_t seed,
                             Split split);
  std::string prompt_key(const DstModel& victim, PromptObjective objective, int m, uint64_t seed);
  std::string defense_key(uint64_t seed);
  std::vector<CellResult> run_cells(const DstModel& victim,
                                    const std::vector<std::tuple<AttackMethod, double, int>>& cells, uint64_t seed,
                                    int jobs);
  void prepare_prompts(const DstModel& victim, const std::vector<std::tuple<AttackMethod, double, int>>& cells,
                       uint64_t seed);

  RunConfig config_;
  ArtifactStore& store_;
  Logger log_;
  bool build_upstream_ = true;

  std::optional<Ontology> ontology_;
  std::optional<MaskPolicy> policy_;
  std::optional<Thesaurus> thesaurus_;
  std::optional<std::string> data_hash_;
  std::optional<CorpusSplits> corpus_;
  std::unique_ptr<DstModel> victim_;
  std::unique_ptr<LmModel> mlm_;
  std::unique_ptr<LmModel> judge_;
  std::map<uint64_t, std::unique_ptr<DstModel>> defended_;
  std::map<std::string, std::unique_ptr<ContinuousPrompt>> prompts_;
  std::map<std::string, std::unique_ptr<EmbeddingAdapter>> adapters_;
  std::map<std::string, double> clean_jga_;
};

}  // namespace dstprobe

#endif  // DSTPROBE_EXPERIMENT_HPP_
