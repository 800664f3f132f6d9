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

#include "dstprobe/experiment.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "dstprobe/checkpoint.hpp"
#include "dstprobe/errors.hpp"
#include "dstprobe/hashing.hpp"

namespace dstprobe {

namespace fs = std::filesystem;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

PromptObjective objective_of(AttackMethod m) {
  return m == AttackMethod::kPromptContMax ? PromptObjective::kMaximize : PromptObjective::kMinimize;
}

nlohmann::json lm_shape_json(const LmConfig& c) {
  return {{"embed_dim", c.embed_dim}, {"layers", c.layers}, {"heads", c.heads}, {"max_len", c.max_len}};
}

}  // namespace

// ---------------------------------------------------------------- RunConfig

fs::path RunConfig::resolved_data_dir() const { return data_dir.empty() ? default_data_dir() : data_dir; }

fs::path RunConfig::resolved_ontology() const {
  return ontology_path.empty() ? resolved_data_dir() / "ontology.json" : ontology_path;
}

void RunConfig::validate() const {
  if (n_dialogues < 10) throw ConfigError("corpus.n_dialogues must be at least 10");
  if (!fs::exists(resolved_ontology()))
    throw ConfigError("ontology file does not exist: " + resolved_ontology().string());
  for (const char* f : {"stopwords.txt", "slot_lexicon.txt", "thesaurus.txt"})
    if (!fs::exists(resolved_data_dir() / f))
      throw ConfigError(std::string("data file does not exist: ") + (resolved_data_dir() / f).string());
  if (ratios.empty()) throw ConfigError("attack.ratios must not be empty");
  for (double r : ratios)
    if (!(r > 0.0 && r <= 1.0)) throw ConfigError("attack.ratios values must be in (0, 1]");
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("attack.ratio must be in (0, 1]");
  if (prompt_lengths.empty()) throw ConfigError("prompt.lengths must not be empty");
  for (int m : prompt_lengths)
    if (m < 1) throw ConfigError("prompt.lengths values must be positive");
  if (prompt.m < 1 || prompt.epochs < 0 || prompt.batch_size < 1 || !(prompt.lr > 0.0))
    throw ConfigError("prompt: m >= 1, epochs >= 0, batch_size >= 1 and lr > 0 are required");
  if (top_k < 1) throw ConfigError("attack.top_k must be positive");
  if (methods.empty()) throw ConfigError("attack.methods must not be empty");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (dst.epochs < 1 || dst.batch_size < 1 || !(dst.lr > 0.0)) throw ConfigError("dst: bad training options");
  if (lm.embed_dim < 1 || lm.layers < 1 || lm.heads < 1 || lm.embed_dim % lm.heads != 0)
    throw ConfigError("lm: embed_dim must be a positive multiple of heads");
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json methods_j = nlohmann::json::array();
  for (auto m : methods) methods_j.push_back(config_name(m));
  nlohmann::json prompt_j = prompt.to_json();
  prompt_j["lengths"] = prompt_lengths;
  return {{"ontology", ontology_path.string()},
          {"data_dir", data_dir.string()},
          {"corpus", {{"n_dialogues", n_dialogues}, {"seed", corpus_seed}}},
          {"dst", dst.to_json()},
          {"lm", lm_shape_json(lm)},
          {"mlm_train", mlm_train.to_json()},
          {"causal_train", causal_train.to_json()},
          {"prompt", prompt_j},
          {"attack",
           {{"methods", methods_j},
            {"ratio", ratio},
            {"ratios", ratios},
            {"selection_rule", to_string(selection_rule)},
            {"top_k", top_k},
            {"ban_slot_value_fills", ban_slot_value_fills}}},
          {"defense", {{"method", config_name(defense_method)}}},
          {"seed", seed},
          {"seeds", seeds},
          {"out_dir", out_dir.string()}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  RunConfig c;
  try {
    c.ontology_path = resolve(j.value("ontology", std::string()), base_dir);
    c.data_dir = resolve(j.value("data_dir", std::string()), base_dir);
    if (j.contains("corpus")) {
      c.n_dialogues = j["corpus"].value("n_dialogues", c.n_dialogues);
      c.corpus_seed = j["corpus"].value("seed", c.corpus_seed);
    }
    if (j.contains("dst")) c.dst = DstConfig::from_json(j["dst"]);
    if (j.contains("lm")) {
      c.lm.embed_dim = j["lm"].value("embed_dim", c.lm.embed_dim);
      c.lm.layers = j["lm"].value("layers", c.lm.layers);
      c.lm.heads = j["lm"].value("heads", c.lm.heads);
      c.lm.max_len = j["lm"].value("max_len", c.lm.max_len);
    }
    if (j.contains("mlm_train")) c.mlm_train = LmTrainOptions::from_json(j["mlm_train"]);
    if (j.contains("causal_train")) c.causal_train = LmTrainOptions::from_json(j["causal_train"]);
    if (j.contains("prompt")) {
      c.prompt = PromptTuneOptions::from_json(j["prompt"]);
      c.prompt_lengths = j["prompt"].value("lengths", c.prompt_lengths);
    }
    if (j.contains("attack")) {
      const auto& a = j["attack"];
      if (a.contains("methods")) {
        c.methods.clear();
        for (const auto& m : a["methods"]) c.methods.push_back(attack_method_from_string(m.get<std::string>()));
      }
      c.ratio = a.value("ratio", c.ratio);
      c.ratios = a.value("ratios", c.ratios);
      if (a.contains("selection_rule"))
        c.selection_rule = selection_rule_from_string(a["selection_rule"].get<std::string>());
      c.top_k = a.value("top_k", c.top_k);
      c.ban_slot_value_fills = a.value("ban_slot_value_fills", c.ban_slot_value_fills);
    }
    if (j.contains("defense") && j["defense"].contains("method"))
      c.defense_method = attack_method_from_string(j["defense"]["method"].get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.seeds = j.value("seeds", c.seeds);
    c.out_dir = resolve(j.value("out_dir", std::string()), base_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json* node = &j;
  std::istringstream parts(key);
  std::string part;
  while (std::getline(parts, part, '.')) {
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key: " + key);
    node = &(*node)[part];
  }
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  *node = value;
}

namespace {

void check_known_keys(const nlohmann::json& given, const nlohmann::json& known, const std::string& prefix) {
  if (!given.is_object()) throw ConfigError("config: expected an object at '" + prefix + "'");
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!known.contains(it.key())) throw ConfigError("unknown config key: " + path);
    if (known[it.key()].is_object()) check_known_keys(it.value(), known[it.key()], path);
  }
}

}  // namespace

RunConfig load_run_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  nlohmann::json j = RunConfig().to_json();
  fs::path base;
  if (file) {
    nlohmann::json given;
    try {
      given = nlohmann::json::parse(read_file(*file));
    } catch (const MissingArtifactError&) {
      throw ConfigError("config file does not exist: " + file->string());
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
    }
    check_known_keys(given, j, "");
    j.merge_patch(given);
    base = fs::absolute(*file).parent_path();
  }
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig c = RunConfig::from_json(j, base.empty() ? fs::current_path() : base);
  c.validate();
  return c;
}

// ------------------------------------------------------------ ArtifactStore

ArtifactStore::ArtifactStore(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

fs::path ArtifactStore::default_root() {
  if (const char* env = std::getenv("PROMPTATTACK_HOME"); env && *env) return env;
  return fs::current_path() / "artifacts";
}

StoredArtifact ArtifactStore::put(const std::string& stage, const std::string& key, const std::string& ext,
                                  const std::string& bytes) {
  StoredArtifact a;
  a.sha256 = sha256_hex(bytes);
  const fs::path rel = fs::path(stage) / (stage + "-" + a.sha256.substr(0, 16) + "." + ext);
  a.path = root_ / rel;
  std::lock_guard<std::mutex> g(mu_);
  fs::create_directories(a.path.parent_path());
  fs::create_directories(root_ / "refs");
  if (!fs::exists(a.path)) write_file_atomic(a.path, bytes);
  const nlohmann::json ref = {{"file", rel.string()}, {"sha256", a.sha256}};
  write_file_atomic(root_ / "refs" / (stage + "-" + key + ".json"), ref.dump(2) + "\n");
  return a;
}

std::optional<StoredArtifact> ArtifactStore::find(const std::string& stage, const std::string& key) const {
  std::lock_guard<std::mutex> g(mu_);
  const fs::path ref = root_ / "refs" / (stage + "-" + key + ".json");
  if (!fs::exists(ref)) return std::nullopt;
  const auto j = nlohmann::json::parse(read_file(ref));
  StoredArtifact a{root_ / j.at("file").get<std::string>(), j.at("sha256").get<std::string>()};
  if (!fs::exists(a.path)) return std::nullopt;
  return a;
}

std::string ArtifactStore::read(const StoredArtifact& artifact) const {
  std::string bytes = read_file(artifact.path);
  if (sha256_hex(bytes) != artifact.sha256)
    throw SchemaError(artifact.path.string(), "artifact content does not match its recorded hash");
  return bytes;
}

fs::path ArtifactStore::manifest_path(const std::string& stage, const std::string& key) const {
  return root_ / "manifests" / (stage + "-" + key + ".json");
}

void ArtifactStore::write_manifest(const std::string& stage, const std::string& key, const nlohmann::json& manifest) {
  std::lock_guard<std::mutex> g(mu_);
  fs::create_directories(root_ / "manifests");
  write_file_atomic(manifest_path(stage, key), manifest.dump(2) + "\n");
}

StoreLock::StoreLock(const fs::path& root) {
  fs::create_directories(root);
  const fs::path p = root / ".lock";
  fd_ = ::open(p.c_str(), O_RDWR | O_CREAT, 0644);
  if (fd_ < 0) throw std::runtime_error("cannot open lock file " + p.string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw StoreLockedError("artifact store " + root.string() + " is locked by another writer");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  if (::ftruncate(fd_, 0) == 0) {
    [[maybe_unused]] const auto n = ::write(fd_, pid.data(), pid.size());
  }
}

StoreLock::~StoreLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

std::string spec_key(const nlohmann::json& spec) { return sha256_hex(spec.dump()).substr(0, 16); }

// ---------------------------------------------------------------- Experiment

Experiment::Experiment(RunConfig config, ArtifactStore& store, Logger log)
    : config_(std::move(config)), store_(store), log_(std::move(log)) {}

void Experiment::info(const std::string& msg) const {
  if (log_) log_(msg);
}

const Ontology& Experiment::ontology() {
  if (!ontology_) ontology_ = Ontology::load(config_.resolved_ontology());
  return *ontology_;
}

const MaskPolicy& Experiment::policy() {
  if (!policy_) policy_ = MaskPolicy::load_default(ontology(), config_.resolved_data_dir());
  return *policy_;
}

const Thesaurus& Experiment::thesaurus() {
  if (!thesaurus_) thesaurus_ = load_thesaurus(config_.resolved_data_dir() / "thesaurus.txt");
  return *thesaurus_;
}

std::string Experiment::data_files_hash() {
  if (!data_hash_) {
    std::string all = ontology().to_json().dump();
    for (const char* f : {"stopwords.txt", "slot_lexicon.txt", "thesaurus.txt"})
      all += sha256_hex(read_file(config_.resolved_data_dir() / f));
    data_hash_ = sha256_hex(all);
  }
  return *data_hash_;
}

std::string Experiment::corpus_key() {
  return spec_key({{"stage", "corpus"},
                   {"ontology", sha256_hex(ontology().to_json().dump())},
                   {"n_dialogues", config_.n_dialogues},
                   {"seed", config_.corpus_seed}});
}

std::string Experiment::victim_key() {
  return spec_key({{"stage", "dst"}, {"corpus", corpus_key()}, {"config", config_.dst.to_json()}});
}

std::string Experiment::lm_key(LmMode mode) {
  const auto& opts = mode == LmMode::kMasked ? config_.mlm_train : config_.causal_train;
  return spec_key({{"stage", "lm"},
                   {"mode", to_string(mode)},
                   {"corpus", corpus_key()},
                   {"shape", lm_shape_json(config_.lm)},
                   {"train", opts.to_json()}});
}

const CorpusSplits& Experiment::corpus(bool build) {
  if (corpus_) return *corpus_;
  const std::string key = corpus_key();
  if (auto a = store_.find("corpus", key)) {
    const auto j = nlohmann::json::parse(store_.read(*a));
    CorpusSplits c;
    c.train = dialogues_from_json(j.at("train"), ontology());
    c.validation = dialogues_from_json(j.at("validation"), ontology());
    c.test = dialogues_from_json(j.at("test"), ontology());
    corpus_ = std::move(c);
    return *corpus_;
  }
  if (!build) throw MissingArtifactError("corpus", "missing artifact: corpus " + key + " (run gen-data)");
  const auto t0 = std::chrono::steady_clock::now();
  info("generating corpus");
  corpus_ = generate_synthetic_corpus(ontology(), config_.n_dialogues, config_.corpus_seed);
  const nlohmann::json j = {{"train", dialogues_to_json(corpus_->train)},
                            {"validation", dialogues_to_json(corpus_->validation)},
                            {"test", dialogues_to_json(corpus_->test)}};
  const auto a = store_.put("corpus", key, "json", j.dump());
  const auto stats = corpus_stats(corpus_->all(), policy());
  const auto s = store_.put("corpus-stats", key, "json", stats.to_json().dump(2));
  store_.write_manifest("corpus", key,
                        {{"stage", "corpus"},
                         {"key", key},
                         {"config", config_.to_json()},
                         {"seeds", {{"corpus", config_.corpus_seed}}},
                         {"outputs", {{{"file", a.path.string()}, {"sha256", a.sha256}},
                                      {{"file", s.path.string()}, {"sha256", s.sha256}}}},
                         {"splits",
                          {{"train", dataset_hash(corpus_->train)},
                           {"validation", dataset_hash(corpus_->validation)},
                           {"test", dataset_hash(corpus_->test)}}},
                         {"wall_seconds", seconds_since(t0)}});
  return *corpus_;
}

const DstModel& Experiment::victim(bool build) {
  if (victim_) return *victim_;
  const std::string key = victim_key();
  if (auto a = store_.find("dst", key)) {
    victim_ = std::make_unique<DstModel>(DstModel::from_checkpoint(deserialize_checkpoint(store_.read(*a))));
    return *victim_;
  }
  if (!build) throw MissingArtifactError("dst", "missing artifact: DST checkpoint " + key + " (run train-dst)");
  const auto& c = corpus(build_upstream_);
  const auto t0 = std::chrono::steady_clock::now();
  info("training DST victim");
  const Vocabulary vocab = Vocabulary::build(c.train, ontology());
  DstTrainLog log;
  victim_ = std::make_unique<DstModel>(train_dst(c.train, c.validation, vocab, ontology(), config_.dst, &log));
  const auto a = store_.put("dst", key, "ckpt", serialize_checkpoint(victim_->to_checkpoint()));
  const double jga = clean_jga(*victim_);
  info("DST clean test JGA " + format_percent(jga));
  store_.write_manifest("dst", key,
                        {{"stage", "dst"},
                         {"key", key},
                         {"config", config_.to_json()},
                         {"inputs", {{"corpus", corpus_key()}}},
                         {"seeds", {{"dst", config_.dst.seed}}},
                         {"outputs", {{{"file", a.path.string()}, {"sha256", a.sha256}}}},
                         {"victim_id", victim_->hash()},
                         {"train_log",
                          {{"epoch_loss", log.epoch_loss}, {"val_jga", log.val_jga}, {"best_epoch", log.best_epoch}}},
                         {"clean_test_jga", jga},
                         {"wall_seconds", seconds_since(t0)}});
  return *victim_;
}

const LmModel& Experiment::mlm(bool build) {
  auto load_or_train = [&](LmMode mode, std::unique_ptr<LmModel>& slot) -> const LmModel& {
    if (slot) return *slot;
    const std::string key = lm_key(mode);
    const std::string stage = mode == LmMode::kMasked ? "mlm" : "causal-lm";
    if (auto a = store_.find(stage, key)) {
      slot = std::make_unique<LmModel>(LmModel::from_checkpoint(deserialize_checkpoint(store_.read(*a))));
      return *slot;
    }
    if (!build)
      throw MissingArtifactError(stage, "missing artifact: " + to_string(mode) + " LM checkpoint " + key +
                                            " (run train-lm)");
    const auto& c = corpus(build_upstream_);
    const auto t0 = std::chrono::steady_clock::now();
    info("training " + to_string(mode) + " LM");
    const Vocabulary vocab = Vocabulary::build(c.train, ontology());
    LmConfig lc = config_.lm;
    lc.vocab_size = vocab.size();
    lc.mode = mode;
    LmTrainLog log;
    slot = std::make_unique<LmModel>(mode == LmMode::kMasked
                                         ? train_mlm(c.train, vocab, lc, config_.mlm_train, &log)
                                         : train_causal_lm(c.train, vocab, lc, config_.causal_train, &log));
    const auto a = store_.put(stage, key, "ckpt", serialize_checkpoint(slot->to_checkpoint()));
    store_.write_manifest(stage, key,
                          {{"stage", stage},
                           {"key", key},
                           {"config", config_.to_json()},
                           {"inputs", {{"corpus", corpus_key()}}},
                           {"outputs", {{{"file", a.path.string()}, {"sha256", a.sha256}}}},
                           {"train_log", {{"epoch_loss", log.epoch_loss}}},
                           {"wall_seconds", seconds_since(t0)}});
    return *slot;
  };
  return load_or_train(LmMode::kMasked, mlm_);
}

const LmModel& Experiment::judge(bool build) {
  if (judge_) return *judge_;
  const std::string key = lm_key(LmMode::kCausal);
  if (auto a = store_.find("causal-lm", key)) {
    judge_ = std::make_unique<LmModel>(LmModel::from_checkpoint(deserialize_checkpoint(store_.read(*a))));
    return *judge_;
  }
  if (!build)
    throw MissingArtifactError("causal-lm", "missing artifact: causal LM checkpoint " + key + " (run train-lm)");
  const auto& c = corpus(build_upstream_);
  const auto t0 = std::chrono::steady_clock::now();
  info("training causal LM");
  const Vocabulary vocab = Vocabulary::build(c.train, ontology());
  LmConfig lc = config_.lm;
  lc.vocab_size = vocab.size();
  lc.mode = LmMode::kCausal;
  LmTrainLog log;
  judge_ = std::make_unique<LmModel>(train_causal_lm(c.train, vocab, lc, config_.causal_train, &log));
  const auto a = store_.put("causal-lm", key, "ckpt", serialize_checkpoint(judge_->to_checkpoint()));
  store_.write_manifest("causal-lm", key,
                        {{"stage", "causal-lm"},
                         {"key", key},
                         {"config", config_.to_json()},
                         {"inputs", {{"corpus", corpus_key()}}},
                         {"outputs", {{{"file", a.path.string()}, {"sha256", a.sha256}}}},
                         {"train_log", {{"epoch_loss", log.epoch_loss}}},
                         {"wall_seconds", seconds_since(t0)}});
  return *judge_;
}

std::string Experiment::prompt_key(const DstModel& victim, PromptObjective objective, int m, uint64_t seed) {
  PromptTuneOptions o = config_.prompt;
  o.m = m;
  o.seed = seed;
  return spec_key({{"stage", "prompt"},
                   {"victim", victim.hash()},
                   {"corpus", corpus_key()},
                   {"objective", to_string(objective)},
                   {"options", o.to_json()}});
}

const ContinuousPrompt& Experiment::prompt(const DstModel& victim, PromptObjective objective, int m, uint64_t seed,
                                           bool build) {
  const std::string key = prompt_key(victim, objective, m, seed);
  if (auto it = prompts_.find(key); it != prompts_.end()) return *it->second;
  if (auto a = store_.find("prompt", key)) {
    auto p = ContinuousPrompt::from_checkpoint(deserialize_checkpoint(store_.read(*a)));
    if (p.victim_id != victim.hash()) throw SchemaError("prompt.victim_id", "prompt was tuned against another victim");
    return *(prompts_[key] = std::make_unique<ContinuousPrompt>(std::move(p)));
  }
  if (!build)
    throw MissingArtifactError("prompt", "missing artifact: continuous prompt (" + to_string(objective) +
                                             ", m=" + std::to_string(m) + ", seed=" + std::to_string(seed) +
                                             ") " + key + " (run tune-prompt)");
  const auto& c = corpus(build_upstream_);
  const auto t0 = std::chrono::steady_clock::now();
  info("tuning " + to_string(objective) + " prompt, m=" + std::to_string(m) + ", seed=" + std::to_string(seed));
  PromptTuneOptions o = config_.prompt;
  o.m = m;
  o.seed = seed;
  auto p = tune_continuous_prompt(victim, c.train, c.validation, objective, o);
  const auto a = store_.put("prompt", key, "ckpt", serialize_checkpoint(p.to_checkpoint()));
  store_.write_manifest("prompt", key,
                        {{"stage", "prompt"},
                         {"key", key},
                         {"config", config_.to_json()},
                         {"inputs", {{"victim", victim.hash()}, {"corpus", corpus_key()}}},
                         {"seeds", {{"prompt", seed}}},
                         {"outputs", {{{"file", a.path.string()}, {"sha256", a.sha256}}}},
                         {"sidecar", p.sidecar()},
                         {"wall_seconds", seconds_since(t0)}});
  return *(prompts_[key] = std::make_unique<ContinuousPrompt>(std::move(p)));
}

const EmbeddingAdapter& Experiment::adapter(const DstModel& victim) {
  const std::string key = victim.hash();
  if (auto it = adapters_.find(key); it != adapters_.end()) return *it->second;
  return *(adapters_[key] = std::make_unique<EmbeddingAdapter>(fit_embedding_adapter(victim, mlm(build_upstream_))));
}

double Experiment::clean_jga(const DstModel& victim) {
  const std::string key = victim.hash();
  if (auto it = clean_jga_.find(key); it != clean_jga_.end()) return it->second;
  return clean_jga_[key] = evaluate_jga(victim, corpus(build_upstream_).test);
}

nlohmann::json Experiment::attack_spec(const DstModel& victim, AttackMethod method, double ratio, int m,
                                       uint64_t seed, Split split) {
  const bool cont = is_continuous_method(method);
  AttackConfig ac;
  ac.perturbation_ratio = ratio;
  ac.selection_rule = config_.selection_rule;
  ac.top_k = config_.top_k;
  ac.ban_slot_value_fills = config_.ban_slot_value_fills;
  ac.method = method;
  ac.seed = seed;
  return {{"stage", "attack"},
          {"victim", victim.hash()},
          {"corpus", corpus_key()},
          {"split", split == Split::kTest ? "test" : "train"},
          {"mlm", lm_key(LmMode::kMasked)},
          {"judge", lm_key(LmMode::kCausal)},
          {"data_files", data_files_hash()},
          {"prompt", cont ? nlohmann::json(prompt_key(victim, objective_of(method), m, seed)) : nlohmann::json()},
          {"attack", ac.to_json()}};
}

CellResult Experiment::attack(const DstModel& victim, AttackMethod method, double ratio, int m, uint64_t seed,
                              Split split) {
  const bool cont = is_continuous_method(method);
  if (!cont) m = 0;
  const auto t0 = std::chrono::steady_clock::now();
  const auto& c = corpus(build_upstream_);
  AttackResources res;
  res.victim = &victim;
  res.mlm = &mlm(build_upstream_);
  res.policy = &policy();
  res.thesaurus = &thesaurus();
  if (cont) {
    res.prompt = &prompt(victim, objective_of(method), m, seed, build_upstream_);
    res.adapter = &adapter(victim);
  }
  const LmModel& jd = judge(build_upstream_);
  AttackConfig ac;
  ac.perturbation_ratio = ratio;
  ac.selection_rule = config_.selection_rule;
  ac.top_k = config_.top_k;
  ac.ban_slot_value_fills = config_.ban_slot_value_fills;
  ac.method = method;
  ac.seed = seed;
  ac.validate();

  const auto spec = attack_spec(victim, method, ratio, m, seed, split);
  CellResult cell;
  cell.method = method;
  cell.ratio = ratio;
  cell.m = m;
  cell.seed = seed;
  cell.key = spec_key(spec);
  const auto& dialogues = split == Split::kTest ? c.test : c.train;
  cell.records = run_attack(res, make_examples(dialogues), ac);
  double mean_np = 0.0;
  for (const auto& r : cell.records) mean_np += r.n_perturbed;
  mean_np /= std::max<size_t>(1, cell.records.size());
  nlohmann::json sweep = {{"ratio", ratio}, {"seed", seed}, {"mean_n_perturbed", mean_np}};
  if (cont) sweep["m"] = m;
  cell.metrics = summarize_records(display_name(method), cell.records, split == Split::kTest ? &jd : nullptr, sweep);
  cell.wall_seconds = seconds_since(t0);
  if (split == Split::kTest) {
    const auto d = store_.put("adversarial", cell.key, "json", adversarial_dataset_json(dialogues, cell.records).dump());
    const auto mt = store_.put("metrics", cell.key, "json", cell.metrics.to_json().dump(2));
    store_.write_manifest("attack", cell.key,
                          {{"stage", "attack"},
                           {"key", cell.key},
                           {"spec", spec},
                           {"config", config_.to_json()},
                           {"seeds", {{"attack", seed}}},
                           {"outputs",
                            {{{"file", d.path.string()}, {"sha256", d.sha256}},
                             {{"file", mt.path.string()}, {"sha256", mt.sha256}}}},
                           {"wall_seconds", cell.wall_seconds}});
  }
  return cell;
}

void Experiment::prepare_prompts(const DstModel& victim, const std::vector<std::tuple<AttackMethod, double, int>>& cells,
                                 uint64_t seed) {
  corpus(build_upstream_);
  mlm(build_upstream_);
  judge(build_upstream_);
  policy();
  thesaurus();
  data_files_hash();
  for (const auto& [method, ratio, m] : cells)
    if (is_continuous_method(method)) {
      prompt(victim, objective_of(method), m, seed, build_upstream_);
      adapter(victim);
    }
}

std::vector<CellResult> Experiment::run_cells(const DstModel& victim,
                                              const std::vector<std::tuple<AttackMethod, double, int>>& cells,
                                              uint64_t seed, int jobs) {
  prepare_prompts(victim, cells, seed);
  std::vector<CellResult> out(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t i = next++; i < cells.size(); i = next++) {
      try {
        const auto& [method, ratio, m] = cells[i];
        out[i] = attack(victim, method, ratio, m, seed);
        info("attack " + display_name(method) + " ratio=" + std::to_string(ratio) +
             (is_continuous_method(method) ? " m=" + std::to_string(m) : std::string()) +
             " JGA=" + format_percent(out[i].metrics.jga));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(cells.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<CellResult> Experiment::attack_all(uint64_t seed, int jobs) {
  const auto& v = victim(build_upstream_);
  std::vector<std::tuple<AttackMethod, double, int>> cells;
  for (auto m : config_.methods) cells.emplace_back(m, config_.ratio, config_.prompt.m);
  return run_cells(v, cells, seed, jobs);
}

SweepResult Experiment::sweep(uint64_t seed, int jobs) {
  const auto& v = victim(build_upstream_);
  std::vector<std::tuple<AttackMethod, double, int>> ratio_cells, length_cells;
  for (auto m : config_.methods)
    for (double r : config_.ratios) ratio_cells.emplace_back(m, r, config_.prompt.m);
  for (auto m : config_.methods)
    if (is_continuous_method(m))
      for (int len : config_.prompt_lengths) length_cells.emplace_back(m, config_.ratio, len);
  // Prompts are part of the length grid, so the sweep tunes what it needs.
  const bool saved = build_upstream_;
  build_upstream_ = true;
  victim(saved);
  SweepResult s;
  try {
    s.ratio_cells = run_cells(v, ratio_cells, seed, jobs);
    s.length_cells = run_cells(v, length_cells, seed, jobs);
  } catch (...) {
    build_upstream_ = saved;
    throw;
  }
  build_upstream_ = saved;
  const std::string key = spec_key({{"stage", "sweep"},
                                    {"victim", v.hash()},
                                    {"seed", seed},
                                    {"ratios", config_.ratios},
                                    {"lengths", config_.prompt_lengths},
                                    {"config", config_.to_json()}});
  const auto a = store_.put("sweep", key, "json", s.to_json().dump(2));
  const auto md = store_.put("sweep-md", key, "md", s.markdown());
  store_.write_manifest("sweep", key,
                        {{"stage", "sweep"},
                         {"key", key},
                         {"config", config_.to_json()},
                         {"seeds", {{"attack", seed}}},
                         {"outputs",
                          {{{"file", a.path.string()}, {"sha256", a.sha256}},
                           {{"file", md.path.string()}, {"sha256", md.sha256}}}}});
  return s;
}

nlohmann::json SweepResult::to_json() const {
  nlohmann::json r = nlohmann::json::array(), l = nlohmann::json::array();
  for (const auto& c : ratio_cells) r.push_back(c.metrics.to_json());
  for (const auto& c : length_cells) l.push_back(c.metrics.to_json());
  return {{"ratio_sweep", r}, {"length_sweep", l}};
}

std::string SweepResult::markdown() const {
  std::vector<MetricsReport> r, l;
  for (const auto& c : ratio_cells) r.push_back(c.metrics);
  for (const auto& c : length_cells) l.push_back(c.metrics);
  return "## Perturbation ratio sweep\n\n" + render_sweep_table(r, "ratio") + "\n## Prompt length sweep\n\n" +
         render_sweep_table(l, "m");
}

std::string Experiment::defense_key(uint64_t seed) {
  const auto& v = victim(build_upstream_);
  const AttackMethod m = config_.defense_method;
  return spec_key({{"stage", "defense"},
                   {"victim", v.hash()},
                   {"augmentation", attack_spec(v, m, config_.ratio, config_.prompt.m, seed, Split::kTrain)},
                   {"dst", config_.dst.to_json()}});
}

const DstModel& Experiment::defended_victim(uint64_t seed, bool build) {
  if (auto it = defended_.find(seed); it != defended_.end()) return *it->second;
  const std::string key = defense_key(seed);
  if (auto a = store_.find("dst-defended", key)) {
    return *(defended_[seed] =
                 std::make_unique<DstModel>(DstModel::from_checkpoint(deserialize_checkpoint(store_.read(*a)))));
  }
  if (!build)
    throw MissingArtifactError("dst-defended", "missing artifact: defended DST checkpoint " + key + " (run defend)");
  const auto& base = victim(build_upstream_);
  const auto& c = corpus(build_upstream_);
  const auto t0 = std::chrono::steady_clock::now();
  info("generating adversarial twins with " + display_name(config_.defense_method));
  const bool saved = build_upstream_;
  build_upstream_ = true;
  CellResult twins;
  try {
    twins = attack(base, config_.defense_method, config_.ratio, config_.prompt.m, seed, Split::kTrain);
  } catch (...) {
    build_upstream_ = saved;
    throw;
  }
  build_upstream_ = saved;
  std::vector<Dialogue> held_out = c.validation;
  held_out.insert(held_out.end(), c.test.begin(), c.test.end());
  auto augmented = augment_with_twins(make_examples(c.train), twins.records, held_out);
  const long n_twins = static_cast<long>(augmented.size()) - static_cast<long>(make_examples(c.train).size());
  info("retraining DST on " + std::to_string(augmented.size()) + " turns (" + std::to_string(n_twins) + " twins)");
  nlohmann::json twins_j = nlohmann::json::array();
  for (const auto& r : twins.records)
    if (r.changed)
      twins_j.push_back({{"dialogue_id", r.dialogue_id},
                         {"turn_index", r.turn_index},
                         {"user", r.adversarial_utterance},
                         {"original_user", r.original_utterance},
                         {"belief_state", r.gold.to_json()}});
  const auto tw = store_.put("twins", key, "json",
                             nlohmann::json({{"n_train", augmented.size() - n_twins}, {"n_twins", n_twins},
                                             {"twins", twins_j}})
                                 .dump());
  DstTrainLog log;
  auto model = std::make_unique<DstModel>(
      train_dst_examples(augmented, c.validation, base.vocab(), base.ontology(), config_.dst, &log));
  const auto a = store_.put("dst-defended", key, "ckpt", serialize_checkpoint(model->to_checkpoint()));
  store_.write_manifest("dst-defended", key,
                        {{"stage", "dst-defended"},
                         {"key", key},
                         {"config", config_.to_json()},
                         {"inputs", {{"victim", base.hash()}, {"twins", tw.sha256}}},
                         {"seeds", {{"dst", config_.dst.seed}, {"attack", seed}}},
                         {"outputs",
                          {{{"file", a.path.string()}, {"sha256", a.sha256}},
                           {{"file", tw.path.string()}, {"sha256", tw.sha256}}}},
                         {"train_log",
                          {{"epoch_loss", log.epoch_loss}, {"val_jga", log.val_jga}, {"best_epoch", log.best_epoch}}},
                         {"wall_seconds", seconds_since(t0)}});
  return *(defended_[seed] = std::move(model));
}

Experiment::DefenseOutcome Experiment::defend(uint64_t seed, int jobs) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& base = victim(build_upstream_);
  const std::string test_before = dataset_hash(corpus(build_upstream_).test);
  const auto& defended = defended_victim(seed, true);
  const std::string key = defense_key(seed);

  DefenseOutcome out;
  std::vector<std::tuple<AttackMethod, double, int>> cells;
  for (auto m : config_.methods) cells.emplace_back(m, config_.ratio, config_.prompt.m);
  const bool saved = build_upstream_;
  build_upstream_ = true;  // prompts against the defended victim are re-tuned here
  try {
    out.original_cells = run_cells(base, cells, seed, jobs);
    out.defended_cells = run_cells(defended, cells, seed, jobs);
  } catch (...) {
    build_upstream_ = saved;
    throw;
  }
  build_upstream_ = saved;

  // The held-out split as stored, read back after retraining.
  const auto stored = nlohmann::json::parse(store_.read(*store_.find("corpus", corpus_key())));
  const std::string test_after = dataset_hash(dialogues_from_json(stored.at("test"), ontology()));
  const auto tw = nlohmann::json::parse(store_.read(*store_.find("twins", key)));

  DefenseRun& run = out.run;
  run.base_victim_id = base.hash();
  run.defended_victim_id = defended.hash();
  run.augmentation_method = display_name(config_.defense_method);
  run.n_train = tw.at("n_train").get<long>();
  run.n_twins = tw.at("n_twins").get<long>();
  run.clean_jga_before = clean_jga(base);
  run.clean_jga_after = clean_jga(defended);
  run.test_hash_before = test_before;
  run.test_hash_after = test_after;
  for (size_t i = 0; i < cells.size(); ++i)
    run.rows.push_back(defense_row(display_name(std::get<0>(cells[i])), out.defended_cells[i].records,
                                   out.original_cells[i].records));
  const auto a = store_.put("defense", key, "json", run.to_json().dump(2));
  const auto md = store_.put("defense-md", key, "md", run.markdown());
  store_.write_manifest("defense", key,
                        {{"stage", "defense"},
                         {"key", key},
                         {"config", config_.to_json()},
                         {"seeds", {{"attack", seed}}},
                         {"outputs",
                          {{{"file", a.path.string()}, {"sha256", a.sha256}},
                           {{"file", md.path.string()}, {"sha256", md.sha256}}}},
                         {"wall_seconds", seconds_since(t0)}});
  return out;
}

ExperimentReport Experiment::report() {
  const auto& v = victim(false);
  const uint64_t seed = config_.seed;
  nlohmann::json inputs = nlohmann::json::object();
  auto metrics_for = [&](AttackMethod m, double ratio, int len) -> std::optional<MetricsReport> {
    const int mm = is_continuous_method(m) ? len : 0;
    const std::string key = spec_key(attack_spec(v, m, ratio, mm, seed, Split::kTest));
    const auto a = store_.find("metrics", key);
    if (!a) return std::nullopt;
    inputs[a->path.filename().string()] = a->sha256;
    return MetricsReport::from_json(nlohmann::json::parse(store_.read(*a)));
  };

  std::vector<MetricsReport> main;
  std::vector<std::string> missing;
  for (auto m : config_.methods) {
    auto r = metrics_for(m, config_.ratio, config_.prompt.m);
    if (r)
      main.push_back(*r);
    else
      missing.push_back(display_name(m));
  }
  if (!missing.empty()) {
    std::string names;
    for (const auto& n : missing) names += (names.empty() ? "" : ", ") + n;
    throw MissingArtifactError("metrics", "missing attack results for " + names + " (run attack)");
  }
  const auto eval = store_.manifest_path("dst", victim_key());
  double clean = 0.0;
  if (std::filesystem::exists(eval))
    clean = nlohmann::json::parse(read_file(eval)).value("clean_test_jga", 0.0);
  else
    clean = clean_jga(v);

  std::vector<MetricsReport> ratio_rows, length_rows;
  for (auto m : config_.methods)
    for (double r : config_.ratios)
      if (auto x = metrics_for(m, r, config_.prompt.m)) ratio_rows.push_back(*x);
  for (auto m : config_.methods)
    if (is_continuous_method(m))
      for (int len : config_.prompt_lengths)
        if (auto x = metrics_for(m, config_.ratio, len)) length_rows.push_back(*x);

  nlohmann::json defense = nullptr;
  std::string defense_md;
  if (auto a = store_.find("defense", defense_key(seed))) {
    defense = nlohmann::json::parse(store_.read(*a));
    inputs[a->path.filename().string()] = a->sha256;
    if (auto m = store_.find("defense-md", defense_key(seed))) defense_md = store_.read(*m);
  }

  ExperimentReport rep;
  nlohmann::json mj = nlohmann::json::array(), rj = nlohmann::json::array(), lj = nlohmann::json::array();
  for (const auto& r : main) mj.push_back(r.to_json());
  for (const auto& r : ratio_rows) rj.push_back(r.to_json());
  for (const auto& r : length_rows) lj.push_back(r.to_json());
  rep.json = {{"victim_id", v.hash()},
              {"clean_jga", clean},
              {"ratio", config_.ratio},
              {"m", config_.prompt.m},
              {"seed", seed},
              {"methods", mj},
              {"ratio_sweep", rj},
              {"length_sweep", lj},
              {"defense", defense},
              {"inputs", inputs}};
  std::ostringstream md;
  md << "## Attack comparison (ratio " << config_.ratio << ", m " << config_.prompt.m << ", seed " << seed
     << ")\n\n"
     << render_method_table(main, clean);
  if (!ratio_rows.empty()) md << "\n## Perturbation ratio sweep\n\n" << render_sweep_table(ratio_rows, "ratio");
  if (!length_rows.empty()) md << "\n## Prompt length sweep\n\n" << render_sweep_table(length_rows, "m");
  if (!defense_md.empty()) md << "\n## Adversarial training\n\n" << defense_md;
  rep.markdown = md.str();
  const std::string key = spec_key(inputs);
  store_.put("report", key, "json", rep.json.dump(2));
  store_.put("report-md", key, "md", rep.markdown);
  return rep;
}

}  // namespace dstprobe
