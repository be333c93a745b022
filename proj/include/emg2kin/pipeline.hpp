// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

#ifndef EMG2KIN_PIPELINE_HPP
#define EMG2KIN_PIPELINE_HPP

#include "emg2kin/augment.hpp"
#include "emg2kin/common.hpp"
#include "emg2kin/data_ingest.hpp"
#include "emg2kin/evaluation.hpp"
#include "emg2kin/hpo.hpp"
#include "emg2kin/network.hpp"
#include "emg2kin/preprocess.hpp"
#include "emg2kin/training.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace emg2kin::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kManifestVersion = 1;

// ---------------------------------------------------------------------------
// Architecture selector

struct Architecture {
  network::NetworkKind kind = network::NetworkKind::lstm;
  int depth = 1;

  std::string name() const { return (kind == network::NetworkKind::lstm ? "lstm" : "ff") + std::to_string(depth); }

  network::NetworkSpec spec(int total_units, int input_dim = features::kFeatureDim) const {
    return kind == network::NetworkKind::lstm ? network::NetworkSpec::lstm(depth, total_units, input_dim)
                                              : network::NetworkSpec::feedforward(depth, total_units, input_dim);
  }

  static Architecture parse(const std::string& s) {
    static const std::vector<std::string> known{"lstm1", "lstm2", "lstm3", "ff1", "ff3", "ff10"};
    if (std::find(known.begin(), known.end(), s) == known.end())
      throw Error(ErrorCode::InvalidConfig, "unknown architecture '" + s + "' (lstm1|lstm2|lstm3|ff1|ff3|ff10)");
    Architecture a;
    a.kind = s.rfind("lstm", 0) == 0 ? network::NetworkKind::lstm : network::NetworkKind::feedforward;
    a.depth = std::stoi(s.substr(a.kind == network::NetworkKind::lstm ? 4 : 2));
    return a;
  }
};

// ---------------------------------------------------------------------------
// Configuration

struct HpoSettings {
  int budget = 100;
  hpo::Strategy strategy = hpo::Strategy::gp_expected_improvement;
  int n_initial = 10;
  int top_k = 3;
};

struct EvalSettings {
  std::vector<double> levels = evaluation::kNoiseLevelsPct;
  int realizations = 5;
  bool closed_loop = false;
};

struct SynthSettings {
  int n_tasks = data::kNumTasks;
  double duration_s = 4.0;
};

struct PipelineConfig {
  fs::path data_root = "data";
  std::vector<int> participants{1};
  Architecture architecture;
  std::uint64_t seed = 0;
  fs::path output_dir = "out";
  int n_h = 64;
  bool use_hpo = false;
  int lag = features::kDefaultLag;
  training::TrainConfig train;
  augment::AugmentationConfig augment;
  HpoSettings hpo;
  EvalSettings eval;
  SynthSettings synth;

  void validate() const {
    using emg2kin::detail::require;
    require(!participants.empty(), ErrorCode::InvalidConfig, "participants must not be empty");
    for (int p : participants) require(p >= 1, ErrorCode::InvalidConfig, "participant ids start at 1");
    require(n_h >= architecture.depth, ErrorCode::InvalidConfig, "n_h must give every layer at least one unit");
    require(lag >= 0, ErrorCode::InvalidConfig, "lag must be >= 0");
    train.validate();
    augment.validate();
    require(hpo.budget >= 1 && hpo.n_initial >= 1 && hpo.top_k >= 1, ErrorCode::InvalidConfig, "bad hpo settings");
    require(eval.realizations >= 1, ErrorCode::InvalidConfig, "eval.realizations must be >= 1");
    require(!eval.levels.empty(), ErrorCode::InvalidConfig, "eval.levels must not be empty");
    for (double l : eval.levels) require(l >= 0, ErrorCode::NegativeLevel, "noise levels must be >= 0");
    require(synth.n_tasks >= 1 && synth.duration_s > 0, ErrorCode::InvalidConfig, "bad synth settings");
  }

  json to_json() const {
    return {{"data_root", data_root.string()},
            {"participants", participants},
            {"architecture", architecture.name()},
            {"seed", seed},
            {"output_dir", output_dir.string()},
            {"n_h", n_h},
            {"use_hpo", use_hpo},
            {"lag", lag},
            {"train",
             {{"initial_lr", train.initial_lr},
              {"lr_drop_period", train.lr_drop_period},
              {"lr_drop_factor", train.lr_drop_factor},
              {"gradient_threshold", train.gradient_threshold},
              {"l2_strength", train.l2_strength},
              {"batch_size", train.batch_size},
              {"max_epochs", train.max_epochs},
              {"patience", train.patience},
              {"early_stopping", train.early_stopping}}},
            {"augment",
             {{"n_white", augment.n_white},
              {"n_colored", augment.n_colored},
              {"max_amplitude", augment.max_amplitude},
              {"colored_max_freq", augment.colored_max_freq}}},
            {"hpo",
             {{"budget", hpo.budget},
              {"strategy", hpo.strategy == hpo::Strategy::random_search ? "random" : "gp_ei"},
              {"n_initial", hpo.n_initial},
              {"top_k", hpo.top_k}}},
            {"eval", {{"levels", eval.levels}, {"realizations", eval.realizations}, {"closed_loop", eval.closed_loop}}},
            {"synth", {{"n_tasks", synth.n_tasks}, {"duration_s", synth.duration_s}}}};
  }

  /// Unknown keys are rejected so that typos do not silently fall back to
  /// defaults.
  static PipelineConfig from_json(const json& j) {
    PipelineConfig c;
    auto check_keys = [](const json& obj, const std::set<std::string>& allowed, const std::string& where) {
      if (!obj.is_object()) throw Error(ErrorCode::InvalidConfig, where + " must be an object");
      for (const auto& [k, v] : obj.items())
        if (!allowed.count(k)) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + where + k + "'");
    };
    try {
      check_keys(j, {"data_root", "participants", "architecture", "seed", "output_dir", "n_h", "use_hpo", "lag",
                     "train", "augment", "hpo", "eval", "synth"},
                 "");
      if (j.contains("data_root")) c.data_root = j["data_root"].get<std::string>();
      if (j.contains("participants")) c.participants = j["participants"].get<std::vector<int>>();
      if (j.contains("architecture")) c.architecture = Architecture::parse(j["architecture"].get<std::string>());
      if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
      if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
      if (j.contains("n_h")) c.n_h = j["n_h"].get<int>();
      if (j.contains("use_hpo")) c.use_hpo = j["use_hpo"].get<bool>();
      if (j.contains("lag")) c.lag = j["lag"].get<int>();
      if (j.contains("train")) {
        const auto& t = j["train"];
        check_keys(t, {"initial_lr", "lr_drop_period", "lr_drop_factor", "gradient_threshold", "l2_strength",
                       "batch_size", "max_epochs", "patience", "early_stopping"},
                   "train.");
        c.train.initial_lr = t.value("initial_lr", c.train.initial_lr);
        c.train.lr_drop_period = t.value("lr_drop_period", c.train.lr_drop_period);
        c.train.lr_drop_factor = t.value("lr_drop_factor", c.train.lr_drop_factor);
        c.train.gradient_threshold = t.value("gradient_threshold", c.train.gradient_threshold);
        c.train.l2_strength = t.value("l2_strength", c.train.l2_strength);
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
        c.train.max_epochs = t.value("max_epochs", c.train.max_epochs);
        c.train.patience = t.value("patience", c.train.patience);
        c.train.early_stopping = t.value("early_stopping", c.train.early_stopping);
      }
      if (j.contains("augment")) {
        const auto& a = j["augment"];
        check_keys(a, {"n_white", "n_colored", "max_amplitude", "colored_max_freq"}, "augment.");
        c.augment.n_white = a.value("n_white", c.augment.n_white);
        c.augment.n_colored = a.value("n_colored", c.augment.n_colored);
        c.augment.max_amplitude = a.value("max_amplitude", c.augment.max_amplitude);
        c.augment.colored_max_freq = a.value("colored_max_freq", c.augment.colored_max_freq);
      }
      if (j.contains("hpo")) {
        const auto& h = j["hpo"];
        check_keys(h, {"budget", "strategy", "n_initial", "top_k"}, "hpo.");
        c.hpo.budget = h.value("budget", c.hpo.budget);
        c.hpo.n_initial = h.value("n_initial", c.hpo.n_initial);
        c.hpo.top_k = h.value("top_k", c.hpo.top_k);
        const std::string strategy = h.value("strategy", std::string("gp_ei"));
        if (strategy != "gp_ei" && strategy != "random")
          throw Error(ErrorCode::InvalidConfig, "hpo.strategy must be gp_ei or random");
        c.hpo.strategy = strategy == "random" ? hpo::Strategy::random_search : hpo::Strategy::gp_expected_improvement;
      }
      if (j.contains("eval")) {
        const auto& e = j["eval"];
        check_keys(e, {"levels", "realizations", "closed_loop"}, "eval.");
        if (e.contains("levels")) c.eval.levels = e["levels"].get<std::vector<double>>();
        c.eval.realizations = e.value("realizations", c.eval.realizations);
        c.eval.closed_loop = e.value("closed_loop", c.eval.closed_loop);
      }
      if (j.contains("synth")) {
        const auto& s = j["synth"];
        check_keys(s, {"n_tasks", "duration_s"}, "synth.");
        c.synth.n_tasks = s.value("n_tasks", c.synth.n_tasks);
        c.synth.duration_s = s.value("duration_s", c.synth.duration_s);
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, std::string("config: ") + e.what());
    }
    return c;
  }
};

/// Reads a config file and applies the EMG2KIN_DATA override. Relative
/// paths inside the file resolve against the file's directory.
inline PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  PipelineConfig c = PipelineConfig::from_json(j);
  const fs::path base = path.parent_path();
  if (c.data_root.is_relative()) c.data_root = base / c.data_root;
  if (c.output_dir.is_relative()) c.output_dir = base / c.output_dir;
  return c;
}

inline void apply_environment(PipelineConfig& c) {
  if (const char* d = std::getenv("EMG2KIN_DATA"); d && *d) c.data_root = d;
}

// ---------------------------------------------------------------------------
// Hashing and manifests

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xCBF29CE484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
    out << content;
    if (!out) throw Error(ErrorCode::Io, "short write to " + p.string());
  }
  fs::rename(tmp, p);
}

inline std::string hash_file(const fs::path& p) { return hex64(fnv1a(read_file(p))); }

inline std::uint64_t hash_matrix(const Matrix& m, std::uint64_t h) {
  return fnv1a(std::string_view(reinterpret_cast<const char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size())), h);
}

inline std::string hash_sequences(const std::vector<features::FeatureSequence>& seqs) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& s : seqs) h = hash_matrix(s.targets, hash_matrix(s.features, h));
  return hex64(h);
}

/// Record of how a stage output was produced: the stage config fingerprint,
/// content hashes of its inputs and outputs, and the seeds it used.
struct Manifest {
  std::string stage;
  std::string config_hash;
  std::map<std::string, std::string> inputs;   // path relative to output_dir -> hash
  std::map<std::string, std::string> outputs;  // same
  std::map<std::string, std::uint64_t> seeds;

  json to_json() const {
    json s = json::object();
    for (const auto& [k, v] : seeds) s[k] = std::to_string(v);
    return {{"version", kManifestVersion}, {"tool_version", kToolVersion}, {"stage", stage},
            {"config_hash", config_hash},  {"inputs", inputs},             {"outputs", outputs},
            {"seeds", s}};
  }

  static Manifest from_json(const json& j) {
    Manifest m;
    m.stage = j.at("stage").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    for (const auto& [k, v] : j.at("seeds").items()) m.seeds[k] = std::stoull(v.get<std::string>());
    return m;
  }
};

// ---------------------------------------------------------------------------
// Stage errors and exit codes

enum class Stage { synth, preprocess, augment, hpo, train, eval, report };

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::synth: return "synth";
    case Stage::preprocess: return "preprocess";
    case Stage::augment: return "augment";
    case Stage::hpo: return "hpo";
    case Stage::train: return "train";
    case Stage::eval: return "eval";
    case Stage::report: return "report";
  }
  return "?";
}

inline Stage parse_stage(const std::string& s) {
  for (Stage st : {Stage::synth, Stage::preprocess, Stage::augment, Stage::hpo, Stage::train, Stage::eval, Stage::report})
    if (stage_name(st) == s) return st;
  throw Error(ErrorCode::InvalidConfig, "unknown stage " + s);
}

/// An Error re-thrown with the stage that raised it.
class StageError : public Error {
 public:
  StageError(Stage stage, const Error& cause)
      : Error(cause.code(), "[" + stage_name(stage) + "] " + strip_code(cause)), stage_(stage) {}
  Stage stage() const { return stage_; }

 private:
  static std::string strip_code(const Error& e) {
    const std::string what = e.what(), prefix = std::string(to_string(e.code())) + ": ";
    return what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what;
  }
  Stage stage_;
};

enum ExitCode : int { kExitOk = 0, kExitOther = 1, kExitConfig = 2, kExitData = 3, kExitDivergence = 4, kExitDependency = 5 };

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::NegativeLevel:
    case ErrorCode::CutoffOutOfRange:
    case ErrorCode::FactorNotPositive:
      return kExitConfig;
    case ErrorCode::MissingColumn:
    case ErrorCode::NaNData:
    case ErrorCode::RateMismatch:
    case ErrorCode::EmptyTrial:
    case ErrorCode::UnknownTaskId:
    case ErrorCode::SignalTooShort:
    case ErrorCode::TooShort:
    case ErrorCode::LengthMismatch:
    case ErrorCode::EmptyDataset:
    case ErrorCode::Parse:
    case ErrorCode::Io:
      return kExitData;
    case ErrorCode::DivergedLoss:
    case ErrorCode::NonFiniteActivation:
      return kExitDivergence;
    case ErrorCode::MissingArtifact:
    case ErrorCode::UntrainedModel:
      return kExitDependency;
    default:
      return kExitOther;
  }
}

// ---------------------------------------------------------------------------
// Output-directory lock

class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".emg2kin.lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f)
      throw Error(ErrorCode::Io, "output directory is locked by another run (" + path_.string() +
                                     "); remove the file if no run is active");
    std::fprintf(f, "locked\n");
    std::fclose(f);
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

// ---------------------------------------------------------------------------
// Pipeline

struct StageOutcome {
  Stage stage;
  bool skipped = false;  // manifest matched, nothing recomputed
  std::vector<fs::path> outputs;
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config, std::ostream* log = &std::cerr) : cfg_(std::move(config)), log_(log) {
    cfg_.validate();
  }

  const PipelineConfig& config() const { return cfg_; }

  /// Runs one stage for every configured participant. Errors come back as
  /// StageError so callers can report where the failure happened.
  std::vector<StageOutcome> run(Stage stage) {
    DirectoryLock lock(stage == Stage::synth ? cfg_.data_root : cfg_.output_dir);
    try {
      std::vector<StageOutcome> out;
      switch (stage) {
        case Stage::synth:
          out.push_back(run_synth());
          break;
        case Stage::hpo:
          out.push_back(run_hpo());
          break;
        case Stage::report:
          out.push_back(run_report());
          break;
        default:
          for (int p : cfg_.participants) {
            if (stage == Stage::preprocess) out.push_back(run_preprocess(p));
            if (stage == Stage::augment) out.push_back(run_augment(p));
            if (stage == Stage::train) out.push_back(run_train(p));
            if (stage == Stage::eval) out.push_back(run_eval(p));
          }
      }
      return out;
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError(stage, e);
    } catch (const fs::filesystem_error& e) {
      throw StageError(stage, Error(ErrorCode::Io, e.what()));
    } catch (const json::exception& e) {
      throw StageError(stage, Error(ErrorCode::Parse, e.what()));
    }
  }

  // Seeds: every stage derives its own stream from the single config seed.
  std::uint64_t stage_seed(Stage s, int participant) const {
    return emg2kin::detail::derive_seed(cfg_.seed, 0x57A6E0 + static_cast<std::uint64_t>(s),
                                        static_cast<std::uint64_t>(participant));
  }

  fs::path participant_dir(int p) const { return cfg_.output_dir / ("P" + std::to_string(p)); }
  fs::path preprocess_dir(int p) const { return participant_dir(p) / "preprocess"; }
  fs::path augment_dir(int p) const { return participant_dir(p) / "augment"; }
  fs::path arch_dir(int p) const { return participant_dir(p) / cfg_.architecture.name(); }
  fs::path hpo_dir() const { return cfg_.output_dir / "hpo" / cfg_.architecture.name(); }
  fs::path train_dir(int p) const { return arch_dir(p) / "train"; }
  fs::path eval_dir(int p) const { return arch_dir(p) / "eval"; }
  fs::path report_dir() const { return cfg_.output_dir / "report"; }
  int hpo_participant() const { return cfg_.participants.front(); }

  // ----------------------------------------------------------------- synth

  StageOutcome run_synth() {
    StageOutcome o{Stage::synth, false, {}};
    const json fingerprint = {{"synth", cfg_.to_json()["synth"]}, {"seed", cfg_.seed}, {"participants", cfg_.participants}};
    const fs::path manifest_path = cfg_.data_root / "synth_manifest.json";
    if (up_to_date(manifest_path, cfg_.data_root, fingerprint, {})) return skipped(o, manifest_path);
    Manifest m = new_manifest("synth", fingerprint);
    for (int p : cfg_.participants) {
      data::SyntheticConfig sc;
      sc.n_tasks = cfg_.synth.n_tasks;
      sc.duration_s = cfg_.synth.duration_s;
      sc.seed = cfg_.seed;
      sc.participant_id = p;
      m.seeds["participant_" + std::to_string(p)] = sc.seed;
      for (const auto& t : data::generate_synthetic_dataset(sc)) data::write_trial(cfg_.data_root, t);
      note("synth: wrote " + std::to_string(sc.n_tasks) + " tasks for participant " + std::to_string(p));
    }
    for (int p : cfg_.participants)
      for (const auto& f : data_files(p)) m.outputs[fs::relative(f, cfg_.data_root).generic_string()] = hash_file(f);
    write_file(manifest_path, m.to_json().dump(2) + "\n");
    o.outputs.push_back(manifest_path);
    return o;
  }

  // ------------------------------------------------------------ preprocess

  StageOutcome run_preprocess(int p) {
    StageOutcome o{Stage::preprocess, false, {}};
    const json fingerprint = {{"lag", cfg_.lag}};
    std::map<std::string, std::string> inputs;
    for (const auto& f : data_files(p)) inputs["data/" + fs::relative(f, cfg_.data_root).generic_string()] = hash_file(f);
    if (inputs.empty())
      throw Error(ErrorCode::Io, "no trial files for participant " + std::to_string(p) + " under " + cfg_.data_root.string());
    const fs::path dir = preprocess_dir(p), manifest_path = dir / "manifest.json";
    if (up_to_date(manifest_path, cfg_.output_dir, fingerprint, inputs)) return skipped(o, manifest_path);

    const auto trials = data::load_participant(cfg_.data_root, p);
    preprocess::PreprocessConfig pc;
    pc.lag = cfg_.lag;
    const auto prep = preprocess::prepare_participant(trials, data::DatasetSplit::standard(), pc);
    if (fs::exists(dir)) fs::remove_all(dir);
    Manifest m = new_manifest("preprocess", fingerprint);
    m.inputs = inputs;
    auto emit = [&](const fs::path& path, const json& j) {
      write_file(path, j.dump() + "\n");
      m.outputs[rel(path)] = hash_file(path);
    };
    emit(dir / "pca.json", features::to_json(prep.pca));
    emit(dir / "zscore.json", features::to_json(prep.zscore));
    emit(dir / "target_scale.json", preprocess::to_json(prep.target_scale));
    const std::pair<const char*, const std::vector<features::FeatureSequence>*> groups[] = {
        {"train", &prep.sequences.train}, {"validation", &prep.sequences.validation}, {"test", &prep.sequences.test}};
    for (const auto& [name, seqs] : groups)
      for (const auto& s : *seqs) emit(dir / name / ("T" + std::to_string(s.task_id) + ".json"), preprocess::to_json(s));
    note("preprocess: participant " + std::to_string(p) + ", " + std::to_string(trials.size()) +
         " tasks, PCA retains " + std::to_string(prep.pca.retained_fraction()) + " of EMG feature variance");
    write_file(manifest_path, m.to_json().dump(2) + "\n");
    o.outputs.push_back(manifest_path);
    return o;
  }

  struct LoadedPreprocess {
    features::ZScoreModel zscore;
    preprocess::TargetScale target_scale;
    data::SplitLists<features::FeatureSequence> sequences;
    Manifest manifest;
  };

  LoadedPreprocess load_preprocess(int p) const {
    const fs::path dir = preprocess_dir(p);
    const Manifest m = require_manifest(dir / "manifest.json", Stage::preprocess);
    LoadedPreprocess out;
    out.manifest = m;
    out.zscore = features::zscore_from_json(json::parse(read_file(dir / "zscore.json")));
    out.target_scale = preprocess::target_scale_from_json(json::parse(read_file(dir / "target_scale.json")));
    for (const auto& [name, list] : {std::pair<std::string, std::vector<features::FeatureSequence>*>{"train", &out.sequences.train},
                                     {"validation", &out.sequences.validation},
                                     {"test", &out.sequences.test}}) {
      std::vector<std::pair<int, fs::path>> files;
      if (fs::is_directory(dir / name))
        for (const auto& e : fs::directory_iterator(dir / name))
          if (e.path().extension() == ".json") files.emplace_back(std::stoi(e.path().stem().string().substr(1)), e.path());
      std::sort(files.begin(), files.end());
      for (const auto& [id, path] : files) list->push_back(preprocess::sequence_from_json(json::parse(read_file(path))));
    }
    return out;
  }

  // --------------------------------------------------------------- augment

  StageOutcome run_augment(int p) {
    StageOutcome o{Stage::augment, false, {}};
    const fs::path pre_manifest = preprocess_dir(p) / "manifest.json";
    require_manifest(pre_manifest, Stage::preprocess);
    const json fingerprint = augment_fingerprint(p);
    const std::map<std::string, std::string> inputs{{rel(pre_manifest), hash_file(pre_manifest)}};
    const fs::path dir = augment_dir(p), manifest_path = dir / "manifest.json";
    if (up_to_date(manifest_path, cfg_.output_dir, fingerprint, inputs)) return skipped(o, manifest_path);

    const auto pre = load_preprocess(p);
    const auto augmented = augment::augment_training_set(pre.sequences.train, augment_config(p));
    Manifest m = new_manifest("augment", fingerprint);
    m.inputs = inputs;
    m.seeds["augment"] = augment_config(p).seed;
    // The augmented set is regenerated on demand; only its fingerprint is stored.
    const json summary = {{"n_source", pre.sequences.train.size()},
                          {"n_sequences", augmented.size()},
                          {"content_hash", hash_sequences(augmented)},
                          {"config", fingerprint}};
    const fs::path path = dir / "augment.json";
    write_file(path, summary.dump(2) + "\n");
    m.outputs[rel(path)] = hash_file(path);
    write_file(manifest_path, m.to_json().dump(2) + "\n");
    note("augment: participant " + std::to_string(p) + ", " + std::to_string(augmented.size()) + " training sequences");
    o.outputs.push_back(path);
    return o;
  }

  /// Rebuilds the augmented training set and checks it against the stored
  /// fingerprint.
  std::vector<features::FeatureSequence> load_augmented(int p, const LoadedPreprocess& pre) const {
    const fs::path path = augment_dir(p) / "augment.json";
    require_manifest(augment_dir(p) / "manifest.json", Stage::augment);
    const json summary = json::parse(read_file(path));
    auto augmented = augment::augment_training_set(pre.sequences.train, augment_config(p));
    if (summary.at("content_hash").get<std::string>() != hash_sequences(augmented))
      throw Error(ErrorCode::MissingArtifact, "augmented set no longer matches its manifest; rerun the augment stage");
    return augmented;
  }

  // ------------------------------------------------------------------- hpo

  StageOutcome run_hpo() {
    StageOutcome o{Stage::hpo, false, {}};
    const int p = hpo_participant();
    const fs::path aug_manifest = augment_dir(p) / "manifest.json";
    require_manifest(aug_manifest, Stage::augment);
    const json fingerprint = {{"hpo", cfg_.to_json()["hpo"]}, {"train", cfg_.to_json()["train"]},
                              {"architecture", cfg_.architecture.name()}, {"seed", cfg_.seed}, {"participant", p}};
    const std::map<std::string, std::string> inputs{{rel(aug_manifest), hash_file(aug_manifest)}};
    const fs::path dir = hpo_dir(), manifest_path = dir / "manifest.json";
    if (up_to_date(manifest_path, cfg_.output_dir, fingerprint, inputs)) return skipped(o, manifest_path);

    const auto pre = load_preprocess(p);
    const auto train_set = preprocess::with_normalized_targets(load_augmented(p, pre), pre.target_scale);
    const auto val_set = preprocess::with_normalized_targets(pre.sequences.validation, pre.target_scale);
    fs::create_directories(dir);
    const fs::path log_path = dir / "trials.csv";
    std::ofstream log(log_path, std::ios::trunc);
    log << hpo::csv_header() << "\n" << std::flush;

    hpo::OptimizeOptions opt;
    opt.budget = cfg_.hpo.budget;
    opt.seed = stage_seed(Stage::hpo, p);
    opt.strategy = cfg_.hpo.strategy;
    opt.n_initial = cfg_.hpo.n_initial;
    opt.on_trial = [&](const hpo::HpoTrialRecord& r) {
      log << hpo::csv_row(r) << "\n" << std::flush;
      note("hpo: trial " + std::to_string(r.trial_index) + " n_h=" + std::to_string(r.candidate.n_h) +
           " cost=" + std::to_string(r.cost));
    };
    const auto space = hpo::SearchSpace::for_kind(cfg_.architecture.kind);
    const auto ranked = hpo::optimize(
        space, hpo::probe_objective(cfg_.architecture.kind, cfg_.architecture.depth, train_set, val_set, cfg_.train), opt);
    log.close();

    Manifest m = new_manifest("hpo", fingerprint);
    m.inputs = inputs;
    m.seeds["hpo"] = opt.seed;
    const fs::path ranked_path = dir / "ranked.csv";
    write_file(ranked_path, hpo::to_csv(ranked));
    m.outputs[rel(ranked_path)] = hash_file(ranked_path);
    write_file(manifest_path, m.to_json().dump(2) + "\n");
    o.outputs = {ranked_path, log_path};
    return o;
  }

  std::vector<hpo::Hyperparameters> load_ranked_hyperparameters() const {
    const fs::path dir = hpo_dir();
    require_manifest(dir / "manifest.json", Stage::hpo);
    std::istringstream in(read_file(dir / "ranked.csv"));
    std::string line;
    std::getline(in, line);
    std::vector<hpo::Hyperparameters> out;
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
      if (f.size() != 8) throw Error(ErrorCode::Parse, "malformed ranked.csv row: " + line);
      if (f[6] == "1") continue;  // failed trial
      out.push_back({std::stoi(f[1]), emg2kin::detail::parse_double(f[2]), emg2kin::detail::parse_double(f[3]),
                     emg2kin::detail::parse_double(f[4])});
    }
    if (out.empty()) throw Error(ErrorCode::MissingArtifact, "hpo produced no successful trial");
    return out;
  }

  // ----------------------------------------------------------------- train

  StageOutcome run_train(int p) {
    StageOutcome o{Stage::train, false, {}};
    const fs::path aug_manifest = augment_dir(p) / "manifest.json";
    require_manifest(aug_manifest, Stage::augment);
    std::map<std::string, std::string> inputs{{rel(aug_manifest), hash_file(aug_manifest)}};
    if (cfg_.use_hpo) {
      const fs::path hm = hpo_dir() / "manifest.json";
      require_manifest(hm, Stage::hpo);
      inputs[rel(hm)] = hash_file(hm);
    }
    const json fingerprint = {{"train", cfg_.to_json()["train"]}, {"architecture", cfg_.architecture.name()},
                              {"n_h", cfg_.n_h}, {"use_hpo", cfg_.use_hpo}, {"top_k", cfg_.hpo.top_k},
                              {"seed", cfg_.seed}};
    const fs::path dir = train_dir(p), manifest_path = dir / "manifest.json";
    if (up_to_date(manifest_path, cfg_.output_dir, fingerprint, inputs)) return skipped(o, manifest_path);

    const auto pre = load_preprocess(p);
    const auto train_set = preprocess::with_normalized_targets(load_augmented(p, pre), pre.target_scale);
    const auto val_set = preprocess::with_normalized_targets(pre.sequences.validation, pre.target_scale);

    std::vector<hpo::Hyperparameters> candidates;
    if (cfg_.use_hpo) {
      candidates = load_ranked_hyperparameters();
      if (static_cast<int>(candidates.size()) > cfg_.hpo.top_k) candidates.resize(static_cast<std::size_t>(cfg_.hpo.top_k));
    } else {
      candidates.push_back({cfg_.n_h, cfg_.train.initial_lr, cfg_.train.gradient_threshold, cfg_.train.l2_strength});
    }

    // Each candidate is trained in full; the lowest best-epoch validation FVU wins.
    std::optional<training::TrainResult> best;
    double best_fvu = std::numeric_limits<double>::infinity();
    std::size_t best_index = 0;
    const std::uint64_t seed = stage_seed(Stage::train, p);
    const int input_dim = static_cast<int>(train_set.front().features.cols());
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      training::TrainConfig tc = cfg_.train;
      tc.initial_lr = candidates[k].initial_lr;
      tc.gradient_threshold = candidates[k].gradient_threshold;
      tc.l2_strength = candidates[k].l2_strength;
      tc.seed = emg2kin::detail::derive_seed(seed, k);
      training::TrainOptions opts;
      opts.on_epoch = [&](const training::EpochRecord& e) {
        note("train: participant " + std::to_string(p) + " " + cfg_.architecture.name() + " candidate " +
             std::to_string(k) + " epoch " + std::to_string(e.epoch) + " loss " + std::to_string(e.train_loss) +
             " val_fvu " + std::to_string(e.validation_fvu));
      };
      auto result = training::train(cfg_.architecture.spec(candidates[k].n_h, input_dim), train_set, val_set, tc, opts);
      const double fvu = result.history.epochs.empty()
                             ? std::numeric_limits<double>::infinity()
                             : result.history.epochs[static_cast<std::size_t>(result.history.best_epoch)].validation_fvu;
      if (!best || fvu < best_fvu) {
        best_fvu = fvu;
        best = std::move(result);
        best_index = k;
      }
    }

    network::Checkpoint ck;
    ck.spec = best->model.spec;
    ck.params = best->model.params;
    ck.pca_model_ref = rel(preprocess_dir(p) / "pca.json");
    ck.zscore_model_ref = rel(preprocess_dir(p) / "zscore.json");
    ck.seed_lineage = {{"pipeline", cfg_.seed}, {"train", emg2kin::detail::derive_seed(seed, best_index)},
                       {"augment", augment_config(p).seed}};
    json ckj = network::to_json(ck);
    ckj["trained"] = best->model.trained;
    ckj["hyperparameters"] = {{"n_h", candidates[best_index].n_h},
                              {"initial_lr", candidates[best_index].initial_lr},
                              {"gradient_threshold", candidates[best_index].gradient_threshold},
                              {"l2_strength", candidates[best_index].l2_strength}};
    Manifest m = new_manifest("train", fingerprint);
    m.inputs = inputs;
    m.seeds = ck.seed_lineage;
    const fs::path ck_path = dir / "checkpoint.json", hist_path = dir / "history.csv";
    write_file(ck_path, ckj.dump() + "\n");
    write_file(hist_path, best->history.to_csv());
    m.outputs[rel(ck_path)] = hash_file(ck_path);
    m.outputs[rel(hist_path)] = hash_file(hist_path);
    write_file(manifest_path, m.to_json().dump(2) + "\n");
    o.outputs = {ck_path, hist_path};
    return o;
  }

  training::TrainedModel load_model(int p) const {
    const fs::path dir = train_dir(p);
    require_manifest(dir / "manifest.json", Stage::train);
    const json j = json::parse(read_file(dir / "checkpoint.json"));
    const auto ck = network::checkpoint_from_json(j);
    return {ck.spec, ck.params, j.value("trained", false)};
  }

  // ------------------------------------------------------------------ eval

  StageOutcome run_eval(int p) {
    StageOutcome o{Stage::eval, false, {}};
    const fs::path train_manifest = train_dir(p) / "manifest.json";
    const fs::path pre_manifest = preprocess_dir(p) / "manifest.json";
    require_manifest(train_manifest, Stage::train);
    require_manifest(pre_manifest, Stage::preprocess);
    const json fingerprint = {{"eval", cfg_.to_json()["eval"]}, {"seed", cfg_.seed}};
    const std::map<std::string, std::string> inputs{{rel(train_manifest), hash_file(train_manifest)},
                                                    {rel(pre_manifest), hash_file(pre_manifest)}};
    const fs::path dir = eval_dir(p), manifest_path = dir / "manifest.json";
    if (up_to_date(manifest_path, cfg_.output_dir, fingerprint, inputs)) return skipped(o, manifest_path);

    const auto pre = load_preprocess(p);
    const auto model = load_model(p);
    emg2kin::detail::require(model.trained, ErrorCode::UntrainedModel, "checkpoint holds an untrained model");
    evaluation::SweepConfig sc;
    sc.levels_pct = cfg_.eval.levels;
    sc.n_realizations = cfg_.eval.realizations;
    sc.seed = stage_seed(Stage::eval, p);
    sc.scale = evaluation::KinematicScale::from_zscore(pre.zscore);
    const auto report = evaluation::robustness_sweep(make_predictor(model, pre, sc.scale), pre.sequences.test, sc);

    Manifest m = new_manifest("eval", fingerprint);
    m.inputs = inputs;
    m.seeds["eval"] = sc.seed;
    const fs::path csv_path = dir / "report.csv", json_path = dir / "summary.json";
    write_file(csv_path, report.to_csv());
    write_file(json_path, report.summary_json().dump(2) + "\n");
    m.outputs[rel(csv_path)] = hash_file(csv_path);
    m.outputs[rel(json_path)] = hash_file(json_path);
    write_file(manifest_path, m.to_json().dump(2) + "\n");
    const auto by_level = report.aggregate(evaluation::Metric::rho, {evaluation::Axis::level});
    for (const auto& [k, s] : by_level)
      note("eval: participant " + std::to_string(p) + " level " + std::to_string(k[0]) + "% median rho " +
           std::to_string(s.median));
    o.outputs = {csv_path, json_path};
    return o;
  }

  evaluation::Predictor make_predictor(const training::TrainedModel& model, const LoadedPreprocess& pre,
                                       const evaluation::KinematicScale& scale) const {
    const auto ts = pre.target_scale;
    if (cfg_.eval.closed_loop) {
      const int lag = cfg_.lag;
      // The network emits normalized targets while the lagged block holds
      // z-scored raw accelerations; fold both maps into one affine feedback.
      evaluation::KinematicScale feedback;
      feedback.mean = ((scale.mean - ts.mean).array() / ts.std.array()).matrix();
      feedback.std = (scale.std.array() / ts.std.array()).matrix();
      return [model, ts, lag, feedback](const Matrix& x) {
        return ts.denormalize(evaluation::closed_loop_forward(model.spec, model.params, x, lag, feedback));
      };
    }
    return [model, ts](const Matrix& x) {
      return ts.denormalize(network::forward(model.spec, model.params, x, network::Mode::eval));
    };
  }

  // ---------------------------------------------------------------- report

  /// Collects every eval report under output_dir and writes the summary
  /// tables: noise level x architecture, task x level, joint x level, and
  /// participant (noise-free).
  StageOutcome run_report() {
    StageOutcome o{Stage::report, false, {}};
    std::map<std::string, std::string> inputs;
    std::vector<std::pair<std::string, fs::path>> sources;
    for (int p : cfg_.participants) {
      if (!fs::is_directory(participant_dir(p))) continue;
      for (const auto& e : fs::directory_iterator(participant_dir(p))) {
        const fs::path csv = e.path() / "eval" / "report.csv";
        if (!fs::exists(csv)) continue;
        inputs[rel(csv)] = hash_file(csv);
        sources.emplace_back(e.path().filename().string(), csv);
      }
    }
    if (sources.empty()) throw Error(ErrorCode::MissingArtifact, "missing output of the 'eval' stage; run 'eval' first");
    const json fingerprint = {{"participants", cfg_.participants}};
    const fs::path manifest_path = report_dir() / "manifest.json";
    if (up_to_date(manifest_path, cfg_.output_dir, fingerprint, inputs)) return skipped(o, manifest_path);
    std::sort(sources.begin(), sources.end());
    std::map<std::string, evaluation::EvaluationReport> by_arch;
    for (const auto& [arch, csv] : sources) {
      auto rep = read_report(csv);
      auto& dst = by_arch[arch].records;
      dst.insert(dst.end(), rep.records.begin(), rep.records.end());
    }

    using evaluation::Axis;
    using evaluation::Metric;
    auto fmt = [](double v) { return evaluation::detail::number(v); };
    auto table = [&](const std::string& header, const std::vector<Axis>& by, bool level0_only) {
      std::string out = "architecture," + header +
                        ",rho_mean,rho_se,rho_median,rho_q25,rho_q75,fvu_mean,fvu_se,fvu_median,fvu_q25,fvu_q75,n\n";
      for (const auto& [arch, rep] : by_arch) {
        evaluation::EvaluationReport view;
        for (const auto& r : rep.records)
          if (!level0_only || r.noise_level_pct == 0.0) view.records.push_back(r);
        const auto rho = view.aggregate(Metric::rho, by), err = view.aggregate(Metric::fvu, by);
        for (const auto& [key, s] : rho) {
          const auto& f = err.at(key);
          out += arch;
          for (double k : key) out += "," + fmt(k);
          out += "," + fmt(s.mean) + "," + fmt(s.standard_error) + "," + fmt(s.median) + "," + fmt(s.q25) + "," +
                 fmt(s.q75) + "," + fmt(f.mean) + "," + fmt(f.standard_error) + "," + fmt(f.median) + "," +
                 fmt(f.q25) + "," + fmt(f.q75) + "," + std::to_string(s.n) + "\n";
        }
      }
      return out;
    };
    const std::vector<std::pair<std::string, std::string>> files{
        {"by_level.csv", table("noise_level_pct", {Axis::level}, false)},
        {"overall.csv", table("all", {}, false)},
        {"by_task_level.csv", table("task_id,noise_level_pct", {Axis::task, Axis::level}, false)},
        {"by_joint_level.csv", table("joint,noise_level_pct", {Axis::joint, Axis::level}, false)},
        {"by_participant.csv", table("participant_id", {Axis::participant}, true)}};
    Manifest m = new_manifest("report", fingerprint);
    m.inputs = inputs;
    for (const auto& [name, content] : files) {
      // The pooled table has no key column; drop its placeholder header.
      std::string c = content;
      if (name == "overall.csv") c.replace(c.find(",all"), 4, "");
      write_file(report_dir() / name, c);
      m.outputs[rel(report_dir() / name)] = hash_file(report_dir() / name);
      o.outputs.push_back(report_dir() / name);
    }
    write_file(manifest_path, m.to_json().dump(2) + "\n");
    note("report: wrote " + std::to_string(files.size()) + " tables to " + report_dir().string());
    return o;
  }

  static evaluation::EvaluationReport read_report(const fs::path& csv) {
    std::istringstream in(read_file(csv));
    std::string line;
    std::getline(in, line);
    evaluation::EvaluationReport rep;
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
      if (f.size() != 8) throw Error(ErrorCode::Parse, csv.string() + ": malformed row: " + line);
      auto num = [](const std::string& s) { return s == "nan" ? std::nan("") : emg2kin::detail::parse_double(s); };
      rep.records.push_back({std::stoi(f[0]), std::stoi(f[1]), std::stoi(f[2]), num(f[3]), std::stoi(f[4]),
                             std::stoull(f[5]), num(f[6]), num(f[7])});
    }
    return rep;
  }

 private:
  augment::AugmentationConfig augment_config(int p) const {
    augment::AugmentationConfig a = cfg_.augment;
    a.seed = stage_seed(Stage::augment, p);
    return a;
  }

  json augment_fingerprint(int p) const {
    return {{"augment", cfg_.to_json()["augment"]}, {"seed", augment_config(p).seed}};
  }

  std::vector<fs::path> data_files(int p) const {
    std::vector<fs::path> files;
    const fs::path dir = cfg_.data_root / ("P" + std::to_string(p));
    if (!fs::is_directory(dir)) return files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
  }

  std::string rel(const fs::path& p) const { return fs::relative(p, cfg_.output_dir).generic_string(); }

  Manifest new_manifest(const std::string& stage, const json& fingerprint) const {
    Manifest m;
    m.stage = stage;
    m.config_hash = hex64(fnv1a(fingerprint.dump()));
    return m;
  }

  Manifest require_manifest(const fs::path& path, Stage upstream) const {
    if (!fs::exists(path))
      throw Error(ErrorCode::MissingArtifact, "missing output of the '" + stage_name(upstream) + "' stage (" +
                                                  path.string() + "); run '" + stage_name(upstream) + "' first");
    return Manifest::from_json(json::parse(read_file(path)));
  }

  /// True when a previous run used the same fingerprint and inputs and its
  /// outputs are intact.
  bool up_to_date(const fs::path& manifest_path, const fs::path& root, const json& fingerprint,
                  const std::map<std::string, std::string>& inputs) const {
    if (!fs::exists(manifest_path)) return false;
    try {
      const Manifest m = Manifest::from_json(json::parse(read_file(manifest_path)));
      if (m.config_hash != hex64(fnv1a(fingerprint.dump())) || m.inputs != inputs) return false;
      for (const auto& [path, hash] : m.outputs)
        if (!fs::exists(root / path) || hash_file(root / path) != hash) return false;
      return true;
    } catch (const std::exception&) {
      return false;
    }
  }

  StageOutcome skipped(StageOutcome o, const fs::path& manifest_path) const {
    o.skipped = true;
    o.outputs.push_back(manifest_path);
    note(stage_name(o.stage) + ": up to date (" + manifest_path.string() + ")");
    return o;
  }

  void note(const std::string& msg) const {
    if (log_) *log_ << msg << "\n" << std::flush;
  }

  PipelineConfig cfg_;
  std::ostream* log_;
};

}  // namespace emg2kin::pipeline

#endif  // EMG2KIN_PIPELINE_HPP
