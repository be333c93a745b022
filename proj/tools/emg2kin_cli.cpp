// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

// Command-line driver for the staged pipeline.
//
//   emg2kin synth      --out data --participant 1
//   emg2kin preprocess --config run.json
//   emg2kin all        --config run.json --arch ff10 --seed 3
//
// Precedence: built-in defaults < config file < EMG2KIN_DATA < flags.

#include "emg2kin/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using emg2kin::pipeline::PipelineConfig;
using emg2kin::pipeline::Stage;

struct Overrides {
  std::string config_path;
  std::vector<int> participants;
  std::string arch;
  std::optional<std::uint64_t> seed;
  std::vector<double> levels;
  std::optional<int> realizations;
  std::optional<int> n_h;
  std::string out;
  std::string data;
  bool quiet = false;
};

PipelineConfig resolve(const Overrides& o, Stage stage) {
  PipelineConfig c = o.config_path.empty() ? PipelineConfig{} : emg2kin::pipeline::load_config(o.config_path);
  emg2kin::pipeline::apply_environment(c);
  if (!o.participants.empty()) c.participants = o.participants;
  if (!o.arch.empty()) c.architecture = emg2kin::pipeline::Architecture::parse(o.arch);
  if (o.seed) c.seed = *o.seed;
  if (!o.levels.empty()) c.eval.levels = o.levels;
  if (o.realizations) c.eval.realizations = *o.realizations;
  if (o.n_h) c.n_h = *o.n_h;
  if (!o.data.empty()) c.data_root = o.data;
  // For synth the output is the dataset itself.
  if (!o.out.empty()) (stage == Stage::synth ? c.data_root : c.output_dir) = o.out;
  return c;
}

void add_common_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--participant", o.participants, "participant id (repeatable)");
  cmd->add_option("--arch", o.arch, "lstm1|lstm2|lstm3|ff1|ff3|ff10");
  cmd->add_option("--seed", o.seed, "base seed for every stage");
  cmd->add_option("--levels", o.levels, "test noise levels in percent")->delimiter(',');
  cmd->add_option("--realizations", o.realizations, "noise draws per task and level");
  cmd->add_option("--n-h", o.n_h, "total hidden units when hpo is off");
  cmd->add_option("--out", o.out, "output directory (dataset directory for synth)");
  cmd->add_option("--data", o.data, "dataset root");
  cmd->add_flag("-q,--quiet", o.quiet, "suppress progress messages");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EMG to hand-kinematics regression pipeline"};
  app.require_subcommand(1);
  Overrides o;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"synth", "generate a synthetic dataset"},
      {"preprocess", "filter, extract features, fit PCA and z-score"},
      {"augment", "build the noise-augmented training set"},
      {"hpo", "Bayesian hyperparameter search on the first participant"},
      {"train", "train the selected architecture"},
      {"eval", "noise-robustness sweep on the test tasks"},
      {"report", "aggregate tables across participants and architectures"},
      {"all", "preprocess, augment, train, eval, report"}};
  for (const auto& [name, help] : commands) add_common_flags(app.add_subcommand(name, help), o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : emg2kin::pipeline::kExitConfig;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  std::vector<Stage> stages;
  if (name == "all") {
    stages = {Stage::preprocess, Stage::augment, Stage::train, Stage::eval, Stage::report};
  } else {
    try {
      stages = {emg2kin::pipeline::parse_stage(name)};
    } catch (const emg2kin::Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return emg2kin::pipeline::kExitConfig;
    }
  }

  try {
    PipelineConfig cfg = resolve(o, stages.front());
    if (name == "all" && cfg.use_hpo) stages.insert(stages.begin() + 2, Stage::hpo);
    emg2kin::pipeline::Pipeline pipeline(cfg, o.quiet ? nullptr : &std::cerr);
    for (Stage s : stages)
      for (const auto& outcome : pipeline.run(s))
        for (const auto& path : outcome.outputs) std::cout << path.string() << "\n";
    return emg2kin::pipeline::kExitOk;
  } catch (const emg2kin::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return emg2kin::pipeline::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return emg2kin::pipeline::kExitOther;
  }
}
