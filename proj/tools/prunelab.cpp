// Command-line front end: prunelab --run-dir DIR [--config FILE] [overrides] <command>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "prunelab/commands.hpp"

using namespace prunelab;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> layers, batch_norm, scope, channel_mode, train_path, test_path;
  std::optional<std::size_t> iterations, rewind, batch_size, rounds, n_train, n_test, side, classes, top_k,
      ica_components;
  std::optional<double> lr, fraction, contrast, noise, xi, gain;
  std::vector<std::size_t> kurtosis_layers, cavity_rounds;
  std::vector<std::uint32_t> class_subset;
};

std::vector<std::size_t> parse_layers(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ':')) {
    try {
      out.push_back(std::stoul(tok));
    } catch (const std::exception&) {
      throw InvalidConfig("--layers expects sizes separated by ':', got '" + s + "'");
    }
  }
  return out;
}

std::vector<bool> parse_flags(const std::string& s) {
  std::vector<bool> out;
  for (char c : s) {
    if (c == '1') out.push_back(true);
    else if (c == '0') out.push_back(false);
    else if (c != ',') throw InvalidConfig("--batch-norm expects 0/1 flags such as 1,1,0");
  }
  return out;
}

void apply(const Overrides& o, ExperimentConfig& c) {
  if (o.seed) c.master_seed = *o.seed;
  if (o.layers) c.layer_sizes = parse_layers(*o.layers);
  if (o.batch_norm) c.batch_norm = parse_flags(*o.batch_norm);
  if (o.iterations) c.total_iterations = *o.iterations;
  if (o.rewind) c.rewind_iteration = *o.rewind;
  if (o.batch_size) c.batch_size = *o.batch_size;
  if (o.lr) c.learning_rate = *o.lr;
  if (o.fraction) c.schedule.fraction = *o.fraction;
  if (o.rounds) c.schedule.rounds = *o.rounds;
  if (o.scope) c.schedule.scope = parse_scope(*o.scope);
  if (o.n_train) c.data.n_train = *o.n_train;
  if (o.n_test) c.data.n_test = *o.n_test;
  if (o.side) c.data.side = *o.side;
  if (o.classes) c.data.n_classes = *o.classes;
  if (o.contrast) c.data.contrast = *o.contrast;
  if (o.noise) c.data.noise_std = *o.noise;
  if (o.xi) c.data.correlation_length = *o.xi;
  if (o.gain) c.data.gain = *o.gain;
  if (o.train_path) {
    c.data.generator = "file";
    c.data.train_path = *o.train_path;
  }
  if (o.test_path) c.data.test_path = *o.test_path;
  if (!o.kurtosis_layers.empty()) c.analysis.kurtosis_layers = o.kurtosis_layers;
  if (!o.cavity_rounds.empty()) c.analysis.cavity_rounds = o.cavity_rounds;
  if (!o.class_subset.empty()) c.analysis.cavity_class_subset = o.class_subset;
  if (o.top_k) c.analysis.localization_k = *o.top_k;
  if (o.channel_mode) c.analysis.channel_mode = parse_channel_mode(*o.channel_mode);
  if (o.ica_components) c.analysis.ica_components = *o.ica_components;
}

ExperimentConfig load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot read config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig("config file '" + path + "': " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pruning statistics laboratory: IMP, kurtosis, receptive-field and cavity analyses"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string run_dir, config_path;
  Overrides o;
  app.add_option("--run-dir", run_dir, "Run directory")->required();
  app.add_option("--config", config_path, "JSON config (defaults: run dir config.json, then built-ins)");
  app.add_option("--seed", o.seed, "Master seed");
  app.add_option("--layers", o.layers, "Layer sizes, e.g. 256:64:64:4");
  app.add_option("--batch-norm", o.batch_norm, "Per affine layer input batch-norm flags, e.g. 1,1,0");
  app.add_option("--iterations", o.iterations, "Total SGD iterations T");
  app.add_option("--rewind", o.rewind, "Rewind iteration");
  app.add_option("--batch-size", o.batch_size, "Minibatch size");
  app.add_option("--lr", o.lr, "Learning rate");
  app.add_option("--fraction", o.fraction, "Per-round pruning fraction s");
  app.add_option("--rounds", o.rounds, "IMP rounds");
  app.add_option("--scope", o.scope, "first_layer_only | all_layers");
  app.add_option("--n-train", o.n_train, "Training samples");
  app.add_option("--n-test", o.n_test, "Test samples");
  app.add_option("--side", o.side, "Image side N_p");
  app.add_option("--classes", o.classes, "Edge orientation classes");
  app.add_option("--contrast", o.contrast, "Edge contrast");
  app.add_option("--noise", o.noise, "Edge pixel noise std");
  app.add_option("--xi", o.xi, "NLGP correlation length");
  app.add_option("--gain", o.gain, "NLGP gain");
  app.add_option("--train-path", o.train_path, "PLDS training set (sets generator = file)");
  app.add_option("--test-path", o.test_path, "PLDS test set");
  app.add_option("--kurtosis-layers", o.kurtosis_layers, "Hidden layers for kurtosis (1-based)");
  app.add_option("--cavity-rounds", o.cavity_rounds, "Evaluation rounds for cavity scores");
  app.add_option("--class-subset", o.class_subset, "Classes used for cavity scores");
  app.add_option("--top-k", o.top_k, "Units per round in the RF-width report");
  app.add_option("--channel-mode", o.channel_mode, "union | per_channel");
  app.add_option("--ica-components", o.ica_components, "FastICA components");

  std::string gen_kind, analysis;
  std::optional<double> target;
  auto* gen = app.add_subcommand("gen", "Generate train/test data");
  gen->add_option("kind", gen_kind, "edges | nlgp | clone")->required();
  app.add_subcommand("train", "Dense training from initialization");
  app.add_subcommand("imp", "Iterative magnitude pruning with rewind");
  auto* oneshot = app.add_subcommand("oneshot", "Oneshot magnitude pruning of the dense network");
  oneshot->add_option("--sparsity", target, "Target sparsity (default: IMP schedule's final sparsity)");
  auto* randprune = app.add_subcommand("randprune", "Random pruning baseline");
  randprune->add_option("--sparsity", target, "Target sparsity (default: IMP schedule's final sparsity)");
  auto* analyze = app.add_subcommand("analyze", "Analyses over the IMP history");
  analyze->add_option("what", analysis, "kurtosis | localization | cavity | ica-match")->required();
  app.add_subcommand("report", "Aggregate analyses into figure tables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    const RunDir dir(run_dir);
    RunLock lock(dir.root());
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = load_file(config_path);
    else if (dir.has_config()) cfg = dir.load_config();
    apply(o, cfg);

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen") {
      cmd_gen(dir, cfg, gen_kind, std::cout);
      return kExitOk;
    }
    adopt_config(dir, cfg);
    if (cmd == "train") cmd_train(dir, std::cout);
    else if (cmd == "imp") cmd_imp(dir, std::cout);
    else if (cmd == "oneshot") cmd_oneshot(dir, target, std::cout);
    else if (cmd == "randprune") cmd_randprune(dir, target, std::cout);
    else if (cmd == "analyze") cmd_analyze(dir, analysis, std::cout);
    else if (cmd == "report") cmd_report(dir, std::cout);
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "prunelab: " << e.what() << '\n';
    return exit_code_for(e);
  }
}
