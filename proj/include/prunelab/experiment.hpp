#pragma once

// Experiment configuration, seed splitting and run-directory persistence
// shared by the CLI, the Python module and the acceptance suite.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunelab/datagen.hpp"
#include "prunelab/error.hpp"
#include "prunelab/localization.hpp"
#include "prunelab/pruning.hpp"

namespace prunelab {

struct DataSource {
  /// "edges", "nlgp" or "file"
  std::string generator = "edges";
  /// Replace both splits by samples from a Gaussian clone of the source
  /// training split.
  bool clone = false;
  std::size_t n_train = 20000;
  std::size_t n_test = 4000;
  std::size_t side = 16;
  std::size_t n_classes = 4;  // edges only; nlgp is always binary
  double contrast = 1.0;
  double noise_std = 2.0;
  double correlation_length = 2.0;
  double gain = 3.0;
  std::string train_path;  // generator == "file"
  std::string test_path;
};

struct AnalysisConfig {
  std::vector<std::size_t> kurtosis_layers{1};
  /// Evaluation rounds for cavity scores; empty means 0..N_IMP-1.
  std::vector<std::size_t> cavity_rounds;
  std::vector<std::uint32_t> cavity_class_subset;
  std::size_t localization_k = 120;
  ChannelMode channel_mode = ChannelMode::Union;
  std::size_t ica_components = 64;
  std::size_t ica_max_samples = 20000;
};

/// Everything a run depends on. Component seeds are not stored: they are
/// derived from `master_seed` by `seeds()`.
struct ExperimentConfig {
  std::vector<std::size_t> layer_sizes{256, 64, 64, 4};
  std::vector<bool> batch_norm{true, true, false};
  std::size_t total_iterations = 3000;
  std::size_t rewind_iteration = 75;
  std::size_t batch_size = 40;
  double learning_rate = 0.05;
  PruneSchedule schedule{0.3, 8, PruneScope::FirstLayerOnly};
  DataSource data;
  AnalysisConfig analysis;
  std::uint64_t master_seed = 0;

  ModelConfig model() const;
  TrainConfig train() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);

  /// Hash of every field that influences trained weights and masks (data,
  /// model, training, schedule, seed). Analysis settings are excluded.
  std::uint64_t pipeline_hash() const;
  /// Hash of the data section and master seed only.
  std::uint64_t data_hash() const;
};

/// Seed splitting rule: component seed = derive_seed(master, tag).
struct ComponentSeeds {
  std::uint64_t data_train, data_test, clone_train, clone_test, model, batches, random_mask, ica;
};
ComponentSeeds seeds(std::uint64_t master_seed);

struct PreparedData {
  Dataset train;  // standardized with its own statistics
  Dataset test;   // standardized with the train statistics
};

/// Raw (unstandardized) train/test splits as described by `cfg.data`,
/// including clone substitution.
std::pair<Dataset, Dataset> generate_data(const ExperimentConfig& cfg);
PreparedData standardize_pair(const Dataset& train, const Dataset& test);
PreparedData prepare_data(const ExperimentConfig& cfg);

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitStale = 3, kExitDivergence = 4 };
int exit_code_for(const std::exception& e);

/// Raised when a command needs an artifact that an earlier command makes.
class MissingArtifact : public Error {
 public:
  MissingArtifact(const std::string& what, const std::string& producer)
      : Error("missing " + what + "; run `prunelab " + producer + "` first"), producer_(producer) {}
  const std::string& producer() const { return producer_; }

 private:
  std::string producer_;
};

/// Run-directory layout:
///   config.json, manifest.json, data/, checkpoints/, masks/, reports/, logs/
class RunDir {
 public:
  explicit RunDir(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path data(const std::string& name) const { return root_ / "data" / name; }
  std::filesystem::path checkpoint(const std::string& name) const { return root_ / "checkpoints" / name; }
  std::filesystem::path mask(const std::string& name) const { return root_ / "masks" / name; }
  std::filesystem::path report(const std::string& name) const { return root_ / "reports" / name; }
  std::filesystem::path log(const std::string& name) const { return root_ / "logs" / name; }

  void create_layout() const;
  bool has_config() const;
  ExperimentConfig load_config() const;
  void save_config(const ExperimentConfig& cfg) const;

  /// Records that `stage` was produced under `hash`.
  void mark(const std::string& stage, std::uint64_t hash) const;
  /// Throws MissingArtifact if `stage` was never produced and StaleArtifact
  /// if it was produced under a different pipeline hash.
  void require(const std::string& stage, std::uint64_t hash, const std::string& producer) const;
  bool has(const std::string& stage) const;

 private:
  nlohmann::json manifest() const;
  std::filesystem::path root_;
};

/// Exclusive ownership of a run directory for one command (O_EXCL lockfile).
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& root);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

std::string round_name(const std::string& prefix, std::size_t round, const std::string& ext);

/// Mask history m(0..N) saved by the `imp` command.
std::vector<Mask> load_imp_history(const RunDir& dir, std::size_t rounds);

}  // namespace prunelab
