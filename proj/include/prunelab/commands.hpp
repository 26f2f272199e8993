#pragma once

// Subcommands of the `prunelab` tool. Each reads the run directory's
// config.json, checks upstream artifacts and writes its own outputs.

#include <optional>
#include <ostream>
#include <string>

#include "prunelab/experiment.hpp"

namespace prunelab {

/// Writes config.json (when it differs from the stored one) and returns the
/// effective config. Commands that change pipeline fields invalidate
/// downstream artifacts through the manifest hashes.
ExperimentConfig adopt_config(const RunDir& dir, const ExperimentConfig& cfg);

/// Generates data/train.plds and data/test.plds (raw, unstandardized).
/// kind is "edges", "nlgp" or "clone"; "clone" keeps the configured source
/// generator and sets data.clone.
void cmd_gen(const RunDir& dir, ExperimentConfig cfg, const std::string& kind, std::ostream& log);

/// Dense training from initialization.
void cmd_train(const RunDir& dir, std::ostream& log);

/// Full IMP history.
void cmd_imp(const RunDir& dir, std::ostream& log);

/// Oneshot pruning of the dense trained network. Default target: the
/// sparsity the IMP schedule reaches after its last round.
void cmd_oneshot(const RunDir& dir, std::optional<double> target, std::ostream& log);

/// Random mask at the same default target as oneshot.
void cmd_randprune(const RunDir& dir, std::optional<double> target, std::ostream& log);

/// what: kurtosis | localization | cavity | ica-match
void cmd_analyze(const RunDir& dir, const std::string& what, std::ostream& log);

/// Aggregates available analyses into figure-shaped CSV tables.
void cmd_report(const RunDir& dir, std::ostream& log);

/// 1 - expected_kept(K, s, N) / K for the scoped layers of `cfg`.
double schedule_target_sparsity(const ExperimentConfig& cfg);

}  // namespace prunelab
