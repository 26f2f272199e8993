#pragma once

// Magnitude masks and the IMP / oneshot / random pruning drivers.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunelab/nn.hpp"

namespace prunelab {

enum class PruneScope { FirstLayerOnly, AllLayers };

std::string to_string(PruneScope scope);
PruneScope parse_scope(const std::string& s);

struct PruneSchedule {
  double fraction = 0.3;  // per round, in (0, 1)
  std::size_t rounds = 1;
  PruneScope scope = PruneScope::FirstLayerOnly;

  void validate() const;
  nlohmann::json to_json() const;
};

bool in_scope(PruneScope scope, std::size_t layer);

/// round-half-to-even(fraction * kept)
std::size_t prune_count(double fraction, std::size_t kept);

/// kept count after `rounds` applications of prune_count at `fraction`.
std::size_t expected_kept(std::size_t total, double fraction, std::size_t rounds);

/// Prunes prune_count(fraction, K) of the K entries still kept in `prev`,
/// smallest |w| first; ties go to the lower row-major index.
MaskMatrix magnitude_mask(const Matrix& weights, const MaskMatrix& prev, double fraction);

/// Layer-wise magnitude_mask over the layers in `scope`; other layers copy
/// `prev`.
Mask magnitude_mask(const Parameters& params, const Mask& prev, double fraction,
                    PruneScope scope = PruneScope::FirstLayerOnly);

Mask oneshot_prune(const Parameters& trained, double target_sparsity,
                   PruneScope scope = PruneScope::FirstLayerOnly);

/// Exactly round-half-even((1 - target) * rows * cols) kept entries chosen
/// uniformly at random.
MaskMatrix random_mask(std::size_t rows, std::size_t cols, double target_sparsity, std::uint64_t seed);

Mask random_mask(const std::vector<std::pair<std::size_t, std::size_t>>& shapes, double target_sparsity,
                 std::uint64_t seed, PruneScope scope = PruneScope::FirstLayerOnly);

struct RoundRecord {
  std::size_t round = 0;
  Mask mask;                          // m(round)
  std::vector<double> layer_sparsity;
  double sparsity = 0.0;              // over layers in scope
  /// theta(T) of the training run whose magnitudes produced this mask
  /// (empty for round 0).
  std::optional<Parameters> trained;
  std::vector<double> loss_trace;
  double accuracy = 0.0;              // training-set accuracy of `trained`
  double wall_seconds = 0.0;
};

struct ImpResult {
  Parameters init;
  Checkpoint rewind;
  std::vector<RoundRecord> rounds;  // rounds[n].mask == m(n), n = 0..N_IMP
  /// Training of theta(t_rewind) (.) m(N_IMP), when requested.
  std::optional<Parameters> final_trained;
};

struct ImpOptions {
  bool train_final = false;
  std::uint64_t config_hash = 0;
  std::function<void(const RoundRecord&)> on_round;
};

/// Round 0 trains the dense network from initialization and stores the
/// rewind checkpoint; m(1) comes from its final weights. Each later round n
/// trains theta(t_rewind) (.) m(n-1) for T - t_rewind iterations and prunes
/// |theta(T) (.) m(n-1)|.
ImpResult imp_run(const ModelConfig& model, const TrainConfig& train_config, const PruneSchedule& schedule,
                  const Dataset& data, const ImpOptions& options = {});

double scope_sparsity(const Mask& mask, PruneScope scope);

/// "PLMK" container: u32 version, u64 round, u32 layer count, per layer
/// u64 rows, u64 cols, then ceil(rows*cols/8) bytes of row-major bits, LSB
/// first.
void save_mask(const Mask& mask, const std::string& path);
Mask load_mask(const std::string& path);

/// Sparsity/kept counts per layer plus `extra` (schedule metadata).
nlohmann::json mask_summary(const Mask& mask, const nlohmann::json& extra = {});

}  // namespace prunelab
