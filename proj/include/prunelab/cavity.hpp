#pragma once

// Leave-one-weight-out ("cavity") attribution of first-layer weights to
// preactivation kurtosis, and grouping by the IMP round that removes them.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunelab/nn.hpp"

namespace prunelab {

enum class CavityStatus : std::uint8_t {
  Ok,
  /// kurt(lambda) == 3 exactly: the score is defined as 0.
  NeutralKurtosis,
};

struct CavityScore {
  double value = 0.0;
  CavityStatus status = CavityStatus::Ok;
};

/// Normalized kurtosis change. Positive when the removal moves the kurtosis
/// away from 3 (on the side kurt_full lies on).
CavityScore cavity_from_kurtosis(double kurt_full, double kurt_removed);

/// Score of removing weight j from a unit. `lambda` holds the bias-free
/// preactivations sum_k W_ik X_k per sample; `inputs` is features x samples
/// (batch-normed inputs when the layer uses batch norm). The removed
/// preactivation is formed incrementally as lambda - W_ij X_j.
/// Throws DegenerateVariance if either distribution is degenerate.
CavityScore cavity_score(const Vector& weight_row, std::span<const double> lambda, const Matrix& inputs,
                         std::size_t j);

inline constexpr int kSurvivor = -1;

/// Removal round of every weight: r such that m(r-1) = 1 and m(r) = 0, or
/// kSurvivor if the weight is kept in the last mask.
struct RemovalSchedule {
  std::vector<Eigen::MatrixXi> rounds;
  std::size_t num_rounds = 0;

  static RemovalSchedule from_history(const std::vector<Mask>& history);
  int at(std::size_t layer, std::size_t unit, std::size_t input) const {
    return rounds.at(layer)(static_cast<Eigen::Index>(unit), static_cast<Eigen::Index>(input));
  }
};

/// round(total * (1 - fraction)^round)
std::size_t nominal_remaining(std::size_t total, double fraction, std::size_t round);

struct WeightScore {
  std::size_t unit = 0;
  std::size_t input = 0;
  int removal_round = kSurvivor;
  double score = 0.0;  // mean over valid classes; NaN when none is valid
  std::size_t n_classes_valid = 0;
  std::size_t n_neutral = 0;
};

struct CavityGroup {
  int removal_round = kSurvivor;
  std::size_t size = 0;      // members, scored or not
  std::size_t n_scored = 0;
  double mean = 0.0;         // arithmetic mean of member scores
  double normalized_mean = 0.0;  // N_W(n) * mean
};

struct CavityReport {
  std::size_t round = 0;
  std::size_t layer = 0;
  std::size_t nominal_remaining = 0;  // N_W(n)
  std::size_t remaining = 0;          // kept weights in the evaluated mask
  std::vector<WeightScore> weights;
  std::vector<CavityGroup> groups;    // ascending removal round, survivors last
  std::size_t excluded = 0;           // weights without any valid class
  std::size_t degenerate_cells = 0;   // (weight, class) pairs skipped

  const CavityGroup* group(int removal_round) const;
  void write_csv(const std::string& path) const;
  nlohmann::json summary() const;
};

struct CavityOptions {
  /// Restrict to these classes; empty means all classes.
  std::vector<std::uint32_t> class_subset;
};

/// Scores every weight kept in `mask` (layer 0) at evaluation round `round`,
/// per class over `data`, then averages over classes and groups by removal
/// round. `fraction` is the per-round pruning fraction used for N_W(n).
CavityReport cavity_report(const Parameters& params, const Mask& mask, const Dataset& data,
                           const RemovalSchedule& schedule, std::size_t round, double fraction,
                           const CavityOptions& options = {});

}  // namespace prunelab
