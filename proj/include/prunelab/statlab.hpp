#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunelab/nn.hpp"

namespace prunelab {

/// Population fourth standardized moment E[(x-Ex)^4] / E[(x-Ex)^2]^2,
/// two-pass with compensated summation. Throws InsufficientData below 4
/// samples and DegenerateVariance when var <= 1e-12 * mean(|x|)^2 or var == 0.
double kurtosis(std::span<const double> samples);

/// |3 - kurtosis(samples)|
double excess_kurtosis(std::span<const double> samples);

inline constexpr std::size_t kMinSamplesPerCell = 8;

struct KurtosisCell {
  std::size_t unit = 0;
  std::uint32_t label = 0;
  std::size_t n_samples = 0;
  std::optional<double> kurtosis;  // empty when degenerate or too few samples
};

struct KurtosisReport {
  std::size_t layer = 0;
  std::vector<KurtosisCell> cells;  // unit-major
  /// Mean kurtosis over valid units, one entry per class (NaN if no unit valid).
  std::vector<double> class_mean;
  /// Same for |3 - kurt|.
  std::vector<double> class_mean_excess;
  /// Mean of class_mean over classes with at least one valid unit.
  double grand_mean = 0.0;
  double grand_mean_excess = 0.0;
  std::size_t missing = 0;

  void write_csv(const std::string& path) const;
  nlohmann::json summary() const;
};

/// Per-(unit, class) kurtosis of hidden-layer preactivations over `data`
/// (expected to be the held-out split).
KurtosisReport preactivation_kurtosis(const Parameters& params, const Mask& mask, const Dataset& data,
                                      std::size_t layer);

/// Same aggregation over an already computed (unit x sample) matrix.
KurtosisReport kurtosis_report(const Matrix& preacts, std::span<const std::uint32_t> labels, std::size_t num_classes,
                               std::size_t layer);

}  // namespace prunelab
