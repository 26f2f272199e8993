#pragma once

// Receptive-field localization: pair-displacement correlation of a unit's
// mask, 2D Gaussian fit of that correlation, and width summaries.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunelab/mask.hpp"

namespace prunelab {

enum class ChannelMode { Union, PerChannel };

std::string to_string(ChannelMode mode);
ChannelMode parse_channel_mode(const std::string& s);

/// S(d) for d in [-(side-1), side-1]^2. Stored row-major over (dy, dx).
struct CorrelationMap {
  std::size_t side = 0;
  std::size_t unit = 0;
  std::vector<std::int64_t> values;

  std::size_t width() const { return 2 * side - 1; }
  std::int64_t at(int dx, int dy) const;
  std::int64_t& at(int dx, int dy);
  std::size_t nonzero_bins() const;
};

/// Pixel keep indicator (side^2) from a mask row of length channels*side^2.
std::vector<std::uint8_t> pixel_indicator(std::span<const std::uint8_t> mask_row, std::size_t side,
                                          std::size_t channels);

/// Counts ordered kept-pixel pairs (z, z') with z - z' = d. In PerChannel
/// mode each channel's map is computed separately and the maps are summed.
CorrelationMap correlation_map(std::span<const std::uint8_t> mask_row, std::size_t side, std::size_t channels = 1,
                               ChannelMode mode = ChannelMode::Union);

struct GaussianFit {
  double amplitude = 0.0;
  double mu_x = 0.0;
  double mu_y = 0.0;
  double sigma_x = 0.0;
  double sigma_y = 0.0;
  double offset = 0.0;
  double mse = 0.0;  // mean squared residual over the fitted bins
  bool converged = false;
  /// either width below one pixel
  bool degenerate_width = false;
  std::size_t iterations = 0;
  std::size_t fitted_bins = 0;
  /// SSE after every accepted step (starting with the initial guess).
  std::vector<double> sse_trace;
};

struct FitOptions {
  /// Drop the d = (0,0) bin, which only counts self-pairs.
  bool exclude_origin = false;
  std::size_t max_iterations = 200;
  double relative_tolerance = 1e-8;
};

inline constexpr std::size_t kGaussianParams = 6;

/// Widths are capped at kMaxWidthFactor * side; beyond that the model is a
/// plane over the displacement grid and sigma is unidentifiable.
inline constexpr double kMaxWidthFactor = 4.0;

/// Least-squares fit of A exp(-(dx-mx)^2/(2 sx^2) - (dy-my)^2/(2 sy^2)) + c,
/// c >= 0, by damped Gauss-Newton with log-parameterized widths.
/// Throws InsufficientData when fewer bins than parameters are fitted.
GaussianFit fit_gaussian2d(const CorrelationMap& map, const FitOptions& options = {});

/// Same model on an arbitrary real-valued grid (row-major over dy, dx, with
/// the centre bin at (side-1, side-1)).
GaussianFit fit_gaussian2d(std::span<const double> grid, std::size_t side, const FitOptions& options = {});

/// Units sorted by kept count (descending, ties by index); first k.
std::vector<std::size_t> select_top_units(const MaskMatrix& layer_mask, std::size_t k);

struct LocalizationRow {
  std::size_t round = 0;
  std::size_t unit = 0;
  std::size_t kept_count = 0;
  double sigma_x = 0.0;
  double sigma_y = 0.0;
  double mse = 0.0;
  bool converged = false;
};

struct LocalizationSummary {
  std::size_t round = 0;
  double sparsity = 0.0;
  std::size_t units_fitted = 0;
  std::size_t units_excluded = 0;
  double mean_sigma_x = 0.0;
  double median_sigma_x = 0.0;
  double mean_sigma_y = 0.0;
  double median_sigma_y = 0.0;
  double median_mse = 0.0;
};

struct LocalizationReport {
  std::vector<LocalizationRow> rows;
  std::vector<LocalizationSummary> summaries;

  void write_csv(const std::string& path) const;
  nlohmann::json summary() const;
};

struct LocalizationOptions {
  std::size_t top_k = 120;
  ChannelMode channel_mode = ChannelMode::Union;
  FitOptions fit{.exclude_origin = true};
};

/// Fits the top-k units (layer 0) of every mask in `history`.
LocalizationReport rf_width_report(const std::vector<Mask>& history, std::size_t side, std::size_t channels,
                                   const LocalizationOptions& options = {});

/// Summary statistics from rows of a single round.
LocalizationSummary summarize_rows(std::span<const LocalizationRow> rows);

double median(std::vector<double> v);

}  // namespace prunelab
