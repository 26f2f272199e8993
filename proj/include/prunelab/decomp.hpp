#pragma once

// PCA, FastICA and mask-to-component matching.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunelab/dataset.hpp"

namespace prunelab {

enum class DecompMethod : std::uint8_t { PCA = 0, ICA = 1 };

struct Components {
  DecompMethod method = DecompMethod::PCA;
  Matrix components;           // n_components x features, unit-norm rows
  Vector mean;                 // features
  Vector explained_variance;   // PCA only, non-increasing
  Matrix unmixing;             // ICA only: sources = unmixing * (x - mean)
  Matrix rotation;             // ICA only: orthogonal unmixing in whitened space
  std::size_t iterations = 0;
  bool converged = true;
  std::size_t valid_components = 0;
  bool rank_deficient = false;
};

/// Eigendecomposition of the (n-1)-normalized covariance of `data`
/// (features x samples). Components ordered by decreasing eigenvalue; the
/// largest-|entry| coordinate of each component is made positive.
Components pca(const Matrix& data, std::size_t n_components);

struct IcaOptions {
  double tolerance = 1e-4;
  std::size_t max_iterations = 200;
  double alpha = 1.0;  // logcosh contrast parameter
};

/// Symmetric FastICA with the logcosh contrast on PCA-whitened data.
Components fast_ica(const Matrix& data, std::size_t n_components, std::uint64_t seed,
                    const IcaOptions& options = {});

/// Normalized Amari distance of a square matrix P = unmixing * mixing from a
/// scaled permutation; 0 iff P is one.
double amari_index(const Matrix& p);

struct MaskMatch {
  std::size_t component = 0;
  double similarity = 0.0;  // max |cos| over components, in [0, 1]
  bool zero_mask = false;
};

/// One match per row of `mask_rows` (masks x features).
std::vector<MaskMatch> match_masks_to_components(const Matrix& mask_rows, const Matrix& components);

/// Collapses channel-major components (n x channels*side^2) to pixel space
/// by the root-sum-square over channels.
Matrix components_to_pixels(const Matrix& components, std::size_t channels);

/// "PLCP" container plus `<path>.json` metadata.
void save_components(const Components& comps, const std::string& path, const nlohmann::json& metadata = {});
Components load_components(const std::string& path);

}  // namespace prunelab
