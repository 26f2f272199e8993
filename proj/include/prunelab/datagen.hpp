#pragma once

// Synthetic image generators and the per-class Gaussian clone.

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunelab/dataset.hpp"

namespace prunelab {

struct CloneCell {
  Vector mean;        // side^2
  Matrix covariance;  // empirical, unregularized
  Matrix factor;      // lower-triangular L with L L^T = covariance + epsilon I
  double epsilon = 0.0;
};

/// Independent Gaussian per (class, channel) matching the source's first two
/// moments.
struct CloneModel {
  std::size_t side = 0;
  std::size_t channels = 1;
  std::size_t num_classes = 0;
  std::vector<std::size_t> sample_counts;  // source samples per class
  std::vector<std::vector<CloneCell>> cells;  // [class][channel]
};

/// Regularizes as cov + eps I with eps = 1e-6 * trace(cov) / dim (floored at
/// 1e-12) and Cholesky-factors, growing eps tenfold until the factorization
/// succeeds. Returns the factor; `epsilon` receives the value used.
Matrix regularized_cholesky(const Matrix& cov, double& epsilon);

CloneModel fit_gaussian_clone(const Dataset& data);

/// counts[c] samples of class c, grouped by class in label order.
Dataset sample_clone(const CloneModel& model, std::span<const std::size_t> counts, std::uint64_t seed,
                     Split split = Split::Train);

inline constexpr std::size_t kOrientationBins = 180;

struct EdgeParams {
  std::size_t n_samples = 1000;
  std::size_t side = 16;
  std::size_t n_classes = 4;
  double contrast = 1.0;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  Split split = Split::Train;

  nlohmann::json to_json() const;
};

/// Each image is a step edge through a uniformly random centre,
/// clamp(2 * (cos t (x - cx) + sin t (y - cy)), -1, 1) * contrast, plus
/// N(0, noise_std^2) noise. The edge orientation is one of kOrientationBins
/// equal bins of [0, pi) and the polarity is a fair coin (t = orientation or
/// orientation + pi); the class is the orientation bin divided by
/// kOrientationBins / n_classes.
Dataset gen_edges(const EdgeParams& params);

struct NlgpParams {
  std::size_t n_samples = 1000;
  std::size_t side = 16;
  double correlation_length = 2.0;
  double gain = 3.0;
  std::uint64_t seed = 0;
  Split split = Split::Train;

  nlohmann::json to_json() const;
};

/// sqrt(Var[erf(g z)]) for z ~ N(0, 1).
double nlgp_normalizer(double gain);

/// Binary task. Class 0: erf(g z) / Z(g) with z a stationary GP with
/// covariance exp(-|dz|^2 / (2 xi^2)) on the pixel grid. Class 1: Gaussian
/// with the same covariance as class 0. Labels alternate 0, 1, 0, ...
Dataset gen_nlgp(const NlgpParams& params);

/// Latent GP covariance on a side x side grid.
Matrix squared_exponential_covariance(std::size_t side, double correlation_length);

}  // namespace prunelab
