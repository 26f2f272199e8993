#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "prunelab/dataset.hpp"
#include "prunelab/rng.hpp"

namespace fixture {

/// Standard-normal features with labels cycling 0..classes-1.
inline prunelab::Dataset gaussian_dataset(std::size_t features, std::size_t n, std::size_t classes,
                                          std::uint64_t seed) {
  prunelab::Dataset ds;
  ds.side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(features))));
  ds.channels = features / (ds.side * ds.side);
  ds.num_classes = classes;
  prunelab::Rng rng(seed);
  std::normal_distribution<double> g;
  ds.images.resize(static_cast<Eigen::Index>(features), static_cast<Eigen::Index>(n));
  for (Eigen::Index s = 0; s < ds.images.cols(); ++s)
    for (Eigen::Index f = 0; f < ds.images.rows(); ++f) ds.images(f, s) = g(rng);
  ds.labels.resize(n);
  for (std::size_t s = 0; s < n; ++s) ds.labels[s] = static_cast<std::uint32_t>(s % classes);
  return ds;
}

inline std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("prunelab_test_" + name);
}

}  // namespace fixture
