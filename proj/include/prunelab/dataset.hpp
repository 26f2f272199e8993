#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace prunelab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Split : std::uint8_t { Train = 0, Test = 1 };

/// Per-feature statistics used by `standardize`.
struct Normalization {
  Vector mean;
  Vector std;
};

/// Labeled image set. Images are stored one sample per column
/// (features x samples, column-major), which is the sample-major layout of the
/// container file. Feature index = channel * side^2 + y * side + x.
struct Dataset {
  Matrix images;
  std::vector<std::uint32_t> labels;
  std::size_t channels = 1;
  std::size_t side = 0;
  std::size_t num_classes = 0;
  Split split = Split::Train;
  std::optional<Normalization> normalization;

  std::size_t size() const { return static_cast<std::size_t>(images.cols()); }
  std::size_t features() const { return static_cast<std::size_t>(images.rows()); }
  std::size_t pixels() const { return side * side; }

  /// Throws ShapeError / InvalidConfig when the invariants do not hold.
  void validate() const;

  std::vector<std::size_t> class_counts() const;
  std::vector<std::vector<std::size_t>> indices_by_class() const;

  /// Columns of `images` belonging to `label`, in dataset order.
  Matrix class_images(std::uint32_t label) const;
};

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

/// Writes the "PLDS" container. F64 (default) round-trips bit-exactly; F32
/// halves the size and is lossy for values not representable in float.
void save_dataset(const Dataset& ds, const std::string& path, DType dtype = DType::F64);
Dataset load_dataset(const std::string& path);

/// Writes `provenance` to `<path>.json` next to a container.
void write_sidecar(const std::string& path, const nlohmann::json& provenance);

/// Standardizes every feature with the dataset's own statistics. A dataset
/// that already carries normalization metadata is returned unchanged.
Dataset standardize(const Dataset& ds);

/// Standardizes with externally supplied statistics (test split reuses the
/// train statistics).
Dataset standardize(const Dataset& ds, const Normalization& stats);

Normalization feature_statistics(const Dataset& ds);

}  // namespace prunelab
