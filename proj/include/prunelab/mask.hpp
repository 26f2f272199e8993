#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace prunelab {

using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Binary keep(1)/prune(0) indicator per weight, one matrix per layer,
/// congruent with the layer's weight matrix (fan_out x fan_in).
struct Mask {
  std::vector<MaskMatrix> layers;
  std::size_t round = 0;

  static Mask ones(const std::vector<std::pair<std::size_t, std::size_t>>& shapes);

  std::size_t kept(std::size_t layer) const;
  std::size_t total(std::size_t layer) const;
  double sparsity(std::size_t layer) const;
  std::size_t kept_total() const;

  /// Row i of layer `layer` as 0/1 values.
  std::vector<std::uint8_t> row(std::size_t layer, std::size_t unit) const;

  bool operator==(const Mask& other) const;
};

/// true when every kept entry of `inner` is also kept in `outer`.
bool nested_in(const Mask& inner, const Mask& outer);

}  // namespace prunelab
