#include "prunelab/mask.hpp"

#include "prunelab/error.hpp"

namespace prunelab {

Mask Mask::ones(const std::vector<std::pair<std::size_t, std::size_t>>& shapes) {
  Mask m;
  for (auto [rows, cols] : shapes)
    m.layers.push_back(MaskMatrix::Ones(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)));
  return m;
}

std::size_t Mask::kept(std::size_t layer) const {
  return static_cast<std::size_t>(layers.at(layer).cast<std::size_t>().sum());
}

std::size_t Mask::total(std::size_t layer) const { return static_cast<std::size_t>(layers.at(layer).size()); }

double Mask::sparsity(std::size_t layer) const {
  const auto t = total(layer);
  return t == 0 ? 0.0 : 1.0 - static_cast<double>(kept(layer)) / static_cast<double>(t);
}

std::size_t Mask::kept_total() const {
  std::size_t k = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) k += kept(l);
  return k;
}

std::vector<std::uint8_t> Mask::row(std::size_t layer, std::size_t unit) const {
  const auto& m = layers.at(layer);
  if (unit >= static_cast<std::size_t>(m.rows())) throw ShapeError("mask row out of range");
  std::vector<std::uint8_t> r(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(static_cast<Eigen::Index>(unit), j);
  return r;
}

bool Mask::operator==(const Mask& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].rows() != other.layers[l].rows() || layers[l].cols() != other.layers[l].cols()) return false;
    if (layers[l] != other.layers[l]) return false;
  }
  return true;
}

bool nested_in(const Mask& inner, const Mask& outer) {
  if (inner.layers.size() != outer.layers.size()) return false;
  for (std::size_t l = 0; l < inner.layers.size(); ++l) {
    const auto& a = inner.layers[l];
    const auto& b = outer.layers[l];
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (Eigen::Index k = 0; k < a.size(); ++k)
      if (a.data()[k] && !b.data()[k]) return false;
  }
  return true;
}

}  // namespace prunelab
