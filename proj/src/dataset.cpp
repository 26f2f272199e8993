#include "prunelab/dataset.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "prunelab/binary_io.hpp"
#include "prunelab/error.hpp"

namespace prunelab {

namespace {

constexpr char kMagic[] = "PLDS";
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kMaxCount = std::uint64_t{1} << 34;

}  // namespace

void Dataset::validate() const {
  if (side == 0 || channels == 0) throw ShapeError("dataset: side and channels must be positive");
  if (features() != channels * side * side)
    throw ShapeError("dataset: feature count " + std::to_string(features()) +
                     " != channels * side^2 = " + std::to_string(channels * side * side));
  if (labels.size() != size()) throw ShapeError("dataset: label count does not match sample count");
  for (auto l : labels)
    if (l >= num_classes) throw InvalidConfig("dataset: label " + std::to_string(l) + " >= class count");
  if (!images.allFinite()) throw InvalidConfig("dataset: non-finite pixel values");
  if (normalization && (static_cast<std::size_t>(normalization->mean.size()) != features() ||
                        static_cast<std::size_t>(normalization->std.size()) != features()))
    throw ShapeError("dataset: normalization metadata has wrong length");
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto l : labels) ++counts.at(l);
  return counts;
}

std::vector<std::vector<std::size_t>> Dataset::indices_by_class() const {
  std::vector<std::vector<std::size_t>> idx(num_classes);
  for (std::size_t s = 0; s < labels.size(); ++s) idx.at(labels[s]).push_back(s);
  return idx;
}

Matrix Dataset::class_images(std::uint32_t label) const {
  std::vector<Eigen::Index> cols;
  for (std::size_t s = 0; s < labels.size(); ++s)
    if (labels[s] == label) cols.push_back(static_cast<Eigen::Index>(s));
  return images(Eigen::all, cols);
}

void save_dataset(const Dataset& ds, const std::string& path, DType dtype) {
  ds.validate();
  io::Writer w(path);
  w.magic({kMagic, 4});
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint64_t>(ds.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.channels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.side));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.num_classes));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(ds.split));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(dtype));
  if (dtype == DType::F64) {
    w.put_all<double>({ds.images.data(), static_cast<std::size_t>(ds.images.size())});
  } else {
    std::vector<float> buf(ds.images.data(), ds.images.data() + ds.images.size());
    w.put_all<float>(buf);
  }
  w.put_all<std::uint32_t>(ds.labels);
  w.put<std::uint8_t>(ds.normalization ? 1 : 0);
  if (ds.normalization) {
    w.put_all<double>({ds.normalization->mean.data(), ds.features()});
    w.put_all<double>({ds.normalization->std.data(), ds.features()});
  }
  w.finish();
}

Dataset load_dataset(const std::string& path) {
  io::Reader r(path);
  r.expect_magic({kMagic, 4});
  r.expect_version(kVersion);
  Dataset ds;
  auto n = r.get<std::uint64_t>();
  ds.channels = r.get<std::uint32_t>();
  ds.side = r.get<std::uint32_t>();
  ds.num_classes = r.get<std::uint32_t>();
  auto split = r.get<std::uint8_t>();
  if (split > 1) throw FormatError("'" + path + "': bad split tag");
  ds.split = static_cast<Split>(split);
  auto dtype = r.get<std::uint8_t>();
  const std::uint64_t features = std::uint64_t{ds.channels} * ds.side * ds.side;
  r.expect_at_most(n, kMaxCount, "sample count");
  r.expect_at_most(features * n, kMaxCount, "image block size");
  ds.images.resize(static_cast<Eigen::Index>(features), static_cast<Eigen::Index>(n));
  std::span<double> block{ds.images.data(), static_cast<std::size_t>(ds.images.size())};
  if (dtype == static_cast<std::uint8_t>(DType::F64)) {
    r.get_all<double>(block);
  } else if (dtype == static_cast<std::uint8_t>(DType::F32)) {
    std::vector<float> buf(block.size());
    r.get_all<float>(buf);
    std::copy(buf.begin(), buf.end(), block.begin());
  } else {
    throw FormatError("'" + path + "': unknown dtype tag " + std::to_string(dtype));
  }
  ds.labels.resize(n);
  r.get_all<std::uint32_t>(ds.labels);
  if (r.get<std::uint8_t>() != 0) {
    Normalization norm{Vector(features), Vector(features)};
    r.get_all<double>({norm.mean.data(), static_cast<std::size_t>(features)});
    r.get_all<double>({norm.std.data(), static_cast<std::size_t>(features)});
    ds.normalization = std::move(norm);
  }
  ds.validate();
  return ds;
}

void write_sidecar(const std::string& path, const nlohmann::json& provenance) {
  std::ofstream out(path + ".json");
  if (!out) throw Error("cannot write sidecar for '" + path + "'");
  out << provenance.dump(2) << '\n';
}

Normalization feature_statistics(const Dataset& ds) {
  if (ds.size() == 0) throw InsufficientData("feature_statistics: empty dataset");
  const double n = static_cast<double>(ds.size());
  Normalization stats;
  stats.mean = ds.images.rowwise().sum() / n;
  Matrix centered = ds.images.colwise() - stats.mean;
  stats.std = (centered.array().square().rowwise().sum() / n).sqrt().matrix();
  // Constant features are left unscaled.
  for (Eigen::Index f = 0; f < stats.std.size(); ++f)
    if (!(stats.std[f] > 1e-12)) stats.std[f] = 1.0;
  return stats;
}

Dataset standardize(const Dataset& ds) {
  if (ds.normalization) return ds;
  return standardize(ds, feature_statistics(ds));
}

Dataset standardize(const Dataset& ds, const Normalization& stats) {
  if (ds.normalization) return ds;
  if (static_cast<std::size_t>(stats.mean.size()) != ds.features())
    throw ShapeError("standardize: statistics length does not match feature count");
  Dataset out = ds;
  out.images = ((ds.images.colwise() - stats.mean).array().colwise() / stats.std.array()).matrix();
  out.normalization = stats;
  return out;
}

}  // namespace prunelab
