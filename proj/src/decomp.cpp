#include "prunelab/decomp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "prunelab/binary_io.hpp"
#include "prunelab/error.hpp"
#include "prunelab/rng.hpp"

namespace prunelab {

namespace {

constexpr char kMagic[] = "PLCP";
constexpr std::uint32_t kVersion = 1;

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Makes the largest-|entry| coordinate of each row positive.
void fix_signs(Matrix& rows) {
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    Eigen::Index arg = 0;
    rows.row(i).cwiseAbs().maxCoeff(&arg);
    if (rows(i, arg) < 0.0) rows.row(i) *= -1.0;
  }
}

// (W W^T)^{-1/2} W
Matrix symmetric_decorrelation(const Matrix& w) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(w * w.transpose());
  const Vector inv_sqrt = es.eigenvalues().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose() * w;
}

struct Eigenpairs {
  Vector values;   // descending
  Matrix vectors;  // columns
};

Eigenpairs sorted_eigen(const Matrix& cov) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  if (es.info() != Eigen::Success) throw Error("eigendecomposition failed");
  return {es.eigenvalues().reverse(), es.eigenvectors().rowwise().reverse()};
}

}  // namespace

Components pca(const Matrix& data, std::size_t n_components) {
  const auto d = static_cast<std::size_t>(data.rows());
  const auto n = static_cast<std::size_t>(data.cols());
  if (n < 2) throw InsufficientData("pca: need at least 2 samples");
  if (n_components == 0 || n_components > std::min(d, n))
    throw InvalidConfig("pca: n_components must lie in [1, min(samples, features)]");
  Components out;
  out.method = DecompMethod::PCA;
  out.mean = data.rowwise().mean();
  const Matrix centered = data.colwise() - out.mean;
  const Matrix cov = centered * centered.transpose() / static_cast<double>(n - 1);
  const Eigenpairs e = sorted_eigen(cov);
  const auto k = static_cast<Eigen::Index>(n_components);
  out.components = e.vectors.leftCols(k).transpose();
  fix_signs(out.components);
  out.explained_variance = e.values.head(k).cwiseMax(0.0);
  const double top = std::max(e.values[0], 0.0);
  out.valid_components = 0;
  for (Eigen::Index i = 0; i < k; ++i)
    if (e.values[i] > 1e-12 * top && e.values[i] > 0.0) ++out.valid_components;
  out.rank_deficient = out.valid_components < n_components;
  return out;
}

Components fast_ica(const Matrix& data, std::size_t n_components, std::uint64_t seed, const IcaOptions& options) {
  const auto d = static_cast<std::size_t>(data.rows());
  const auto n = static_cast<std::size_t>(data.cols());
  if (n < 2) throw InsufficientData("fast_ica: need at least 2 samples");
  if (n_components == 0 || n_components > std::min(d, n))
    throw InvalidConfig("fast_ica: n_components must lie in [1, min(samples, features)]");
  const auto k = static_cast<Eigen::Index>(n_components);
  const double dn = static_cast<double>(n);

  Components out;
  out.method = DecompMethod::ICA;
  out.mean = data.rowwise().mean();
  const Matrix centered = data.colwise() - out.mean;
  const Eigenpairs e = sorted_eigen(centered * centered.transpose() / dn);
  const double top = std::max(e.values[0], 0.0);
  for (Eigen::Index i = 0; i < k; ++i)
    if (!(e.values[i] > 1e-12 * top && e.values[i] > 0.0))
      throw InvalidConfig("fast_ica: n_components exceeds the rank of the data");
  // whitening: K = D^{-1/2} E^T, so that E_n[z z^T] = I
  const Matrix whitening =
      e.values.head(k).cwiseSqrt().cwiseInverse().asDiagonal() * e.vectors.leftCols(k).transpose();
  const Matrix z = whitening * centered;

  Rng rng(derive_seed(seed, "fast_ica"));
  std::normal_distribution<double> normal;
  Matrix w(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) w(i, j) = normal(rng);
  w = symmetric_decorrelation(w);

  const double a = options.alpha;
  out.converged = false;
  std::size_t it = 0;
  while (it < options.max_iterations) {
    ++it;
    const Matrix y = w * z;
    const Matrix g = (a * y.array()).tanh().matrix();
    const Vector g_prime_mean = (a * (1.0 - g.array().square())).rowwise().mean();
    Matrix w_new = g * z.transpose() / dn - g_prime_mean.asDiagonal() * w;
    w_new = symmetric_decorrelation(w_new);
    const double change = ((w_new * w.transpose()).diagonal().cwiseAbs().array() - 1.0).abs().maxCoeff();
    w = std::move(w_new);
    if (change < options.tolerance) {
      out.converged = true;
      break;
    }
  }
  out.iterations = it;
  out.rotation = w;
  out.unmixing = w * whitening;
  out.components = out.unmixing;
  for (Eigen::Index i = 0; i < k; ++i) out.components.row(i).normalize();
  out.valid_components = n_components;
  return out;
}

double amari_index(const Matrix& p) {
  const auto n = p.rows();
  if (n != p.cols() || n < 2) throw ShapeError("amari_index: need a square matrix of size >= 2");
  const Matrix a = p.cwiseAbs();
  double rows = 0.0, cols = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) rows += a.row(i).sum() / a.row(i).maxCoeff() - 1.0;
  for (Eigen::Index j = 0; j < n; ++j) cols += a.col(j).sum() / a.col(j).maxCoeff() - 1.0;
  return (rows + cols) / (2.0 * static_cast<double>(n) * static_cast<double>(n - 1));
}

std::vector<MaskMatch> match_masks_to_components(const Matrix& mask_rows, const Matrix& components) {
  if (mask_rows.cols() != components.cols())
    throw ShapeError("match_masks_to_components: feature dimensions differ");
  if (components.rows() == 0) throw InvalidConfig("match_masks_to_components: no components");
  std::vector<MaskMatch> out;
  out.reserve(static_cast<std::size_t>(mask_rows.rows()));
  const Vector comp_norms = components.rowwise().norm();
  for (Eigen::Index r = 0; r < mask_rows.rows(); ++r) {
    MaskMatch m;
    const double mn = mask_rows.row(r).norm();
    if (mn == 0.0) {
      m.zero_mask = true;
      out.push_back(m);
      continue;
    }
    for (Eigen::Index c = 0; c < components.rows(); ++c) {
      if (comp_norms[c] == 0.0) continue;
      const double cosine = std::abs(mask_rows.row(r).dot(components.row(c))) / (mn * comp_norms[c]);
      if (cosine > m.similarity) {
        m.similarity = std::min(cosine, 1.0);
        m.component = static_cast<std::size_t>(c);
      }
    }
    out.push_back(m);
  }
  return out;
}

Matrix components_to_pixels(const Matrix& components, std::size_t channels) {
  if (channels == 0 || components.cols() % static_cast<Eigen::Index>(channels) != 0)
    throw ShapeError("components_to_pixels: feature count is not a multiple of channels");
  const Eigen::Index px = components.cols() / static_cast<Eigen::Index>(channels);
  if (channels == 1) return components;
  Matrix out = Matrix::Zero(components.rows(), px);
  for (std::size_t c = 0; c < channels; ++c)
    out += components.middleCols(static_cast<Eigen::Index>(c) * px, px).cwiseAbs2();
  return out.cwiseSqrt();
}

void save_components(const Components& comps, const std::string& path, const nlohmann::json& metadata) {
  io::Writer w(path);
  w.magic({kMagic, 4});
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(comps.method));
  const auto n = static_cast<std::uint64_t>(comps.components.rows());
  const auto d = static_cast<std::uint64_t>(comps.components.cols());
  w.put<std::uint64_t>(n);
  w.put<std::uint64_t>(d);
  RowMajor rm = comps.components;
  w.put_all<double>({rm.data(), static_cast<std::size_t>(rm.size())});
  w.put_all<double>({comps.mean.data(), static_cast<std::size_t>(comps.mean.size())});
  Vector ev = comps.explained_variance.size() == static_cast<Eigen::Index>(n) ? comps.explained_variance
                                                                               : Vector::Zero(static_cast<Eigen::Index>(n));
  w.put_all<double>({ev.data(), static_cast<std::size_t>(n)});
  const bool has_unmixing = comps.unmixing.size() > 0;
  w.put<std::uint8_t>(has_unmixing ? 1 : 0);
  if (has_unmixing) {
    RowMajor um = comps.unmixing;
    w.put_all<double>({um.data(), static_cast<std::size_t>(um.size())});
    RowMajor rot = comps.rotation;
    w.put_all<double>({rot.data(), static_cast<std::size_t>(rot.size())});
  }
  w.put<std::uint64_t>(comps.iterations);
  w.put<std::uint8_t>(comps.converged ? 1 : 0);
  w.put<std::uint64_t>(comps.valid_components);
  w.finish();

  nlohmann::json meta = metadata.is_object() ? metadata : nlohmann::json::object();
  meta["method"] = comps.method == DecompMethod::PCA ? "pca" : "ica";
  meta["n_components"] = n;
  meta["features"] = d;
  meta["iterations"] = comps.iterations;
  meta["converged"] = comps.converged;
  meta["rank_deficient"] = comps.rank_deficient;
  std::ofstream(path + ".json") << meta.dump(2) << '\n';
}

Components load_components(const std::string& path) {
  io::Reader r(path);
  r.expect_magic({kMagic, 4});
  r.expect_version(kVersion);
  Components c;
  const auto method = r.get<std::uint8_t>();
  if (method > 1) throw FormatError("'" + path + "': unknown method tag");
  c.method = static_cast<DecompMethod>(method);
  const auto n = r.get<std::uint64_t>();
  const auto d = r.get<std::uint64_t>();
  r.expect_at_most(n * d, std::uint64_t{1} << 32, "component block");
  RowMajor rm(n, d);
  r.get_all<double>({rm.data(), static_cast<std::size_t>(rm.size())});
  c.components = rm;
  c.mean.resize(static_cast<Eigen::Index>(d));
  r.get_all<double>({c.mean.data(), d});
  c.explained_variance.resize(static_cast<Eigen::Index>(n));
  r.get_all<double>({c.explained_variance.data(), n});
  if (r.get<std::uint8_t>()) {
    RowMajor um(n, d);
    r.get_all<double>({um.data(), static_cast<std::size_t>(um.size())});
    c.unmixing = um;
    RowMajor rot(n, n);
    r.get_all<double>({rot.data(), static_cast<std::size_t>(rot.size())});
    c.rotation = rot;
  }
  c.iterations = r.get<std::uint64_t>();
  c.converged = r.get<std::uint8_t>() != 0;
  c.valid_components = r.get<std::uint64_t>();
  c.rank_deficient = c.valid_components < n;
  return c;
}

}  // namespace prunelab
