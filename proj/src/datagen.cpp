#include "prunelab/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "prunelab/error.hpp"
#include "prunelab/rng.hpp"

namespace prunelab {

namespace {

Matrix standard_normals(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal;
  Matrix g(rows, cols);
  for (Eigen::Index s = 0; s < cols; ++s)
    for (Eigen::Index p = 0; p < rows; ++p) g(p, s) = normal(rng);
  return g;
}

}  // namespace

Matrix regularized_cholesky(const Matrix& cov, double& epsilon) {
  const auto n = cov.rows();
  epsilon = std::max(1e-6 * cov.trace() / static_cast<double>(n), 1e-12);
  for (int attempt = 0; attempt < 20; ++attempt) {
    Matrix reg = cov;
    reg.diagonal().array() += epsilon;
    Eigen::LLT<Matrix> llt(reg);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    epsilon *= 10.0;
  }
  throw Error("regularized_cholesky: covariance could not be factorized");
}

CloneModel fit_gaussian_clone(const Dataset& data) {
  data.validate();
  CloneModel model;
  model.side = data.side;
  model.channels = data.channels;
  model.num_classes = data.num_classes;
  model.sample_counts = data.class_counts();
  const auto px = static_cast<Eigen::Index>(data.pixels());
  model.cells.resize(data.num_classes);
  for (std::uint32_t c = 0; c < data.num_classes; ++c) {
    if (model.sample_counts[c] < 2)
      throw InsufficientSamples("fit_gaussian_clone: class " + std::to_string(c) + " has fewer than 2 samples", c);
    const Matrix imgs = data.class_images(c);
    const double n = static_cast<double>(imgs.cols());
    for (std::size_t ch = 0; ch < data.channels; ++ch) {
      const auto block = imgs.middleRows(static_cast<Eigen::Index>(ch) * px, px);
      CloneCell cell;
      cell.mean = block.rowwise().sum() / n;
      const Matrix centered = block.colwise() - cell.mean;
      cell.covariance = (centered * centered.transpose()) / (n - 1.0);
      cell.covariance = 0.5 * (cell.covariance + cell.covariance.transpose());
      cell.factor = regularized_cholesky(cell.covariance, cell.epsilon);
      model.cells[c].push_back(std::move(cell));
    }
  }
  return model;
}

Dataset sample_clone(const CloneModel& model, std::span<const std::size_t> counts, std::uint64_t seed,
                     Split split) {
  if (counts.size() != model.num_classes) throw ShapeError("sample_clone: need one count per class");
  Dataset out;
  out.side = model.side;
  out.channels = model.channels;
  out.num_classes = model.num_classes;
  out.split = split;
  const auto px = static_cast<Eigen::Index>(model.side * model.side);
  std::size_t total = 0;
  for (auto n : counts) total += n;
  out.images.resize(px * static_cast<Eigen::Index>(model.channels), static_cast<Eigen::Index>(total));
  Eigen::Index col = 0;
  for (std::uint32_t c = 0; c < model.num_classes; ++c) {
    const auto n = static_cast<Eigen::Index>(counts[c]);
    if (n == 0) continue;
    for (std::size_t ch = 0; ch < model.channels; ++ch) {
      const CloneCell& cell = model.cells[c][ch];
      Rng rng(derive_seed(derive_seed(seed, c), ch));
      const Matrix g = standard_normals(px, n, rng);
      out.images.block(static_cast<Eigen::Index>(ch) * px, col, px, n) =
          (cell.factor.triangularView<Eigen::Lower>() * g).colwise() + cell.mean;
    }
    out.labels.insert(out.labels.end(), counts[c], c);
    col += n;
  }
  return out;
}

nlohmann::json EdgeParams::to_json() const {
  return {{"generator", "edges"}, {"n_samples", n_samples}, {"side", side},           {"n_classes", n_classes},
          {"contrast", contrast}, {"noise_std", noise_std}, {"seed", seed},
          {"split", split == Split::Train ? "train" : "test"}};
}

Dataset gen_edges(const EdgeParams& p) {
  if (p.side == 0) throw InvalidConfig("gen_edges: side must be positive");
  if (p.n_classes == 0 || kOrientationBins % p.n_classes != 0)
    throw InvalidConfig("gen_edges: n_classes must divide " + std::to_string(kOrientationBins));
  if (p.noise_std < 0.0) throw InvalidConfig("gen_edges: noise_std must be non-negative");
  Dataset ds;
  ds.side = p.side;
  ds.channels = 1;
  ds.num_classes = p.n_classes;
  ds.split = p.split;
  const auto px = static_cast<Eigen::Index>(p.side * p.side);
  ds.images.resize(px, static_cast<Eigen::Index>(p.n_samples));
  ds.labels.resize(p.n_samples);
  Rng rng(p.seed);
  std::uniform_int_distribution<std::size_t> bin_dist(0, kOrientationBins - 1);
  std::uniform_real_distribution<double> centre(0.0, static_cast<double>(p.side - 1));
  std::bernoulli_distribution flip(0.5);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t bins_per_class = kOrientationBins / p.n_classes;
  for (std::size_t s = 0; s < p.n_samples; ++s) {
    const std::size_t bin = bin_dist(rng);
    // Polarity is independent of the class, so class means carry no signal.
    const double theta = (static_cast<double>(bin) + 0.5) * std::numbers::pi / kOrientationBins +
                         (flip(rng) ? std::numbers::pi : 0.0);
    const double cx = centre(rng), cy = centre(rng);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::size_t y = 0; y < p.side; ++y) {
      for (std::size_t x = 0; x < p.side; ++x) {
        const double t = ct * (static_cast<double>(x) - cx) + st * (static_cast<double>(y) - cy);
        double v = p.contrast * std::clamp(2.0 * t, -1.0, 1.0);
        if (p.noise_std > 0.0) v += p.noise_std * noise(rng);
        ds.images(static_cast<Eigen::Index>(y * p.side + x), static_cast<Eigen::Index>(s)) = v;
      }
    }
    ds.labels[s] = static_cast<std::uint32_t>(bin / bins_per_class);
  }
  return ds;
}

nlohmann::json NlgpParams::to_json() const {
  return {{"generator", "nlgp"},
          {"n_samples", n_samples},
          {"side", side},
          {"correlation_length", correlation_length},
          {"gain", gain},
          {"seed", seed},
          {"split", split == Split::Train ? "train" : "test"}};
}

double nlgp_normalizer(double gain) {
  const double g2 = gain * gain;
  return std::sqrt(2.0 / std::numbers::pi * std::asin(2.0 * g2 / (1.0 + 2.0 * g2)));
}

Matrix squared_exponential_covariance(std::size_t side, double xi) {
  const auto px = static_cast<Eigen::Index>(side * side);
  Matrix k(px, px);
  for (Eigen::Index a = 0; a < px; ++a) {
    for (Eigen::Index b = 0; b < px; ++b) {
      const double dx = static_cast<double>(a % static_cast<Eigen::Index>(side) - b % static_cast<Eigen::Index>(side));
      const double dy = static_cast<double>(a / static_cast<Eigen::Index>(side) - b / static_cast<Eigen::Index>(side));
      k(a, b) = std::exp(-(dx * dx + dy * dy) / (2.0 * xi * xi));
    }
  }
  return k;
}

Dataset gen_nlgp(const NlgpParams& p) {
  if (!(p.correlation_length > 0.0)) throw InvalidConfig("gen_nlgp: correlation length must be positive");
  if (!(p.gain > 0.0)) throw InvalidConfig("gen_nlgp: gain must be positive");
  if (p.side == 0) throw InvalidConfig("gen_nlgp: side must be positive");
  const Matrix latent_cov = squared_exponential_covariance(p.side, p.correlation_length);
  double eps = 0.0;
  const Matrix latent_factor = regularized_cholesky(latent_cov, eps);

  // Covariance of erf(g z)/Z: (2/pi) asin(2 g^2 k / (1 + 2 g^2)) / Z^2.
  const double g2 = p.gain * p.gain;
  const double z = nlgp_normalizer(p.gain);
  const Matrix control_cov =
      (latent_cov.array() * (2.0 * g2 / (1.0 + 2.0 * g2))).asin().matrix() * (2.0 / std::numbers::pi / (z * z));
  double eps_control = 0.0;
  const Matrix control_factor = regularized_cholesky(control_cov, eps_control);

  Dataset ds;
  ds.side = p.side;
  ds.channels = 1;
  ds.num_classes = 2;
  ds.split = p.split;
  const auto px = static_cast<Eigen::Index>(p.side * p.side);
  Rng rng(p.seed);
  const Matrix g = standard_normals(px, static_cast<Eigen::Index>(p.n_samples), rng);
  ds.images.resize(px, static_cast<Eigen::Index>(p.n_samples));
  ds.labels.resize(p.n_samples);
  for (std::size_t s = 0; s < p.n_samples; ++s) {
    const auto col = static_cast<Eigen::Index>(s);
    if (s % 2 == 0) {
      const Vector latent = latent_factor.triangularView<Eigen::Lower>() * g.col(col);
      ds.images.col(col) = latent.unaryExpr([&](double v) { return std::erf(p.gain * v) / z; });
      ds.labels[s] = 0;
    } else {
      ds.images.col(col) = control_factor.triangularView<Eigen::Lower>() * g.col(col);
      ds.labels[s] = 1;
    }
  }
  return ds;
}

}  // namespace prunelab
