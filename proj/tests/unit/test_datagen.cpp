#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "support/fixtures.hpp"
#include "prunelab/datagen.hpp"
#include "prunelab/error.hpp"
#include "prunelab/statlab.hpp"

using namespace prunelab;

namespace {

std::vector<double> pixel(const Matrix& images, Eigen::Index f) {
  const Vector r = images.row(f).transpose();
  return {r.data(), r.data() + r.size()};
}

Matrix covariance(const Matrix& x) {
  const Matrix c = x.colwise() - x.rowwise().mean();
  return c * c.transpose() / static_cast<double>(x.cols() - 1);
}

}  // namespace

TEST_CASE("clone of Gaussian data recovers its parameters within sampling error") {
  const std::size_t d = 9, n = 20000;
  Rng rng(1);
  std::normal_distribution<double> g;
  Matrix a(d, d);
  for (auto& v : a.reshaped()) v = 0.4 * g(rng);
  a.diagonal().array() += 1.0;
  const Matrix sigma = a * a.transpose();
  Vector mu(d);
  for (auto& v : mu) v = g(rng);

  Dataset ds;
  ds.side = 3;
  ds.num_classes = 2;
  ds.images.resize(d, n);
  ds.labels.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    Vector z(d);
    for (auto& v : z) v = g(rng);
    const bool c1 = s % 2;
    ds.images.col(static_cast<Eigen::Index>(s)) = (c1 ? mu : Vector(-mu)) + a * z;
    ds.labels[s] = c1 ? 1 : 0;
  }
  const CloneModel m = fit_gaussian_clone(ds);
  REQUIRE(m.cells.size() == 2);
  const CloneCell& c = m.cells[1][0];
  const double nn = static_cast<double>(n / 2);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(d); ++i) {
    CHECK(std::abs(c.mean[i] - mu[i]) < 5.0 * std::sqrt(sigma(i, i) / nn));
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d); ++j) {
      const double se = std::sqrt((sigma(i, i) * sigma(j, j) + sigma(i, j) * sigma(i, j)) / nn);
      CHECK(std::abs(c.covariance(i, j) - sigma(i, j)) < 5.0 * se);
    }
  }
  CHECK((c.factor * c.factor.transpose() - c.covariance).cwiseAbs().maxCoeff() <= c.epsilon + 1e-8);
  CHECK(m.sample_counts == std::vector<std::size_t>{n / 2, n / 2});

  // permutation of sample order does not change the fit
  Dataset rev = ds;
  rev.images = ds.images.rowwise().reverse();
  std::reverse(rev.labels.begin(), rev.labels.end());
  const CloneModel mr = fit_gaussian_clone(rev);
  CHECK((mr.cells[1][0].covariance - c.covariance).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("clone of constant images and too-small classes") {
  Dataset ds;
  ds.side = 2;
  ds.num_classes = 2;
  ds.images = Matrix::Constant(4, 6, 0.5);
  ds.labels = {0, 1, 0, 1, 0, 1};
  const CloneModel m = fit_gaussian_clone(ds);
  const CloneCell& c = m.cells[0][0];
  CHECK(c.covariance.isZero());
  CHECK(c.epsilon > 0.0);
  CHECK((c.factor - std::sqrt(c.epsilon) * Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-15);

  ds.labels = {0, 0, 0, 0, 0, 1};
  try {
    fit_gaussian_clone(ds);
    FAIL("expected InsufficientSamples");
  } catch (const InsufficientSamples& e) {
    CHECK(e.label() == 1);
  }
}

TEST_CASE("clone samples are Gaussian, match the model and are seeded") {
  EdgeParams ep{.n_samples = 4000, .side = 6, .n_classes = 2, .contrast = 1.0, .noise_std = 0.3, .seed = 2};
  const Dataset edges = gen_edges(ep);
  const CloneModel m = fit_gaussian_clone(edges);
  const std::vector<std::size_t> counts{50000, 50000};
  const Dataset clone = sample_clone(m, counts, 7);
  CHECK(clone.size() == 100000);
  CHECK(clone.labels.front() == 0);
  CHECK(clone.labels.back() == 1);
  const Matrix c0 = clone.class_images(0);
  const Matrix cov = covariance(c0);
  const Matrix& ref = m.cells[0][0].covariance;
  double worst = 0.0;
  for (Eigen::Index f = 0; f < c0.rows(); ++f) {
    const std::vector<double> px = pixel(c0, f);
    CHECK(excess_kurtosis(px) < 0.1);
    const double se_mean = std::sqrt(ref(f, f) / 50000.0);
    CHECK(std::abs(c0.row(f).mean() - m.cells[0][0].mean[f]) < 5.0 * se_mean);
    for (Eigen::Index g = 0; g < c0.rows(); ++g) {
      const double se = std::sqrt((ref(f, f) * ref(g, g) + ref(f, g) * ref(f, g)) / 50000.0);
      worst = std::max(worst, std::abs(cov(f, g) - ref(f, g)) / se);
    }
  }
  CHECK(worst < 5.0);
  const std::vector<std::size_t> small{10, 10};
  CHECK(sample_clone(m, small, 3).images == sample_clone(m, small, 3).images);
  CHECK_FALSE(sample_clone(m, small, 3).images == sample_clone(m, small, 4).images);
}

TEST_CASE("edges: two-level pixels, balanced classes, non-Gaussian marginals") {
  EdgeParams ep{.n_samples = 10000, .side = 8, .n_classes = 4, .contrast = 1.0, .noise_std = 0.0, .seed = 5};
  const Dataset ds = gen_edges(ep);
  ds.validate();
  CHECK(ds.images.cwiseAbs().maxCoeff() <= 1.0);
  const double saturated = (ds.images.array().abs() == 1.0).cast<double>().mean();
  CHECK(saturated > 0.6);
  for (std::size_t c : ds.class_counts()) CHECK(std::abs(static_cast<double>(c) - 2500.0) < 200.0);
  for (Eigen::Index f = 0; f < ds.images.rows(); ++f) {
    const double k = kurtosis(pixel(ds.images, f));
    CHECK(k < 1.5);
    CHECK(std::abs(3.0 - k) > 0.5);
  }
  CHECK(gen_edges(ep).images == ds.images);

  EdgeParams noisy = ep;
  noisy.noise_std = 0.5;
  noisy.n_samples = 2000;
  const Dataset nd = gen_edges(noisy);
  CHECK(nd.images.cwiseAbs().maxCoeff() > 1.0);
  EdgeParams bad = ep;
  bad.n_classes = 7;
  CHECK_THROWS_AS(gen_edges(bad), InvalidConfig);
}

TEST_CASE("edges: the class encodes orientation") {
  // the mean product of horizontally adjacent pixel differences is larger
  // for near-vertical edges (class 2 of 4 covers 90..135 degrees) than for
  // near-horizontal ones (class 0 covers 0..45)
  EdgeParams ep{.n_samples = 8000, .side = 8, .n_classes = 4, .contrast = 1.0, .noise_std = 0.0, .seed = 6};
  const Dataset ds = gen_edges(ep);
  std::vector<double> dx(4, 0.0), dy(4, 0.0);
  for (Eigen::Index s = 0; s < ds.images.cols(); ++s) {
    const std::uint32_t c = ds.labels[static_cast<std::size_t>(s)];
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 7; ++x) {
        const double p = ds.images(y * 8 + x, s);
        dx[c] += std::abs(ds.images(y * 8 + x + 1, s) - p);
        dy[c] += std::abs(ds.images((y + 1) * 8 + x, s) - p);
      }
  }
  // orientation t is the edge normal: t near 0 gives a vertical edge line,
  // so x-differences dominate in class 0 and y-differences in class 2
  CHECK(dx[0] > dy[0]);
  CHECK(dy[2] > dx[2]);
}

TEST_CASE("nlgp: normalization, kurtosis and stationarity") {
  CHECK(nlgp_normalizer(3.0) > 0.0);
  const NlgpParams p{.n_samples = 10000, .side = 8, .correlation_length = 2.0, .gain = 3.0, .seed = 3};
  const Dataset ds = gen_nlgp(p);
  const Matrix c0 = ds.class_images(0), c1 = ds.class_images(1);
  double mean_var = 0.0;
  for (Eigen::Index f = 0; f < c0.rows(); ++f) {
    CHECK(kurtosis(pixel(c0, f)) < 2.5);
    CHECK(std::abs(kurtosis(pixel(c1, f)) - 3.0) < 0.3);
    mean_var += covariance(c0)(f, f);
  }
  CHECK(std::abs(mean_var / 64.0 - 1.0) < 0.05);
  // stationarity: same displacement, same covariance
  const Matrix cov = covariance(c0);
  CHECK(std::abs(cov(0, 1) - cov(27, 28)) < 0.06);
  CHECK(std::abs(cov(9, 18) - cov(36, 45)) < 0.06);
  // matched covariance between the two classes
  CHECK((covariance(c1) - cov).cwiseAbs().maxCoeff() < 0.1);

  const NlgpParams lin{.n_samples = 20000, .side = 4, .correlation_length = 1.0, .gain = 0.01, .seed = 4};
  const Dataset gd = gen_nlgp(lin);
  const Matrix g0 = gd.class_images(0);
  for (Eigen::Index f = 0; f < g0.rows(); ++f) CHECK(std::abs(kurtosis(pixel(g0, f)) - 3.0) < 0.15);
  CHECK_THROWS_AS(gen_nlgp(NlgpParams{.correlation_length = 0.0}), InvalidConfig);
}

TEST_CASE("PLDS round trip and format errors") {
  Dataset ds = fixture::gaussian_dataset(16, 30, 3, 8);
  ds.split = Split::Test;
  const auto path = fixture::temp_path("data.plds");
  save_dataset(ds, path.string());
  const Dataset r = load_dataset(path.string());
  CHECK(r.images == ds.images);
  CHECK(r.labels == ds.labels);
  CHECK(r.split == Split::Test);
  CHECK(r.num_classes == 3);

  save_dataset(ds, path.string(), DType::F32);
  const Dataset f = load_dataset(path.string());
  CHECK((f.images - ds.images).cwiseAbs().maxCoeff() < 1e-6);

  {
    std::fstream io(path, std::ios::in | std::ios::out | std::ios::binary);
    io.seekp(4);
    io.put(static_cast<char>(99));
  }
  CHECK_THROWS_AS(load_dataset(path.string()), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("standardize") {
  Dataset ds = fixture::gaussian_dataset(9, 500, 2, 10);
  ds.images = (ds.images * 3.0).array() + 7.0;
  const Dataset s = standardize(ds);
  REQUIRE(s.normalization.has_value());
  for (Eigen::Index f = 0; f < s.images.rows(); ++f) {
    const double m = s.images.row(f).mean();
    const double sd = std::sqrt((s.images.row(f).array() - m).square().mean());
    CHECK(std::abs(m) < 1e-10);
    CHECK(std::abs(sd - 1.0) < 1e-10);
  }
  CHECK(standardize(s).images == s.images);

  Dataset test = fixture::gaussian_dataset(9, 100, 2, 11);
  const Dataset st = standardize(test, *s.normalization);
  CHECK(st.normalization->mean == s.normalization->mean);
  const Eigen::Index f = 4;
  CHECK(st.images(f, 0) == doctest::Approx((test.images(f, 0) - s.normalization->mean[f]) / s.normalization->std[f]));
}
