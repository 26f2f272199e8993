#include <doctest.h>

#include <random>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "prunelab/error.hpp"
#include "prunelab/localization.hpp"

using namespace prunelab;

namespace {

std::vector<double> gaussian_grid(std::size_t side, double a, double sx, double sy, double mx = 0, double my = 0,
                                  double c = 0) {
  const int s = static_cast<int>(side), w = 2 * s - 1;
  std::vector<double> g(static_cast<std::size_t>(w * w));
  for (int dy = -(s - 1); dy <= s - 1; ++dy)
    for (int dx = -(s - 1); dx <= s - 1; ++dx)
      g[static_cast<std::size_t>((dy + s - 1) * w + dx + s - 1)] =
          a * std::exp(-(dx - mx) * (dx - mx) / (2 * sx * sx) - (dy - my) * (dy - my) / (2 * sy * sy)) + c;
  return g;
}

std::vector<std::uint8_t> blob(std::size_t side, int radius) {
  std::vector<std::uint8_t> m(side * side, 0);
  const int c = static_cast<int>(side) / 2;
  for (int y = 0; y < static_cast<int>(side); ++y)
    for (int x = 0; x < static_cast<int>(side); ++x)
      if ((x - c) * (x - c) + (y - c) * (y - c) <= radius * radius) m[static_cast<std::size_t>(y) * side + x] = 1;
  return m;
}

}  // namespace

TEST_CASE("correlation map examples") {
  const CorrelationMap ones = correlation_map(std::vector<std::uint8_t>(9, 1), 3);
  CHECK(ones.at(0, 0) == 9);
  CHECK(ones.at(1, 0) == 6);
  CHECK(ones.at(2, 2) == 1);
  std::vector<std::uint8_t> single(16, 0);
  single[5] = 1;
  const CorrelationMap one = correlation_map(single, 4);
  CHECK(one.at(0, 0) == 1);
  CHECK(one.nonzero_bins() == 1);
  CHECK_THROWS_AS(correlation_map(std::vector<std::uint8_t>(10, 1), 3), ShapeError);
}

TEST_CASE("correlation map equals the FFT autocorrelation and respects its invariants") {
  Rng rng(5);
  std::uniform_int_distribution<int> side_d(1, 32);
  std::uniform_real_distribution<double> dens(0.02, 0.9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t side = trial < 5 ? 8 : static_cast<std::size_t>(side_d(rng));
    std::bernoulli_distribution keep(dens(rng));
    std::vector<std::uint8_t> m(side * side);
    std::int64_t kept = 0;
    for (auto& v : m) kept += (v = keep(rng) ? 1 : 0);
    const CorrelationMap map = correlation_map(m, side);
    CHECK(map.values == oracle::fft_autocorrelation(m, side));
    CHECK(map.at(0, 0) == kept);
    const int s = static_cast<int>(side);
    bool ok = true;
    for (int dy = -(s - 1); dy <= s - 1; ++dy)
      for (int dx = -(s - 1); dx <= s - 1; ++dx) {
        ok &= map.at(dx, dy) == map.at(-dx, -dy);
        ok &= map.at(dx, dy) >= 0 && map.at(dx, dy) <= (s - std::abs(dx)) * (s - std::abs(dy));
      }
    CHECK(ok);
  }
  for (std::size_t side : {1u, 5u, 32u})
    CHECK(correlation_map(std::vector<std::uint8_t>(side * side, 1), side).values ==
          oracle::all_ones_correlation(side));
}

TEST_CASE("channel modes") {
  // two channels, 2x2: channel 0 keeps pixel 0, channel 1 keeps pixel 3
  const std::vector<std::uint8_t> row{1, 0, 0, 0, 0, 0, 0, 1};
  CHECK(pixel_indicator(row, 2, 2) == std::vector<std::uint8_t>{1, 0, 0, 1});
  const CorrelationMap u = correlation_map(row, 2, 2, ChannelMode::Union);
  CHECK(u.at(0, 0) == 2);
  CHECK(u.at(1, 1) == 1);
  const CorrelationMap pc = correlation_map(row, 2, 2, ChannelMode::PerChannel);
  CHECK(pc.at(0, 0) == 2);
  CHECK(pc.at(1, 1) == 0);
  CHECK(parse_channel_mode("per_channel") == ChannelMode::PerChannel);
  CHECK_THROWS_AS(parse_channel_mode("mean"), InvalidConfig);
}

TEST_CASE("Gaussian fit recovers exact parameters") {
  const auto g = gaussian_grid(16, 10.0, 2.0, 3.0);
  const GaussianFit f = fit_gaussian2d(g, 16);
  CHECK(f.converged);
  CHECK(std::abs(f.sigma_x - 2.0) < 1e-6);
  CHECK(std::abs(f.sigma_y - 3.0) < 1e-6);
  CHECK(std::abs(f.amplitude - 10.0) < 1e-6);
  CHECK(f.mse < 1e-12);
  for (std::size_t i = 1; i < f.sse_trace.size(); ++i) CHECK(f.sse_trace[i] <= f.sse_trace[i - 1]);

  const auto shifted = gaussian_grid(12, 4.0, 1.5, 2.5, 1.0, -2.0, 0.5);
  const GaussianFit h = fit_gaussian2d(shifted, 12);
  CHECK(std::abs(h.sigma_x - 1.5) < 1e-6);
  CHECK(std::abs(h.mu_y + 2.0) < 1e-6);
  CHECK(std::abs(h.offset - 0.5) < 1e-6);
}

TEST_CASE("Gaussian fit under 1% additive noise") {
  Rng rng(77);
  std::normal_distribution<double> n;
  int within = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto g = gaussian_grid(16, 10.0, 2.0, 3.0);
    for (auto& v : g) v += 0.01 * 10.0 * n(rng);
    const GaussianFit f = fit_gaussian2d(g, 16);
    within += std::abs(f.sigma_x - 2.0) < 0.1 && std::abs(f.sigma_y - 3.0) < 0.15;
  }
  CHECK(within == 100);
}

TEST_CASE("fit symmetry, spike and preconditions") {
  Rng rng(3);
  std::bernoulli_distribution keep(0.3);
  std::vector<std::uint8_t> m(100);
  for (auto& v : m) v = keep(rng);
  const CorrelationMap map = correlation_map(m, 10);
  CorrelationMap mirror = map;
  for (int dy = -9; dy <= 9; ++dy)
    for (int dx = -9; dx <= 9; ++dx) mirror.at(dx, dy) = map.at(-dx, -dy);
  const GaussianFit a = fit_gaussian2d(map), b = fit_gaussian2d(mirror);
  CHECK(a.sigma_x == b.sigma_x);
  CHECK(a.sigma_y == b.sigma_y);

  // single spike: the fit collapses below one pixel
  std::vector<double> spike(15 * 15, 0.0);
  spike[7 * 15 + 7] = 5.0;
  const GaussianFit s = fit_gaussian2d(spike, 8);
  CHECK(s.degenerate_width);
  CHECK(s.sigma_x < 1.0);

  // a 1x1 grid has fewer bins than parameters
  CHECK_THROWS_AS(fit_gaussian2d(std::vector<double>{1.0}, 1), InsufficientData);
  // the report excludes units with fewer nonzero bins than parameters
  Mask sparse = Mask::ones({{2, 16}, {2, 2}});
  sparse.layers[0].row(1).setZero();
  sparse.layers[0](1, 0) = 1;
  sparse.layers[0](1, 1) = 1;
  const LocalizationReport rep = rf_width_report({sparse}, 4, 1, LocalizationOptions{.top_k = 2});
  CHECK(rep.rows.size() == 1);
  CHECK(rep.summaries[0].units_excluded == 1);
}

TEST_CASE("shrinking a blob does not widen the fit") {
  double prev = 1e9;
  for (int r = 6; r >= 2; --r) {
    const GaussianFit f = fit_gaussian2d(correlation_map(blob(16, r), 16), FitOptions{.exclude_origin = true});
    CHECK(f.sigma_x <= prev + 1.0);
    prev = f.sigma_x;
  }
}

TEST_CASE("unit selection") {
  MaskMatrix m = MaskMatrix::Zero(4, 10);
  const int counts[] = {5, 9, 9, 2};
  for (int i = 0; i < 4; ++i) m.row(i).head(counts[i]).setOnes();
  CHECK(select_top_units(m, 2) == std::vector<std::size_t>{1, 2});
  CHECK(select_top_units(m, 4) == std::vector<std::size_t>{1, 2, 0, 3});
  CHECK(select_top_units(MaskMatrix::Ones(3, 4), 3) == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("width report: dense masks are wide and identical, summary matches rows") {
  const Mask dense = Mask::ones({{5, 64}, {2, 5}});
  const LocalizationReport r = rf_width_report({dense}, 8, 1, LocalizationOptions{.top_k = 5});
  REQUIRE(r.rows.size() == 5);
  for (const auto& row : r.rows) {
    CHECK(row.sigma_x == r.rows[0].sigma_x);
    CHECK(row.sigma_x > 3.0);
  }

  Mask random = Mask::ones({{20, 144}, {2, 20}});
  Rng rng(9);
  std::bernoulli_distribution keep(0.2);
  for (Eigen::Index i = 0; i < random.layers[0].size(); ++i) random.layers[0].data()[i] = keep(rng);
  const LocalizationReport rr = rf_width_report({random}, 12, 1, LocalizationOptions{.top_k = 10});
  const LocalizationSummary s = summarize_rows(rr.rows);
  CHECK(s.median_sigma_x == rr.summaries[0].median_sigma_x);
  CHECK(s.mean_sigma_x == rr.summaries[0].mean_sigma_x);
  CHECK(rr.summaries[0].units_fitted + rr.summaries[0].units_excluded == 10);
  CHECK(median({3.0, 1.0, 2.0, 10.0}) == 2.5);
}
