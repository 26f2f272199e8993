#include "prunelab/localization.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "prunelab/error.hpp"

namespace prunelab {

std::string to_string(ChannelMode mode) { return mode == ChannelMode::Union ? "union" : "per_channel"; }

ChannelMode parse_channel_mode(const std::string& s) {
  if (s == "union") return ChannelMode::Union;
  if (s == "per_channel") return ChannelMode::PerChannel;
  throw InvalidConfig("unknown channel mode '" + s + "'");
}

std::int64_t CorrelationMap::at(int dx, int dy) const {
  const int off = static_cast<int>(side) - 1;
  return values.at(static_cast<std::size_t>((dy + off) * static_cast<int>(width()) + (dx + off)));
}

std::int64_t& CorrelationMap::at(int dx, int dy) {
  const int off = static_cast<int>(side) - 1;
  return values.at(static_cast<std::size_t>((dy + off) * static_cast<int>(width()) + (dx + off)));
}

std::size_t CorrelationMap::nonzero_bins() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](auto v) { return v != 0; }));
}

std::vector<std::uint8_t> pixel_indicator(std::span<const std::uint8_t> mask_row, std::size_t side,
                                          std::size_t channels) {
  const std::size_t px = side * side;
  if (side == 0 || channels == 0 || mask_row.size() != channels * px)
    throw ShapeError("mask row length " + std::to_string(mask_row.size()) + " is not channels * side^2");
  std::vector<std::uint8_t> out(px, 0);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < px; ++p)
      if (mask_row[c * px + p]) out[p] = 1;
  return out;
}

namespace {

void accumulate_pairs(std::span<const std::uint8_t> pixels, std::size_t side, CorrelationMap& map) {
  std::vector<std::pair<int, int>> kept;
  for (std::size_t p = 0; p < pixels.size(); ++p)
    if (pixels[p]) kept.emplace_back(static_cast<int>(p % side), static_cast<int>(p / side));
  for (const auto& [xa, ya] : kept)
    for (const auto& [xb, yb] : kept) ++map.at(xa - xb, ya - yb);
}

struct Bin {
  double dx, dy, value;
};

GaussianFit fit_bins(const std::vector<Bin>& bins, double max_log_sigma, const FitOptions& opt) {
  if (bins.size() < kGaussianParams)
    throw InsufficientData("fit_gaussian2d: " + std::to_string(bins.size()) + " bins for " +
                           std::to_string(kGaussianParams) + " parameters");
  const std::size_t m = bins.size();

  // Initial guess: amplitude from the range, centre at the peak bin, widths
  // from the second moments of the floor-subtracted map.
  double vmax = -std::numeric_limits<double>::infinity(), vmin = std::numeric_limits<double>::infinity();
  std::size_t peak = 0;
  for (std::size_t k = 0; k < m; ++k) {
    if (bins[k].value > vmax) {
      vmax = bins[k].value;
      peak = k;
    }
    vmin = std::min(vmin, bins[k].value);
  }
  Eigen::Matrix<double, 6, 1> p;
  p[0] = vmax - vmin;
  p[1] = bins[peak].dx;
  p[2] = bins[peak].dy;
  double wsum = 0.0, sxx = 0.0, syy = 0.0;
  for (const auto& b : bins) {
    const double w = b.value - vmin;
    wsum += w;
    sxx += w * (b.dx - p[1]) * (b.dx - p[1]);
    syy += w * (b.dy - p[2]) * (b.dy - p[2]);
  }
  auto init_width = [&](double s2) {
    const double s = wsum > 0.0 ? std::sqrt(s2 / wsum) : 0.0;
    return std::log(std::isfinite(s) && s > 0.0 ? s : 0.5);
  };
  p[3] = std::min(init_width(sxx), max_log_sigma);
  p[4] = std::min(init_width(syy), max_log_sigma);
  p[5] = std::max(vmin, 0.0);
  if (p[0] <= 0.0) p[0] = 1e-12;

  Eigen::MatrixXd J(static_cast<Eigen::Index>(m), 6);
  Eigen::VectorXd r(static_cast<Eigen::Index>(m));

  auto evaluate = [&](const Eigen::Matrix<double, 6, 1>& q, bool jacobian) {
    const double sx = std::exp(q[3]), sy = std::exp(q[4]);
    double sse = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const double ux = bins[k].dx - q[1], uy = bins[k].dy - q[2];
      const double ax = ux * ux / (sx * sx), ay = uy * uy / (sy * sy);
      const double e = std::exp(-0.5 * (ax + ay));
      const double res = q[0] * e + q[5] - bins[k].value;
      sse += res * res;
      if (jacobian) {
        const auto row = static_cast<Eigen::Index>(k);
        r[row] = res;
        J(row, 0) = e;
        J(row, 1) = q[0] * e * ux / (sx * sx);
        J(row, 2) = q[0] * e * uy / (sy * sy);
        J(row, 3) = q[0] * e * ax;
        J(row, 4) = q[0] * e * ay;
        J(row, 5) = 1.0;
      }
    }
    return sse;
  };

  GaussianFit fit;
  double sse = evaluate(p, true);
  fit.sse_trace.push_back(sse);
  double damping = 1e-3;
  std::size_t it = 0;
  while (it < opt.max_iterations) {
    ++it;
    if (sse == 0.0) {
      fit.converged = true;
      break;
    }
    const Eigen::Matrix<double, 6, 6> JtJ = J.transpose() * J;
    const Eigen::Matrix<double, 6, 1> g = J.transpose() * r;
    Eigen::Matrix<double, 6, 6> A = JtJ;
    for (int d = 0; d < 6; ++d) A(d, d) += damping * std::max(JtJ(d, d), 1e-12);
    const Eigen::Matrix<double, 6, 1> step = A.ldlt().solve(-g);
    Eigen::Matrix<double, 6, 1> trial = p + step;
    trial[5] = std::max(trial[5], 0.0);
    trial[3] = std::min(trial[3], max_log_sigma);
    trial[4] = std::min(trial[4], max_log_sigma);
    const double trial_sse = step.allFinite() ? evaluate(trial, false) : std::numeric_limits<double>::infinity();
    if (std::isfinite(trial_sse) && trial_sse < sse) {
      const double rel = (sse - trial_sse) / sse;
      p = trial;
      sse = evaluate(p, true);
      fit.sse_trace.push_back(sse);
      damping = std::max(damping / 10.0, 1e-12);
      if (rel < opt.relative_tolerance) {
        fit.converged = true;
        break;
      }
    } else {
      damping *= 10.0;
      // No descent direction left at any damping: stationary point.
      if (damping > 1e16) {
        fit.converged = true;
        break;
      }
    }
  }
  fit.iterations = it;
  fit.amplitude = p[0];
  fit.mu_x = p[1];
  fit.mu_y = p[2];
  fit.sigma_x = std::exp(p[3]);
  fit.sigma_y = std::exp(p[4]);
  fit.offset = p[5];
  fit.fitted_bins = m;
  fit.mse = sse / static_cast<double>(m);
  fit.degenerate_width = fit.sigma_x < 1.0 || fit.sigma_y < 1.0;
  return fit;
}

}  // namespace

CorrelationMap correlation_map(std::span<const std::uint8_t> mask_row, std::size_t side, std::size_t channels,
                               ChannelMode mode) {
  const std::size_t px = side * side;
  if (side == 0 || channels == 0 || mask_row.size() != channels * px)
    throw ShapeError("correlation_map: mask row length " + std::to_string(mask_row.size()) +
                     " is not channels * side^2");
  CorrelationMap map;
  map.side = side;
  map.values.assign(map.width() * map.width(), 0);
  if (mode == ChannelMode::Union) {
    accumulate_pairs(pixel_indicator(mask_row, side, channels), side, map);
  } else {
    for (std::size_t c = 0; c < channels; ++c) accumulate_pairs(mask_row.subspan(c * px, px), side, map);
  }
  return map;
}

GaussianFit fit_gaussian2d(const CorrelationMap& map, const FitOptions& options) {
  std::vector<double> grid(map.values.begin(), map.values.end());
  return fit_gaussian2d(grid, map.side, options);
}

GaussianFit fit_gaussian2d(std::span<const double> grid, std::size_t side, const FitOptions& options) {
  const std::size_t w = 2 * side - 1;
  if (side == 0 || grid.size() != w * w) throw ShapeError("fit_gaussian2d: grid is not (2*side-1)^2");
  const int off = static_cast<int>(side) - 1;
  std::vector<Bin> bins;
  bins.reserve(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const int dx = static_cast<int>(k % w) - off;
    const int dy = static_cast<int>(k / w) - off;
    if (options.exclude_origin && dx == 0 && dy == 0) continue;
    bins.push_back({static_cast<double>(dx), static_cast<double>(dy), grid[k]});
  }
  return fit_bins(bins, std::log(kMaxWidthFactor * static_cast<double>(side)), options);
}

std::vector<std::size_t> select_top_units(const MaskMatrix& layer_mask, std::size_t k) {
  const auto units = static_cast<std::size_t>(layer_mask.rows());
  std::vector<std::size_t> counts(units);
  for (std::size_t i = 0; i < units; ++i)
    counts[i] = static_cast<std::size_t>(layer_mask.row(static_cast<Eigen::Index>(i)).cast<std::size_t>().sum());
  std::vector<std::size_t> order(units);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return counts[a] > counts[b]; });
  order.resize(std::min(k, units));
  return order;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

LocalizationSummary summarize_rows(std::span<const LocalizationRow> rows) {
  LocalizationSummary s;
  std::vector<double> sx, sy, mse;
  for (const auto& r : rows) {
    sx.push_back(r.sigma_x);
    sy.push_back(r.sigma_y);
    mse.push_back(r.mse);
  }
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? std::numeric_limits<double>::quiet_NaN()
                     : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  s.units_fitted = rows.size();
  s.mean_sigma_x = mean(sx);
  s.mean_sigma_y = mean(sy);
  s.median_sigma_x = median(sx);
  s.median_sigma_y = median(sy);
  s.median_mse = median(mse);
  if (!rows.empty()) s.round = rows.front().round;
  return s;
}

LocalizationReport rf_width_report(const std::vector<Mask>& history, std::size_t side, std::size_t channels,
                                   const LocalizationOptions& options) {
  LocalizationReport rep;
  for (std::size_t h = 0; h < history.size(); ++h) {
    const Mask& mask = history[h];
    const auto& layer = mask.layers.at(0);
    const std::size_t first = rep.rows.size();
    std::size_t excluded = 0;
    for (std::size_t unit : select_top_units(layer, options.top_k)) {
      const auto row = mask.row(0, unit);
      CorrelationMap map = correlation_map(row, side, channels, options.channel_mode);
      std::size_t nz = map.nonzero_bins();
      if (options.fit.exclude_origin && map.at(0, 0) != 0) --nz;
      if (nz < kGaussianParams) {
        ++excluded;
        continue;
      }
      const GaussianFit fit = fit_gaussian2d(map, options.fit);
      const auto kept =
          static_cast<std::size_t>(layer.row(static_cast<Eigen::Index>(unit)).cast<std::size_t>().sum());
      rep.rows.push_back({mask.round, unit, kept, fit.sigma_x, fit.sigma_y, fit.mse, fit.converged});
    }
    LocalizationSummary s =
        summarize_rows(std::span<const LocalizationRow>(rep.rows.data() + first, rep.rows.size() - first));
    s.round = mask.round;
    s.sparsity = mask.sparsity(0);
    s.units_excluded = excluded;
    rep.summaries.push_back(s);
  }
  return rep;
}

void LocalizationReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out.precision(17);
  out << "round,unit,kept_count,sigma_x,sigma_y,mse,converged\n";
  for (const auto& r : rows)
    out << r.round << ',' << r.unit << ',' << r.kept_count << ',' << r.sigma_x << ',' << r.sigma_y << ',' << r.mse
        << ',' << (r.converged ? 1 : 0) << '\n';
}

nlohmann::json LocalizationReport::summary() const {
  auto fin = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : summaries)
    j.push_back({{"round", s.round},
                 {"sparsity", s.sparsity},
                 {"units_fitted", s.units_fitted},
                 {"units_excluded", s.units_excluded},
                 {"mean_sigma_x", fin(s.mean_sigma_x)},
                 {"median_sigma_x", fin(s.median_sigma_x)},
                 {"mean_sigma_y", fin(s.mean_sigma_y)},
                 {"median_sigma_y", fin(s.median_sigma_y)},
                 {"median_mse", fin(s.median_mse)}});
  return j;
}

}  // namespace prunelab
