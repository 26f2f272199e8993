#include "prunelab/statlab.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "prunelab/error.hpp"

namespace prunelab {

namespace {

// Neumaier compensated accumulator.
class KahanSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  KahanSum s;
  for (double x : v) s.add(x);
  return s.value() / static_cast<double>(v.size());
}

}  // namespace

double kurtosis(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 4) throw InsufficientData("kurtosis needs at least 4 samples");
  KahanSum s1, sabs;
  for (double x : samples) {
    s1.add(x);
    sabs.add(std::abs(x));
  }
  const double dn = static_cast<double>(n);
  double mean = s1.value() / dn;
  // Second pass refines the mean, then accumulates central moments.
  KahanSum r;
  for (double x : samples) r.add(x - mean);
  mean += r.value() / dn;
  KahanSum m2, m4;
  for (double x : samples) {
    const double d = x - mean;
    const double d2 = d * d;
    m2.add(d2);
    m4.add(d2 * d2);
  }
  const double var = m2.value() / dn;
  const double mean_abs = sabs.value() / dn;
  if (!(var > 0.0) || !(var > 1e-12 * mean_abs * mean_abs))
    throw DegenerateVariance("kurtosis: variance " + std::to_string(var) + " is degenerate");
  return (m4.value() / dn) / (var * var);
}

double excess_kurtosis(std::span<const double> samples) { return std::abs(3.0 - kurtosis(samples)); }

KurtosisReport kurtosis_report(const Matrix& preacts, std::span<const std::uint32_t> labels, std::size_t num_classes,
                               std::size_t layer) {
  if (labels.size() != static_cast<std::size_t>(preacts.cols()))
    throw ShapeError("kurtosis_report: label count does not match sample count");
  std::vector<std::vector<Eigen::Index>> by_class(num_classes);
  for (std::size_t s = 0; s < labels.size(); ++s) by_class.at(labels[s]).push_back(static_cast<Eigen::Index>(s));

  KurtosisReport rep;
  rep.layer = layer;
  std::vector<std::vector<double>> per_class(num_classes), per_class_excess(num_classes);
  std::vector<double> buf;
  for (Eigen::Index i = 0; i < preacts.rows(); ++i) {
    for (std::size_t c = 0; c < num_classes; ++c) {
      KurtosisCell cell{static_cast<std::size_t>(i), static_cast<std::uint32_t>(c), by_class[c].size(), std::nullopt};
      if (cell.n_samples >= kMinSamplesPerCell) {
        buf.resize(cell.n_samples);
        for (std::size_t k = 0; k < cell.n_samples; ++k) buf[k] = preacts(i, by_class[c][k]);
        try {
          cell.kurtosis = kurtosis(buf);
        } catch (const DegenerateVariance&) {
        }
      }
      if (cell.kurtosis) {
        per_class[c].push_back(*cell.kurtosis);
        per_class_excess[c].push_back(std::abs(3.0 - *cell.kurtosis));
      } else {
        ++rep.missing;
      }
      rep.cells.push_back(cell);
    }
  }
  std::vector<double> valid, valid_excess;
  for (std::size_t c = 0; c < num_classes; ++c) {
    rep.class_mean.push_back(mean_of(per_class[c]));
    rep.class_mean_excess.push_back(mean_of(per_class_excess[c]));
    if (!per_class[c].empty()) {
      valid.push_back(rep.class_mean.back());
      valid_excess.push_back(rep.class_mean_excess.back());
    }
  }
  rep.grand_mean = mean_of(valid);
  rep.grand_mean_excess = mean_of(valid_excess);
  return rep;
}

KurtosisReport preactivation_kurtosis(const Parameters& params, const Mask& mask, const Dataset& data,
                                      std::size_t layer) {
  const Matrix z = preactivations(params, mask, data, layer);
  return kurtosis_report(z, data.labels, data.num_classes, layer);
}

void KurtosisReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out.precision(17);
  out << "layer,unit,class,n_samples,kurtosis\n";
  for (const auto& c : cells) {
    out << layer << ',' << c.unit << ',' << c.label << ',' << c.n_samples << ',';
    if (c.kurtosis) out << *c.kurtosis;
    out << '\n';
  }
}

nlohmann::json KurtosisReport::summary() const {
  auto nan_to_null = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["layer"] = layer;
  j["grand_mean_kurtosis"] = nan_to_null(grand_mean);
  j["grand_mean_excess_kurtosis"] = nan_to_null(grand_mean_excess);
  j["missing_cells"] = missing;
  j["cells"] = cells.size();
  auto& pc = j["per_class"];
  pc = nlohmann::json::array();
  for (std::size_t c = 0; c < class_mean.size(); ++c)
    pc.push_back({{"class", c}, {"mean_kurtosis", nan_to_null(class_mean[c])},
                  {"mean_excess_kurtosis", nan_to_null(class_mean_excess[c])}});
  return j;
}

}  // namespace prunelab
