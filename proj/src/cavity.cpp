#include "prunelab/cavity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "prunelab/error.hpp"
#include "prunelab/statlab.hpp"

namespace prunelab {

CavityScore cavity_from_kurtosis(double kurt_full, double kurt_removed) {
  if (kurt_full > 3.0) return {(kurt_removed - kurt_full) / kurt_full, CavityStatus::Ok};
  if (kurt_full < 3.0) return {(kurt_full - kurt_removed) / kurt_full, CavityStatus::Ok};
  return {0.0, CavityStatus::NeutralKurtosis};
}

CavityScore cavity_score(const Vector& weight_row, std::span<const double> lambda, const Matrix& inputs,
                         std::size_t j) {
  if (static_cast<std::size_t>(inputs.cols()) != lambda.size())
    throw ShapeError("cavity_score: inputs and preactivations disagree on sample count");
  if (inputs.rows() != weight_row.size() || j >= static_cast<std::size_t>(weight_row.size()))
    throw ShapeError("cavity_score: weight index out of range");
  const double w = weight_row[static_cast<Eigen::Index>(j)];
  if (w == 0.0) return {0.0, CavityStatus::Ok};
  const double k_full = kurtosis(lambda);
  std::vector<double> removed(lambda.size());
  for (std::size_t s = 0; s < lambda.size(); ++s)
    removed[s] = lambda[s] - w * inputs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(s));
  return cavity_from_kurtosis(k_full, kurtosis(removed));
}

RemovalSchedule RemovalSchedule::from_history(const std::vector<Mask>& history) {
  if (history.empty()) throw InsufficientData("removal schedule needs at least one mask");
  RemovalSchedule rs;
  rs.num_rounds = history.size() - 1;
  for (std::size_t l = 0; l < history.front().layers.size(); ++l) {
    const auto& first = history.front().layers[l];
    Eigen::MatrixXi r = Eigen::MatrixXi::Constant(first.rows(), first.cols(), kSurvivor);
    for (std::size_t n = 1; n < history.size(); ++n) {
      const auto& prev = history[n - 1].layers.at(l);
      const auto& cur = history[n].layers.at(l);
      if (cur.rows() != prev.rows() || cur.cols() != prev.cols())
        throw ShapeError("removal schedule: mask shapes change across rounds");
      for (Eigen::Index k = 0; k < cur.size(); ++k) {
        if (cur.data()[k] && !prev.data()[k])
          throw InvalidConfig("removal schedule: mask history is not nested at round " + std::to_string(n));
        if (prev.data()[k] && !cur.data()[k]) r.data()[k] = static_cast<int>(n);
      }
    }
    // Weights absent from m(0) never existed; mark them 0.
    for (Eigen::Index k = 0; k < first.size(); ++k)
      if (!first.data()[k]) r.data()[k] = 0;
    rs.rounds.push_back(std::move(r));
  }
  return rs;
}

std::size_t nominal_remaining(std::size_t total, double fraction, std::size_t round) {
  return static_cast<std::size_t>(
      std::llround(static_cast<double>(total) * std::pow(1.0 - fraction, static_cast<double>(round))));
}

const CavityGroup* CavityReport::group(int removal_round) const {
  for (const auto& g : groups)
    if (g.removal_round == removal_round) return &g;
  return nullptr;
}

CavityReport cavity_report(const Parameters& params, const Mask& mask, const Dataset& data,
                           const RemovalSchedule& schedule, std::size_t round, double fraction,
                           const CavityOptions& options) {
  const std::size_t layer = 0;
  const Matrix X = transformed_inputs(params, mask, data, 1);  // features x samples
  const Matrix W = params.layers[layer].weight.cwiseProduct(mask.layers[layer].cast<double>());
  const auto& M = mask.layers[layer];
  if (schedule.rounds.empty() || schedule.rounds[layer].rows() != M.rows() || schedule.rounds[layer].cols() != M.cols())
    throw ShapeError("cavity_report: removal schedule does not match mask");

  std::vector<std::uint32_t> classes = options.class_subset;
  if (classes.empty())
    for (std::uint32_t c = 0; c < data.num_classes; ++c) classes.push_back(c);
  const auto by_class = data.indices_by_class();

  const Eigen::Index units = W.rows();
  const Eigen::Index d = W.cols();
  Matrix score_sum = Matrix::Zero(units, d);
  Eigen::MatrixXi valid = Eigen::MatrixXi::Zero(units, d);
  Eigen::MatrixXi neutral = Eigen::MatrixXi::Zero(units, d);

  CavityReport rep;
  rep.round = round;
  rep.layer = layer;
  std::vector<double> removed;
  for (std::uint32_t c : classes) {
    const auto& idx = by_class.at(c);
    if (idx.size() < kMinSamplesPerCell) continue;
    const std::vector<Eigen::Index> cols(idx.begin(), idx.end());
    // samples x features so that each input column is contiguous
    const Matrix XcT = X(Eigen::all, cols).transpose();
    const Matrix lambda_c = XcT * W.transpose();  // samples x units, bias-free
    const auto n = static_cast<std::size_t>(XcT.rows());
    removed.resize(n);
    for (Eigen::Index i = 0; i < units; ++i) {
      const double* lam = lambda_c.col(i).data();
      double k_full;
      try {
        k_full = kurtosis({lam, n});
      } catch (const DegenerateVariance&) {
        for (Eigen::Index j = 0; j < d; ++j) rep.degenerate_cells += M(i, j) ? 1 : 0;
        continue;
      }
      for (Eigen::Index j = 0; j < d; ++j) {
        if (!M(i, j)) continue;
        const double w = W(i, j);
        CavityScore sc;
        if (w != 0.0) {
          const double* xj = XcT.col(j).data();
          for (std::size_t s = 0; s < n; ++s) removed[s] = lam[s] - w * xj[s];
          try {
            sc = cavity_from_kurtosis(k_full, kurtosis(removed));
          } catch (const DegenerateVariance&) {
            ++rep.degenerate_cells;
            continue;
          }
        } else {
          sc = cavity_from_kurtosis(k_full, k_full);
          sc.value = 0.0;
        }
        score_sum(i, j) += sc.value;
        valid(i, j) += 1;
        if (sc.status == CavityStatus::NeutralKurtosis) neutral(i, j) += 1;
      }
    }
  }

  std::map<int, std::vector<double>> members;
  std::map<int, std::size_t> sizes;
  for (Eigen::Index i = 0; i < units; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      if (!M(i, j)) continue;
      WeightScore ws;
      ws.unit = static_cast<std::size_t>(i);
      ws.input = static_cast<std::size_t>(j);
      ws.removal_round = schedule.rounds[layer](i, j);
      ws.n_classes_valid = static_cast<std::size_t>(valid(i, j));
      ws.n_neutral = static_cast<std::size_t>(neutral(i, j));
      ws.score = ws.n_classes_valid ? score_sum(i, j) / static_cast<double>(ws.n_classes_valid)
                                    : std::numeric_limits<double>::quiet_NaN();
      ++sizes[ws.removal_round];
      if (ws.n_classes_valid)
        members[ws.removal_round].push_back(ws.score);
      else
        ++rep.excluded;
      rep.weights.push_back(ws);
    }
  }
  rep.remaining = rep.weights.size();
  rep.nominal_remaining = nominal_remaining(static_cast<std::size_t>(M.size()), fraction, round);

  auto add_group = [&](int key) {
    CavityGroup g;
    g.removal_round = key;
    g.size = sizes[key];
    const auto& v = members[key];
    g.n_scored = v.size();
    double s = 0.0;
    for (double x : v) s += x;
    g.mean = v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
    g.normalized_mean = static_cast<double>(rep.nominal_remaining) * g.mean;
    rep.groups.push_back(g);
  };
  for (auto& [key, count] : sizes)
    if (key != kSurvivor) add_group(key);
  if (sizes.count(kSurvivor)) add_group(kSurvivor);
  return rep;
}

void CavityReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out.precision(17);
  out << "layer,i,j,removal_round,score,n_classes_valid\n";
  for (const auto& w : weights) {
    out << layer << ',' << w.unit << ',' << w.input << ',';
    if (w.removal_round == kSurvivor)
      out << "survivor";
    else
      out << w.removal_round;
    out << ',';
    if (w.n_classes_valid) out << w.score;
    out << ',' << w.n_classes_valid << '\n';
  }
}

nlohmann::json CavityReport::summary() const {
  nlohmann::json j;
  j["evaluation_round"] = round;
  j["layer"] = layer;
  j["N_W"] = nominal_remaining;
  j["remaining_weights"] = remaining;
  j["excluded_weights"] = excluded;
  j["degenerate_cells"] = degenerate_cells;
  auto& gs = j["groups"];
  gs = nlohmann::json::array();
  for (const auto& g : groups) {
    auto fin = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    gs.push_back({{"removal_round", g.removal_round == kSurvivor ? nlohmann::json("survivor")
                                                                 : nlohmann::json(g.removal_round)},
                  {"size", g.size},
                  {"n_scored", g.n_scored},
                  {"mean_score", fin(g.mean)},
                  {"normalized_mean_score", fin(g.normalized_mean)}});
  }
  return j;
}

}  // namespace prunelab
