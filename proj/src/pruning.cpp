#include "prunelab/pruning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "prunelab/binary_io.hpp"
#include "prunelab/error.hpp"
#include "prunelab/rng.hpp"

namespace prunelab {

namespace {

constexpr char kMaskMagic[] = "PLMK";
constexpr std::uint32_t kMaskVersion = 1;

std::size_t round_half_even(double x) {
  return static_cast<std::size_t>(std::nearbyint(x));  // default FE_TONEAREST
}

}  // namespace

std::string to_string(PruneScope scope) {
  return scope == PruneScope::FirstLayerOnly ? "first_layer_only" : "all_layers";
}

PruneScope parse_scope(const std::string& s) {
  if (s == "first_layer_only") return PruneScope::FirstLayerOnly;
  if (s == "all_layers") return PruneScope::AllLayers;
  throw InvalidConfig("unknown prune scope '" + s + "'");
}

void PruneSchedule::validate() const {
  if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidConfig("schedule: fraction must lie in (0, 1)");
  if (rounds < 1) throw InvalidConfig("schedule: rounds must be >= 1");
}

nlohmann::json PruneSchedule::to_json() const {
  return {{"fraction", fraction}, {"rounds", rounds}, {"scope", to_string(scope)}};
}

bool in_scope(PruneScope scope, std::size_t layer) { return scope == PruneScope::AllLayers || layer == 0; }

std::size_t prune_count(double fraction, std::size_t kept) {
  return round_half_even(fraction * static_cast<double>(kept));
}

std::size_t expected_kept(std::size_t total, double fraction, std::size_t rounds) {
  std::size_t k = total;
  for (std::size_t r = 0; r < rounds; ++r) k -= prune_count(fraction, k);
  return k;
}

MaskMatrix magnitude_mask(const Matrix& weights, const MaskMatrix& prev, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw InvalidConfig("magnitude_mask: fraction must lie in [0, 1)");
  if (prev.rows() != weights.rows() || prev.cols() != weights.cols())
    throw ShapeError("magnitude_mask: mask is not congruent to weights");
  struct Entry {
    double magnitude;
    Eigen::Index row, col;
  };
  std::vector<Entry> alive;
  for (Eigen::Index i = 0; i < weights.rows(); ++i)
    for (Eigen::Index j = 0; j < weights.cols(); ++j)
      if (prev(i, j)) alive.push_back({std::abs(weights(i, j)), i, j});
  if (alive.empty()) throw EmptyNetwork("magnitude_mask: every weight is already pruned");

  MaskMatrix out = prev;
  const std::size_t p = prune_count(fraction, alive.size());
  if (p == 0) return out;
  // (magnitude, row, col) is a strict total order, so selection is deterministic.
  auto less = [](const Entry& a, const Entry& b) {
    if (a.magnitude != b.magnitude) return a.magnitude < b.magnitude;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  };
  std::nth_element(alive.begin(), alive.begin() + static_cast<std::ptrdiff_t>(p - 1), alive.end(), less);
  const Entry pivot = alive[p - 1];
  for (const auto& e : alive)
    if (!less(pivot, e)) out(e.row, e.col) = 0;
  return out;
}

Mask magnitude_mask(const Parameters& params, const Mask& prev, double fraction, PruneScope scope) {
  if (prev.layers.size() != params.layers.size()) throw ShapeError("magnitude_mask: layer count mismatch");
  Mask out = prev;
  out.round = prev.round + 1;
  for (std::size_t l = 0; l < params.layers.size(); ++l)
    if (in_scope(scope, l)) out.layers[l] = magnitude_mask(params.layers[l].weight, prev.layers[l], fraction);
  return out;
}

Mask oneshot_prune(const Parameters& trained, double target_sparsity, PruneScope scope) {
  if (!(target_sparsity > 0.0 && target_sparsity < 1.0))
    throw InvalidConfig("oneshot_prune: target sparsity must lie in (0, 1)");
  return magnitude_mask(trained, trained.full_mask(), target_sparsity, scope);
}

MaskMatrix random_mask(std::size_t rows, std::size_t cols, double target_sparsity, std::uint64_t seed) {
  if (!(target_sparsity >= 0.0 && target_sparsity < 1.0))
    throw InvalidConfig("random_mask: target sparsity must lie in [0, 1)");
  const std::size_t total = rows * cols;
  const std::size_t keep = round_half_even((1.0 - target_sparsity) * static_cast<double>(total));
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  // Partial Fisher-Yates: the first `keep` slots are a uniform subset.
  for (std::size_t k = 0; k < keep; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, total - 1);
    std::swap(idx[k], idx[pick(rng)]);
  }
  MaskMatrix m = MaskMatrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t k = 0; k < keep; ++k)
    m(static_cast<Eigen::Index>(idx[k] / cols), static_cast<Eigen::Index>(idx[k] % cols)) = 1;
  return m;
}

Mask random_mask(const std::vector<std::pair<std::size_t, std::size_t>>& shapes, double target_sparsity,
                 std::uint64_t seed, PruneScope scope) {
  Mask m = Mask::ones(shapes);
  for (std::size_t l = 0; l < shapes.size(); ++l)
    if (in_scope(scope, l))
      m.layers[l] = random_mask(shapes[l].first, shapes[l].second, target_sparsity, derive_seed(seed, l));
  return m;
}

double scope_sparsity(const Mask& mask, PruneScope scope) {
  std::size_t kept = 0, total = 0;
  for (std::size_t l = 0; l < mask.layers.size(); ++l) {
    if (!in_scope(scope, l)) continue;
    kept += mask.kept(l);
    total += mask.total(l);
  }
  return total == 0 ? 0.0 : 1.0 - static_cast<double>(kept) / static_cast<double>(total);
}

ImpResult imp_run(const ModelConfig& model, const TrainConfig& train_config, const PruneSchedule& schedule,
                  const Dataset& data, const ImpOptions& options) {
  model.validate_for(data);
  train_config.validate();
  schedule.validate();

  using Clock = std::chrono::steady_clock;
  ImpResult result;
  result.init = init_params(model);

  auto make_record = [&](std::size_t n, Mask mask) {
    RoundRecord rec;
    rec.round = n;
    mask.round = n;
    for (std::size_t l = 0; l < mask.layers.size(); ++l) rec.layer_sparsity.push_back(mask.sparsity(l));
    rec.sparsity = scope_sparsity(mask, schedule.scope);
    rec.mask = std::move(mask);
    return rec;
  };
  auto with_round = [](const DivergenceError& e, std::size_t n) {
    return DivergenceError(std::string(e.what()) + " (IMP round " + std::to_string(n) + ")", e.iteration(),
                           static_cast<int>(n));
  };

  Mask current = result.init.full_mask();
  result.rounds.push_back(make_record(0, current));
  if (options.on_round) options.on_round(result.rounds.back());

  for (std::size_t n = 1; n <= schedule.rounds; ++n) {
    const auto t0 = Clock::now();
    TrainOutcome outcome;
    try {
      if (n == 1) {
        outcome = train(result.init, current, data, train_config, 0, options.config_hash);
        result.rewind = *outcome.rewind;
      } else {
        outcome = train(result.rewind.params, current, data, train_config, train_config.rewind_iteration,
                        options.config_hash);
      }
    } catch (const DivergenceError& e) {
      throw with_round(e, n - 1);
    }
    Mask next = magnitude_mask(outcome.params, current, schedule.fraction, schedule.scope);
    RoundRecord rec = make_record(n, next);
    rec.accuracy = accuracy(outcome.params, current, data);
    rec.trained = std::move(outcome.params);
    rec.loss_trace = std::move(outcome.loss_trace);
    rec.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    current = rec.mask;
    result.rounds.push_back(std::move(rec));
    if (options.on_round) options.on_round(result.rounds.back());
  }

  if (options.train_final) {
    try {
      result.final_trained =
          train(result.rewind.params, current, data, train_config, train_config.rewind_iteration, options.config_hash)
              .params;
    } catch (const DivergenceError& e) {
      throw with_round(e, schedule.rounds);
    }
  }
  return result;
}

void save_mask(const Mask& mask, const std::string& path) {
  io::Writer w(path);
  w.magic({kMaskMagic, 4});
  w.put<std::uint32_t>(kMaskVersion);
  w.put<std::uint64_t>(mask.round);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(mask.layers.size()));
  for (const auto& m : mask.layers) {
    w.put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    std::vector<unsigned char> bits((static_cast<std::size_t>(m.size()) + 7) / 8, 0);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j, ++k)
        if (m(i, j)) bits[k / 8] |= static_cast<unsigned char>(1u << (k % 8));
    w.bytes(bits);
  }
  w.finish();
}

Mask load_mask(const std::string& path) {
  io::Reader r(path);
  r.expect_magic({kMaskMagic, 4});
  r.expect_version(kMaskVersion);
  Mask mask;
  mask.round = r.get<std::uint64_t>();
  const auto L = r.get<std::uint32_t>();
  r.expect_at_most(L, 1024, "layer count");
  for (std::uint32_t l = 0; l < L; ++l) {
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    r.expect_at_most(rows * cols, std::uint64_t{1} << 36, "layer size");
    std::vector<unsigned char> bits((rows * cols + 7) / 8);
    r.bytes(bits);
    MaskMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j, ++k) m(i, j) = (bits[k / 8] >> (k % 8)) & 1u;
    mask.layers.push_back(std::move(m));
  }
  return mask;
}

nlohmann::json mask_summary(const Mask& mask, const nlohmann::json& extra) {
  nlohmann::json j = extra.is_object() ? extra : nlohmann::json::object();
  j["round"] = mask.round;
  auto& layers = j["layers"];
  layers = nlohmann::json::array();
  for (std::size_t l = 0; l < mask.layers.size(); ++l)
    layers.push_back({{"layer", l},
                      {"rows", mask.layers[l].rows()},
                      {"cols", mask.layers[l].cols()},
                      {"kept", mask.kept(l)},
                      {"sparsity", mask.sparsity(l)}});
  return j;
}

}  // namespace prunelab
