#include "prunelab/commands.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <set>

#include "prunelab/cavity.hpp"
#include "prunelab/decomp.hpp"
#include "prunelab/localization.hpp"
#include "prunelab/statlab.hpp"

namespace prunelab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kTrainData[] = "train.plds";
constexpr char kTestData[] = "test.plds";

std::ofstream open_csv(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out.precision(17);
  return out;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& p, const std::string& producer) {
  std::ifstream in(p);
  if (!in) throw MissingArtifact(p.string(), producer);
  json j;
  in >> j;
  return j;
}

PreparedData load_prepared(const RunDir& dir, const ExperimentConfig& cfg) {
  dir.require("data", cfg.data_hash(), "gen");
  return standardize_pair(load_dataset(dir.data(kTrainData).string()), load_dataset(dir.data(kTestData).string()));
}

Checkpoint load_required_checkpoint(const RunDir& dir, const std::string& name, const std::string& producer) {
  const fs::path p = dir.checkpoint(name);
  if (!fs::exists(p)) throw MissingArtifact("checkpoint " + p.string(), producer);
  return load_checkpoint(p.string());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_loss_csv(const fs::path& p, const std::vector<double>& trace, std::size_t first_iteration) {
  auto out = open_csv(p);
  out << "iteration,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out << first_iteration + i << ',' << trace[i] << '\n';
}

void save_mask_with_sidecar(const Mask& mask, const fs::path& p, const json& extra) {
  save_mask(mask, p.string());
  write_json(p.string() + ".json", mask_summary(mask, extra));
}

/// Masks present in the run directory besides the IMP history.
std::vector<std::pair<std::string, Mask>> baseline_masks(const RunDir& dir, const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, Mask>> out;
  const std::uint64_t h = cfg.pipeline_hash();
  if (dir.has("oneshot")) {
    dir.require("oneshot", h, "oneshot");
    out.emplace_back("oneshot", load_mask(dir.mask("oneshot.plmk").string()));
  }
  if (dir.has("randprune")) {
    dir.require("randprune", h, "randprune");
    out.emplace_back("random", load_mask(dir.mask("random.plmk").string()));
  }
  return out;
}

std::string pct(double sparsity) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * sparsity);
  return buf;
}

void analyze_kurtosis(const RunDir& dir, const ExperimentConfig& cfg, std::ostream& log) {
  const PreparedData data = load_prepared(dir, cfg);
  const Checkpoint rewind = load_required_checkpoint(dir, "rewind.plck", "imp");
  const auto history = load_imp_history(dir, cfg.schedule.rounds);
  json summary = json::array();
  auto run = [&](const std::string& source, std::size_t round, const Mask& mask) {
    for (std::size_t layer : cfg.analysis.kurtosis_layers) {
      const KurtosisReport rep = preactivation_kurtosis(rewind.params, mask, data.test, layer);
      const std::string stem = "kurtosis_" + source + (source == "imp" ? round_name("", round, "") : "") + "_layer" +
                               std::to_string(layer);
      rep.write_csv(dir.report(stem + ".csv").string());
      json j = rep.summary();
      j["source"] = source;
      j["round"] = round;
      j["sparsity"] = scope_sparsity(mask, cfg.schedule.scope);
      summary.push_back(j);
      log << "kurtosis " << source << " round " << round << " layer " << layer << ": mean "
          << rep.grand_mean << ", mean |3-k| " << rep.grand_mean_excess << '\n';
    }
  };
  for (std::size_t n = 0; n < history.size(); ++n) run("imp", n, history[n]);
  for (const auto& [name, mask] : baseline_masks(dir, cfg)) run(name, cfg.schedule.rounds, mask);
  write_json(dir.report("kurtosis_summary.json"), summary);
}

void analyze_localization(const RunDir& dir, const ExperimentConfig& cfg, const Dataset& shape_ref,
                          std::ostream& log) {
  const auto history = load_imp_history(dir, cfg.schedule.rounds);
  LocalizationOptions opts;
  opts.top_k = std::min(cfg.analysis.localization_k, cfg.layer_sizes[1]);
  opts.channel_mode = cfg.analysis.channel_mode;
  json summary;
  auto run = [&](const std::string& source, const std::vector<Mask>& masks) {
    const LocalizationReport rep = rf_width_report(masks, shape_ref.side, shape_ref.channels, opts);
    rep.write_csv(dir.report("localization_" + source + ".csv").string());
    summary[source] = rep.summary();
    for (const auto& s : rep.summaries)
      log << "localization " << source << " round " << s.round << ": median sigma_x " << s.median_sigma_x
          << " (" << s.units_fitted << " fitted, " << s.units_excluded << " excluded)\n";
  };
  run("imp", history);
  for (const auto& [name, mask] : baseline_masks(dir, cfg)) run(name, {mask});
  write_json(dir.report("localization_summary.json"), summary);
}

void analyze_cavity(const RunDir& dir, const ExperimentConfig& cfg, std::ostream& log) {
  const PreparedData data = load_prepared(dir, cfg);
  const Checkpoint rewind = load_required_checkpoint(dir, "rewind.plck", "imp");
  const auto history = load_imp_history(dir, cfg.schedule.rounds);
  const RemovalSchedule schedule = RemovalSchedule::from_history(history);
  std::vector<std::size_t> rounds = cfg.analysis.cavity_rounds;
  if (rounds.empty())
    for (std::size_t r = 0; r < cfg.schedule.rounds; ++r) rounds.push_back(r);
  CavityOptions opts{cfg.analysis.cavity_class_subset};
  json summary = json::array();
  for (std::size_t r : rounds) {
    const CavityReport rep =
        cavity_report(rewind.params, history[r], data.test, schedule, r, cfg.schedule.fraction, opts);
    rep.write_csv(dir.report(round_name("cavity", r, ".csv")).string());
    summary.push_back(rep.summary());
    const CavityGroup* next = rep.group(static_cast<int>(r + 1));
    const CavityGroup* surv = rep.group(kSurvivor);
    log << "cavity round " << r << ": removed-next mean " << (next ? next->mean : NAN) << ", survivors mean "
        << (surv ? surv->mean : NAN) << '\n';
  }
  write_json(dir.report("cavity_summary.json"), summary);
}

void analyze_ica(const RunDir& dir, const ExperimentConfig& cfg, std::ostream& log) {
  const PreparedData data = load_prepared(dir, cfg);
  const auto history = load_imp_history(dir, cfg.schedule.rounds);
  const Eigen::Index n = std::min<Eigen::Index>(data.train.images.cols(),
                                                static_cast<Eigen::Index>(cfg.analysis.ica_max_samples));
  const Matrix x = data.train.images.leftCols(n);
  const std::size_t k = std::min<std::size_t>(cfg.analysis.ica_components, data.train.features());
  const Components comps = fast_ica(x, k, seeds(cfg.master_seed).ica);
  save_components(comps, dir.report("ica_components.plcp").string(),
                  {{"pipeline_hash", cfg.pipeline_hash()}, {"samples", n}});
  log << "fast_ica: " << k << " components, " << comps.iterations << " iterations, converged "
      << comps.converged << '\n';
  const Matrix pixel_comps = components_to_pixels(comps.components, data.train.channels);
  const std::size_t side = data.train.side, channels = data.train.channels;

  auto csv = open_csv(dir.report("ica_match.csv"));
  csv << "source,unit,kept,component,similarity,zero_mask\n";
  constexpr int kBins = 20;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> hists;
  auto run = [&](const std::string& source, const Mask& mask) {
    const auto& layer = mask.layers.at(0);
    Matrix rows(layer.rows(), static_cast<Eigen::Index>(side * side));
    for (Eigen::Index u = 0; u < layer.rows(); ++u) {
      const auto row = mask.row(0, static_cast<std::size_t>(u));
      const auto px = pixel_indicator(row, side, channels);
      for (std::size_t p = 0; p < px.size(); ++p) rows(u, static_cast<Eigen::Index>(p)) = px[p];
    }
    const auto matches = match_masks_to_components(rows, pixel_comps);
    std::vector<std::size_t> hist(kBins, 0);
    for (std::size_t u = 0; u < matches.size(); ++u) {
      const auto& m = matches[u];
      csv << source << ',' << u << ',' << layer.row(static_cast<Eigen::Index>(u)).cast<std::size_t>().sum() << ','
          << m.component << ',' << m.similarity << ',' << (m.zero_mask ? 1 : 0) << '\n';
      if (!m.zero_mask) ++hist[std::min(kBins - 1, static_cast<int>(m.similarity * kBins))];
    }
    hists.emplace_back(source, std::move(hist));
  };
  run("imp", history.back());
  for (const auto& [name, mask] : baseline_masks(dir, cfg)) run(name, mask);
  auto hcsv = open_csv(dir.report("ica_similarity_hist.csv"));
  hcsv << "source,bin_lo,bin_hi,count\n";
  for (const auto& [source, hist] : hists)
    for (int b = 0; b < kBins; ++b)
      hcsv << source << ',' << static_cast<double>(b) / kBins << ',' << static_cast<double>(b + 1) / kBins << ','
           << hist[static_cast<std::size_t>(b)] << '\n';
}

}  // namespace

double schedule_target_sparsity(const ExperimentConfig& cfg) {
  std::size_t kept = 0, total = 0;
  for (std::size_t l = 0; l + 1 < cfg.layer_sizes.size(); ++l) {
    if (!in_scope(cfg.schedule.scope, l)) continue;
    const std::size_t k = cfg.layer_sizes[l] * cfg.layer_sizes[l + 1];
    total += k;
    kept += expected_kept(k, cfg.schedule.fraction, cfg.schedule.rounds);
  }
  return 1.0 - static_cast<double>(kept) / static_cast<double>(total);
}

ExperimentConfig adopt_config(const RunDir& dir, const ExperimentConfig& cfg) {
  cfg.validate();
  dir.create_layout();
  if (!dir.has_config() || dir.load_config().to_json() != cfg.to_json()) dir.save_config(cfg);
  return cfg;
}

void cmd_gen(const RunDir& dir, ExperimentConfig cfg, const std::string& kind, std::ostream& log) {
  if (kind == "clone") {
    cfg.data.clone = true;
  } else if (kind == "edges" || kind == "nlgp") {
    cfg.data.generator = kind;
    cfg.data.clone = false;
  } else {
    throw InvalidConfig("gen: unknown dataset kind '" + kind + "'");
  }
  cfg = adopt_config(dir, cfg);
  const auto [train, test] = generate_data(cfg);
  json prov = cfg.to_json()["data"];
  prov["master_seed"] = cfg.master_seed;
  prov["data_hash"] = cfg.data_hash();
  for (const auto& [name, ds] : {std::pair{kTrainData, &train}, std::pair{kTestData, &test}}) {
    const fs::path p = dir.data(name);
    save_dataset(*ds, p.string());
    json j = prov;
    j["split"] = ds->split == Split::Train ? "train" : "test";
    j["n_samples"] = ds->size();
    j["class_counts"] = ds->class_counts();
    write_sidecar(p.string(), j);
  }
  dir.mark("data", cfg.data_hash());
  log << "gen " << kind << ": " << train.size() << " train / " << test.size() << " test samples in "
      << dir.data("").string() << '\n';
}

void cmd_train(const RunDir& dir, std::ostream& log) {
  const ExperimentConfig cfg = dir.load_config();
  cfg.validate();
  const PreparedData data = load_prepared(dir, cfg);
  const ModelConfig model = cfg.model();
  const TrainConfig tc = cfg.train();
  model.validate_for(data.train);
  const std::uint64_t h = cfg.pipeline_hash();
  const auto t0 = std::chrono::steady_clock::now();
  const Parameters init = init_params(model);
  const Mask full = init.full_mask();
  TrainOutcome out = train(init, full, data.train, tc, 0, h);
  save_checkpoint(Checkpoint{init, 0, 0, h}, dir.checkpoint("init.plck").string());
  if (out.rewind) save_checkpoint(*out.rewind, dir.checkpoint("rewind.plck").string());
  save_checkpoint(Checkpoint{out.params, tc.total_iterations, 0, h}, dir.checkpoint("dense.plck").string());
  write_loss_csv(dir.log("train_loss.csv"), out.loss_trace, 0);
  const double acc_train = accuracy(out.params, full, data.train);
  const double acc_test = accuracy(out.params, full, data.test);
  write_json(dir.log("train.json"), {{"wall_seconds", seconds_since(t0)},
                                     {"train_accuracy", acc_train},
                                     {"test_accuracy", acc_test},
                                     {"pipeline_hash", h}});
  dir.mark("train", h);
  log << "train: " << tc.total_iterations << " iterations, train acc " << acc_train << ", test acc " << acc_test
      << '\n';
}

void cmd_imp(const RunDir& dir, std::ostream& log) {
  const ExperimentConfig cfg = dir.load_config();
  cfg.validate();
  const PreparedData data = load_prepared(dir, cfg);
  const std::uint64_t h = cfg.pipeline_hash();
  std::ofstream rounds_log(dir.log("imp_rounds.jsonl"));
  const json schedule_meta = cfg.schedule.to_json();
  ImpOptions opts;
  opts.config_hash = h;
  opts.on_round = [&](const RoundRecord& rec) {
    json extra = {{"schedule", schedule_meta}, {"round", rec.round}, {"pipeline_hash", h}};
    if (rec.trained) {
      extra["train_accuracy"] = rec.accuracy;
      save_checkpoint(Checkpoint{*rec.trained, cfg.total_iterations, 0, h},
                      dir.checkpoint(round_name("imp_trained", rec.round, ".plck")).string());
      write_loss_csv(dir.log(round_name("imp_loss", rec.round, ".csv")), rec.loss_trace,
                     rec.round == 1 ? 0 : cfg.rewind_iteration);
    }
    save_mask_with_sidecar(rec.mask, dir.mask(round_name("imp", rec.round, ".plmk")), extra);
    rounds_log << json{{"round", rec.round},
                       {"sparsity", rec.sparsity},
                       {"train_accuracy", rec.accuracy},
                       {"final_loss", rec.loss_trace.empty() ? json(nullptr) : json(rec.loss_trace.back())},
                       {"wall_seconds", rec.wall_seconds}}
                      .dump()
               << '\n';
    rounds_log.flush();
    log << "imp round " << rec.round << ": sparsity " << rec.sparsity << ", train acc " << rec.accuracy << " ("
        << rec.wall_seconds << " s)\n";
  };
  const ImpResult res = imp_run(cfg.model(), cfg.train(), cfg.schedule, data.train, opts);
  save_checkpoint(Checkpoint{res.init, 0, 0, h}, dir.checkpoint("init.plck").string());
  save_checkpoint(res.rewind, dir.checkpoint("rewind.plck").string());
  dir.mark("imp", h);
}

void cmd_oneshot(const RunDir& dir, std::optional<double> target, std::ostream& log) {
  const ExperimentConfig cfg = dir.load_config();
  cfg.validate();
  const std::uint64_t h = cfg.pipeline_hash();
  dir.require("train", h, "train");
  const Checkpoint dense = load_required_checkpoint(dir, "dense.plck", "train");
  const double s = target.value_or(schedule_target_sparsity(cfg));
  Mask m = oneshot_prune(dense.params, s, cfg.schedule.scope);
  m.round = cfg.schedule.rounds;
  save_mask_with_sidecar(m, dir.mask("oneshot.plmk"), {{"target_sparsity", s}, {"pipeline_hash", h}});
  dir.mark("oneshot", h);
  log << "oneshot: target " << s << ", sparsity " << scope_sparsity(m, cfg.schedule.scope) << '\n';
}

void cmd_randprune(const RunDir& dir, std::optional<double> target, std::ostream& log) {
  const ExperimentConfig cfg = dir.load_config();
  cfg.validate();
  const std::uint64_t h = cfg.pipeline_hash();
  const double s = target.value_or(schedule_target_sparsity(cfg));
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  for (std::size_t l = 0; l + 1 < cfg.layer_sizes.size(); ++l)
    shapes.emplace_back(cfg.layer_sizes[l + 1], cfg.layer_sizes[l]);
  Mask m = random_mask(shapes, s, seeds(cfg.master_seed).random_mask, cfg.schedule.scope);
  m.round = cfg.schedule.rounds;
  save_mask_with_sidecar(m, dir.mask("random.plmk"), {{"target_sparsity", s}, {"pipeline_hash", h}});
  dir.mark("randprune", h);
  log << "randprune: target " << s << ", sparsity " << scope_sparsity(m, cfg.schedule.scope) << '\n';
}

void cmd_analyze(const RunDir& dir, const std::string& what, std::ostream& log) {
  static const std::set<std::string> known{"kurtosis", "localization", "cavity", "ica-match"};
  if (!known.contains(what)) throw InvalidConfig("analyze: unknown analysis '" + what + "'");
  const ExperimentConfig cfg = dir.load_config();
  cfg.validate();
  const std::uint64_t h = cfg.pipeline_hash();
  dir.require("imp", h, "imp");
  if (what == "kurtosis") {
    analyze_kurtosis(dir, cfg, log);
  } else if (what == "localization") {
    dir.require("data", cfg.data_hash(), "gen");
    const Dataset ref = load_dataset(dir.data(kTestData).string());
    analyze_localization(dir, cfg, ref, log);
  } else if (what == "cavity") {
    analyze_cavity(dir, cfg, log);
  } else {
    analyze_ica(dir, cfg, log);
  }
  dir.mark("analyze-" + what, h);
}

void cmd_report(const RunDir& dir, std::ostream& log) {
  const ExperimentConfig cfg = dir.load_config();
  cfg.validate();
  const std::uint64_t h = cfg.pipeline_hash();
  dir.require("imp", h, "imp");
  const auto history = load_imp_history(dir, cfg.schedule.rounds);

  {
    auto out = open_csv(dir.report("table_sparsity.csv"));
    out << "round,kept,total,sparsity,sparsity_pct,train_accuracy\n";
    for (std::size_t n = 0; n < history.size(); ++n) {
      std::size_t kept = 0, total = 0;
      for (std::size_t l = 0; l < history[n].layers.size(); ++l) {
        if (!in_scope(cfg.schedule.scope, l)) continue;
        kept += history[n].kept(l);
        total += history[n].total(l);
      }
      const double s = scope_sparsity(history[n], cfg.schedule.scope);
      const json side = read_json(dir.mask(round_name("imp", n, ".plmk")).string() + ".json", "imp");
      out << n << ',' << kept << ',' << total << ',' << s << ',' << pct(s) << ',';
      if (side.contains("train_accuracy")) out << side["train_accuracy"].get<double>();
      out << '\n';
    }
    log << "report: table_sparsity.csv\n";
  }

  auto have = [&](const std::string& what) {
    if (!dir.has("analyze-" + what)) {
      log << "report: skipping " << what << " tables (run `prunelab analyze " << what << "`)\n";
      return false;
    }
    dir.require("analyze-" + what, h, "analyze " + what);
    return true;
  };

  if (have("localization")) {
    const json j = read_json(dir.report("localization_summary.json"), "analyze localization");
    auto out = open_csv(dir.report("table_rf_width.csv"));
    out << "source,round,sparsity_pct,units_fitted,units_excluded,mean_sigma_x,median_sigma_x,median_mse\n";
    for (const auto& [source, rows] : j.items())
      for (const auto& r : rows) {
        out << source << ',' << r["round"].get<std::size_t>() << ',' << pct(r["sparsity"].get<double>()) << ','
            << r["units_fitted"].get<std::size_t>() << ',' << r["units_excluded"].get<std::size_t>();
        for (const char* key : {"mean_sigma_x", "median_sigma_x", "median_mse"}) {
          out << ',';
          if (!r[key].is_null()) out << r[key].get<double>();
        }
        out << '\n';
      }
    log << "report: table_rf_width.csv\n";
  }

  if (have("kurtosis")) {
    const json j = read_json(dir.report("kurtosis_summary.json"), "analyze kurtosis");
    auto out = open_csv(dir.report("table_kurtosis.csv"));
    out << "source,round,layer,sparsity_pct,mean_kurtosis,mean_excess_kurtosis,missing_cells\n";
    for (const auto& r : j) {
      out << r["source"].get<std::string>() << ',' << r["round"].get<std::size_t>() << ','
          << r["layer"].get<std::size_t>() << ',' << pct(r["sparsity"].get<double>());
      for (const char* key : {"grand_mean_kurtosis", "grand_mean_excess_kurtosis"}) {
        out << ',';
        if (!r[key].is_null()) out << r[key].get<double>();
      }
      out << ',' << r["missing_cells"].get<std::size_t>() << '\n';
    }
    log << "report: table_kurtosis.csv\n";
  }

  if (have("cavity")) {
    const json j = read_json(dir.report("cavity_summary.json"), "analyze cavity");
    auto out = open_csv(dir.report("table_cavity.csv"));
    out << "evaluation_round,N_W,removal_round,size,n_scored,mean_score,normalized_mean_score\n";
    for (const auto& r : j)
      for (const auto& g : r["groups"]) {
        out << r["evaluation_round"].get<std::size_t>() << ',' << r["N_W"].get<std::size_t>() << ',';
        if (g["removal_round"].is_string())
          out << g["removal_round"].get<std::string>();
        else
          out << g["removal_round"].get<int>();
        out << ',' << g["size"].get<std::size_t>() << ',' << g["n_scored"].get<std::size_t>();
        for (const char* key : {"mean_score", "normalized_mean_score"}) {
          out << ',';
          if (!g[key].is_null()) out << g[key].get<double>();
        }
        out << '\n';
      }
    log << "report: table_cavity.csv\n";
  }
  if (have("ica-match")) log << "report: ica_match.csv and ica_similarity_hist.csv already in reports/\n";
}

}  // namespace prunelab
