#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "support/fixtures.hpp"
#include "prunelab/commands.hpp"

using namespace prunelab;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.layer_sizes = {64, 8, 8, 2};
  c.total_iterations = 60;
  c.rewind_iteration = 5;
  c.batch_size = 20;
  c.schedule.rounds = 3;
  c.data.n_train = 400;
  c.data.n_test = 200;
  c.data.side = 8;
  c.data.n_classes = 2;
  c.analysis.localization_k = 8;
  c.analysis.ica_components = 4;
  c.analysis.ica_max_samples = 400;
  c.master_seed = 11;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fixture::temp_path(name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void run_all(const RunDir& dir, const ExperimentConfig& cfg) {
  std::ostringstream log;
  cmd_gen(dir, cfg, "edges", log);
  adopt_config(dir, cfg);
  cmd_train(dir, log);
  cmd_imp(dir, log);
  cmd_oneshot(dir, std::nullopt, log);
  cmd_randprune(dir, std::nullopt, log);
  for (const char* what : {"kurtosis", "localization", "cavity", "ica-match"}) cmd_analyze(dir, what, log);
  cmd_report(dir, log);
}

int cli(const std::string& args) {
  const std::string cmd = std::string(PRUNELAB_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config JSON round trip and validation") {
  ExperimentConfig c = tiny_config();
  c.analysis.cavity_class_subset = {1};
  c.schedule.scope = PruneScope::AllLayers;
  const ExperimentConfig r = ExperimentConfig::from_json(c.to_json());
  CHECK(r.to_json() == c.to_json());
  CHECK(r.pipeline_hash() == c.pipeline_hash());

  ExperimentConfig a = c;
  a.analysis.localization_k = 3;
  CHECK(a.pipeline_hash() == c.pipeline_hash());
  a.learning_rate = 0.2;
  CHECK(a.pipeline_hash() != c.pipeline_hash());
  CHECK(a.data_hash() == c.data_hash());

  ExperimentConfig bad = c;
  bad.rewind_iteration = bad.total_iterations;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  bad = c;
  bad.layer_sizes[0] = 65;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  bad = c;
  bad.batch_norm = {true, true, true, true};
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  const nlohmann::json typo = {{"train", {{"learning_rate", "fast"}}}};
  CHECK_THROWS_AS(ExperimentConfig::from_json(typo), InvalidConfig);
}

TEST_CASE("component seeds are distinct and stable") {
  const ComponentSeeds a = seeds(0), b = seeds(0), c = seeds(1);
  CHECK(a.model == b.model);
  CHECK(a.model != c.model);
  CHECK(a.data_train != a.data_test);
  CHECK(a.batches != a.random_mask);
  CHECK(a.model == derive_seed(0, "model"));
}

TEST_CASE("prepared data: test split uses train statistics, clone swaps both splits") {
  const ExperimentConfig c = tiny_config();
  const PreparedData d = prepare_data(c);
  CHECK(d.train.size() == 400);
  CHECK(d.test.size() == 200);
  CHECK(d.test.normalization->mean == d.train.normalization->mean);
  ExperimentConfig cl = c;
  cl.data.clone = true;
  const auto [tr, te] = generate_data(cl);
  const auto [src, _] = generate_data(c);
  CHECK_FALSE(tr.images == src.images);
  CHECK(tr.class_counts() == src.class_counts());
}

TEST_CASE("run directory manifest: missing and stale stages") {
  const fs::path root = fresh_dir("manifest");
  const RunDir dir(root);
  dir.create_layout();
  CHECK_THROWS_AS(dir.require("train", 1, "train"), MissingArtifact);
  dir.mark("train", 1);
  CHECK_NOTHROW(dir.require("train", 1, "train"));
  CHECK_THROWS_AS(dir.require("train", 2, "train"), StaleArtifact);
  {
    RunLock lock(root);
    CHECK_THROWS_AS(RunLock{root}, Error);
  }
  CHECK_NOTHROW(RunLock{root});
  CHECK(round_name("imp", 3, ".plmk") == "imp_round_03.plmk");
  fs::remove_all(root);
}

TEST_CASE("full pipeline is deterministic and produces every artifact") {
  const fs::path r1 = fresh_dir("pipe1"), r2 = fresh_dir("pipe2");
  const ExperimentConfig c = tiny_config();
  run_all(RunDir(r1), c);
  run_all(RunDir(r2), c);
  std::size_t compared = 0;
  for (const char* sub : {"masks", "reports", "checkpoints", "data"})
    for (const auto& e : fs::directory_iterator(r1 / sub)) {
      const fs::path other = r2 / sub / e.path().filename();
      REQUIRE(fs::exists(other));
      if (e.path().extension() == ".json") continue;  // sidecars carry timing
      CHECK_MESSAGE(slurp(e.path()) == slurp(other), e.path().string());
      ++compared;
    }
  CHECK(compared > 20);
  for (const char* f : {"table_sparsity.csv", "table_rf_width.csv", "table_kurtosis.csv", "table_cavity.csv"})
    CHECK(fs::exists(r1 / "reports" / f));
  const auto history = load_imp_history(RunDir(r1), 3);
  CHECK(history.size() == 4);
  CHECK(nested_in(history[3], history[2]));
  fs::remove_all(r1);
  fs::remove_all(r2);
}

TEST_CASE("changed pipeline settings make downstream commands stale") {
  const fs::path root = fresh_dir("stale");
  const RunDir dir(root);
  ExperimentConfig c = tiny_config();
  std::ostringstream log;
  cmd_gen(dir, c, "edges", log);
  adopt_config(dir, c);
  CHECK_THROWS_AS(cmd_oneshot(dir, std::nullopt, log), MissingArtifact);
  CHECK_THROWS_AS(cmd_analyze(dir, "kurtosis", log), MissingArtifact);
  cmd_train(dir, log);
  c.learning_rate = 0.2;
  adopt_config(dir, c);
  CHECK_THROWS_AS(cmd_oneshot(dir, std::nullopt, log), StaleArtifact);
  c.data.noise_std = 1.0;
  adopt_config(dir, c);
  CHECK_THROWS_AS(cmd_train(dir, log), StaleArtifact);
  fs::remove_all(root);
}

TEST_CASE("command-line exit codes") {
  const fs::path root = fresh_dir("cli");
  const std::string base = "--run-dir " + root.string();
  const std::string small =
      " --layers 64:8:8:2 --side 8 --classes 2 --n-train 300 --n-test 100 --iterations 40 --rewind 4 "
      "--batch-size 20 --rounds 2 --top-k 4 --ica-components 4";
  CHECK(cli(base + small + " gen edges") == 0);
  CHECK(cli(base + " oneshot") == 1);  // dense training has not run yet
  CHECK(cli(base + " train") == 0);
  CHECK(cli(base + " oneshot") == 0);
  CHECK(cli(base + " imp") == 0);
  CHECK(cli(base + " analyze cavity") == 0);
  CHECK(cli(base + " --lr 0.3 oneshot") == 3);
  CHECK(cli(base + " --layers 64:x train") == 2);
  CHECK(cli(base + " analyze entropy") == 2);
  CHECK(cli("train") == 2);
  CHECK(cli(base + " --lr 1e300 train") == 4);
  fs::remove_all(root);
}
