#include "prunelab/experiment.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "prunelab/rng.hpp"

namespace prunelab {

namespace fs = std::filesystem;
using nlohmann::json;

ModelConfig ExperimentConfig::model() const {
  return ModelConfig{layer_sizes, Activation::ReLU, batch_norm, seeds(master_seed).model};
}

TrainConfig ExperimentConfig::train() const {
  return TrainConfig{total_iterations, rewind_iteration, batch_size, learning_rate, seeds(master_seed).batches};
}

void ExperimentConfig::validate() const {
  model().validate();
  train().validate();
  schedule.validate();
  if (data.generator != "edges" && data.generator != "nlgp" && data.generator != "file")
    throw InvalidConfig("data.generator must be edges, nlgp or file");
  if (data.generator == "file" && (data.train_path.empty() || data.test_path.empty()))
    throw InvalidConfig("data.generator = file needs data.train_path and data.test_path");
  if (data.generator != "file") {
    if (data.n_train == 0 || data.n_test == 0) throw InvalidConfig("data.n_train and data.n_test must be positive");
    if (layer_sizes.front() != data.side * data.side)
      throw InvalidConfig("input layer size must equal data.side^2 for generated data");
    const std::size_t classes = data.generator == "nlgp" ? 2 : data.n_classes;
    if (layer_sizes.back() != classes) throw InvalidConfig("output layer size must equal the class count");
  }
  for (auto l : analysis.kurtosis_layers)
    if (l == 0 || l > layer_sizes.size() - 2) throw InvalidConfig("analysis.kurtosis_layers out of range");
  for (auto r : analysis.cavity_rounds)
    if (r >= schedule.rounds) throw InvalidConfig("analysis.cavity_rounds entries must be < schedule.rounds");
  if (analysis.localization_k == 0) throw InvalidConfig("analysis.localization_k must be positive");
  if (analysis.ica_components == 0) throw InvalidConfig("analysis.ica_components must be positive");
}

json ExperimentConfig::to_json() const {
  json j;
  j["master_seed"] = master_seed;
  j["model"] = {{"layer_sizes", layer_sizes}, {"batch_norm", batch_norm}, {"activation", "relu"}};
  j["train"] = {{"total_iterations", total_iterations},
                {"rewind_iteration", rewind_iteration},
                {"batch_size", batch_size},
                {"learning_rate", learning_rate}};
  j["schedule"] = schedule.to_json();
  j["data"] = {{"generator", data.generator},     {"clone", data.clone},
               {"n_train", data.n_train},         {"n_test", data.n_test},
               {"side", data.side},               {"n_classes", data.n_classes},
               {"contrast", data.contrast},       {"noise_std", data.noise_std},
               {"correlation_length", data.correlation_length},
               {"gain", data.gain},               {"train_path", data.train_path},
               {"test_path", data.test_path}};
  j["analysis"] = {{"kurtosis_layers", analysis.kurtosis_layers},
                   {"cavity_rounds", analysis.cavity_rounds},
                   {"cavity_class_subset", analysis.cavity_class_subset},
                   {"localization_k", analysis.localization_k},
                   {"channel_mode", to_string(analysis.channel_mode)},
                   {"ica_components", analysis.ica_components},
                   {"ica_max_samples", analysis.ica_max_samples}};
  return j;
}

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  try {
    read_opt(j, "master_seed", c.master_seed);
    if (j.contains("model")) {
      const auto& m = j["model"];
      read_opt(m, "layer_sizes", c.layer_sizes);
      read_opt(m, "batch_norm", c.batch_norm);
      if (m.contains("activation") && m["activation"] != "relu") throw InvalidConfig("only relu is supported");
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      read_opt(t, "total_iterations", c.total_iterations);
      read_opt(t, "rewind_iteration", c.rewind_iteration);
      read_opt(t, "batch_size", c.batch_size);
      read_opt(t, "learning_rate", c.learning_rate);
    }
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      read_opt(s, "fraction", c.schedule.fraction);
      read_opt(s, "rounds", c.schedule.rounds);
      if (s.contains("scope")) c.schedule.scope = parse_scope(s["scope"].get<std::string>());
    }
    if (j.contains("data")) {
      const auto& d = j["data"];
      read_opt(d, "generator", c.data.generator);
      read_opt(d, "clone", c.data.clone);
      read_opt(d, "n_train", c.data.n_train);
      read_opt(d, "n_test", c.data.n_test);
      read_opt(d, "side", c.data.side);
      read_opt(d, "n_classes", c.data.n_classes);
      read_opt(d, "contrast", c.data.contrast);
      read_opt(d, "noise_std", c.data.noise_std);
      read_opt(d, "correlation_length", c.data.correlation_length);
      read_opt(d, "gain", c.data.gain);
      read_opt(d, "train_path", c.data.train_path);
      read_opt(d, "test_path", c.data.test_path);
    }
    if (j.contains("analysis")) {
      const auto& a = j["analysis"];
      read_opt(a, "kurtosis_layers", c.analysis.kurtosis_layers);
      read_opt(a, "cavity_rounds", c.analysis.cavity_rounds);
      read_opt(a, "cavity_class_subset", c.analysis.cavity_class_subset);
      read_opt(a, "localization_k", c.analysis.localization_k);
      if (a.contains("channel_mode")) c.analysis.channel_mode = parse_channel_mode(a["channel_mode"].get<std::string>());
      read_opt(a, "ica_components", c.analysis.ica_components);
      read_opt(a, "ica_max_samples", c.analysis.ica_max_samples);
    }
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("config: ") + e.what());
  }
  return c;
}

std::uint64_t ExperimentConfig::pipeline_hash() const {
  json j = to_json();
  j.erase("analysis");
  return fnv1a(j.dump());
}

std::uint64_t ExperimentConfig::data_hash() const {
  const json j = to_json();
  return fnv1a(json{{"data", j["data"]}, {"master_seed", master_seed}}.dump());
}

ComponentSeeds seeds(std::uint64_t m) {
  return ComponentSeeds{derive_seed(m, "data/train"), derive_seed(m, "data/test"),  derive_seed(m, "clone/train"),
                        derive_seed(m, "clone/test"), derive_seed(m, "model"),      derive_seed(m, "batches"),
                        derive_seed(m, "random_mask"), derive_seed(m, "ica")};
}

std::pair<Dataset, Dataset> generate_data(const ExperimentConfig& cfg) {
  const ComponentSeeds s = seeds(cfg.master_seed);
  const DataSource& d = cfg.data;
  Dataset train, test;
  if (d.generator == "edges") {
    EdgeParams p{d.n_train, d.side, d.n_classes, d.contrast, d.noise_std, s.data_train, Split::Train};
    train = gen_edges(p);
    p.n_samples = d.n_test;
    p.seed = s.data_test;
    p.split = Split::Test;
    test = gen_edges(p);
  } else if (d.generator == "nlgp") {
    NlgpParams p{d.n_train, d.side, d.correlation_length, d.gain, s.data_train, Split::Train};
    train = gen_nlgp(p);
    p.n_samples = d.n_test;
    p.seed = s.data_test;
    p.split = Split::Test;
    test = gen_nlgp(p);
  } else if (d.generator == "file") {
    train = load_dataset(d.train_path);
    test = load_dataset(d.test_path);
    train.normalization.reset();
    test.normalization.reset();
  } else {
    throw InvalidConfig("unknown generator '" + d.generator + "'");
  }
  if (d.clone) {
    const CloneModel model = fit_gaussian_clone(train);
    const auto train_counts = train.class_counts();
    const auto test_counts = test.class_counts();
    train = sample_clone(model, train_counts, s.clone_train, Split::Train);
    test = sample_clone(model, test_counts, s.clone_test, Split::Test);
  }
  return {std::move(train), std::move(test)};
}

PreparedData standardize_pair(const Dataset& train, const Dataset& test) {
  const Normalization stats = feature_statistics(train);
  return PreparedData{standardize(train, stats), standardize(test, stats)};
}

PreparedData prepare_data(const ExperimentConfig& cfg) {
  auto [train, test] = generate_data(cfg);
  return standardize_pair(train, test);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const InvalidConfig*>(&e)) return kExitConfig;
  if (dynamic_cast<const StaleArtifact*>(&e)) return kExitStale;
  if (dynamic_cast<const DivergenceError*>(&e)) return kExitDivergence;
  return kExitFailure;
}

RunDir::RunDir(fs::path root) : root_(std::move(root)) {}

void RunDir::create_layout() const {
  for (const char* sub : {"data", "checkpoints", "masks", "reports", "logs"}) fs::create_directories(root_ / sub);
}

bool RunDir::has_config() const { return fs::exists(root_ / "config.json"); }

ExperimentConfig RunDir::load_config() const {
  std::ifstream in(root_ / "config.json");
  if (!in) throw MissingArtifact("config.json in " + root_.string(), "gen");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidConfig("config.json: " + std::string(e.what()));
  }
  return ExperimentConfig::from_json(j);
}

void RunDir::save_config(const ExperimentConfig& cfg) const {
  fs::create_directories(root_);
  std::ofstream(root_ / "config.json") << cfg.to_json().dump(2) << '\n';
}

json RunDir::manifest() const {
  std::ifstream in(root_ / "manifest.json");
  if (!in) return json::object();
  json j;
  in >> j;
  return j;
}

void RunDir::mark(const std::string& stage, std::uint64_t hash) const {
  json j = manifest();
  j[stage] = {{"pipeline_hash", hash}};
  std::ofstream(root_ / "manifest.json") << j.dump(2) << '\n';
}

bool RunDir::has(const std::string& stage) const { return manifest().contains(stage); }

void RunDir::require(const std::string& stage, std::uint64_t hash, const std::string& producer) const {
  const json j = manifest();
  if (!j.contains(stage)) throw MissingArtifact(stage + " artifacts in " + root_.string(), producer);
  const auto stored = j[stage]["pipeline_hash"].get<std::uint64_t>();
  if (stored != hash) {
    std::ostringstream msg;
    msg << stage << " artifacts in " << root_.string() << " were produced under pipeline hash " << std::hex << stored
        << " but the current config hashes to " << hash << "; rerun `prunelab " << producer << "`";
    throw StaleArtifact(msg.str());
  }
}

RunLock::RunLock(const fs::path& root) : path_(root / ".lock") {
  fs::create_directories(root);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST)
      throw Error("run directory " + root.string() + " is locked by another command (remove " + path_.string() +
                  " if no command is running)");
    throw Error("cannot create lockfile " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

std::string round_name(const std::string& prefix, std::size_t round, const std::string& ext) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02zu", round);
  return prefix + "_round_" + buf + ext;
}

std::vector<Mask> load_imp_history(const RunDir& dir, std::size_t rounds) {
  std::vector<Mask> out;
  for (std::size_t n = 0; n <= rounds; ++n) {
    const fs::path p = dir.mask(round_name("imp", n, ".plmk"));
    if (!fs::exists(p)) throw MissingArtifact("mask " + p.string(), "imp");
    out.push_back(load_mask(p.string()));
  }
  return out;
}

}  // namespace prunelab
