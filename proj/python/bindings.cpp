// Python bindings. Arrays follow the sample-major convention on the Python
// side: images are (samples, features), masks are (fan_out, fan_in).

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "prunelab/cavity.hpp"
#include "prunelab/commands.hpp"
#include "prunelab/datagen.hpp"
#include "prunelab/decomp.hpp"
#include "prunelab/localization.hpp"
#include "prunelab/statlab.hpp"

namespace py = pybind11;
using namespace prunelab;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskRows = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

py::dict dataset_dict(const Dataset& ds) {
  py::dict d;
  d["images"] = RowMatrix(ds.images.transpose());
  d["labels"] = ds.labels;
  d["side"] = ds.side;
  d["channels"] = ds.channels;
  d["num_classes"] = ds.num_classes;
  return d;
}

Dataset dataset_from(const RowMatrix& images, const std::vector<std::uint32_t>& labels, std::size_t side,
                     std::size_t channels, std::size_t num_classes) {
  Dataset ds;
  ds.images = images.transpose();
  ds.labels = labels;
  ds.side = side;
  ds.channels = channels;
  ds.num_classes = num_classes;
  ds.validate();
  return ds;
}

ExperimentConfig config_from(const py::object& cfg) {
  if (cfg.is_none()) return ExperimentConfig{};
  const std::string text = py::module_::import("json").attr("dumps")(cfg).cast<std::string>();
  return ExperimentConfig::from_json(nlohmann::json::parse(text));
}

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

py::dict fit_dict(const GaussianFit& f) {
  py::dict d;
  d["amplitude"] = f.amplitude;
  d["mu_x"] = f.mu_x;
  d["mu_y"] = f.mu_y;
  d["sigma_x"] = f.sigma_x;
  d["sigma_y"] = f.sigma_y;
  d["offset"] = f.offset;
  d["mse"] = f.mse;
  d["converged"] = f.converged;
  d["degenerate_width"] = f.degenerate_width;
  d["iterations"] = f.iterations;
  return d;
}

py::dict components_dict(const Components& c) {
  py::dict d;
  d["method"] = c.method == DecompMethod::PCA ? "pca" : "ica";
  d["components"] = RowMatrix(c.components);
  d["mean"] = c.mean;
  d["explained_variance"] = c.explained_variance;
  d["unmixing"] = RowMatrix(c.unmixing);
  d["iterations"] = c.iterations;
  d["converged"] = c.converged;
  d["valid_components"] = c.valid_components;
  d["rank_deficient"] = c.rank_deficient;
  return d;
}

template <class F>
std::string logged(F&& f) {
  std::ostringstream log;
  f(log);
  return log.str();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Pruning statistics laboratory (compiled core)";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidConfig>(m, "InvalidConfig", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<EmptyNetwork>(m, "EmptyNetwork", base.ptr());
  py::register_exception<DegenerateVariance>(m, "DegenerateVariance", base.ptr());
  py::register_exception<InsufficientData>(m, "InsufficientData", base.ptr());
  py::register_exception<InsufficientSamples>(m, "InsufficientSamples", base.ptr());
  py::register_exception<StaleArtifact>(m, "StaleArtifact", base.ptr());
  py::register_exception<MissingArtifact>(m, "MissingArtifact", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());

  m.def("kurtosis", [](const std::vector<double>& x) { return kurtosis(x); }, py::arg("samples"));
  m.def("excess_kurtosis", [](const std::vector<double>& x) { return excess_kurtosis(x); }, py::arg("samples"));

  m.def(
      "magnitude_mask",
      [](const RowMatrix& w, const MaskRows& prev, double fraction) {
        return MaskRows(magnitude_mask(Matrix(w), MaskMatrix(prev), fraction));
      },
      py::arg("weights"), py::arg("prev_mask"), py::arg("fraction"));
  m.def(
      "random_mask",
      [](std::size_t rows, std::size_t cols, double sparsity, std::uint64_t seed) {
        return MaskRows(random_mask(rows, cols, sparsity, seed));
      },
      py::arg("rows"), py::arg("cols"), py::arg("sparsity"), py::arg("seed"));
  m.def("expected_kept", &expected_kept, py::arg("total"), py::arg("fraction"), py::arg("rounds"));

  m.def(
      "correlation_map",
      [](const std::vector<std::uint8_t>& row, std::size_t side, std::size_t channels, const std::string& mode) {
        const CorrelationMap c = correlation_map(row, side, channels, parse_channel_mode(mode));
        const auto w = static_cast<Eigen::Index>(c.width());
        Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(w, w);
        std::copy(c.values.begin(), c.values.end(), out.data());
        return out;
      },
      py::arg("mask_row"), py::arg("side"), py::arg("channels") = 1, py::arg("channel_mode") = "union",
      "S(d) on a (2 side - 1)^2 grid indexed [dy + side - 1, dx + side - 1].");
  m.def(
      "fit_gaussian2d",
      [](const RowMatrix& grid, bool exclude_origin) {
        if (grid.rows() != grid.cols() || grid.rows() % 2 == 0) throw ShapeError("grid must be (2 side - 1) square");
        const auto side = static_cast<std::size_t>((grid.rows() + 1) / 2);
        FitOptions opt;
        opt.exclude_origin = exclude_origin;
        return fit_dict(fit_gaussian2d(std::span<const double>(grid.data(), grid.size()), side, opt));
      },
      py::arg("grid"), py::arg("exclude_origin") = false);

  m.def(
      "cavity_score",
      [](const Vector& w, const std::vector<double>& lambda, const RowMatrix& inputs, std::size_t j) {
        return cavity_score(w, lambda, Matrix(inputs.transpose()), j).value;
      },
      py::arg("weight_row"), py::arg("preactivations"), py::arg("inputs"), py::arg("j"),
      "inputs is (samples, features); preactivations are bias-free.");

  m.def(
      "gen_edges",
      [](std::size_t n, std::size_t side, std::size_t classes, double contrast, double noise, std::uint64_t seed) {
        return dataset_dict(gen_edges(EdgeParams{n, side, classes, contrast, noise, seed}));
      },
      py::arg("n_samples"), py::arg("side") = 16, py::arg("n_classes") = 4, py::arg("contrast") = 1.0,
      py::arg("noise_std") = 0.0, py::arg("seed") = 0);
  m.def(
      "gen_nlgp",
      [](std::size_t n, std::size_t side, double xi, double gain, std::uint64_t seed) {
        return dataset_dict(gen_nlgp(NlgpParams{n, side, xi, gain, seed}));
      },
      py::arg("n_samples"), py::arg("side") = 16, py::arg("correlation_length") = 2.0, py::arg("gain") = 3.0,
      py::arg("seed") = 0);
  m.def(
      "gaussian_clone",
      [](const RowMatrix& images, const std::vector<std::uint32_t>& labels, std::size_t side, std::size_t channels,
         std::size_t num_classes, const std::vector<std::size_t>& counts, std::uint64_t seed) {
        const CloneModel model = fit_gaussian_clone(dataset_from(images, labels, side, channels, num_classes));
        return dataset_dict(sample_clone(model, counts, seed));
      },
      py::arg("images"), py::arg("labels"), py::arg("side"), py::arg("channels"), py::arg("num_classes"),
      py::arg("counts"), py::arg("seed"),
      "Fits a per-class Gaussian to (images, labels) and samples counts[c] images of class c.");

  m.def(
      "pca", [](const RowMatrix& x, std::size_t n) { return components_dict(pca(Matrix(x.transpose()), n)); },
      py::arg("data"), py::arg("n_components"), "data is (samples, features).");
  m.def(
      "fast_ica",
      [](const RowMatrix& x, std::size_t n, std::uint64_t seed) {
        return components_dict(fast_ica(Matrix(x.transpose()), n, seed));
      },
      py::arg("data"), py::arg("n_components"), py::arg("seed") = 0, "data is (samples, features).");
  m.def("amari_index", [](const RowMatrix& p) { return amari_index(Matrix(p)); }, py::arg("p"));
  m.def(
      "match_masks_to_components",
      [](const RowMatrix& masks, const RowMatrix& comps) {
        py::list out;
        for (const MaskMatch& mm : match_masks_to_components(Matrix(masks), Matrix(comps)))
          out.append(py::make_tuple(mm.component, mm.similarity, mm.zero_mask));
        return out;
      },
      py::arg("mask_rows"), py::arg("components"), "Per mask row: (component, |cos| similarity, zero_mask).");

  m.def("default_config", [] { return to_python(ExperimentConfig{}.to_json()); });
  m.def(
      "validate_config", [](const py::object& cfg) { return to_python(config_from(cfg).to_json()); },
      py::arg("config"), "Fills defaults, validates and returns the normalized config.");

  m.def(
      "run_imp",
      [](const py::object& cfg_obj) {
        const ExperimentConfig cfg = config_from(cfg_obj);
        cfg.validate();
        ImpResult r;
        {
          py::gil_scoped_release release;
          const PreparedData data = prepare_data(cfg);
          r = imp_run(cfg.model(), cfg.train(), cfg.schedule, data.train);
        }
        py::list rounds;
        for (const RoundRecord& rec : r.rounds) {
          py::dict d;
          d["round"] = rec.round;
          d["sparsity"] = rec.sparsity;
          d["train_accuracy"] = rec.accuracy;
          d["mask"] = MaskRows(rec.mask.layers[0]);
          rounds.append(d);
        }
        return rounds;
      },
      py::arg("config") = py::none(),
      "In-memory IMP run; returns one dict per round with the first-layer mask.");

  // Run-directory commands, mirroring the command-line tool.
  m.def(
      "gen",
      [](const std::string& dir, const std::string& kind, const py::object& cfg) {
        const RunDir rd(dir);
        ExperimentConfig c = cfg.is_none() && rd.has_config() ? rd.load_config() : config_from(cfg);
        RunLock lock(rd.root());
        return logged([&](std::ostream& log) { cmd_gen(rd, c, kind, log); });
      },
      py::arg("run_dir"), py::arg("kind") = "edges", py::arg("config") = py::none());
  auto stage = [&m](const char* name, auto fn, const char* doc) {
    m.def(
        name,
        [fn](const std::string& dir, const py::object& cfg) {
          const RunDir rd(dir);
          RunLock lock(rd.root());
          if (!cfg.is_none()) adopt_config(rd, config_from(cfg));
          return logged([&](std::ostream& log) { fn(rd, log); });
        },
        py::arg("run_dir"), py::arg("config") = py::none(), doc);
  };
  stage("train", [](const RunDir& d, std::ostream& l) { cmd_train(d, l); }, "Dense training from initialization.");
  stage("imp", [](const RunDir& d, std::ostream& l) { cmd_imp(d, l); }, "Iterative magnitude pruning with rewind.");
  stage("oneshot", [](const RunDir& d, std::ostream& l) { cmd_oneshot(d, std::nullopt, l); }, "Oneshot pruning.");
  stage("randprune", [](const RunDir& d, std::ostream& l) { cmd_randprune(d, std::nullopt, l); }, "Random masks.");
  stage("report", [](const RunDir& d, std::ostream& l) { cmd_report(d, l); }, "Figure tables.");
  m.def(
      "analyze",
      [](const std::string& dir, const std::string& what) {
        const RunDir rd(dir);
        RunLock lock(rd.root());
        return logged([&](std::ostream& log) { cmd_analyze(rd, what, log); });
      },
      py::arg("run_dir"), py::arg("what"));
}
