#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "prunelab/error.hpp"
#include "prunelab/nn.hpp"
#include "prunelab/rng.hpp"
#include "prunelab/statlab.hpp"

using namespace prunelab;
using fixture::gaussian_dataset;
using fixture::temp_path;

namespace {

ModelConfig small_config(std::uint64_t seed = 3) {
  return ModelConfig{{4, 4, 3, 2}, Activation::ReLU, {true, true, true}, seed};
}

}  // namespace

TEST_CASE("init_params is deterministic and bounded") {
  ModelConfig cfg{{100, 20, 5}, Activation::ReLU, {}, 7};
  const Parameters a = init_params(cfg), b = init_params(cfg);
  CHECK(a == b);
  CHECK(a.layers[0].weight.cwiseAbs().maxCoeff() <= 0.1);
  CHECK(a.layers[1].weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(20.0));
  CHECK(a.layers[0].bias.isZero());
  cfg.seed = 8;
  CHECK_FALSE(init_params(cfg) == a);
  ModelConfig bn{{9, 4, 2}, Activation::ReLU, {true, true}, 1};
  const Parameters p = init_params(bn);
  CHECK(p.layers[1].bn->gamma.isOnes());
  CHECK(p.layers[1].bn->beta.isZero());
}

TEST_CASE("invalid model configs are rejected") {
  CHECK_THROWS_AS(init_params(ModelConfig{{4, 0, 2}, Activation::ReLU, {}, 0}), InvalidConfig);
  CHECK_THROWS_AS(init_params(ModelConfig{{4, 2}, Activation::ReLU, {}, 0}), InvalidConfig);
  TrainConfig tc{10, 10, 1, 0.1, 0};
  CHECK_THROWS_AS(tc.validate(), InvalidConfig);
  tc = TrainConfig{10, 2, 0, 0.1, 0};
  CHECK_THROWS_AS(tc.validate(), InvalidConfig);
}

TEST_CASE("preactivations at init are Gaussian for wide Gaussian inputs") {
  Dataset ds = gaussian_dataset(576, 10000, 2, 11);
  ModelConfig cfg{{576, 32, 2}, Activation::ReLU, {}, 5};
  const Parameters p = init_params(cfg);
  const Matrix lam = preactivations(p, p.full_mask(), ds, 1);
  double mean_k = 0.0;
  for (Eigen::Index u = 0; u < lam.rows(); ++u) {
    const Vector row = lam.row(u).transpose();
    mean_k += kurtosis({row.data(), static_cast<std::size_t>(row.size())});
  }
  mean_k /= static_cast<double>(lam.rows());
  CHECK(mean_k >= 2.8);
  CHECK(mean_k <= 3.2);
}

TEST_CASE("forward: zero weights give the bias, masked rows are constant") {
  ModelConfig cfg{{4, 3, 2}, Activation::ReLU, {}, 1};
  Parameters p = init_params(cfg);
  p.layers[0].weight.setZero();
  p.layers[0].bias << 0.5, -1.0, 2.0;
  Dataset ds = gaussian_dataset(4, 20, 2, 3);
  Matrix lam = preactivations(p, p.full_mask(), ds, 1);
  for (Eigen::Index s = 0; s < lam.cols(); ++s) CHECK(lam.col(s) == p.layers[0].bias);

  Parameters q = init_params(cfg);
  q.layers[0].bias << 0.1, 0.2, 0.3;
  Mask m = q.full_mask();
  m.layers[0].row(1).setZero();
  lam = preactivations(q, m, ds, 1);
  for (Eigen::Index s = 0; s < lam.cols(); ++s) CHECK(lam(1, s) == 0.2);

  CHECK_THROWS_AS(forward(q, m, Matrix::Zero(5, 3)), ShapeError);
  Mask bad = Mask::ones({{3, 5}, {2, 3}});
  CHECK_THROWS_AS(forward(q, bad, ds.images), ShapeError);
}

TEST_CASE("preactivations: identity unit, layer-2 zero weights, forward consistency") {
  ModelConfig cfg{{4, 1, 2}, Activation::ReLU, {}, 1};
  Parameters p = init_params(cfg);
  p.layers[0].weight << 1, 0, 0, 0;
  Dataset ds = gaussian_dataset(4, 30, 2, 9);
  const Matrix lam = preactivations(p, p.full_mask(), ds, 1);
  CHECK(lam.row(0) == ds.images.row(0));

  ModelConfig deep{{4, 5, 3, 2}, Activation::ReLU, {true, true, false}, 2};
  Parameters d = init_params(deep);
  d.layers[1].weight.setZero();
  d.layers[1].bias << 1, 2, 3;
  const Matrix l2 = preactivations(d, d.full_mask(), ds, 2);
  for (Eigen::Index s = 0; s < l2.cols(); ++s) CHECK(l2.col(s) == d.layers[1].bias);

  Parameters r = init_params(deep);
  r.layers[0].bn->running_mean.setConstant(0.3);
  r.layers[0].bn->running_var.setConstant(1.7);
  r.layers[0].bn->gamma.setConstant(1.4);
  const ForwardPass fp = forward(r, r.full_mask(), ds.images, Mode::Eval);
  CHECK(fp.preactivations[0] == preactivations(r, r.full_mask(), ds, 1));
  CHECK(fp.preactivations[1] == preactivations(r, r.full_mask(), ds, 2));
  CHECK(fp.transformed[1] == transformed_inputs(r, r.full_mask(), ds, 2));
  CHECK_THROWS(preactivations(r, r.full_mask(), ds, 3));
}

TEST_CASE("analytic gradients match central finite differences") {
  const ModelConfig cfg = small_config();
  Parameters p = init_params(cfg);
  Rng rng(17);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& L : p.layers) {
    L.bias = L.bias.unaryExpr([&](double) { return u(rng); });
    L.bn->gamma = L.bn->gamma.unaryExpr([&](double) { return 1.0 + u(rng); });
    L.bn->beta = L.bn->beta.unaryExpr([&](double) { return u(rng); });
  }
  Dataset ds = gaussian_dataset(4, 12, 2, 21);
  const Mask m = p.full_mask();
  Gradients g;
  loss_and_gradients(p, m, ds.images, ds.labels, &g);
  double worst = 0.0;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    for (Eigen::Index i = 0; i < p.layers[l].weight.size(); ++i) {
      const double fd = oracle::richardson_difference(p, m, ds.images, ds.labels, oracle::ParamKind::Weight, l, i, 1e-4);
      const double an = g.weight[l].data()[i];
      worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-7}));
    }
    for (Eigen::Index i = 0; i < p.layers[l].bias.size(); ++i) {
      const double fd = oracle::richardson_difference(p, m, ds.images, ds.labels, oracle::ParamKind::Bias, l, i, 1e-4);
      worst = std::max(worst, std::abs(g.bias[l][i] - fd) / std::max({std::abs(g.bias[l][i]), std::abs(fd), 1e-7}));
    }
    for (Eigen::Index i = 0; i < p.layers[l].bn->gamma.size(); ++i) {
      const double fg = oracle::richardson_difference(p, m, ds.images, ds.labels, oracle::ParamKind::Gamma, l, i, 1e-4);
      const double fb = oracle::richardson_difference(p, m, ds.images, ds.labels, oracle::ParamKind::Beta, l, i, 1e-4);
      worst = std::max(worst, std::abs(g.gamma[l][i] - fg) / std::max({std::abs(g.gamma[l][i]), std::abs(fg), 1e-7}));
      worst = std::max(worst, std::abs(g.beta[l][i] - fb) / std::max({std::abs(g.beta[l][i]), std::abs(fb), 1e-7}));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("gradient w.r.t. one weight matches finite differences of the outputs") {
  ModelConfig cfg{{4, 3, 2}, Activation::ReLU, {}, 4};
  const Parameters p = init_params(cfg);
  Dataset ds = gaussian_dataset(4, 8, 2, 5);
  Gradients g;
  loss_and_gradients(p, p.full_mask(), ds.images, ds.labels, &g);
  const double fd =
      oracle::richardson_difference(p, p.full_mask(), ds.images, ds.labels, oracle::ParamKind::Weight, 0, 4, 1e-4);
  CHECK(std::abs(g.weight[0].data()[4] - fd) <= 1e-5 * std::max(std::abs(fd), 1e-3));
}

TEST_CASE("train: learning rate 0 only moves running statistics") {
  const ModelConfig cfg = small_config();
  const Parameters p = init_params(cfg);
  Dataset ds = gaussian_dataset(4, 40, 2, 6);
  TrainOutcome out = train(p, p.full_mask(), ds, TrainConfig{20, 5, 8, 0.0, 1});
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    CHECK(out.params.layers[l].weight == p.layers[l].weight);
    CHECK(out.params.layers[l].bias == p.layers[l].bias);
    CHECK(out.params.layers[l].bn->gamma == p.layers[l].bn->gamma);
    CHECK(out.params.layers[l].bn->beta == p.layers[l].bn->beta);
  }
  CHECK_FALSE(out.params.layers[0].bn->running_mean == p.layers[0].bn->running_mean);
  CHECK(out.loss_trace.size() == 20);
  REQUIRE(out.rewind.has_value());
  CHECK(out.rewind->iteration == 5);
}

TEST_CASE("train: masked weights stay zero at every iteration and masked rows are untouched") {
  const ModelConfig cfg = small_config(9);
  const Parameters p = init_params(cfg);
  Dataset ds = gaussian_dataset(4, 64, 2, 7);
  Mask m = p.full_mask();
  m.layers[0](0, 1) = 0;
  m.layers[0](2, 3) = 0;
  m.layers[1].row(1).setZero();
  for (std::size_t T = 1; T <= 12; ++T) {
    const TrainOutcome out = train(p, m, ds, TrainConfig{T, 0, 8, 0.3, 2});
    CHECK(out.params.layers[0].weight(0, 1) == 0.0);
    CHECK(out.params.layers[0].weight(2, 3) == 0.0);
    CHECK(out.params.layers[1].weight.row(1).isZero());
  }
  Mask rows = p.full_mask();
  rows.layers[0].row(2).setZero();
  Parameters keep = p;
  const TrainOutcome out = train(keep, rows, ds, TrainConfig{30, 0, 8, 0.3, 2});
  CHECK(out.params.layers[0].weight.row(2).isZero());
}

TEST_CASE("train: separable two-class set reaches the logistic-regression oracle's accuracy") {
  Dataset ds = gaussian_dataset(4, 400, 2, 12);
  for (Eigen::Index s = 0; s < ds.images.cols(); ++s) {
    const double margin = ds.images(0, s) + 0.5 * ds.images(1, s);
    ds.labels[static_cast<std::size_t>(s)] = margin > 0.0 ? 1 : 0;
  }
  const double lr_acc = oracle::logistic_regression_accuracy(ds.images, ds.labels);
  REQUIRE(lr_acc > 0.95);
  ModelConfig cfg{{4, 8, 2}, Activation::ReLU, {}, 13};
  const Parameters p = init_params(cfg);
  const TrainOutcome out = train(p, p.full_mask(), ds, TrainConfig{2000, 10, 20, 0.1, 3});
  CHECK(accuracy(out.params, p.full_mask(), ds) > 0.95);
}

TEST_CASE("rewind fidelity: replaying from the rewind checkpoint is bit-exact") {
  const ModelConfig cfg = small_config(21);
  const Parameters p = init_params(cfg);
  Dataset ds = gaussian_dataset(4, 50, 2, 8);
  Mask m = p.full_mask();
  m.layers[0](1, 2) = 0;
  const TrainConfig tc{60, 17, 8, 0.2, 44};
  const TrainOutcome full = train(p, m, ds, tc, 0, 99);
  REQUIRE(full.rewind.has_value());
  CHECK(full.rewind->config_hash == 99);
  const TrainOutcome replay = train(full.rewind->params, m, ds, tc, full.rewind->iteration, 99);
  CHECK(replay.params == full.params);
  CHECK(replay.loss_trace.size() == 60 - 17);
  CHECK(std::equal(replay.loss_trace.begin(), replay.loss_trace.end(), full.loss_trace.begin() + 17));
}

TEST_CASE("train is deterministic given seeds") {
  const ModelConfig cfg = small_config(2);
  Dataset ds = gaussian_dataset(4, 50, 2, 8);
  const Parameters p = init_params(cfg);
  const TrainConfig tc{40, 3, 7, 0.1, 5};
  CHECK(train(p, p.full_mask(), ds, tc).params == train(p, p.full_mask(), ds, tc).params);
}

TEST_CASE("batch schedule: one permutation per epoch") {
  BatchSchedule a(10, 4, 3), b(10, 4, 3);
  std::vector<std::size_t> seen;
  for (std::size_t t = 0; t < 5; ++t) {
    const auto batch = a.batch(t);
    CHECK(batch == b.batch(t));
    CHECK(batch.size() == 4);
    seen.insert(seen.end(), batch.begin(), batch.end());
  }
  std::vector<std::size_t> first(seen.begin(), seen.begin() + 10);
  std::sort(first.begin(), first.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(first[i] == i);
}

TEST_CASE("divergence is reported with the iteration index") {
  const ModelConfig cfg{{4, 3, 2}, Activation::ReLU, {}, 1};
  const Parameters p = init_params(cfg);
  Dataset ds = gaussian_dataset(4, 20, 2, 1);
  ds.images *= 1e200;
  try {
    train(p, p.full_mask(), ds, TrainConfig{10, 0, 4, 1e200, 1});
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.iteration() < 10);
    CHECK(e.round() == -1);
  }
}

TEST_CASE("checkpoint round trip is bit-exact and format errors are detected") {
  const ModelConfig cfg = small_config(31);
  Parameters p = init_params(cfg);
  p.layers[0].bn->running_var.setConstant(0.123456789);
  const Checkpoint c{p, 17, 0xdeadbeef, 0x1234};
  const auto path = temp_path("nn_ckpt.plck");
  save_checkpoint(c, path.string());
  const Checkpoint r = load_checkpoint(path.string());
  CHECK(r.params == p);
  CHECK(r.iteration == 17);
  CHECK(r.batch_seed == 0xdeadbeef);
  CHECK(r.config_hash == 0x1234);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  CHECK_THROWS_AS(load_checkpoint(path.string()), FormatError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path.string()), Error);
}
