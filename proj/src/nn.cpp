#include "prunelab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "prunelab/binary_io.hpp"
#include "prunelab/error.hpp"
#include "prunelab/rng.hpp"

namespace prunelab {

namespace {

constexpr char kCheckpointMagic[] = "PLCK";
constexpr std::uint32_t kCheckpointVersion = 1;

void check_mask(const Parameters& params, const Mask& mask) {
  if (mask.layers.size() != params.layers.size()) throw ShapeError("mask layer count does not match parameters");
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& w = params.layers[l].weight;
    if (mask.layers[l].rows() != w.rows() || mask.layers[l].cols() != w.cols())
      throw ShapeError("mask shape does not match weights at layer " + std::to_string(l));
  }
}

Matrix relu(const Matrix& z) { return z.cwiseMax(0.0); }

ForwardPass forward_with(const Parameters& params, const std::vector<Matrix>& weights, const Matrix& batch,
                         Mode mode, std::size_t stop_after = static_cast<std::size_t>(-1)) {
  const std::size_t L = params.layers.size();
  if (L == 0) throw ShapeError("forward: empty network");
  if (static_cast<std::size_t>(batch.rows()) != params.layers[0].fan_in())
    throw ShapeError("forward: batch has " + std::to_string(batch.rows()) + " features, network expects " +
                     std::to_string(params.layers[0].fan_in()));
  ForwardPass fp;
  fp.inputs.resize(L);
  fp.normalized.resize(L);
  fp.transformed.resize(L);
  fp.inv_std.resize(L);
  const double n = static_cast<double>(batch.cols());
  Matrix h = batch;
  for (std::size_t l = 0; l < L; ++l) {
    const Layer& layer = params.layers[l];
    fp.inputs[l] = h;
    if (layer.bn) {
      Vector mean, var;
      if (mode == Mode::Train) {
        mean = h.rowwise().sum() / n;
        var = (h.colwise() - mean).array().square().rowwise().sum() / n;
      } else {
        mean = layer.bn->running_mean;
        var = layer.bn->running_var;
      }
      Vector inv_std = (var.array() + kBatchNormEps).rsqrt();
      fp.normalized[l] = ((h.colwise() - mean).array().colwise() * inv_std.array()).matrix();
      fp.transformed[l] =
          ((fp.normalized[l].array().colwise() * layer.bn->gamma.array()).colwise() + layer.bn->beta.array())
              .matrix();
      fp.inv_std[l] = std::move(inv_std);
    } else {
      fp.transformed[l] = h;
    }
    if (l == stop_after) break;
    Matrix z = weights[l] * fp.transformed[l];
    z.colwise() += layer.bias;
    if (l + 1 < L) {
      fp.activations.push_back(relu(z));
      h = fp.activations.back();
      fp.preactivations.push_back(std::move(z));
    } else {
      fp.logits = std::move(z);
    }
  }
  return fp;
}

// Mean cross-entropy and d(loss)/d(logits).
double softmax_cross_entropy(const Matrix& logits, std::span<const std::uint32_t> labels, Matrix* dlogits) {
  const Eigen::Index C = logits.rows();
  const Eigen::Index B = logits.cols();
  double loss = 0.0;
  if (dlogits) dlogits->resize(C, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto col = logits.col(b);
    const double mx = col.maxCoeff();
    const double lse = mx + std::log((col.array() - mx).exp().sum());
    const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(b)]);
    loss += lse - col(y);
    if (dlogits) {
      dlogits->col(b) = (col.array() - lse).exp().matrix();
      (*dlogits)(y, b) -= 1.0;
    }
  }
  if (dlogits) *dlogits /= static_cast<double>(B);
  return loss / static_cast<double>(B);
}

double backward(const Parameters& params, const std::vector<Matrix>& weights, const Matrix& batch,
                std::span<const std::uint32_t> labels, Gradients* grads, ForwardPass* fp_out) {
  ForwardPass fp = forward_with(params, weights, batch, Mode::Train);
  Matrix dz;
  const double loss = softmax_cross_entropy(fp.logits, labels, grads ? &dz : nullptr);
  if (grads) {
    const std::size_t L = params.layers.size();
    grads->weight.assign(L, Matrix());
    grads->bias.assign(L, Vector());
    grads->gamma.assign(L, Vector());
    grads->beta.assign(L, Vector());
    const double n = static_cast<double>(batch.cols());
    for (std::size_t l = L; l-- > 0;) {
      const Layer& layer = params.layers[l];
      grads->weight[l].noalias() = dz * fp.transformed[l].transpose();
      grads->bias[l] = dz.rowwise().sum();
      if (l == 0 && !layer.bn) break;
      Matrix dh = weights[l].transpose() * dz;
      if (layer.bn) {
        const Matrix& xhat = fp.normalized[l];
        grads->gamma[l] = (dh.array() * xhat.array()).rowwise().sum();
        grads->beta[l] = dh.rowwise().sum();
        if (l == 0) break;
        Matrix dxhat = (dh.array().colwise() * layer.bn->gamma.array()).matrix();
        Vector mean_dxhat = dxhat.rowwise().sum() / n;
        Vector mean_dxhat_xhat = (dxhat.array() * xhat.array()).rowwise().sum() / n;
        dh = (((dxhat.colwise() - mean_dxhat).array() - xhat.array().colwise() * mean_dxhat_xhat.array())
                  .colwise() *
              fp.inv_std[l].array())
                 .matrix();
      }
      dz = (dh.array() * (fp.preactivations[l - 1].array() > 0.0).cast<double>()).matrix();
    }
  }
  if (fp_out) *fp_out = std::move(fp);
  return loss;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ":" : "") << v[i];
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configs

void ModelConfig::validate() const {
  if (layer_sizes.size() < 3) throw InvalidConfig("model: need at least input, one hidden and output layer");
  for (auto s : layer_sizes)
    if (s == 0) throw InvalidConfig("model: zero-sized layer in " + join_sizes(layer_sizes));
  if (batch_norm.size() > num_layers()) throw InvalidConfig("model: more batch_norm flags than affine layers");
}

void ModelConfig::validate_for(const Dataset& ds) const {
  validate();
  if (layer_sizes.front() != ds.channels * ds.side * ds.side)
    throw InvalidConfig("model: input size " + std::to_string(layer_sizes.front()) +
                        " != channels * side^2 = " + std::to_string(ds.channels * ds.side * ds.side));
  if (layer_sizes.back() != ds.num_classes)
    throw InvalidConfig("model: output size " + std::to_string(layer_sizes.back()) + " != class count " +
                        std::to_string(ds.num_classes));
}

std::uint64_t ModelConfig::hash() const {
  std::ostringstream os;
  os << "model|" << join_sizes(layer_sizes) << "|relu|";
  for (std::size_t l = 0; l < num_layers(); ++l) os << (has_batch_norm(l) ? '1' : '0');
  os << "|" << seed;
  return fnv1a(os.str());
}

void TrainConfig::validate() const {
  if (total_iterations == 0) throw InvalidConfig("train: total_iterations must be positive");
  if (rewind_iteration >= total_iterations) throw InvalidConfig("train: rewind_iteration must be < total_iterations");
  if (batch_size == 0) throw InvalidConfig("train: batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw InvalidConfig("train: learning_rate must be finite and non-negative");
}

std::uint64_t TrainConfig::hash() const {
  std::ostringstream os;
  os.precision(17);
  os << "train|" << total_iterations << "|" << rewind_iteration << "|" << batch_size << "|" << learning_rate << "|"
     << seed;
  return fnv1a(os.str());
}

std::uint64_t run_hash(const ModelConfig& model, const TrainConfig& train) {
  return splitmix64(model.hash() ^ splitmix64(train.hash()));
}

// ---------------------------------------------------------------------------
// Parameters

std::vector<std::pair<std::size_t, std::size_t>> Parameters::shapes() const {
  std::vector<std::pair<std::size_t, std::size_t>> s;
  for (const auto& l : layers) s.emplace_back(l.fan_out(), l.fan_in());
  return s;
}

bool Parameters::operator==(const Parameters& o) const {
  if (layers.size() != o.layers.size()) return false;
  auto same = [](const auto& a, const auto& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::equal(a.data(), a.data() + a.size(), b.data());
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& a = layers[l];
    const auto& b = o.layers[l];
    if (!same(a.weight, b.weight) || !same(a.bias, b.bias)) return false;
    if (a.bn.has_value() != b.bn.has_value()) return false;
    if (a.bn && !(same(a.bn->gamma, b.bn->gamma) && same(a.bn->beta, b.bn->beta) &&
                  same(a.bn->running_mean, b.bn->running_mean) && same(a.bn->running_var, b.bn->running_var)))
      return false;
  }
  return true;
}

Parameters init_params(const ModelConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, "init"));
  Parameters p;
  for (std::size_t l = 0; l < config.num_layers(); ++l) {
    const auto fan_in = config.layer_sizes[l];
    const auto fan_out = config.layer_sizes[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Layer layer;
    layer.weight.resize(static_cast<Eigen::Index>(fan_out), static_cast<Eigen::Index>(fan_in));
    // Row-major fill so the draw order matches (unit, input) enumeration.
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = u(rng);
    layer.bias = Vector::Zero(static_cast<Eigen::Index>(fan_out));
    if (config.has_batch_norm(l)) {
      const auto n = static_cast<Eigen::Index>(fan_in);
      layer.bn = BatchNorm{Vector::Ones(n), Vector::Zero(n), Vector::Zero(n), Vector::Ones(n)};
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

std::vector<Matrix> masked_weights(const Parameters& params, const Mask& mask) {
  check_mask(params, mask);
  std::vector<Matrix> w;
  w.reserve(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l)
    w.push_back(params.layers[l].weight.cwiseProduct(mask.layers[l].cast<double>()));
  return w;
}

// ---------------------------------------------------------------------------
// Forward / backward

ForwardPass forward(const Parameters& params, const Mask& mask, const Matrix& batch, Mode mode) {
  return forward_with(params, masked_weights(params, mask), batch, mode);
}

double loss_and_gradients(const Parameters& params, const Mask& mask, const Matrix& batch,
                          std::span<const std::uint32_t> labels, Gradients* grads) {
  if (labels.size() != static_cast<std::size_t>(batch.cols())) throw ShapeError("loss: label count mismatch");
  return backward(params, masked_weights(params, mask), batch, labels, grads, nullptr);
}

// ---------------------------------------------------------------------------
// Training

BatchSchedule::BatchSchedule(std::size_t num_samples, std::size_t batch_size, std::uint64_t seed)
    : n_(num_samples), batch_size_(batch_size), seed_(seed) {
  if (n_ == 0) throw InsufficientData("training set is empty");
}

const std::vector<std::size_t>& BatchSchedule::epoch(std::size_t e) {
  if (e != cached_epoch_) {
    perm_.resize(n_);
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    Rng rng(derive_seed(seed_, static_cast<std::uint64_t>(e)));
    std::shuffle(perm_.begin(), perm_.end(), rng);
    cached_epoch_ = e;
  }
  return perm_;
}

std::vector<std::size_t> BatchSchedule::batch(std::size_t iteration) {
  std::vector<std::size_t> out;
  out.reserve(batch_size_);
  std::size_t pos = iteration * batch_size_;
  for (std::size_t k = 0; k < batch_size_; ++k, ++pos) out.push_back(epoch(pos / n_)[pos % n_]);
  return out;
}

TrainOutcome train(Parameters params, const Mask& mask, const Dataset& data, const TrainConfig& config,
                   std::size_t start_iteration, std::uint64_t config_hash) {
  config.validate();
  check_mask(params, mask);
  if (static_cast<std::size_t>(data.images.rows()) != params.layers.front().fan_in())
    throw ShapeError("train: dataset feature count does not match network input");

  const std::size_t L = params.layers.size();
  std::vector<Matrix> mask_real(L);
  for (std::size_t l = 0; l < L; ++l) {
    mask_real[l] = mask.layers[l].cast<double>();
    params.layers[l].weight = params.layers[l].weight.cwiseProduct(mask_real[l]);
  }

  TrainOutcome out;
  const std::uint64_t batch_seed = derive_seed(config.seed, "batches");
  BatchSchedule schedule(data.size(), config.batch_size, batch_seed);
  Matrix batch(data.images.rows(), static_cast<Eigen::Index>(config.batch_size));
  std::vector<std::uint32_t> labels(config.batch_size);
  std::vector<Matrix> weights(L);
  Gradients g;
  ForwardPass fp;
  const double lr = config.learning_rate;
  const double m = kBatchNormMomentum;

  for (std::size_t t = start_iteration; t < config.total_iterations; ++t) {
    if (t == config.rewind_iteration) out.rewind = Checkpoint{params, t, batch_seed, config_hash};
    const auto idx = schedule.batch(t);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      batch.col(static_cast<Eigen::Index>(k)) = data.images.col(static_cast<Eigen::Index>(idx[k]));
      labels[k] = data.labels[idx[k]];
    }
    for (std::size_t l = 0; l < L; ++l) weights[l] = params.layers[l].weight;
    const double loss = backward(params, weights, batch, labels, &g, &fp);
    if (!std::isfinite(loss)) throw DivergenceError("non-finite loss at iteration " + std::to_string(t), t);
    out.loss_trace.push_back(loss);

    const double n = static_cast<double>(config.batch_size);
    for (std::size_t l = 0; l < L; ++l) {
      Layer& layer = params.layers[l];
      layer.weight.noalias() -= lr * g.weight[l].cwiseProduct(mask_real[l]);
      layer.bias.noalias() -= lr * g.bias[l];
      if (layer.bn) {
        layer.bn->gamma.noalias() -= lr * g.gamma[l];
        layer.bn->beta.noalias() -= lr * g.beta[l];
        const Matrix& h = fp.inputs[l];
        Vector mean = h.rowwise().sum() / n;
        Vector var = (h.colwise() - mean).array().square().rowwise().sum() / n;
        layer.bn->running_mean = m * layer.bn->running_mean + (1.0 - m) * mean;
        layer.bn->running_var = m * layer.bn->running_var + (1.0 - m) * var;
      }
    }
  }
  out.params = std::move(params);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

Matrix preactivations(const Parameters& params, const Mask& mask, const Dataset& data, std::size_t layer,
                      bool include_bias) {
  if (layer == 0 || layer >= params.layers.size())
    throw ShapeError("preactivations: layer must be a hidden layer in [1, " + std::to_string(params.layers.size() - 1) +
                     "]");
  const auto weights = masked_weights(params, mask);
  ForwardPass fp = forward_with(params, weights, data.images, Mode::Eval, layer - 1);
  Matrix z = weights[layer - 1] * fp.transformed[layer - 1];
  if (include_bias) z.colwise() += params.layers[layer - 1].bias;
  return z;
}

Matrix transformed_inputs(const Parameters& params, const Mask& mask, const Dataset& data, std::size_t layer) {
  if (layer == 0 || layer >= params.layers.size()) throw ShapeError("transformed_inputs: layer must be hidden");
  const auto weights = masked_weights(params, mask);
  ForwardPass fp = forward_with(params, weights, data.images, Mode::Eval, layer - 1);
  return std::move(fp.transformed[layer - 1]);
}

double accuracy(const Parameters& params, const Mask& mask, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  const ForwardPass fp = forward(params, mask, data.images, Mode::Eval);
  std::size_t correct = 0;
  for (Eigen::Index s = 0; s < fp.logits.cols(); ++s) {
    Eigen::Index arg = 0;
    fp.logits.col(s).maxCoeff(&arg);
    if (static_cast<std::uint32_t>(arg) == data.labels[static_cast<std::size_t>(s)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Checkpoint container: "PLCK", u32 version, u64 config hash, u64 iteration,
// u64 batch seed, u32 layer count, then per layer: u64 fan_out, u64 fan_in,
// u8 has_bn, weight (row-major f64), bias, [gamma, beta, running mean,
// running var].

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  io::Writer w(path);
  w.magic({kCheckpointMagic, 4});
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(ckpt.config_hash);
  w.put<std::uint64_t>(ckpt.iteration);
  w.put<std::uint64_t>(ckpt.batch_seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.params.layers.size()));
  for (const auto& layer : ckpt.params.layers) {
    w.put<std::uint64_t>(layer.fan_out());
    w.put<std::uint64_t>(layer.fan_in());
    w.put<std::uint8_t>(layer.bn ? 1 : 0);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = layer.weight;
    w.put_all<double>({rm.data(), static_cast<std::size_t>(rm.size())});
    w.put_all<double>({layer.bias.data(), static_cast<std::size_t>(layer.bias.size())});
    if (layer.bn) {
      for (const Vector* v : {&layer.bn->gamma, &layer.bn->beta, &layer.bn->running_mean, &layer.bn->running_var})
        w.put_all<double>({v->data(), static_cast<std::size_t>(v->size())});
    }
  }
  w.finish();
}

Checkpoint load_checkpoint(const std::string& path) {
  io::Reader r(path);
  r.expect_magic({kCheckpointMagic, 4});
  r.expect_version(kCheckpointVersion);
  Checkpoint ckpt;
  ckpt.config_hash = r.get<std::uint64_t>();
  ckpt.iteration = r.get<std::uint64_t>();
  ckpt.batch_seed = r.get<std::uint64_t>();
  const auto L = r.get<std::uint32_t>();
  r.expect_at_most(L, 1024, "layer count");
  for (std::uint32_t l = 0; l < L; ++l) {
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    r.expect_at_most(rows * cols, std::uint64_t{1} << 32, "layer size");
    const bool has_bn = r.get<std::uint8_t>() != 0;
    Layer layer;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    r.get_all<double>({rm.data(), static_cast<std::size_t>(rm.size())});
    layer.weight = rm;
    layer.bias.resize(static_cast<Eigen::Index>(rows));
    r.get_all<double>({layer.bias.data(), rows});
    if (has_bn) {
      BatchNorm bn;
      for (Vector* v : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var}) {
        v->resize(static_cast<Eigen::Index>(cols));
        r.get_all<double>({v->data(), cols});
      }
      layer.bn = std::move(bn);
    }
    ckpt.params.layers.push_back(std::move(layer));
  }
  return ckpt;
}

}  // namespace prunelab
