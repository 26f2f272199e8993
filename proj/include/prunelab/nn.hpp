#pragma once

// Dense fully-connected network with masked weights, per-feature batch
// normalization on layer inputs, analytic backpropagation and plain SGD.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prunelab/dataset.hpp"
#include "prunelab/mask.hpp"

namespace prunelab {

enum class Activation { ReLU };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

struct ModelConfig {
  /// input, hidden..., output
  std::vector<std::size_t> layer_sizes;
  Activation activation = Activation::ReLU;
  /// One flag per affine layer; flag l enables batch norm on the input of
  /// affine layer l. Empty means no batch norm anywhere.
  std::vector<bool> batch_norm;
  std::uint64_t seed = 0;

  std::size_t num_layers() const { return layer_sizes.empty() ? 0 : layer_sizes.size() - 1; }
  std::size_t num_hidden() const { return num_layers() == 0 ? 0 : num_layers() - 1; }
  bool has_batch_norm(std::size_t layer) const { return layer < batch_norm.size() && batch_norm[layer]; }

  void validate() const;
  /// Additionally checks input size == channels*side^2 and output == classes.
  void validate_for(const Dataset& ds) const;
  std::uint64_t hash() const;
};

struct TrainConfig {
  std::size_t total_iterations = 0;
  std::size_t rewind_iteration = 0;
  std::size_t batch_size = 1;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  std::uint64_t hash() const;
};

std::uint64_t run_hash(const ModelConfig& model, const TrainConfig& train);

struct BatchNorm {
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
};

struct Layer {
  Matrix weight;  // fan_out x fan_in
  Vector bias;    // fan_out
  std::optional<BatchNorm> bn;  // over fan_in

  std::size_t fan_in() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t fan_out() const { return static_cast<std::size_t>(weight.rows()); }
};

struct Parameters {
  std::vector<Layer> layers;

  std::vector<std::pair<std::size_t, std::size_t>> shapes() const;
  Mask full_mask() const { return Mask::ones(shapes()); }
  bool operator==(const Parameters& other) const;
};

struct Checkpoint {
  Parameters params;
  std::uint64_t iteration = 0;
  /// Batch-order seed; together with `iteration` it fully determines the
  /// remaining batch sequence.
  std::uint64_t batch_seed = 0;
  std::uint64_t config_hash = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Weights uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases,
/// gamma = 1, beta = 0, running stats (0, 1).
Parameters init_params(const ModelConfig& config);

enum class Mode { Train, Eval };

struct ForwardPass {
  std::vector<Matrix> inputs;          // raw input of each affine layer
  std::vector<Matrix> normalized;      // (h - mean) * inv_std, BN layers only
  std::vector<Matrix> transformed;     // input after gamma/beta (or raw)
  std::vector<Vector> inv_std;         // BN layers only
  std::vector<Matrix> preactivations;  // W * transformed + b, hidden layers
  std::vector<Matrix> activations;     // ReLU(preactivations)
  Matrix logits;
};

/// `batch` is features x samples. Mask entries multiply weights.
ForwardPass forward(const Parameters& params, const Mask& mask, const Matrix& batch, Mode mode = Mode::Eval);

struct Gradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  std::vector<Vector> gamma;
  std::vector<Vector> beta;
};

/// Mean softmax cross-entropy of a batch in training mode (batch statistics)
/// and, when `grads` is non-null, its gradient w.r.t. all trainable
/// parameters. Weight gradients are with respect to the masked weights.
double loss_and_gradients(const Parameters& params, const Mask& mask, const Matrix& batch,
                          std::span<const std::uint32_t> labels, Gradients* grads);

/// Deterministic batch order: the sample sequence is the concatenation of one
/// seeded permutation per epoch; iteration t consumes positions
/// [t*B, (t+1)*B).
class BatchSchedule {
 public:
  BatchSchedule(std::size_t num_samples, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> batch(std::size_t iteration);

 private:
  const std::vector<std::size_t>& epoch(std::size_t e);

  std::size_t n_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm_;
};

struct TrainOutcome {
  Parameters params;
  std::vector<double> loss_trace;  // one entry per executed iteration
  std::optional<Checkpoint> rewind;
};

/// Trains f[params (.) mask] with SGD from `start_iteration` up to
/// `config.total_iterations`. Pruned weights are zeroed on entry and never
/// updated. A checkpoint is emitted when the loop reaches
/// `config.rewind_iteration` (if it lies in [start_iteration, T)).
TrainOutcome train(Parameters params, const Mask& mask, const Dataset& data, const TrainConfig& config,
                   std::size_t start_iteration = 0, std::uint64_t config_hash = 0);

/// Hidden-layer preactivations (units x samples) in evaluation mode.
/// `layer` is 1-based over hidden layers.
Matrix preactivations(const Parameters& params, const Mask& mask, const Dataset& data, std::size_t layer,
                      bool include_bias = true);

/// Input of hidden layer `layer` after batch-norm transform (features x
/// samples), i.e. the X~ that multiplies the layer's weights.
Matrix transformed_inputs(const Parameters& params, const Mask& mask, const Dataset& data, std::size_t layer);

double accuracy(const Parameters& params, const Mask& mask, const Dataset& data);

/// W (.) m for every layer.
std::vector<Matrix> masked_weights(const Parameters& params, const Mask& mask);

}  // namespace prunelab
