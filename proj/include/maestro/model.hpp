/**
 * @file model.hpp
 * @brief Decoder-only Transformer: forward pass, backprop, Adam training and
 *        temperature-controlled sampling.
 *
 * Pre-norm residual blocks, sinusoidal positional encodings, output
 * projection tied to the token embedding. All math is in 64-bit floats.
 */
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "maestro/tokenizer.hpp"

namespace maestro {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ModelConfig {
  int vocab_size = kVocabSize;
  int d_model = 128;
  int n_heads = 4;
  int n_layers = 4;
  int d_ff = 512;
  int max_seq_len = 256;
  double dropout = 0.1;

  /// Throws std::invalid_argument when shapes are inconsistent.
  void validate() const;
  int64_t parameter_count() const;

  /// Desk-scale default used for real corpora.
  static ModelConfig desk() { return ModelConfig{}; }
  /// Small configuration used by fast training runs and the test suite.
  static ModelConfig toy();
};

struct LayerParameters {
  Vector ln1_gain, ln1_bias;
  Matrix wq, wk, wv, wo;  // d_model x d_model
  Vector ln2_gain, ln2_bias;
  Matrix w1;  // d_model x d_ff
  Vector b1;  // d_ff
  Matrix w2;  // d_ff x d_model
  Vector b2;  // d_model
};

/// Weights of the model. The token embedding doubles as the output
/// projection. The same struct is reused for parameter-shaped gradients
/// and optimizer moments.
struct ModelParameters {
  ModelConfig config;
  Matrix embedding;  // vocab_size x d_model
  std::vector<LayerParameters> layers;
  Vector lnf_gain, lnf_bias;
};

/// Flat view over one tensor; `tensor_views` yields all tensors in the
/// canonical serialization order.
struct TensorView {
  std::string name;
  double* data;
  int64_t size;
};
std::vector<TensorView> tensor_views(ModelParameters& params);
std::vector<TensorView> tensor_views(const ModelParameters& params);

ModelParameters init_params(const ModelConfig& config, uint64_t seed);
ModelParameters zeros_like(const ModelParameters& params);

/// softmax(Q K^T / sqrt(d_k) + mask) V. With `causal`, position i attends
/// to positions <= i (Q and K must then have the same row count).
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, bool causal);
/// The attention probability matrix alone (rows sum to 1).
Matrix attention_weights(const Matrix& q, const Matrix& k, bool causal);

/// Evaluation-mode forward pass: logits, one row per position.
/// Throws std::length_error when the sequence exceeds max_seq_len.
Matrix forward(const ModelParameters& params, std::span<const int32_t> tokens);

/// Mean next-token cross-entropy of `logits` against `targets`, in nats.
double loss(const Matrix& logits, std::span<const int32_t> targets);

/// Number of forward passes run by the calling thread. Used to show the
/// cache-hit serving path never touches the model.
uint64_t forward_passes_this_thread();

struct TrainingBatch {
  std::vector<std::vector<int32_t>> inputs;
  std::vector<std::vector<int32_t>> targets;
  /// Checks the shifted-by-one relation between inputs and targets.
  void validate() const;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int64_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  int64_t step() const { return step_; }

 private:
  int64_t step_ = 0;
};

/// Reverse-mode gradients of the mean batch loss, scaled by `loss_scale`.
/// Dropout (when enabled in the config) is driven by `dropout_seed`.
/// Returns the loss; gradients land in `grads` (accumulated, so zero it
/// first for a plain gradient).
double loss_and_gradients(const ModelParameters& params, const TrainingBatch& batch,
                          ModelParameters& grads, double loss_scale = 1.0,
                          uint64_t dropout_seed = 0);
ModelParameters gradients(const ModelParameters& params, const TrainingBatch& batch,
                          double loss_scale = 1.0, uint64_t dropout_seed = 0);

enum class OptimizerKind { adam, sgd };

struct OptimizerOptions {
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int warmup_steps = 100;  // linear learning-rate warmup (Adam only)
  uint64_t dropout_seed = 0;
};

/// Owns the Adam moments; one step = gradients + parameter update.
class Optimizer {
 public:
  explicit Optimizer(const ModelParameters& reference, OptimizerOptions options = {});

  /// Runs one update and returns the pre-update loss.
  /// Throws TrainingError when the loss is not finite.
  double step(ModelParameters& params, const TrainingBatch& batch, double learning_rate);

  int64_t step_count() const { return step_; }

 private:
  OptimizerOptions options_;
  int64_t step_ = 0;
  std::vector<Vector> m_, v_;
};

/// Draw a token id from softmax(logits / temperature); temperature 0 is
/// argmax with lowest-id tie-break.
int32_t sample_from_logits(const Vector& logits, double temperature, std::mt19937_64& rng);
/// Softmax with temperature, exposed for distribution-level checks.
Vector softmax_with_temperature(const Vector& logits, double temperature);

int32_t sample_next(const ModelParameters& params, std::span<const int32_t> context,
                    double temperature, uint64_t rng_seed);

/// Autoregressively extend `seed_tokens` by `length` tokens, sliding the
/// context window (last max_seq_len - 1 tokens). Returns seed + continuation.
TokenSequence generate(const ModelParameters& params, const TokenSequence& seed_tokens,
                       int length, double temperature, uint64_t rng_seed);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint layout: "MGEN" magic, u32 version, u32-length-prefixed config
/// record, u64 weight count, then the weights as little-endian doubles.
std::vector<uint8_t> save_checkpoint(const ModelParameters& params);
ModelParameters load_checkpoint(std::span<const uint8_t> bytes);
void save_checkpoint_file(const ModelParameters& params, const std::string& path);
ModelParameters load_checkpoint_file(const std::string& path);

}  // namespace maestro
