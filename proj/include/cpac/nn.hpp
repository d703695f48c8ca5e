#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cpac/common.hpp"

namespace cpac {

enum class Activation { kRelu, kLinear };

/// y = act(x * weights + bias). weights is fan_in x fan_out, bias is 1 x fan_out.
struct DenseLayer {
  Matrix weights;
  Matrix bias;
  Activation activation = Activation::kRelu;
  bool dropout_after = false;

  Index fan_in() const { return weights.rows(); }
  Index fan_out() const { return weights.cols(); }
};

struct LayerCache {
  Matrix input;
  Matrix pre_activation;
  Matrix dropout_mask;  // empty when no dropout was applied
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  bool valid = false;
};

struct MlpGradients {
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;
  Matrix input;
};

struct ForwardOptions {
  bool train_mode = false;
  double dropout_rate = 0.0;
  Rng* rng = nullptr;  // required when train_mode && dropout_rate > 0
};

/// Stack of dense layers with exact reverse-mode differentiation.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> layers);

  Matrix forward(const Matrix& x, const ForwardOptions& opts = {}, ForwardCache* cache = nullptr) const;

  /// Gradients of sum(grad_out .* output) w.r.t. every weight, bias and the input.
  MlpGradients backward(const ForwardCache& cache, const Matrix& grad_out) const;

  Index input_dim() const;
  Index output_dim() const;
  std::size_t size() const { return layers_.size(); }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

 private:
  std::vector<DenseLayer> layers_;
};

struct AutoencoderCache {
  ForwardCache encoder;
  ForwardCache decoder;
};

struct AutoencoderGradients {
  MlpGradients encoder;
  MlpGradients decoder;

  /// Parameter gradients in the same order as MlpAutoencoder::parameters().
  std::vector<const Matrix*> flat() const;
};

/// Mirrored encoder/decoder. Every layer is ReLU except the final decoder
/// layer, which is linear so reconstructions can be negative.
class MlpAutoencoder {
 public:
  MlpAutoencoder() = default;

  /// layer_sizes = {dim(X), h1, ..., dim(Z)}; the decoder mirrors it.
  /// Biases start at zero, weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  MlpAutoencoder(const std::vector<int>& layer_sizes, double dropout_rate, Rng& init_rng);

  /// Assembles a net from explicit layers (checkpoint loading, tests).
  MlpAutoencoder(Mlp encoder, Mlp decoder, double dropout_rate);

  Matrix encode(const Matrix& batch, bool train_mode = false, Rng* rng = nullptr,
                ForwardCache* cache = nullptr) const;
  Matrix decode(const Matrix& codes, bool train_mode = false, Rng* rng = nullptr,
                ForwardCache* cache = nullptr) const;

  /// Full pass. Returns the reconstruction; codes are written to *codes when given.
  Matrix reconstruct(const Matrix& batch, bool train_mode, Rng* rng, AutoencoderCache* cache,
                     Matrix* codes = nullptr) const;

  /// Backpropagates an upstream gradient at the reconstruction plus an
  /// optional extra gradient injected at the code layer (losses on Z).
  /// An empty grad_recon means the decoder is not part of the loss.
  AutoencoderGradients backprop(const AutoencoderCache& cache, const Matrix& grad_recon,
                                const Matrix* grad_codes = nullptr) const;

  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;

  std::vector<int> layer_sizes() const;
  Index input_dim() const { return encoder_.input_dim(); }
  Index code_dim() const { return encoder_.output_dim(); }
  double dropout_rate() const { return dropout_rate_; }
  void set_dropout_rate(double rate);

  Mlp& encoder() { return encoder_; }
  Mlp& decoder() { return decoder_; }
  const Mlp& encoder() const { return encoder_; }
  const Mlp& decoder() const { return decoder_; }

  bool operator==(const MlpAutoencoder& other) const;

 private:
  Mlp encoder_;
  Mlp decoder_;
  double dropout_rate_ = 0.2;
};

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { kAdam, kRmsProp };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double decay = 0.9;  // RMSProp
  double epsilon = 1e-8;

  static OptimizerConfig adam(double lr) { return {OptimizerKind::kAdam, lr}; }
  static OptimizerConfig rmsprop(double lr) {
    OptimizerConfig c;
    c.kind = OptimizerKind::kRmsProp;
    c.learning_rate = lr;
    return c;
  }
};

/// Adam (bias-corrected):   p -= lr * m_hat / (sqrt(v_hat) + eps)
/// RMSProp:                 p -= lr * g / sqrt(v + eps),  v = decay*v + (1-decay)*g^2
///
/// Accumulators are created on the first step and must keep their shapes.
/// A step with non-finite gradients, or one that would produce non-finite
/// parameters, throws NumericalError and leaves everything untouched.
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  void step(std::span<Matrix* const> params, std::span<const Matrix* const> grads);

  const OptimizerConfig& config() const { return config_; }
  OptimizerConfig& config() { return config_; }
  std::uint64_t steps() const { return steps_; }

  std::vector<Matrix>& first_moments() { return first_; }
  std::vector<Matrix>& second_moments() { return second_; }
  const std::vector<Matrix>& first_moments() const { return first_; }
  const std::vector<Matrix>& second_moments() const { return second_; }
  void restore(std::uint64_t steps, std::vector<Matrix> first, std::vector<Matrix> second);

 private:
  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
};

// ---------------------------------------------------------------------------
// Pretraining

struct PretrainConfig {
  std::vector<int> hidden_sizes = {500, 500, 2000, 10};
  double dropout_rate = 0.2;
  int layerwise_epochs = 50;
  int finetune_epochs = 50;
  int batch_size = 256;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  bool finetune_dropout = true;
  std::uint64_t seed = 0;
};

struct PretrainReport {
  double initial_mse = 0.0;
  double final_mse = 0.0;
  std::vector<double> finetune_history;  // mean batch loss per fine-tune epoch
};

/// Mean over samples of (1/dim(X)) * ||x' - x||^2, evaluation mode.
double reconstruction_mse(const MlpAutoencoder& net, const Matrix& data);

/// The untrained net layerwise_pretrain starts from.
MlpAutoencoder initial_autoencoder(Index input_dim, const PretrainConfig& config);

/// Greedy stacked-autoencoder training followed by end-to-end fine-tuning (Adam).
MlpAutoencoder layerwise_pretrain(const Matrix& data, const PretrainConfig& config,
                                  PretrainReport* report = nullptr);

// ---------------------------------------------------------------------------
// Checkpoint: "CPACNET1", u32 layer count, then per layer u32 rows, u32 cols,
// row-major f64 weights, f64 biases. Encoder layers first, then decoder.

void write_checkpoint(std::ostream& out, const MlpAutoencoder& net);
MlpAutoencoder read_checkpoint(std::istream& in, double dropout_rate = 0.2);
void save_checkpoint(const std::string& path, const MlpAutoencoder& net);
MlpAutoencoder load_checkpoint(const std::string& path, double dropout_rate = 0.2);

}  // namespace cpac
