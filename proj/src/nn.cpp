#include "cpac/nn.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cpac/binary_io.hpp"

namespace cpac {

namespace {

constexpr std::string_view kNetMagic = "CPACNET1";

Matrix dropout_mask(Index rows, Index cols, double rate, Rng& rng) {
  Matrix mask(rows, cols);
  const double keep = 1.0 - rate;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) mask(r, c) = uniform01(rng) < keep ? 1.0 / keep : 0.0;
  return mask;
}

DenseLayer random_layer(int fan_in, int fan_out, Activation act, bool dropout_after, Rng& rng) {
  DenseLayer layer;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  layer.weights.resize(fan_in, fan_out);
  for (Index r = 0; r < fan_in; ++r)
    for (Index c = 0; c < fan_out; ++c) layer.weights(r, c) = (2.0 * uniform01(rng) - 1.0) * bound;
  layer.bias = Matrix::Zero(1, fan_out);
  layer.activation = act;
  layer.dropout_after = dropout_after;
  return layer;
}

// Decoder layers are built in forward order: mirror of the deepest encoder layer first.
Mlp build_decoder_shape(std::vector<DenseLayer> layers) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const bool last = i + 1 == layers.size();
    layers[i].activation = last ? Activation::kLinear : Activation::kRelu;
    layers[i].dropout_after = !last;
  }
  return Mlp(std::move(layers));
}

void check_cols(const Matrix& m, Index expected, const char* what) {
  if (m.cols() != expected) {
    std::ostringstream os;
    os << what << ": expected " << expected << " columns, got " << m.cols();
    throw DimensionError(os.str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Mlp

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.bias.rows() != 1 || l.bias.cols() != l.fan_out())
      throw DimensionError("layer " + std::to_string(i) + ": bias shape does not match weights");
    if (i > 0 && layers_[i - 1].fan_out() != l.fan_in())
      throw DimensionError("layer " + std::to_string(i) + ": fan_in does not match previous fan_out");
  }
}

Index Mlp::input_dim() const { return layers_.empty() ? 0 : layers_.front().fan_in(); }
Index Mlp::output_dim() const { return layers_.empty() ? 0 : layers_.back().fan_out(); }

Matrix Mlp::forward(const Matrix& x, const ForwardOptions& opts, ForwardCache* cache) const {
  if (layers_.empty()) throw StateError("forward on an empty network");
  check_cols(x, input_dim(), "forward");
  const bool use_dropout = opts.train_mode && opts.dropout_rate > 0.0;
  if (use_dropout && opts.rng == nullptr) throw StateError("dropout requested without a generator");

  if (cache) {
    cache->layers.assign(layers_.size(), {});
    cache->valid = false;
  }
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& layer = layers_[i];
    Matrix pre = h * layer.weights;
    pre.rowwise() += layer.bias.row(0);
    Matrix out = layer.activation == Activation::kRelu ? Matrix(pre.cwiseMax(0.0)) : pre;
    Matrix mask;
    if (use_dropout && layer.dropout_after) {
      mask = dropout_mask(out.rows(), out.cols(), opts.dropout_rate, *opts.rng);
      out = out.cwiseProduct(mask);
    }
    if (cache) {
      auto& lc = cache->layers[i];
      lc.input = std::move(h);
      lc.pre_activation = std::move(pre);
      lc.dropout_mask = std::move(mask);
    }
    h = std::move(out);
  }
  if (cache) cache->valid = true;
  return h;
}

MlpGradients Mlp::backward(const ForwardCache& cache, const Matrix& grad_out) const {
  if (!cache.valid || cache.layers.size() != layers_.size())
    throw StateError("backward called without a matching forward cache");
  const Index batch = cache.layers.front().input.rows();
  if (grad_out.rows() != batch || grad_out.cols() != output_dim())
    throw DimensionError("backward: upstream gradient shape does not match the forward output");

  MlpGradients g;
  g.weights.resize(layers_.size());
  g.biases.resize(layers_.size());
  Matrix delta = grad_out;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const auto& layer = layers_[k];
    const auto& lc = cache.layers[k];
    if (lc.dropout_mask.size() > 0) delta = delta.cwiseProduct(lc.dropout_mask);
    if (layer.activation == Activation::kRelu)
      delta = delta.cwiseProduct((lc.pre_activation.array() > 0.0).cast<double>().matrix());
    g.weights[k] = lc.input.transpose() * delta;
    g.biases[k] = delta.colwise().sum();
    delta = delta * layer.weights.transpose();
  }
  g.input = std::move(delta);
  return g;
}

// ---------------------------------------------------------------------------
// MlpAutoencoder

MlpAutoencoder::MlpAutoencoder(const std::vector<int>& layer_sizes, double dropout_rate, Rng& init_rng)
    : dropout_rate_(dropout_rate) {
  if (layer_sizes.size() < 2) throw ParameterError("autoencoder needs at least input and code sizes");
  if (std::any_of(layer_sizes.begin(), layer_sizes.end(), [](int s) { return s <= 0; }))
    throw ParameterError("layer sizes must be positive");
  set_dropout_rate(dropout_rate);

  std::vector<DenseLayer> enc;
  for (std::size_t i = 0; i + 1 < layer_sizes.size(); ++i)
    enc.push_back(random_layer(layer_sizes[i], layer_sizes[i + 1], Activation::kRelu, true, init_rng));
  std::vector<DenseLayer> dec;
  for (std::size_t i = layer_sizes.size() - 1; i > 0; --i)
    dec.push_back(random_layer(layer_sizes[i], layer_sizes[i - 1], Activation::kRelu, true, init_rng));
  encoder_ = Mlp(std::move(enc));
  decoder_ = build_decoder_shape(std::move(dec));
}

MlpAutoencoder::MlpAutoencoder(Mlp encoder, Mlp decoder, double dropout_rate)
    : encoder_(std::move(encoder)), decoder_(std::move(decoder)) {
  set_dropout_rate(dropout_rate);
  if (encoder_.size() == 0 || encoder_.size() != decoder_.size())
    throw DimensionError("encoder and decoder must have the same nonzero depth");
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    const auto& e = encoder_.layers()[i];
    const auto& d = decoder_.layers()[decoder_.size() - 1 - i];
    if (e.fan_in() != d.fan_out() || e.fan_out() != d.fan_in())
      throw DimensionError("decoder layer shapes must mirror the encoder");
  }
}

void MlpAutoencoder::set_dropout_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout rate must lie in [0, 1)");
  dropout_rate_ = rate;
}

Matrix MlpAutoencoder::encode(const Matrix& batch, bool train_mode, Rng* rng, ForwardCache* cache) const {
  check_cols(batch, input_dim(), "encode");
  return encoder_.forward(batch, {train_mode, dropout_rate_, rng}, cache);
}

Matrix MlpAutoencoder::decode(const Matrix& codes, bool train_mode, Rng* rng, ForwardCache* cache) const {
  check_cols(codes, code_dim(), "decode");
  return decoder_.forward(codes, {train_mode, dropout_rate_, rng}, cache);
}

Matrix MlpAutoencoder::reconstruct(const Matrix& batch, bool train_mode, Rng* rng, AutoencoderCache* cache,
                                   Matrix* codes) const {
  Matrix z = encode(batch, train_mode, rng, cache ? &cache->encoder : nullptr);
  Matrix out = decode(z, train_mode, rng, cache ? &cache->decoder : nullptr);
  if (codes) *codes = std::move(z);
  return out;
}

AutoencoderGradients MlpAutoencoder::backprop(const AutoencoderCache& cache, const Matrix& grad_recon,
                                              const Matrix* grad_codes) const {
  if (!cache.encoder.valid) throw StateError("backprop called without a forward cache");
  AutoencoderGradients g;
  const Index batch = cache.encoder.layers.front().input.rows();
  Matrix code_grad = Matrix::Zero(batch, code_dim());
  if (grad_recon.size() > 0) {
    if (!cache.decoder.valid) throw StateError("backprop through the decoder needs its forward cache");
    g.decoder = decoder_.backward(cache.decoder, grad_recon);
    code_grad += g.decoder.input;
  } else {
    for (const auto& l : decoder_.layers()) {
      g.decoder.weights.push_back(Matrix::Zero(l.weights.rows(), l.weights.cols()));
      g.decoder.biases.push_back(Matrix::Zero(1, l.bias.cols()));
    }
  }
  if (grad_codes) {
    if (grad_codes->rows() != batch || grad_codes->cols() != code_dim())
      throw DimensionError("backprop: code gradient shape mismatch");
    code_grad += *grad_codes;
  }
  g.encoder = encoder_.backward(cache.encoder, code_grad);
  return g;
}

std::vector<const Matrix*> AutoencoderGradients::flat() const {
  std::vector<const Matrix*> out;
  for (std::size_t i = 0; i < encoder.weights.size(); ++i) {
    out.push_back(&encoder.weights[i]);
    out.push_back(&encoder.biases[i]);
  }
  for (std::size_t i = 0; i < decoder.weights.size(); ++i) {
    out.push_back(&decoder.weights[i]);
    out.push_back(&decoder.biases[i]);
  }
  return out;
}

std::vector<Matrix*> MlpAutoencoder::parameters() {
  std::vector<Matrix*> out;
  for (auto* mlp : {&encoder_, &decoder_})
    for (auto& l : mlp->layers()) {
      out.push_back(&l.weights);
      out.push_back(&l.bias);
    }
  return out;
}

std::vector<const Matrix*> MlpAutoencoder::parameters() const {
  std::vector<const Matrix*> out;
  for (const auto* mlp : {&encoder_, &decoder_})
    for (const auto& l : mlp->layers()) {
      out.push_back(&l.weights);
      out.push_back(&l.bias);
    }
  return out;
}

std::vector<int> MlpAutoencoder::layer_sizes() const {
  std::vector<int> sizes;
  if (encoder_.size() == 0) return sizes;
  sizes.push_back(static_cast<int>(encoder_.input_dim()));
  for (const auto& l : encoder_.layers()) sizes.push_back(static_cast<int>(l.fan_out()));
  return sizes;
}

bool MlpAutoencoder::operator==(const MlpAutoencoder& other) const {
  const auto a = parameters();
  const auto b = other.parameters();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols()) return false;
    if (*a[i] != *b[i]) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Optimizer

void Optimizer::restore(std::uint64_t steps, std::vector<Matrix> first, std::vector<Matrix> second) {
  steps_ = steps;
  first_ = std::move(first);
  second_ = std::move(second);
}

void Optimizer::step(std::span<Matrix* const> params, std::span<const Matrix* const> grads) {
  if (params.size() != grads.size()) throw DimensionError("optimizer: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows() != grads[i]->rows() || params[i]->cols() != grads[i]->cols())
      throw DimensionError("optimizer: gradient " + std::to_string(i) + " shape mismatch");
    if (!grads[i]->allFinite())
      throw NumericalError("optimizer: non-finite gradient in block " + std::to_string(i) + ", step rejected");
  }
  if (first_.empty()) {
    for (auto* p : params) {
      first_.push_back(Matrix::Zero(p->rows(), p->cols()));
      second_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (first_.size() != params.size()) throw DimensionError("optimizer: parameter set changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (first_[i].rows() != params[i]->rows() || first_[i].cols() != params[i]->cols())
      throw DimensionError("optimizer: accumulator shape mismatch in block " + std::to_string(i));

  const auto& c = config_;
  const std::uint64_t t = steps_ + 1;
  std::vector<Matrix> new_first(params.size()), new_second(params.size()), new_params(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = grads[i]->array();
    if (c.kind == OptimizerKind::kAdam) {
      new_first[i] = (c.beta1 * first_[i].array() + (1.0 - c.beta1) * g).matrix();
      new_second[i] = (c.beta2 * second_[i].array() + (1.0 - c.beta2) * g.square()).matrix();
      const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
      const auto m_hat = new_first[i].array() / bc1;
      const auto v_hat = new_second[i].array() / bc2;
      new_params[i] = (params[i]->array() - c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon)).matrix();
    } else {
      new_first[i] = first_[i];
      new_second[i] = (c.decay * second_[i].array() + (1.0 - c.decay) * g.square()).matrix();
      new_params[i] =
          (params[i]->array() - c.learning_rate * g / (new_second[i].array() + c.epsilon).sqrt()).matrix();
    }
    if (!new_params[i].allFinite())
      throw NumericalError("optimizer: step would produce non-finite parameters in block " + std::to_string(i));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    *params[i] = std::move(new_params[i]);
    first_[i] = std::move(new_first[i]);
    second_[i] = std::move(new_second[i]);
  }
  steps_ = t;
}

// ---------------------------------------------------------------------------
// Pretraining

double reconstruction_mse(const MlpAutoencoder& net, const Matrix& data) {
  if (data.rows() == 0) return 0.0;
  const Matrix recon = net.reconstruct(data, false, nullptr, nullptr);
  return (recon - data).squaredNorm() / static_cast<double>(data.rows() * data.cols());
}

MlpAutoencoder initial_autoencoder(Index input_dim, const PretrainConfig& config) {
  std::vector<int> sizes{static_cast<int>(input_dim)};
  sizes.insert(sizes.end(), config.hidden_sizes.begin(), config.hidden_sizes.end());
  Rng init = make_stream(config.seed, "init");
  return MlpAutoencoder(sizes, config.dropout_rate, init);
}

namespace {

Matrix gather_rows(const Matrix& m, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

// Mini-batch MSE training of one network mapping `input` back onto itself.
// Returns the mean batch loss of every epoch.
std::vector<double> train_reconstruction(Mlp& net, const Matrix& input, int epochs, const PretrainConfig& config,
                                         double dropout_rate, Rng& shuffle_rng, Rng& dropout_rng,
                                         const char* stage) {
  std::vector<double> history;
  Optimizer opt(OptimizerConfig{OptimizerKind::kAdam, config.learning_rate, config.beta1, config.beta2});
  const Index n = input.rows();
  const Index batch_size = std::max(1, config.batch_size);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  const double norm = static_cast<double>(input.cols());

  for (int epoch = 0; epoch < epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double total = 0.0;
    Index batches = 0;
    for (Index start = 0; start < n; start += batch_size) {
      const Index len = std::min(batch_size, n - start);
      const Matrix x = gather_rows(input, std::span<const Index>(order).subspan(start, len));
      ForwardCache cache;
      const Matrix y = net.forward(x, {true, dropout_rate, &dropout_rng}, &cache);
      const Matrix diff = y - x;
      const double loss = diff.squaredNorm() / (norm * static_cast<double>(len));
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << stage << ": non-finite loss at epoch " << epoch << ", batch " << batches;
        throw NumericalError(os.str());
      }
      total += loss;
      ++batches;
      const Matrix grad = diff * (2.0 / (norm * static_cast<double>(len)));
      auto g = net.backward(cache, grad);
      std::vector<Matrix*> params;
      std::vector<const Matrix*> grads;
      for (std::size_t i = 0; i < net.size(); ++i) {
        params.push_back(&net.layers()[i].weights);
        params.push_back(&net.layers()[i].bias);
        grads.push_back(&g.weights[i]);
        grads.push_back(&g.biases[i]);
      }
      opt.step(params, grads);
    }
    history.push_back(total / static_cast<double>(std::max<Index>(batches, 1)));
  }
  return history;
}

}  // namespace

MlpAutoencoder layerwise_pretrain(const Matrix& data, const PretrainConfig& config, PretrainReport* report) {
  if (data.rows() == 0 || data.cols() == 0) throw ParameterError("pretraining needs a nonempty data matrix");
  if (config.layerwise_epochs < 0 || config.finetune_epochs < 0) throw ParameterError("epoch counts must be >= 0");
  if (!data.allFinite()) throw DomainError("pretraining data contains non-finite values");

  MlpAutoencoder net = initial_autoencoder(data.cols(), config);
  Rng shuffle_rng = make_stream(config.seed, "shuffle");
  Rng dropout_rng = make_stream(config.seed, "dropout");
  if (report) report->initial_mse = reconstruction_mse(net, data);

  const std::size_t depth = net.encoder().size();
  if (config.layerwise_epochs > 0) {
    Matrix h = data;
    for (std::size_t i = 0; i < depth; ++i) {
      auto& enc_layer = net.encoder().layers()[i];
      auto& dec_layer = net.decoder().layers()[depth - 1 - i];
      DenseLayer enc_copy = enc_layer;
      DenseLayer dec_copy = dec_layer;
      enc_copy.dropout_after = true;
      dec_copy.dropout_after = false;
      Mlp pair({enc_copy, dec_copy});
      const std::string stage = "layerwise pretraining (layer " + std::to_string(i) + ")";
      train_reconstruction(pair, h, config.layerwise_epochs, config, config.dropout_rate, shuffle_rng, dropout_rng,
                           stage.c_str());
      enc_layer.weights = pair.layers()[0].weights;
      enc_layer.bias = pair.layers()[0].bias;
      dec_layer.weights = pair.layers()[1].weights;
      dec_layer.bias = pair.layers()[1].bias;
      // Frozen output of the trained prefix feeds the next pair.
      Mlp single({enc_layer});
      h = single.forward(h);
    }
  }

  if (config.finetune_epochs > 0) {
    // Train encoder+decoder as one stack so dropout placement matches the full net.
    std::vector<DenseLayer> stack = net.encoder().layers();
    const auto& dec = net.decoder().layers();
    stack.insert(stack.end(), dec.begin(), dec.end());
    Mlp full(std::move(stack));
    const double rate = config.finetune_dropout ? config.dropout_rate : 0.0;
    auto hist = train_reconstruction(full, data, config.finetune_epochs, config, rate, shuffle_rng, dropout_rng,
                                     "fine-tuning");
    for (std::size_t i = 0; i < depth; ++i) {
      net.encoder().layers()[i] = full.layers()[i];
      net.decoder().layers()[i] = full.layers()[depth + i];
    }
    if (report) report->finetune_history = std::move(hist);
  }
  if (report) report->final_mse = reconstruction_mse(net, data);
  return net;
}

// ---------------------------------------------------------------------------
// Checkpoints

void write_checkpoint(std::ostream& out, const MlpAutoencoder& net) {
  io::write_magic(out, kNetMagic);
  const auto total = net.encoder().size() + net.decoder().size();
  io::write_u32(out, static_cast<std::uint32_t>(total));
  for (const auto* mlp : {&net.encoder(), &net.decoder()})
    for (const auto& l : mlp->layers()) {
      io::write_u32(out, static_cast<std::uint32_t>(l.weights.rows()));
      io::write_u32(out, static_cast<std::uint32_t>(l.weights.cols()));
      io::write_matrix_payload(out, l.weights);
      io::write_matrix_payload(out, l.bias);
    }
}

MlpAutoencoder read_checkpoint(std::istream& in, double dropout_rate) {
  io::expect_magic(in, kNetMagic);
  const auto total = io::read_u32(in, "layer count");
  if (total == 0 || total % 2 != 0) throw ParseError("checkpoint layer count must be even and nonzero");
  std::vector<DenseLayer> layers;
  for (std::uint32_t i = 0; i < total; ++i) {
    DenseLayer l;
    const auto rows = io::read_u32(in, "layer rows");
    const auto cols = io::read_u32(in, "layer cols");
    l.weights = io::read_matrix_payload(in, rows, cols, "weights");
    l.bias = io::read_matrix_payload(in, 1, cols, "biases");
    if (!l.weights.allFinite() || !l.bias.allFinite())
      throw ParseError("checkpoint layer " + std::to_string(i) + " holds non-finite values");
    layers.push_back(std::move(l));
  }
  const std::size_t half = total / 2;
  std::vector<DenseLayer> enc(layers.begin(), layers.begin() + static_cast<std::ptrdiff_t>(half));
  std::vector<DenseLayer> dec(layers.begin() + static_cast<std::ptrdiff_t>(half), layers.end());
  for (auto& l : enc) {
    l.activation = Activation::kRelu;
    l.dropout_after = true;
  }
  return MlpAutoencoder(Mlp(std::move(enc)), build_decoder_shape(std::move(dec)), dropout_rate);
}

void save_checkpoint(const std::string& path, const MlpAutoencoder& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_checkpoint(out, net);
  if (!out) throw Error("write failed: " + path);
}

MlpAutoencoder load_checkpoint(const std::string& path, double dropout_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return read_checkpoint(in, dropout_rate);
}

}  // namespace cpac
