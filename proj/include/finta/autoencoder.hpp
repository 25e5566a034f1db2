#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "finta/geometry.hpp"

namespace finta {

/// How the "size" column of the layer table is read. kInputSize: every
/// encoder convolution has stride 2 and the listed sizes are its input
/// lengths (256 -> 4 at the bottleneck). kOutputSize: the listed sizes are
/// output lengths, so the first convolution has stride 1 (256 -> 8).
enum class TableInterpretation { kInputSize, kOutputSize };

struct ModelConfig {
  int input_points = 256;
  int input_channels = 3;
  int latent_dim = 32;
  std::vector<int> encoder_features{32, 64, 128, 256, 512, 1024};
  int kernel_size = 3;
  std::uint64_t seed = 0;
  TableInterpretation table_interpretation = TableInterpretation::kInputSize;

  /// Throws InvalidConfig.
  void validate() const;

  int layers() const { return static_cast<int>(encoder_features.size()); }
  int encoder_stride(int layer) const;
  /// Length of the last encoder activation, flattened into the bottleneck.
  int bottleneck_length() const;
  /// Length the expansion layer produces before the first upsampling.
  int expansion_length() const { return input_points >> layers(); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Maps world millimetres to model space: (p - center) / scale.
struct Normalization {
  Point3 center;
  double scale = 1.0;

  Point3 normalize(const Point3& p) const { return (p - center) * (1.0 / scale); }
  Point3 denormalize(const Point3& q) const { return q * scale + center; }

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

/// Centroid of every point, and the largest absolute centred coordinate.
Normalization fit_normalization(const Tractogram& t);

/// One named parameter tensor inside the flat parameter vector.
struct ParamBlock {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return rows * cols; }
};

/// Heap buffer aligned for the widest SIMD width, so vectorized reductions
/// over it take the same path on every run.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

/// Fully convolutional 1D autoencoder.
///
/// Encoder: `layers` convolutions (ReLU), flattened into a linear bottleneck.
/// Decoder: a linear expansion, then `layers` stages of 2x nearest-neighbour
/// upsampling followed by a stride-1 convolution (ReLU), and a linear
/// kernel-1 projection back to the input channels.
///
/// Activations are stored as (channels, batch * length) row-major matrices,
/// so sample b occupies columns [b * length, (b + 1) * length).
template <typename T>
class ConvAutoencoder {
 public:
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  ConvAutoencoder() = default;
  /// Fan-in scaled uniform weights, zero biases, deterministic in config.seed.
  explicit ConvAutoencoder(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& block(const std::string& name) const;

  std::span<T> parameters() { return params_; }
  std::span<const T> parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  Normalization normalization;
  /// Endpoint-alignment anchor of the training data, carried with the model.
  std::optional<Point3> anchor;

  /// (channels, B * points) normalized input -> (B, latent).
  Matrix encode_normalized(const Matrix& x, int batch) const;
  /// (B, latent) -> (channels, B * points) normalized output.
  Matrix decode_normalized(const Matrix& z) const;

  /// Mean squared reconstruction error over batch, points and channels.
  double loss_normalized(const Matrix& x, int batch) const;

  /// Same loss; writes d(loss)/d(parameters) into `grad` (resized to match).
  double loss_and_gradient(const Matrix& x, int batch, AlignedVector<T>& grad) const;

  template <typename U>
  ConvAutoencoder<U> cast() const {
    ConvAutoencoder<U> out;
    out.config_ = config_;
    out.blocks_ = blocks_;
    out.params_.assign(params_.begin(), params_.end());
    out.normalization = normalization;
    out.anchor = anchor;
    return out;
  }

  /// Rebuilds a model around existing parameters (deserialization).
  static ConvAutoencoder from_parameters(const ModelConfig& config, std::vector<T> params);

  friend bool operator==(const ConvAutoencoder& a, const ConvAutoencoder& b) {
    return a.config_ == b.config_ && a.params_ == b.params_ &&
           a.normalization == b.normalization && a.anchor == b.anchor;
  }

 private:
  template <typename U>
  friend class ConvAutoencoder;

  struct Trace;
  void layout_blocks();
  Matrix encoder_pass(const Matrix& x, int batch, Trace* trace) const;
  Matrix decoder_pass(const Matrix& z, Trace* trace) const;

  ModelConfig config_;
  std::vector<ParamBlock> blocks_;
  AlignedVector<T> params_;
};

extern template class ConvAutoencoder<float>;
extern template class ConvAutoencoder<double>;

using AutoencoderModel = ConvAutoencoder<float>;
using LatentVector = std::vector<float>;

AutoencoderModel init_model(const ModelConfig& config);

/// Normalized (channels, B * points) matrix for a batch of streamlines.
/// Throws ShapeMismatch when a streamline has the wrong point count.
template <typename T>
typename ConvAutoencoder<T>::Matrix to_model_input(const ConvAutoencoder<T>& model,
                                                   std::span<const Streamline> batch);

/// Validates every streamline, resamples to the model's point count and, when
/// the model carries an anchor, aligns endpoints to it.
Tractogram prepare_input(const AutoencoderModel& model, const Tractogram& t);

LatentVector encode(const AutoencoderModel& model, const Streamline& s);
/// Encodes in chunks; `threads` > 1 splits chunks across workers, with each
/// result written to its input's slot.
std::vector<LatentVector> encode_batch(const AutoencoderModel& model,
                                       std::span<const Streamline> streamlines,
                                       std::size_t chunk = 256, int threads = 1);

/// Throws InvalidLatent on a non-finite or wrongly sized vector.
Streamline decode(const AutoencoderModel& model, const LatentVector& z);
std::vector<Streamline> decode_batch(const AutoencoderModel& model,
                                     std::span<const LatentVector> latents,
                                     std::size_t chunk = 256);

/// Throws EmptyBatch on an empty batch.
double loss(const AutoencoderModel& model, std::span<const Streamline> batch);
std::vector<float> gradients(const AutoencoderModel& model, std::span<const Streamline> batch);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 6.68e-4;
  double weight_decay = 0.13;
  int batch_size = 128;
  int max_epochs = 100;
  int patience = 5;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Decoupled (AdamW) decay by default; false adds weight_decay * p to the
  /// gradient instead (classic L2).
  bool decoupled_weight_decay = true;
  /// Fit the model's normalization on the training set before the first step.
  bool fit_normalization = true;

  void validate() const;
};

/// Adam with decoupled weight decay: p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps).
/// With coupled decay the shrinkage term is dropped and wd * p joins the gradient.
class AdamW {
 public:
  AdamW(std::size_t n, const TrainConfig& config);

  void step(std::span<float> params, std::span<const float> grad);
  std::uint64_t steps() const { return t_; }

 private:
  TrainConfig config_;
  std::vector<float> m_;
  std::vector<float> v_;
  std::uint64_t t_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  TrainConfig config;
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  double initial_val_loss = 0.0;  // before the first step
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::uint64_t steps = 0;
  std::string stop_reason;
};

struct TrainResult {
  AutoencoderModel model;  // parameters of the best validation epoch
  TrainReport report;
};

/// Mini-batch AdamW on the MSE reconstruction loss with early stopping on the
/// validation loss. Throws TrainingDiverged on a non-finite loss.
TrainResult train(AutoencoderModel model, const Tractogram& train_set, const Tractogram& val_set,
                  const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace finta
