#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "hienet/grade.hpp"
#include "hienet/layers.hpp"

namespace hienet {

enum class LayerKind : std::uint8_t {
  kConv = 1,
  kRelu = 2,
  kMaxPool = 3,
  kAvgPool = 4,
  kBatchNorm = 5,
  kGlobalAverage = 6,
  kDense = 7,
  kSoftmax = 8,
};

/// One layer of the network. Field meaning depends on `kind`:
/// conv uses size = taps, inputs/outputs = channels; pools use size = window
/// and stride; batch norm uses outputs = feature maps; dense uses
/// inputs/outputs = neurons.
struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t size = 0;
  std::size_t stride = 0;
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  Padding padding = Padding::kSameZero;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Activation of one sample after a layer, printed as "length x 1 x channels".
struct ActivationShape {
  std::size_t length = 0;
  std::size_t channels = 0;

  std::string to_string() const;
  friend bool operator==(const ActivationShape&, const ActivationShape&) = default;
};

struct ModelSpec {
  std::size_t segment_samples = 0;
  std::vector<LayerSpec> layers;

  /// Output shape of every layer for a segment_samples x 1 input. Throws
  /// ShapeError when the stack does not fit together.
  std::vector<ActivationShape> activation_shapes() const;
  void validate() const { (void)activation_shapes(); }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Smallest segment the pooling chain 4*4*4*4*5 reduces to one sample.
inline constexpr std::size_t kMinSegmentSamples = 1280;

/// Conv-ReLU-MPool-BNorm-Conv-ReLU-MPool-Conv-ReLU-MPool-Conv-ReLU-APool-
/// MPool-GlobalAvg-FC-FC-Softmax over a single-channel segment.
ModelSpec build_hienet(std::size_t segment_samples);

/// Short human-readable layer description, e.g. "Conv (64,1) x 10".
std::string describe_layer(const LayerSpec& layer);

using LayerParams = std::variant<std::monostate, ConvFilterBank, BatchNormState, DenseWeights>;

struct ModelParams {
  ModelSpec spec;
  std::vector<LayerParams> layers;  // parallel to spec.layers
  std::uint64_t seed = 0;
  std::uint32_t epochs = 0;

  void validate() const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// He-normal conv/dense weights (variance 2 / fan_in), zero biases, batch
/// norm scale 1 and offset 0. Deterministic in `seed`.
ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);

struct LayerParameterCount {
  std::size_t layer = 0;  // 1-based position in the layer stack
  std::string name;
  std::size_t weights = 0;  // batch norm: offsets
  std::size_t biases = 0;   // batch norm: scales
};

struct ParameterCounts {
  std::vector<LayerParameterCount> layers;  // trainable layers only
  std::size_t total = 0;
};

ParameterCounts count_parameters(const ModelParams& params);

/// Grade probabilities for one single-channel segment. Infer mode uses the
/// batch-norm running statistics; train mode normalizes with the segment's
/// own statistics and leaves `params` untouched.
GradeProbabilities forward(const ModelParams& params, std::span<const double> segment,
                           Mode mode = Mode::kInfer);

/// Infer-mode forward over many segments, order preserving.
std::vector<GradeProbabilities> predict(const ModelParams& params,
                                        std::span<const std::span<const double>> segments);

/// Shapes actually produced by a forward pass (one per layer).
std::vector<ActivationShape> trace_activation_shapes(const ModelParams& params,
                                                     std::span<const double> segment,
                                                     Mode mode = Mode::kInfer);

/// Gradient buffers aligned with trainable_tensors().
struct ModelGradients {
  std::vector<std::vector<double>> tensors;
};

/// Trainable arrays in a fixed order: conv weights, bias; batch norm scale,
/// offset; dense weights, bias; layer by layer.
std::vector<std::span<double>> trainable_tensors(ModelParams& params);
ModelGradients zero_gradients(const ModelParams& params);

struct BatchOutcome {
  double mean_loss = 0.0;
  std::size_t correct = 0;
  std::vector<GradeProbabilities> probabilities;
  ModelGradients gradients;  // of mean_loss
  /// Batch statistics per batch-norm layer (normalized activations dropped).
  std::vector<BatchNormCache> batchnorm_statistics;
};

/// Train-mode forward and backward pass over a mini-batch: mean categorical
/// cross-entropy and its gradient w.r.t. every trainable tensor. Batch norm
/// layers normalize over the whole batch.
BatchOutcome loss_and_gradients(const ModelParams& params,
                                std::span<const std::span<const double>> batch,
                                std::span<const int> grades);

/// Mean train-mode loss only.
double batch_loss(const ModelParams& params, std::span<const std::span<const double>> batch,
                  std::span<const int> grades);

/// Folds the batch statistics of `outcome` into the running statistics.
void apply_batchnorm_statistics(ModelParams& params, const BatchOutcome& outcome);

}  // namespace hienet
