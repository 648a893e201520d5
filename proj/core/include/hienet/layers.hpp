#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hienet/tensor.hpp"

// Forward and backward kernels for every layer kind in the network.
//
// Per-sample activations are (length, channels) tensors. The convolution is a
// cross-correlation (no filter flip):
//
//   out[t][k] = bias[k] + sum_j sum_c in[t + j - pad_left][c] * w[j][c][k]
//
// with pad_left = 0 for valid padding and (taps - 1) / 2 for same-zero
// padding (right pad taps / 2, so even tap counts lean right).

namespace hienet {

enum class Padding { kSameZero, kValid };
enum class PoolMode { kMax, kAverage };
enum class Mode { kTrain, kInfer };

/// Bank of FIR filters, one per output channel. Weights are laid out
/// [tap][in_channel][out_channel].
struct ConvFilterBank {
  std::size_t taps = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  static ConvFilterBank zeros(std::size_t taps, std::size_t in_channels, std::size_t out_channels);

  std::size_t weight_count() const { return taps * in_channels * out_channels; }
  double& weight(std::size_t tap, std::size_t in, std::size_t out) {
    return weights[(tap * in_channels + in) * out_channels + out];
  }
  double weight(std::size_t tap, std::size_t in, std::size_t out) const {
    return weights[(tap * in_channels + in) * out_channels + out];
  }
  void validate() const;

  friend bool operator==(const ConvFilterBank&, const ConvFilterBank&) = default;
};

/// Output length of a convolution over `length` samples.
std::size_t conv_output_length(std::size_t length, std::size_t taps, Padding padding);

Tensor conv1d_forward(const Tensor& input, const ConvFilterBank& bank, Padding padding);

struct ConvGradients {
  Tensor input;
  std::vector<double> weights;
  std::vector<double> bias;
};

ConvGradients conv1d_backward(const Tensor& input, const ConvFilterBank& bank, Padding padding,
                              const Tensor& upstream);

/// Accumulating form used by the training loop: adds weight and bias
/// gradients into the given buffers and, if `input_grad` is non-null,
/// overwrites it with the input gradient.
void conv1d_backward_accumulate(const Tensor& input, const ConvFilterBank& bank, Padding padding,
                                const Tensor& upstream, std::span<double> weight_grad,
                                std::span<double> bias_grad, Tensor* input_grad);

Tensor relu_forward(const Tensor& input);
void relu_inplace(Tensor& x);
/// Passes upstream where input > 0; zero elsewhere, including at exactly 0.
Tensor relu_backward(const Tensor& input, const Tensor& upstream);

/// floor((length - window) / stride) + 1; throws when length < window.
std::size_t pool_output_length(std::size_t length, std::size_t window, std::size_t stride);

Tensor pool1d_forward(const Tensor& input, std::size_t window, std::size_t stride, PoolMode mode);
/// Max mode routes each window's gradient to its first maximal element.
Tensor pool1d_backward(const Tensor& input, std::size_t window, std::size_t stride, PoolMode mode,
                       const Tensor& upstream);

/// Per-feature-map affine normalization with running inference statistics.
struct BatchNormState {
  std::vector<double> scale;
  std::vector<double> offset;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;
  /// False until a train-mode pass has produced running statistics.
  bool has_running_stats = false;

  static BatchNormState identity(std::size_t feature_maps);
  std::size_t feature_maps() const { return scale.size(); }
  void validate() const;

  friend bool operator==(const BatchNormState&, const BatchNormState&) = default;
};

/// Batch statistics and normalized activations kept for the backward pass.
struct BatchNormCache {
  std::vector<double> mean;
  std::vector<double> variance;  // population variance
  std::vector<double> inv_std;
  Tensor normalized;
};

/// Input is (length, channels) or (batch, length, channels). Train mode
/// normalizes with batch statistics and updates the running statistics;
/// infer mode uses the running statistics.
Tensor batchnorm_forward(const Tensor& input, BatchNormState& state, Mode mode,
                         BatchNormCache* cache = nullptr);

/// Train-mode normalization that leaves `state` untouched.
Tensor batchnorm_train(const Tensor& input, const BatchNormState& state, BatchNormCache& cache);
Tensor batchnorm_infer(const Tensor& input, const BatchNormState& state);
void batchnorm_update_running(BatchNormState& state, const BatchNormCache& cache);

struct BatchNormGradients {
  Tensor input;
  std::vector<double> scale;
  std::vector<double> offset;
};

BatchNormGradients batchnorm_backward(const BatchNormState& state, const BatchNormCache& cache,
                                      const Tensor& upstream);

/// Affine layer y = x W + b with W laid out [input][output].
struct DenseWeights {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  static DenseWeights zeros(std::size_t inputs, std::size_t outputs);
  void validate() const;

  friend bool operator==(const DenseWeights&, const DenseWeights&) = default;
};

/// Input is a 1 x inputs tensor; output 1 x outputs.
Tensor fully_connected_forward(const Tensor& input, const DenseWeights& layer);

struct DenseGradients {
  Tensor input;
  std::vector<double> weights;
  std::vector<double> bias;
};

DenseGradients fully_connected_backward(const Tensor& input, const DenseWeights& layer,
                                        const Tensor& upstream);
void fully_connected_backward_accumulate(const Tensor& input, const DenseWeights& layer,
                                         const Tensor& upstream, std::span<double> weight_grad,
                                         std::span<double> bias_grad, Tensor* input_grad);

/// Mean over the length axis: (length, channels) -> (1, channels).
Tensor global_average_forward(const Tensor& input);
Tensor global_average_backward(const Tensor& input, const Tensor& upstream);

/// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);

/// -log p[grade-1] with p clamped to >= 1e-12. `grade` is 1-based.
double cross_entropy(std::span<const double> probabilities, int grade);

/// d(cross_entropy(softmax(z)))/dz = p - onehot(grade).
std::vector<double> softmax_cross_entropy_gradient(std::span<const double> probabilities,
                                                   int grade);

}  // namespace hienet
