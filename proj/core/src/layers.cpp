#include "hienet/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "hienet/errors.hpp"

namespace hienet {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
// Rows of a window view overlap: row t starts `stride` values after row t-1.
using WindowMap = Eigen::Map<const RowMatrix, Eigen::Unaligned, Eigen::OuterStride<>>;

std::string dims(std::size_t a, std::size_t b) {
  return std::to_string(a) + "x" + std::to_string(b);
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(what) + " must be (length, channels), got shape " +
                     t.shape_string());
  }
}

std::size_t pad_left(std::size_t taps, Padding padding) {
  return padding == Padding::kSameZero ? (taps - 1) / 2 : 0;
}

// Input laid out with the zero padding already applied. Returns a view of
// `input` itself when no padding is needed.
const double* padded_input(const Tensor& input, std::size_t taps, Padding padding,
                           std::vector<double>& storage) {
  if (padding == Padding::kValid) return input.data();
  const std::size_t channels = input.channels();
  const std::size_t left = pad_left(taps, padding);
  storage.assign((input.length() + taps - 1) * channels, 0.0);
  std::copy(input.values().begin(), input.values().end(), storage.begin() + left * channels);
  return storage.data();
}

void check_conv_input(const Tensor& input, const ConvFilterBank& bank, Padding padding) {
  require_rank2(input, "conv input");
  bank.validate();
  if (input.channels() != bank.in_channels) {
    throw ShapeError("conv input has " + std::to_string(input.channels()) +
                     " channels but the filter bank expects in_channels = " +
                     std::to_string(bank.in_channels));
  }
  if (padding == Padding::kValid && input.length() < bank.taps) {
    throw ShapeError("conv input length " + std::to_string(input.length()) +
                     " is shorter than the filter taps " + std::to_string(bank.taps));
  }
}

void check_batchnorm_input(const Tensor& input, const BatchNormState& state) {
  if (input.rank() != 2 && input.rank() != 3) {
    throw ShapeError("batchnorm input must be (length, channels) or (batch, length, channels), got " +
                     input.shape_string());
  }
  state.validate();
  const std::size_t channels = input.extent(input.rank() - 1);
  if (channels != state.feature_maps()) {
    throw ShapeError("batchnorm input has " + std::to_string(channels) +
                     " channels but the state has " + std::to_string(state.feature_maps()) +
                     " feature maps");
  }
}

}  // namespace

ConvFilterBank ConvFilterBank::zeros(std::size_t taps, std::size_t in_channels,
                                     std::size_t out_channels) {
  ConvFilterBank bank;
  bank.taps = taps;
  bank.in_channels = in_channels;
  bank.out_channels = out_channels;
  bank.weights.assign(taps * in_channels * out_channels, 0.0);
  bank.bias.assign(out_channels, 0.0);
  return bank;
}

void ConvFilterBank::validate() const {
  if (taps == 0 || in_channels == 0 || out_channels == 0) {
    throw ShapeError("filter bank taps, in_channels and out_channels must be positive");
  }
  if (weights.size() != weight_count()) {
    throw ShapeError("filter bank has " + std::to_string(weights.size()) + " weights, expected taps x in x out = " +
                     std::to_string(weight_count()));
  }
  if (bias.size() != out_channels) {
    throw ShapeError("filter bank has " + std::to_string(bias.size()) + " biases, expected out_channels = " +
                     std::to_string(out_channels));
  }
}

std::size_t conv_output_length(std::size_t length, std::size_t taps, Padding padding) {
  if (padding == Padding::kSameZero) return length;
  if (length < taps) {
    throw ShapeError("conv input length " + std::to_string(length) +
                     " is shorter than the filter taps " + std::to_string(taps));
  }
  return length - taps + 1;
}

Tensor conv1d_forward(const Tensor& input, const ConvFilterBank& bank, Padding padding) {
  check_conv_input(input, bank, padding);
  const std::size_t out_length = conv_output_length(input.length(), bank.taps, padding);
  const auto window = static_cast<Eigen::Index>(bank.taps * bank.in_channels);

  std::vector<double> storage;
  const double* x = padded_input(input, bank.taps, padding, storage);

  Tensor output({out_length, bank.out_channels});
  WindowMap windows(x, static_cast<Eigen::Index>(out_length), window,
                    Eigen::OuterStride<>(static_cast<Eigen::Index>(bank.in_channels)));
  ConstMatrixMap w(bank.weights.data(), window, static_cast<Eigen::Index>(bank.out_channels));
  MatrixMap y(output.data(), static_cast<Eigen::Index>(out_length),
              static_cast<Eigen::Index>(bank.out_channels));
  y.noalias() = windows * w;
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bank.bias.data(),
                                                      static_cast<Eigen::Index>(bank.out_channels));
  return output;
}

void conv1d_backward_accumulate(const Tensor& input, const ConvFilterBank& bank, Padding padding,
                                const Tensor& upstream, std::span<double> weight_grad,
                                std::span<double> bias_grad, Tensor* input_grad) {
  check_conv_input(input, bank, padding);
  const std::size_t out_length = conv_output_length(input.length(), bank.taps, padding);
  require_rank2(upstream, "conv upstream gradient");
  if (upstream.length() != out_length || upstream.channels() != bank.out_channels) {
    throw ShapeError("conv upstream gradient shape " + upstream.shape_string() +
                     " does not match the forward output " + dims(out_length, bank.out_channels));
  }
  if (weight_grad.size() != bank.weight_count() || bias_grad.size() != bank.out_channels) {
    throw ShapeError("conv gradient buffers do not match the filter bank");
  }

  const auto taps = static_cast<Eigen::Index>(bank.taps);
  const auto cin = static_cast<Eigen::Index>(bank.in_channels);
  const auto cout = static_cast<Eigen::Index>(bank.out_channels);
  const auto lout = static_cast<Eigen::Index>(out_length);

  std::vector<double> storage;
  const double* x = padded_input(input, bank.taps, padding, storage);
  WindowMap windows(x, lout, taps * cin, Eigen::OuterStride<>(cin));
  ConstMatrixMap g(upstream.data(), lout, cout);

  MatrixMap dw(weight_grad.data(), taps * cin, cout);
  dw.noalias() += windows.transpose() * g;
  // Plain loop: Eigen's vectorized reductions peel by address alignment,
  // which would make the rounding depend on where buffers land.
  for (Eigen::Index t = 0; t < lout; ++t) {
    const double* row = upstream.data() + t * cout;
    for (Eigen::Index c = 0; c < cout; ++c) bias_grad[static_cast<std::size_t>(c)] += row[c];
  }

  if (input_grad == nullptr) return;

  // The input gradient is a full correlation of the upstream gradient with
  // the tap-reversed, transposed filters: one GEMM over a zero-padded view
  // of `g`, evaluated only at the unpadded input positions.
  const Eigen::Index length = static_cast<Eigen::Index>(input.length());
  const Eigen::Index left = static_cast<Eigen::Index>(pad_left(bank.taps, padding));
  std::vector<double> g_padded(static_cast<std::size_t>((lout + 2 * (taps - 1)) * cout), 0.0);
  std::copy(upstream.values().begin(), upstream.values().end(),
            g_padded.begin() + static_cast<std::ptrdiff_t>((taps - 1) * cout));
  RowMatrix flipped(taps * cout, cin);
  for (Eigen::Index k = 0; k < taps; ++k) {
    for (Eigen::Index ci = 0; ci < cin; ++ci) {
      for (Eigen::Index co = 0; co < cout; ++co) {
        flipped((taps - 1 - k) * cout + co, ci) = bank.weights[static_cast<std::size_t>((k * cin + ci) * cout + co)];
      }
    }
  }
  WindowMap g_windows(g_padded.data() + left * cout, length, taps * cout, Eigen::OuterStride<>(cout));
  *input_grad = Tensor({input.length(), bank.in_channels});
  MatrixMap dx(input_grad->data(), length, cin);
  dx.noalias() = g_windows * flipped;
}

ConvGradients conv1d_backward(const Tensor& input, const ConvFilterBank& bank, Padding padding,
                              const Tensor& upstream) {
  ConvGradients grads;
  grads.weights.assign(bank.weight_count(), 0.0);
  grads.bias.assign(bank.out_channels, 0.0);
  conv1d_backward_accumulate(input, bank, padding, upstream, grads.weights, grads.bias,
                             &grads.input);
  return grads;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  relu_inplace(out);
  return out;
}

void relu_inplace(Tensor& x) {
  for (double& v : x.values()) v = v > 0.0 ? v : 0.0;
}

Tensor relu_backward(const Tensor& input, const Tensor& upstream) {
  if (input.shape() != upstream.shape()) {
    throw ShapeError("relu upstream gradient shape " + upstream.shape_string() +
                     " does not match input " + input.shape_string());
  }
  Tensor grad = upstream;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(input[i] > 0.0)) grad[i] = 0.0;
  }
  return grad;
}

std::size_t pool_output_length(std::size_t length, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw ShapeError("pool window and stride must be positive");
  if (length < window) {
    throw ShapeError("segment too short for pooling chain: length " + std::to_string(length) +
                     " < window " + std::to_string(window));
  }
  return (length - window) / stride + 1;
}

Tensor pool1d_forward(const Tensor& input, std::size_t window, std::size_t stride, PoolMode mode) {
  require_rank2(input, "pool input");
  const std::size_t out_length = pool_output_length(input.length(), window, stride);
  const std::size_t channels = input.channels();
  Tensor out({out_length, channels});
  const double inv_window = 1.0 / static_cast<double>(window);
  for (std::size_t t = 0; t < out_length; ++t) {
    const std::size_t start = t * stride;
    for (std::size_t c = 0; c < channels; ++c) {
      if (mode == PoolMode::kMax) {
        double best = input.at(start, c);
        for (std::size_t i = 1; i < window; ++i) best = std::max(best, input.at(start + i, c));
        out.at(t, c) = best;
      } else {
        double sum = 0.0;
        for (std::size_t i = 0; i < window; ++i) sum += input.at(start + i, c);
        out.at(t, c) = sum * inv_window;
      }
    }
  }
  return out;
}

Tensor pool1d_backward(const Tensor& input, std::size_t window, std::size_t stride, PoolMode mode,
                       const Tensor& upstream) {
  require_rank2(input, "pool input");
  const std::size_t out_length = pool_output_length(input.length(), window, stride);
  const std::size_t channels = input.channels();
  if (upstream.rank() != 2 || upstream.length() != out_length || upstream.channels() != channels) {
    throw ShapeError("pool upstream gradient shape " + upstream.shape_string() +
                     " does not match the forward output " + dims(out_length, channels));
  }
  Tensor grad({input.length(), channels});
  const double inv_window = 1.0 / static_cast<double>(window);
  for (std::size_t t = 0; t < out_length; ++t) {
    const std::size_t start = t * stride;
    for (std::size_t c = 0; c < channels; ++c) {
      const double g = upstream.at(t, c);
      if (mode == PoolMode::kMax) {
        std::size_t arg = start;
        for (std::size_t i = 1; i < window; ++i) {
          if (input.at(start + i, c) > input.at(arg, c)) arg = start + i;
        }
        grad.at(arg, c) += g;
      } else {
        for (std::size_t i = 0; i < window; ++i) grad.at(start + i, c) += g * inv_window;
      }
    }
  }
  return grad;
}

BatchNormState BatchNormState::identity(std::size_t feature_maps) {
  BatchNormState s;
  s.scale.assign(feature_maps, 1.0);
  s.offset.assign(feature_maps, 0.0);
  s.running_mean.assign(feature_maps, 0.0);
  s.running_var.assign(feature_maps, 1.0);
  return s;
}

void BatchNormState::validate() const {
  const std::size_t n = scale.size();
  if (n == 0 || offset.size() != n || running_mean.size() != n || running_var.size() != n) {
    throw ShapeError("batchnorm scale/offset/running arrays must share one nonzero length");
  }
  if (!(epsilon > 0.0)) throw DataError("batchnorm epsilon must be positive");
  if (!(momentum > 0.0 && momentum <= 1.0)) throw DataError("batchnorm momentum must be in (0, 1]");
  for (double v : running_var) {
    if (v < 0.0) throw DataError("batchnorm running variance must be nonnegative");
  }
}

Tensor batchnorm_train(const Tensor& input, const BatchNormState& state, BatchNormCache& cache) {
  check_batchnorm_input(input, state);
  const std::size_t channels = state.feature_maps();
  const std::size_t rows = input.size() / channels;
  if (rows < 2) {
    throw ShapeError("batchnorm train mode needs at least 2 values per feature map, got " +
                     std::to_string(rows));
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  cache.mean.assign(channels, 0.0);
  cache.variance.assign(channels, 0.0);
  cache.inv_std.assign(channels, 0.0);

  const double* x = input.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) cache.mean[c] += x[r * channels + c];
  }
  for (double& m : cache.mean) m *= inv_rows;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double d = x[r * channels + c] - cache.mean[c];
      cache.variance[c] += d * d;
    }
  }
  for (std::size_t c = 0; c < channels; ++c) {
    cache.variance[c] *= inv_rows;
    cache.inv_std[c] = 1.0 / std::sqrt(cache.variance[c] + state.epsilon);
  }

  cache.normalized = Tensor(input.shape());
  Tensor out(input.shape());
  double* xhat = cache.normalized.data();
  double* y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      xhat[i] = (x[i] - cache.mean[c]) * cache.inv_std[c];
      y[i] = state.scale[c] * xhat[i] + state.offset[c];
    }
  }
  return out;
}

Tensor batchnorm_infer(const Tensor& input, const BatchNormState& state) {
  check_batchnorm_input(input, state);
  if (!state.has_running_stats) {
    throw DataError("batchnorm inference requested before any train-mode pass produced running statistics");
  }
  const std::size_t channels = state.feature_maps();
  std::vector<double> gain(channels), shift(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    gain[c] = state.scale[c] / std::sqrt(state.running_var[c] + state.epsilon);
    shift[c] = state.offset[c] - gain[c] * state.running_mean[c];
  }
  Tensor out(input.shape());
  const std::size_t rows = input.size() / channels;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      out[i] = gain[c] * input[i] + shift[c];
    }
  }
  return out;
}

void batchnorm_update_running(BatchNormState& state, const BatchNormCache& cache) {
  const std::size_t channels = state.feature_maps();
  if (cache.mean.size() != channels || cache.variance.size() != channels) {
    throw ShapeError("batchnorm cache does not match the state");
  }
  // The first train pass seeds the running statistics with its batch values.
  const double m = state.has_running_stats ? state.momentum : 1.0;
  for (std::size_t c = 0; c < channels; ++c) {
    state.running_mean[c] = (1.0 - m) * state.running_mean[c] + m * cache.mean[c];
    state.running_var[c] = (1.0 - m) * state.running_var[c] + m * cache.variance[c];
  }
  state.has_running_stats = true;
}

Tensor batchnorm_forward(const Tensor& input, BatchNormState& state, Mode mode,
                         BatchNormCache* cache) {
  if (mode == Mode::kInfer) return batchnorm_infer(input, state);
  BatchNormCache local;
  BatchNormCache& c = cache ? *cache : local;
  Tensor out = batchnorm_train(input, state, c);
  batchnorm_update_running(state, c);
  return out;
}

BatchNormGradients batchnorm_backward(const BatchNormState& state, const BatchNormCache& cache,
                                      const Tensor& upstream) {
  const std::size_t channels = state.feature_maps();
  if (upstream.shape() != cache.normalized.shape()) {
    throw ShapeError("batchnorm upstream gradient shape " + upstream.shape_string() +
                     " does not match the forward input " + cache.normalized.shape_string());
  }
  const std::size_t rows = upstream.size() / channels;
  const double n = static_cast<double>(rows);

  BatchNormGradients grads;
  grads.scale.assign(channels, 0.0);
  grads.offset.assign(channels, 0.0);
  std::vector<double> sum_dxhat(channels, 0.0), sum_dxhat_xhat(channels, 0.0);
  const double* g = upstream.data();
  const double* xhat = cache.normalized.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      grads.scale[c] += g[i] * xhat[i];
      grads.offset[c] += g[i];
      const double dxhat = g[i] * state.scale[c];
      sum_dxhat[c] += dxhat;
      sum_dxhat_xhat[c] += dxhat * xhat[i];
    }
  }
  grads.input = Tensor(upstream.shape());
  double* dx = grads.input.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      const double dxhat = g[i] * state.scale[c];
      dx[i] = cache.inv_std[c] / n * (n * dxhat - sum_dxhat[c] - xhat[i] * sum_dxhat_xhat[c]);
    }
  }
  return grads;
}

DenseWeights DenseWeights::zeros(std::size_t inputs, std::size_t outputs) {
  DenseWeights d;
  d.inputs = inputs;
  d.outputs = outputs;
  d.weights.assign(inputs * outputs, 0.0);
  d.bias.assign(outputs, 0.0);
  return d;
}

void DenseWeights::validate() const {
  if (inputs == 0 || outputs == 0) throw ShapeError("dense layer sizes must be positive");
  if (weights.size() != inputs * outputs || bias.size() != outputs) {
    throw ShapeError("dense layer expects " + dims(inputs, outputs) + " weights and " +
                     std::to_string(outputs) + " biases");
  }
}

Tensor fully_connected_forward(const Tensor& input, const DenseWeights& layer) {
  layer.validate();
  if (input.size() != layer.inputs) {
    throw ShapeError("dense input has " + std::to_string(input.size()) +
                     " values but the weight matrix has " + std::to_string(layer.inputs) + " rows");
  }
  Tensor out({1, layer.outputs});
  for (std::size_t o = 0; o < layer.outputs; ++o) out[o] = layer.bias[o];
  for (std::size_t i = 0; i < layer.inputs; ++i) {
    const double xi = input[i];
    const double* row = layer.weights.data() + i * layer.outputs;
    for (std::size_t o = 0; o < layer.outputs; ++o) out[o] += xi * row[o];
  }
  return out;
}

void fully_connected_backward_accumulate(const Tensor& input, const DenseWeights& layer,
                                         const Tensor& upstream, std::span<double> weight_grad,
                                         std::span<double> bias_grad, Tensor* input_grad) {
  layer.validate();
  if (input.size() != layer.inputs || upstream.size() != layer.outputs) {
    throw ShapeError("dense backward shapes do not match the layer " +
                     dims(layer.inputs, layer.outputs));
  }
  if (weight_grad.size() != layer.weights.size() || bias_grad.size() != layer.outputs) {
    throw ShapeError("dense gradient buffers do not match the layer");
  }
  for (std::size_t i = 0; i < layer.inputs; ++i) {
    for (std::size_t o = 0; o < layer.outputs; ++o) {
      weight_grad[i * layer.outputs + o] += input[i] * upstream[o];
    }
  }
  for (std::size_t o = 0; o < layer.outputs; ++o) bias_grad[o] += upstream[o];
  if (input_grad == nullptr) return;
  *input_grad = Tensor(input.shape());
  for (std::size_t i = 0; i < layer.inputs; ++i) {
    double sum = 0.0;
    for (std::size_t o = 0; o < layer.outputs; ++o) {
      sum += layer.weights[i * layer.outputs + o] * upstream[o];
    }
    (*input_grad)[i] = sum;
  }
}

DenseGradients fully_connected_backward(const Tensor& input, const DenseWeights& layer,
                                        const Tensor& upstream) {
  DenseGradients grads;
  grads.weights.assign(layer.weights.size(), 0.0);
  grads.bias.assign(layer.outputs, 0.0);
  fully_connected_backward_accumulate(input, layer, upstream, grads.weights, grads.bias,
                                      &grads.input);
  return grads;
}

Tensor global_average_forward(const Tensor& input) {
  require_rank2(input, "global average input");
  const std::size_t channels = input.channels();
  Tensor out({1, channels});
  for (std::size_t t = 0; t < input.length(); ++t) {
    for (std::size_t c = 0; c < channels; ++c) out[c] += input.at(t, c);
  }
  const double inv = 1.0 / static_cast<double>(input.length());
  for (std::size_t c = 0; c < channels; ++c) out[c] *= inv;
  return out;
}

Tensor global_average_backward(const Tensor& input, const Tensor& upstream) {
  require_rank2(input, "global average input");
  if (upstream.size() != input.channels()) {
    throw ShapeError("global average upstream gradient must have one value per channel");
  }
  Tensor grad(input.shape());
  const double inv = 1.0 / static_cast<double>(input.length());
  for (std::size_t t = 0; t < input.length(); ++t) {
    for (std::size_t c = 0; c < input.channels(); ++c) grad.at(t, c) = upstream[c] * inv;
  }
  return grad;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("softmax needs at least one logit");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - top);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

double cross_entropy(std::span<const double> probabilities, int grade) {
  if (grade < 1 || static_cast<std::size_t>(grade) > probabilities.size()) {
    throw DataError("grade " + std::to_string(grade) + " is outside 1.." +
                    std::to_string(probabilities.size()));
  }
  return -std::log(std::max(probabilities[static_cast<std::size_t>(grade - 1)], 1e-12));
}

std::vector<double> softmax_cross_entropy_gradient(std::span<const double> probabilities,
                                                   int grade) {
  if (grade < 1 || static_cast<std::size_t>(grade) > probabilities.size()) {
    throw DataError("grade " + std::to_string(grade) + " is outside 1.." +
                    std::to_string(probabilities.size()));
  }
  std::vector<double> g(probabilities.begin(), probabilities.end());
  g[static_cast<std::size_t>(grade - 1)] -= 1.0;
  return g;
}

}  // namespace hienet
