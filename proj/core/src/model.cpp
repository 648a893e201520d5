#include "hienet/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "hienet/errors.hpp"

namespace hienet {
namespace {

LayerSpec conv(std::size_t taps, std::size_t in, std::size_t out) {
  return {LayerKind::kConv, taps, 0, in, out, Padding::kSameZero};
}
LayerSpec relu() { return {LayerKind::kRelu}; }
LayerSpec max_pool(std::size_t window, std::size_t stride) {
  return {LayerKind::kMaxPool, window, stride};
}
LayerSpec avg_pool(std::size_t window, std::size_t stride) {
  return {LayerKind::kAvgPool, window, stride};
}
LayerSpec batch_norm(std::size_t maps) { return {LayerKind::kBatchNorm, 0, 0, maps, maps}; }
LayerSpec global_average() { return {LayerKind::kGlobalAverage}; }
LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::kDense, 0, 0, in, out}; }
LayerSpec softmax_layer() { return {LayerKind::kSoftmax}; }

std::string layer_error(std::size_t index, const LayerSpec& layer, const std::string& msg) {
  return "layer " + std::to_string(index + 1) + " (" + describe_layer(layer) + "): " + msg;
}

bool has_params(LayerKind kind) {
  return kind == LayerKind::kConv || kind == LayerKind::kBatchNorm || kind == LayerKind::kDense;
}

// Per-sample application of a layer that needs no batch context.
Tensor apply_layer(const LayerSpec& spec, const LayerParams& params, const Tensor& x) {
  switch (spec.kind) {
    case LayerKind::kConv:
      return conv1d_forward(x, std::get<ConvFilterBank>(params), spec.padding);
    case LayerKind::kRelu:
      return relu_forward(x);
    case LayerKind::kMaxPool:
      return pool1d_forward(x, spec.size, spec.stride, PoolMode::kMax);
    case LayerKind::kAvgPool:
      return pool1d_forward(x, spec.size, spec.stride, PoolMode::kAverage);
    case LayerKind::kGlobalAverage:
      return global_average_forward(x);
    case LayerKind::kDense:
      return fully_connected_forward(x, std::get<DenseWeights>(params));
    case LayerKind::kBatchNorm:
    case LayerKind::kSoftmax:
      break;
  }
  throw InvariantError("apply_layer called on a batch-coupled or output layer");
}

// Backward through one per-sample layer. Parameter gradients are added into
// grads[first], grads[first + 1]; the input gradient is returned when asked.
Tensor backprop_layer(const LayerSpec& spec, const LayerParams& params, const Tensor& input,
                      const Tensor& upstream, ModelGradients& grads, int first, bool need_input) {
  switch (spec.kind) {
    case LayerKind::kConv: {
      Tensor dx;
      conv1d_backward_accumulate(input, std::get<ConvFilterBank>(params), spec.padding, upstream,
                                 grads.tensors[first], grads.tensors[first + 1],
                                 need_input ? &dx : nullptr);
      return dx;
    }
    case LayerKind::kRelu:
      return relu_backward(input, upstream);
    case LayerKind::kMaxPool:
      return pool1d_backward(input, spec.size, spec.stride, PoolMode::kMax, upstream);
    case LayerKind::kAvgPool:
      return pool1d_backward(input, spec.size, spec.stride, PoolMode::kAverage, upstream);
    case LayerKind::kGlobalAverage:
      return global_average_backward(input, upstream);
    case LayerKind::kDense: {
      Tensor dx;
      fully_connected_backward_accumulate(input, std::get<DenseWeights>(params), upstream,
                                          grads.tensors[first], grads.tensors[first + 1],
                                          need_input ? &dx : nullptr);
      return dx;
    }
    case LayerKind::kBatchNorm:
    case LayerKind::kSoftmax:
      break;
  }
  throw InvariantError("backprop_layer called on a batch-coupled or output layer");
}

// Index of the first gradient tensor per layer, -1 for parameterless layers.
std::vector<int> gradient_offsets(const ModelSpec& spec) {
  std::vector<int> offsets(spec.layers.size(), -1);
  int next = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (has_params(spec.layers[i].kind)) {
      offsets[i] = next;
      next += 2;
    }
  }
  return offsets;
}

// Contiguous runs of per-sample layers separated by batch-norm layers. The
// last stage ends before the softmax.
struct Stage {
  std::size_t begin;
  std::size_t end;
  std::size_t norm;  // batch-norm layer that follows, or layers.size() for the last stage
};

std::vector<Stage> split_stages(const ModelSpec& spec) {
  std::vector<Stage> stages;
  std::size_t begin = 0;
  const std::size_t output = spec.layers.size() - 1;
  for (std::size_t i = 0; i < output; ++i) {
    if (spec.layers[i].kind == LayerKind::kBatchNorm) {
      stages.push_back({begin, i, i});
      begin = i + 1;
    }
  }
  stages.push_back({begin, output, spec.layers.size()});
  return stages;
}

Tensor run_stage(const ModelParams& params, const Stage& stage, Tensor x,
                 std::vector<Tensor>* inputs) {
  if (inputs) inputs->clear();
  for (std::size_t i = stage.begin; i < stage.end; ++i) {
    Tensor y = apply_layer(params.spec.layers[i], params.layers[i], x);
    if (inputs) {
      inputs->push_back(std::move(x));
    }
    x = std::move(y);
  }
  return x;
}

Tensor backprop_stage(const ModelParams& params, const Stage& stage,
                      const std::vector<Tensor>& inputs, Tensor grad, ModelGradients& grads,
                      const std::vector<int>& offsets, bool need_input) {
  for (std::size_t i = stage.end; i-- > stage.begin;) {
    const bool want = need_input || i > stage.begin;
    grad = backprop_layer(params.spec.layers[i], params.layers[i], inputs[i - stage.begin], grad,
                          grads, offsets[i], want);
  }
  return grad;
}

Tensor stack(const std::vector<Tensor>& samples) {
  const Tensor& first = samples.front();
  Tensor out({samples.size(), first.length(), first.channels()});
  std::size_t pos = 0;
  for (const Tensor& s : samples) {
    if (s.shape() != first.shape()) throw InvariantError("batch samples differ in shape");
    std::copy(s.values().begin(), s.values().end(), out.values().begin() + pos);
    pos += s.size();
  }
  return out;
}

std::vector<Tensor> unstack(const Tensor& batch) {
  const std::size_t n = batch.extent(0), length = batch.extent(1), channels = batch.extent(2);
  std::vector<Tensor> out;
  out.reserve(n);
  const std::size_t block = length * channels;
  for (std::size_t b = 0; b < n; ++b) {
    auto first = batch.values().begin() + static_cast<std::ptrdiff_t>(b * block);
    out.emplace_back(std::vector<std::size_t>{length, channels},
                     std::vector<double>(first, first + static_cast<std::ptrdiff_t>(block)));
  }
  return out;
}

Tensor segment_tensor(const ModelParams& params, std::span<const double> segment) {
  if (segment.size() != params.spec.segment_samples) {
    throw ShapeError("segment has " + std::to_string(segment.size()) +
                     " samples but the model expects " +
                     std::to_string(params.spec.segment_samples));
  }
  return Tensor::column(segment);
}

GradeProbabilities to_grades(const std::vector<double>& p) {
  if (p.size() != kNumGrades) throw InvariantError("network output is not a grade vector");
  GradeProbabilities g;
  std::copy(p.begin(), p.end(), g.begin());
  return g;
}

// Runs one sample through every layer, invoking `visit(index, output)` after
// each layer; returns logits.
template <typename Visit>
Tensor forward_sample(const ModelParams& params, std::span<const double> segment, Mode mode,
                      Visit&& visit) {
  Tensor x = segment_tensor(params, segment);
  const auto& layers = params.spec.layers;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::kBatchNorm) {
      const auto& state = std::get<BatchNormState>(params.layers[i]);
      if (mode == Mode::kInfer) {
        x = batchnorm_infer(x, state);
      } else {
        BatchNormCache cache;
        x = batchnorm_train(x, state, cache);
      }
    } else {
      x = apply_layer(layers[i], params.layers[i], x);
    }
    visit(i, x);
  }
  return x;
}

}  // namespace

std::string ActivationShape::to_string() const {
  return std::to_string(length) + "x1x" + std::to_string(channels);
}

std::vector<ActivationShape> ModelSpec::activation_shapes() const {
  if (layers.empty()) throw ShapeError("model has no layers");
  if (layers.back().kind != LayerKind::kSoftmax) throw ShapeError("last layer must be softmax");
  std::vector<ActivationShape> shapes;
  ActivationShape cur{segment_samples, 1};
  if (segment_samples == 0) throw ShapeError("segment length must be positive");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerKind::kConv:
        if (l.size == 0 || l.outputs == 0) throw ShapeError(layer_error(i, l, "empty filter bank"));
        if (l.inputs != cur.channels) {
          throw ShapeError(layer_error(i, l, "expects " + std::to_string(l.inputs) +
                                                 " input channels, previous layer gives " +
                                                 std::to_string(cur.channels)));
        }
        cur.length = conv_output_length(cur.length, l.size, l.padding);
        cur.channels = l.outputs;
        break;
      case LayerKind::kRelu:
        break;
      case LayerKind::kMaxPool:
      case LayerKind::kAvgPool:
        try {
          cur.length = pool_output_length(cur.length, l.size, l.stride);
        } catch (const ShapeError& e) {
          throw ShapeError(layer_error(i, l, e.what()));
        }
        break;
      case LayerKind::kBatchNorm:
        if (l.outputs != cur.channels) {
          throw ShapeError(layer_error(i, l, "feature map count does not match input channels"));
        }
        break;
      case LayerKind::kGlobalAverage:
        cur.length = 1;
        break;
      case LayerKind::kDense:
        if (cur.length != 1 || l.inputs != cur.channels) {
          throw ShapeError(layer_error(i, l, "expects a 1x1x" + std::to_string(l.inputs) +
                                                 " input, previous layer gives " +
                                                 cur.to_string()));
        }
        cur.channels = l.outputs;
        break;
      case LayerKind::kSoftmax:
        if (i + 1 != layers.size()) throw ShapeError(layer_error(i, l, "softmax must be last"));
        if (cur.length != 1 || cur.channels != static_cast<std::size_t>(kNumGrades)) {
          throw ShapeError(layer_error(i, l, "softmax input must be 1x1x4, got " + cur.to_string()));
        }
        break;
      default:
        throw ShapeError("layer " + std::to_string(i + 1) + " has an unknown kind");
    }
    shapes.push_back(cur);
  }
  return shapes;
}

ModelSpec build_hienet(std::size_t segment_samples) {
  if (segment_samples < kMinSegmentSamples) {
    throw ShapeError("segment of " + std::to_string(segment_samples) +
                     " samples is too short; the pooling chain needs at least " +
                     std::to_string(kMinSegmentSamples));
  }
  ModelSpec spec;
  spec.segment_samples = segment_samples;
  spec.layers = {
      conv(64, 1, 10),  relu(), max_pool(4, 4), batch_norm(10),
      conv(32, 10, 20), relu(), max_pool(4, 4),
      conv(16, 20, 20), relu(), max_pool(4, 4),
      conv(8, 20, 20),  relu(), avg_pool(4, 4), max_pool(5, 5),
      global_average(), dense(20, 20), dense(20, 4), softmax_layer(),
  };
  spec.validate();
  return spec;
}

std::string describe_layer(const LayerSpec& l) {
  const auto n = [](std::size_t v) { return std::to_string(v); };
  switch (l.kind) {
    case LayerKind::kConv:
      return "Conv (" + n(l.size) + ",1) x " + n(l.outputs);
    case LayerKind::kRelu:
      return "ReLu";
    case LayerKind::kMaxPool:
      return "MPool (" + n(l.size) + ",1), s: " + n(l.stride);
    case LayerKind::kAvgPool:
      return "APool (" + n(l.size) + ",1), s: " + n(l.stride);
    case LayerKind::kBatchNorm:
      return "BNorm";
    case LayerKind::kGlobalAverage:
      return "Global-Avg.";
    case LayerKind::kDense:
      return "FC, n: " + n(l.outputs);
    case LayerKind::kSoftmax:
      return "Softmax";
  }
  return "?";
}

void ModelParams::validate() const {
  spec.validate();
  if (layers.size() != spec.layers.size()) {
    throw ShapeError("model has " + std::to_string(layers.size()) + " parameter slots for " +
                     std::to_string(spec.layers.size()) + " layers");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const LayerParams& p = layers[i];
    switch (l.kind) {
      case LayerKind::kConv: {
        const auto* bank = std::get_if<ConvFilterBank>(&p);
        if (!bank || bank->taps != l.size || bank->in_channels != l.inputs ||
            bank->out_channels != l.outputs) {
          throw ShapeError(layer_error(i, l, "filter bank does not match the layer"));
        }
        bank->validate();
        break;
      }
      case LayerKind::kBatchNorm: {
        const auto* bn = std::get_if<BatchNormState>(&p);
        if (!bn || bn->feature_maps() != l.outputs) {
          throw ShapeError(layer_error(i, l, "batch-norm state does not match the layer"));
        }
        bn->validate();
        break;
      }
      case LayerKind::kDense: {
        const auto* d = std::get_if<DenseWeights>(&p);
        if (!d || d->inputs != l.inputs || d->outputs != l.outputs) {
          throw ShapeError(layer_error(i, l, "dense weights do not match the layer"));
        }
        d->validate();
        break;
      }
      default:
        if (!std::holds_alternative<std::monostate>(p)) {
          throw ShapeError(layer_error(i, l, "layer takes no parameters"));
        }
    }
  }
}

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelParams params;
  params.spec = spec;
  params.seed = seed;
  std::mt19937_64 rng(seed);
  const auto he_normal = [&rng](std::vector<double>& w, std::size_t fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (double& v : w) v = dist(rng);
  };
  for (const LayerSpec& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::kConv: {
        auto bank = ConvFilterBank::zeros(l.size, l.inputs, l.outputs);
        he_normal(bank.weights, l.size * l.inputs);
        params.layers.emplace_back(std::move(bank));
        break;
      }
      case LayerKind::kBatchNorm:
        params.layers.emplace_back(BatchNormState::identity(l.outputs));
        break;
      case LayerKind::kDense: {
        auto d = DenseWeights::zeros(l.inputs, l.outputs);
        he_normal(d.weights, l.inputs);
        params.layers.emplace_back(std::move(d));
        break;
      }
      default:
        params.layers.emplace_back(std::monostate{});
    }
  }
  return params;
}

ParameterCounts count_parameters(const ModelParams& params) {
  ParameterCounts counts;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const LayerParams& p = params.layers[i];
    LayerParameterCount c;
    c.layer = i + 1;
    c.name = describe_layer(params.spec.layers[i]);
    if (const auto* bank = std::get_if<ConvFilterBank>(&p)) {
      c.weights = bank->weights.size();
      c.biases = bank->bias.size();
    } else if (const auto* bn = std::get_if<BatchNormState>(&p)) {
      c.weights = bn->offset.size();
      c.biases = bn->scale.size();
    } else if (const auto* d = std::get_if<DenseWeights>(&p)) {
      c.weights = d->weights.size();
      c.biases = d->bias.size();
    } else {
      continue;
    }
    counts.total += c.weights + c.biases;
    counts.layers.push_back(std::move(c));
  }
  return counts;
}

GradeProbabilities forward(const ModelParams& params, std::span<const double> segment, Mode mode) {
  Tensor logits = forward_sample(params, segment, mode, [](std::size_t, const Tensor&) {});
  return to_grades(softmax(logits.values()));
}

std::vector<GradeProbabilities> predict(const ModelParams& params,
                                        std::span<const std::span<const double>> segments) {
  std::vector<GradeProbabilities> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back(forward(params, s, Mode::kInfer));
  return out;
}

std::vector<ActivationShape> trace_activation_shapes(const ModelParams& params,
                                                     std::span<const double> segment, Mode mode) {
  std::vector<ActivationShape> shapes;
  Tensor logits = forward_sample(params, segment, mode, [&](std::size_t, const Tensor& y) {
    shapes.push_back({y.length(), y.channels()});
  });
  shapes.push_back({logits.length(), logits.channels()});  // softmax keeps the shape
  return shapes;
}

std::vector<std::span<double>> trainable_tensors(ModelParams& params) {
  std::vector<std::span<double>> out;
  for (LayerParams& p : params.layers) {
    if (auto* bank = std::get_if<ConvFilterBank>(&p)) {
      out.emplace_back(bank->weights);
      out.emplace_back(bank->bias);
    } else if (auto* bn = std::get_if<BatchNormState>(&p)) {
      out.emplace_back(bn->scale);
      out.emplace_back(bn->offset);
    } else if (auto* d = std::get_if<DenseWeights>(&p)) {
      out.emplace_back(d->weights);
      out.emplace_back(d->bias);
    }
  }
  return out;
}

ModelGradients zero_gradients(const ModelParams& params) {
  ModelGradients g;
  for (const LayerParams& p : params.layers) {
    if (const auto* bank = std::get_if<ConvFilterBank>(&p)) {
      g.tensors.emplace_back(bank->weights.size(), 0.0);
      g.tensors.emplace_back(bank->bias.size(), 0.0);
    } else if (const auto* bn = std::get_if<BatchNormState>(&p)) {
      g.tensors.emplace_back(bn->scale.size(), 0.0);
      g.tensors.emplace_back(bn->offset.size(), 0.0);
    } else if (const auto* d = std::get_if<DenseWeights>(&p)) {
      g.tensors.emplace_back(d->weights.size(), 0.0);
      g.tensors.emplace_back(d->bias.size(), 0.0);
    }
  }
  return g;
}

BatchOutcome loss_and_gradients(const ModelParams& params,
                                std::span<const std::span<const double>> batch,
                                std::span<const int> grades) {
  if (batch.empty()) throw DataError("mini-batch is empty");
  if (batch.size() != grades.size()) {
    throw ShapeError("mini-batch has " + std::to_string(batch.size()) + " segments but " +
                     std::to_string(grades.size()) + " labels");
  }
  for (int g : grades) require_grade(g, "label");

  const std::vector<Stage> stages = split_stages(params.spec);
  const std::vector<int> offsets = gradient_offsets(params.spec);
  const std::size_t n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  BatchOutcome out;
  out.gradients = zero_gradients(params);

  // Inputs of every stage after the first; the first stage reads the raw
  // segments and is recomputed during the backward pass.
  std::vector<std::vector<Tensor>> stage_inputs(stages.size());
  std::vector<BatchNormCache> caches(stages.size() - 1);
  for (std::size_t s = 0; s + 1 < stages.size(); ++s) {
    std::vector<Tensor> outputs;
    outputs.reserve(n);
    for (std::size_t b = 0; b < n; ++b) {
      Tensor x = s == 0 ? segment_tensor(params, batch[b]) : stage_inputs[s][b];
      outputs.push_back(run_stage(params, stages[s], std::move(x), nullptr));
    }
    const auto& state = std::get<BatchNormState>(params.layers[stages[s].norm]);
    stage_inputs[s + 1] = unstack(batchnorm_train(stack(outputs), state, caches[s]));
  }

  // Last stage: forward, loss and backward one sample at a time.
  const Stage& last = stages.back();
  std::vector<Tensor> upstream(n);
  std::vector<Tensor> inputs;
  out.probabilities.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    Tensor x = stages.size() == 1 ? segment_tensor(params, batch[b])
                                  : std::move(stage_inputs.back()[b]);
    Tensor logits = run_stage(params, last, std::move(x), &inputs);
    std::vector<double> p = softmax(logits.values());
    out.mean_loss += cross_entropy(p, grades[b]) * inv_n;
    const GradeProbabilities probs = to_grades(p);
    if (argmax_grade(probs) == grades[b]) ++out.correct;
    out.probabilities.push_back(probs);

    std::vector<double> dz = softmax_cross_entropy_gradient(p, grades[b]);
    for (double& v : dz) v *= inv_n;
    const std::size_t classes = dz.size();
    Tensor grad({1, classes}, std::move(dz));
    upstream[b] = backprop_stage(params, last, inputs, std::move(grad), out.gradients, offsets,
                                 stages.size() > 1);
  }

  for (std::size_t s = stages.size() - 1; s-- > 0;) {
    const std::size_t norm = stages[s].norm;
    const auto& state = std::get<BatchNormState>(params.layers[norm]);
    BatchNormGradients bn = batchnorm_backward(state, caches[s], stack(upstream));
    auto& g_scale = out.gradients.tensors[offsets[norm]];
    auto& g_offset = out.gradients.tensors[offsets[norm] + 1];
    for (std::size_t c = 0; c < g_scale.size(); ++c) {
      g_scale[c] += bn.scale[c];
      g_offset[c] += bn.offset[c];
    }
    std::vector<Tensor> grads = unstack(bn.input);
    for (std::size_t b = 0; b < n; ++b) {
      Tensor x = s == 0 ? segment_tensor(params, batch[b]) : stage_inputs[s][b];
      run_stage(params, stages[s], std::move(x), &inputs);
      upstream[b] = backprop_stage(params, stages[s], inputs, std::move(grads[b]), out.gradients,
                                   offsets, s > 0);
    }
    caches[s].normalized = Tensor();
    out.batchnorm_statistics.insert(out.batchnorm_statistics.begin(), std::move(caches[s]));
  }
  return out;
}

double batch_loss(const ModelParams& params, std::span<const std::span<const double>> batch,
                  std::span<const int> grades) {
  if (batch.empty() || batch.size() != grades.size()) {
    throw ShapeError("batch and labels must be nonempty and equally long");
  }
  const std::vector<Stage> stages = split_stages(params.spec);
  std::vector<Tensor> xs;
  for (const auto& seg : batch) xs.push_back(segment_tensor(params, seg));
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (Tensor& x : xs) x = run_stage(params, stages[s], std::move(x), nullptr);
    if (s + 1 < stages.size()) {
      BatchNormCache cache;
      const auto& state = std::get<BatchNormState>(params.layers[stages[s].norm]);
      xs = unstack(batchnorm_train(stack(xs), state, cache));
    }
  }
  double loss = 0.0;
  for (std::size_t b = 0; b < xs.size(); ++b) {
    loss += cross_entropy(softmax(xs[b].values()), grades[b]);
  }
  return loss / static_cast<double>(xs.size());
}

void apply_batchnorm_statistics(ModelParams& params, const BatchOutcome& outcome) {
  std::size_t k = 0;
  for (std::size_t i = 0; i < params.spec.layers.size(); ++i) {
    if (params.spec.layers[i].kind != LayerKind::kBatchNorm) continue;
    if (k >= outcome.batchnorm_statistics.size()) {
      throw InvariantError("batch outcome carries fewer batch-norm statistics than the model has layers");
    }
    batchnorm_update_running(std::get<BatchNormState>(params.layers[i]),
                             outcome.batchnorm_statistics[k++]);
  }
}

}  // namespace hienet
