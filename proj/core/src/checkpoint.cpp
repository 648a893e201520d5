#include "hienet/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "binary_io.hpp"
#include "hienet/errors.hpp"

namespace hienet {
namespace {

constexpr char kMagic[] = "HIEN";

void put_layer_spec(detail::ByteWriter& w, const LayerSpec& l) {
  w.put(static_cast<std::uint8_t>(l.kind));
  w.put(static_cast<std::uint8_t>(l.padding == Padding::kValid ? 1 : 0));
  w.put(static_cast<std::uint64_t>(l.size));
  w.put(static_cast<std::uint64_t>(l.stride));
  w.put(static_cast<std::uint64_t>(l.inputs));
  w.put(static_cast<std::uint64_t>(l.outputs));
}

LayerSpec get_layer_spec(detail::ByteReader& r) {
  LayerSpec l;
  const auto kind = r.get<std::uint8_t>("layer kind");
  if (kind < 1 || kind > 8) throw DataError("checkpoint: unknown layer kind " + std::to_string(kind));
  l.kind = static_cast<LayerKind>(kind);
  const auto padding = r.get<std::uint8_t>("layer padding");
  if (padding > 1) throw DataError("checkpoint: unknown padding mode " + std::to_string(padding));
  l.padding = padding == 1 ? Padding::kValid : Padding::kSameZero;
  l.size = r.get<std::uint64_t>("layer size");
  l.stride = r.get<std::uint64_t>("layer stride");
  l.inputs = r.get<std::uint64_t>("layer inputs");
  l.outputs = r.get<std::uint64_t>("layer outputs");
  return l;
}

}  // namespace

std::vector<char> encode_checkpoint(const ModelParams& params) {
  params.validate();
  detail::ByteWriter w;
  w.put_bytes(kMagic);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint64_t>(params.spec.segment_samples));
  w.put(static_cast<std::uint32_t>(params.spec.layers.size()));
  for (const LayerSpec& l : params.spec.layers) put_layer_spec(w, l);
  w.put(params.seed);
  w.put(params.epochs);
  for (const LayerParams& p : params.layers) {
    if (const auto* bank = std::get_if<ConvFilterBank>(&p)) {
      w.put_doubles(bank->weights);
      w.put_doubles(bank->bias);
    } else if (const auto* bn = std::get_if<BatchNormState>(&p)) {
      w.put_doubles(bn->scale);
      w.put_doubles(bn->offset);
      w.put_doubles(bn->running_mean);
      w.put_doubles(bn->running_var);
      w.put(bn->epsilon);
      w.put(bn->momentum);
      w.put(static_cast<std::uint8_t>(bn->has_running_stats ? 1 : 0));
    } else if (const auto* d = std::get_if<DenseWeights>(&p)) {
      w.put_doubles(d->weights);
      w.put_doubles(d->bias);
    }
  }
  return w.bytes();
}

ModelParams decode_checkpoint(const std::vector<char>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size(), "checkpoint");
  const std::string magic = r.get_bytes(4, "magic");
  if (magic != kMagic) throw DataError("checkpoint: bad magic, expected \"HIEN\"");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported format version " + std::to_string(version) +
                    ", expected " + std::to_string(kCheckpointVersion));
  }

  ModelParams params;
  params.spec.segment_samples = r.get<std::uint64_t>("segment length");
  const auto layer_count = r.get<std::uint32_t>("layer count");
  if (layer_count > 4096) throw DataError("checkpoint: implausible layer count");
  for (std::uint32_t i = 0; i < layer_count; ++i) params.spec.layers.push_back(get_layer_spec(r));
  try {
    params.spec.validate();
  } catch (const ShapeError& e) {
    throw DataError(std::string("checkpoint: invalid model spec: ") + e.what());
  }
  params.seed = r.get<std::uint64_t>("seed");
  params.epochs = r.get<std::uint32_t>("epochs");

  for (const LayerSpec& l : params.spec.layers) {
    switch (l.kind) {
      case LayerKind::kConv: {
        ConvFilterBank bank = ConvFilterBank::zeros(l.size, l.inputs, l.outputs);
        bank.weights = r.get_doubles("conv weights", bank.weight_count());
        bank.bias = r.get_doubles("conv bias", l.outputs);
        params.layers.emplace_back(std::move(bank));
        break;
      }
      case LayerKind::kBatchNorm: {
        BatchNormState bn;
        bn.scale = r.get_doubles("batch-norm scale", l.outputs);
        bn.offset = r.get_doubles("batch-norm offset", l.outputs);
        bn.running_mean = r.get_doubles("batch-norm running mean", l.outputs);
        bn.running_var = r.get_doubles("batch-norm running variance", l.outputs);
        bn.epsilon = r.get<double>("batch-norm epsilon");
        bn.momentum = r.get<double>("batch-norm momentum");
        bn.has_running_stats = r.get<std::uint8_t>("batch-norm flag") != 0;
        params.layers.emplace_back(std::move(bn));
        break;
      }
      case LayerKind::kDense: {
        DenseWeights d = DenseWeights::zeros(l.inputs, l.outputs);
        d.weights = r.get_doubles("dense weights", l.inputs * l.outputs);
        d.bias = r.get_doubles("dense bias", l.outputs);
        params.layers.emplace_back(std::move(d));
        break;
      }
      default:
        params.layers.emplace_back(std::monostate{});
    }
  }
  r.expect_end();
  try {
    params.validate();
  } catch (const Error& e) {
    throw DataError(std::string("checkpoint: invalid parameters: ") + e.what());
  }
  return params;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  const std::vector<char> bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace hienet
