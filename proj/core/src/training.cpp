#include "npath/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "npath/binary_io.hpp"
#include "npath/inversion.hpp"

namespace npath {
namespace {

enum class LayerTag : std::uint8_t { conv = 1, relu = 2, maxpool = 3, fc = 4, dropout = 5 };
constexpr std::uint8_t kLittleEndianTag = 1;

void write_spec(ByteWriter& w, const NetworkSpec& spec) {
  for (auto d : spec.input) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(spec.class_count));
  w.u32(static_cast<std::uint32_t>(spec.layers.size()));
  for (const Layer& layer : spec.layers) {
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      w.u8(static_cast<std::uint8_t>(LayerTag::conv));
      for (int v : {c->kernel_h, c->kernel_w, c->stride, c->pad, c->in_channels, c->out_channels})
        w.u32(static_cast<std::uint32_t>(v));
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      w.u8(static_cast<std::uint8_t>(LayerTag::relu));
    } else if (const auto* m = std::get_if<MaxPoolLayer>(&layer)) {
      w.u8(static_cast<std::uint8_t>(LayerTag::maxpool));
      w.u32(static_cast<std::uint32_t>(m->window));
      w.u32(static_cast<std::uint32_t>(m->stride));
    } else if (const auto* f = std::get_if<FcLayer>(&layer)) {
      w.u8(static_cast<std::uint8_t>(LayerTag::fc));
      w.u32(static_cast<std::uint32_t>(f->in_dims));
      w.u32(static_cast<std::uint32_t>(f->out_dims));
    } else if (const auto* d = std::get_if<DropoutLayer>(&layer)) {
      w.u8(static_cast<std::uint8_t>(LayerTag::dropout));
      w.f64(d->rate);
    }
  }
}

int read_int(ByteReader& r) {
  const std::uint32_t v = r.u32();
  check(v < (1u << 30), r.origin() + ": implausible layer parameter " + std::to_string(v));
  return static_cast<int>(v);
}

NetworkSpec read_spec(ByteReader& r) {
  NetworkSpec spec;
  spec.input = {r.u32(), r.u32(), r.u32()};
  spec.class_count = read_int(r);
  const std::uint32_t n = r.u32();
  check(n > 0 && n < 4096, r.origin() + ": implausible layer count " + std::to_string(n));
  for (std::uint32_t i = 0; i < n; ++i) {
    switch (static_cast<LayerTag>(r.u8())) {
      case LayerTag::conv: {
        ConvLayer c;
        c.kernel_h = read_int(r);
        c.kernel_w = read_int(r);
        c.stride = read_int(r);
        c.pad = read_int(r);
        c.in_channels = read_int(r);
        c.out_channels = read_int(r);
        spec.layers.emplace_back(c);
        break;
      }
      case LayerTag::relu:
        spec.layers.emplace_back(ReluLayer{});
        break;
      case LayerTag::maxpool: {
        MaxPoolLayer m;
        m.window = read_int(r);
        m.stride = read_int(r);
        spec.layers.emplace_back(m);
        break;
      }
      case LayerTag::fc: {
        FcLayer f;
        f.in_dims = read_int(r);
        f.out_dims = read_int(r);
        spec.layers.emplace_back(f);
        break;
      }
      case LayerTag::dropout:
        spec.layers.emplace_back(DropoutLayer{r.f64()});
        break;
      default:
        fail(r.origin() + ": unknown layer tag in layer " + std::to_string(i));
    }
  }
  return spec;
}

// Softmax cross-entropy gradient w.r.t. logits.
Tensor xent_gradient(const Tensor& logits, int label, double& loss) {
  double mx = logits[0];
  for (double v : logits.data()) mx = std::max(mx, v);
  double z = 0.0;
  Tensor g(logits.shape());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    g[k] = std::exp(logits[k] - mx);
    z += g[k];
  }
  for (std::size_t k = 0; k < logits.size(); ++k) g[k] /= z;
  loss = -std::log(std::max(g[static_cast<std::size_t>(label)], 1e-300));
  g[static_cast<std::size_t>(label)] -= 1.0;
  return g;
}

}  // namespace

NetworkWeights initial_weights(const NetworkSpec& spec, const Dataset& data, const TrainParams& params) {
  check(!data.empty(), "train_toy: empty dataset");
  NetworkWeights w = init_weights(spec, params.seed);
  w.input_stats = dataset_stats(data.images());
  check(w.input_stats.mean.size() == spec.input[0], "dataset channel count does not match the network input");
  return w;
}

NetworkWeights train_toy(const NetworkSpec& spec, const Dataset& data, const TrainParams& params) {
  check(!data.empty(), "train_toy: empty dataset");
  check(params.learning_rate > 0.0, "train_toy: learning rate must be positive");
  check(params.epochs >= 0 && params.batch_size > 0, "train_toy: epochs must be >= 0 and batch_size > 0");
  for (const auto& it : data.items)
    check(it.label >= 0 && it.label < spec.class_count,
          "train_toy: label " + std::to_string(it.label) + " out of range for " + std::to_string(spec.class_count) +
              " classes");
  NetworkWeights w = initial_weights(spec, data, params);
  if (params.epochs == 0) return w;

  std::vector<Tensor> inputs;
  inputs.reserve(data.size());
  for (const auto& it : data.items) inputs.push_back(whiten(it.image, w.input_stats));

  std::mt19937_64 rng(params.seed ^ 0x9e3779b97f4a7c15ULL);
  NetworkWeights velocity = zeros_like(w);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(params.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(params.batch_size));
      NetworkWeights grads = zeros_like(w);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        ForwardTrace trace = forward_train(w, spec, inputs[idx], rng);
        double loss = 0.0;
        Tensor g = xent_gradient(trace.logits, data.items[idx].label, loss);
        accumulate_param_gradients(trace, w, spec, g, grads);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t l = 0; l < w.layers.size(); ++l) {
        auto step = [&](Tensor& param, Tensor& grad, Tensor& vel, double decay) {
          for (std::size_t k = 0; k < param.size(); ++k) {
            const double gk = grad[k] * scale + decay * param[k];
            vel[k] = params.momentum * vel[k] - params.learning_rate * gk;
            param[k] += vel[k];
          }
        };
        if (w.layers[l].weight.empty()) continue;
        step(w.layers[l].weight, grads.layers[l].weight, velocity.layers[l].weight, params.weight_decay);
        step(w.layers[l].bias, grads.layers[l].bias, velocity.layers[l].bias, 0.0);
      }
    }
  }
  for (const auto& layer : w.layers)
    if (!layer.weight.all_finite() || !layer.bias.all_finite())
      throw DivergenceError("train_toy: weights became non-finite; lower the learning rate");
  return w;
}

int predict(const NetworkSpec& spec, const NetworkWeights& weights, const Tensor& raw_image) {
  const ForwardTrace t = forward(weights, spec, whiten(raw_image, weights.input_stats));
  const auto& l = t.logits.values();
  return static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
}

double accuracy(const NetworkSpec& spec, const NetworkWeights& weights, const Dataset& data) {
  check(!data.empty(), "accuracy: empty dataset");
  std::size_t correct = 0;
  for (const auto& it : data.items)
    if (predict(spec, weights, it.image) == it.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<std::uint8_t> encode_weights(const NetworkSpec& spec, const NetworkWeights& weights) {
  validate_weights(spec, weights);
  ByteWriter w;
  w.magic("NPSW");
  w.u16(kWeightsVersion);
  w.u8(kLittleEndianTag);
  write_spec(w, spec);
  w.u32(static_cast<std::uint32_t>(weights.input_stats.mean.size()));
  w.f64s(weights.input_stats.mean);
  w.f64s(weights.input_stats.std);
  for (const auto& layer : weights.layers) {
    if (layer.weight.empty()) continue;
    w.tensor(layer.weight);
    w.tensor(layer.bias);
  }
  return w.bytes();
}

LoadedNetwork decode_weights(std::vector<std::uint8_t> bytes, const std::string& origin) {
  ByteReader r(std::move(bytes), origin);
  r.expect_magic("NPSW");
  const std::uint16_t version = r.u16();
  check(version == kWeightsVersion, origin + ": unsupported weight file version " + std::to_string(version) +
                                        " (expected " + std::to_string(kWeightsVersion) + ")");
  check(r.u8() == kLittleEndianTag, origin + ": unsupported endianness tag");
  LoadedNetwork net;
  net.spec = read_spec(r);
  net.spec.topology();
  const std::uint32_t channels = r.u32();
  check(channels == net.spec.input[0], origin + ": input statistics channel count mismatch");
  net.weights.input_stats.mean.resize(channels);
  net.weights.input_stats.std.resize(channels);
  r.f64s(net.weights.input_stats.mean);
  r.f64s(net.weights.input_stats.std);
  NetworkWeights expected = init_weights(net.spec, 0);
  net.weights.layers.resize(net.spec.layers.size());
  for (std::size_t i = 0; i < net.spec.layers.size(); ++i) {
    if (expected.layers[i].weight.empty()) continue;
    net.weights.layers[i].weight = r.tensor();
    net.weights.layers[i].bias = r.tensor();
  }
  r.expect_end();
  try {
    validate_weights(net.spec, net.weights);
  } catch (const ValidationError& e) {
    fail(origin + ": parameter shape mismatch against embedded spec: " + e.what());
  }
  return net;
}

void save_weights(const std::filesystem::path& path, const NetworkSpec& spec, const NetworkWeights& weights) {
  write_file(path, encode_weights(spec, weights));
}

LoadedNetwork load_weights(const std::filesystem::path& path) {
  return decode_weights(read_file(path), path.string());
}

}  // namespace npath
