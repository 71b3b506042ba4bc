#include "npath/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace npath {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string layer_label(std::size_t i, const Layer& layer) {
  return "layer " + std::to_string(i) + " (" + layer_name(layer) + ")";
}

bool is_binary(const Tensor& t) {
  for (double v : t.data())
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

Tensor conv_forward(const ConvLayer& c, const LayerParams& p, const Tensor& in) {
  const int H = static_cast<int>(in.dim(1)), W = static_cast<int>(in.dim(2));
  const int Ho = (H + 2 * c.pad - c.kernel_h) / c.stride + 1;
  const int Wo = (W + 2 * c.pad - c.kernel_w) / c.stride + 1;
  Tensor out({static_cast<std::size_t>(c.out_channels), static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)});
  const double* w = p.weight.data().data();
  const double* x = in.data().data();
  double* y = out.data().data();
  for (int o = 0; o < c.out_channels; ++o) {
    double* yo = y + static_cast<std::size_t>(o) * Ho * Wo;
    std::fill(yo, yo + Ho * Wo, p.bias[o]);
    for (int ci = 0; ci < c.in_channels; ++ci) {
      const double* xc = x + static_cast<std::size_t>(ci) * H * W;
      const double* wk = w + (static_cast<std::size_t>(o) * c.in_channels + ci) * c.kernel_h * c.kernel_w;
      for (int ky = 0; ky < c.kernel_h; ++ky) {
        for (int kx = 0; kx < c.kernel_w; ++kx) {
          const double wv = wk[ky * c.kernel_w + kx];
          for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy * c.stride - c.pad + ky;
            if (iy < 0 || iy >= H) continue;
            const double* xrow = xc + static_cast<std::size_t>(iy) * W;
            double* yrow = yo + static_cast<std::size_t>(oy) * Wo;
            for (int ox = 0; ox < Wo; ++ox) {
              const int ix = ox * c.stride - c.pad + kx;
              if (ix < 0 || ix >= W) continue;
              yrow[ox] += wv * xrow[ix];
            }
          }
        }
      }
    }
  }
  return out;
}

// Gradient w.r.t. the conv input (when `grad_in` is non-null) and parameters (when `pg` is non-null).
void conv_backward(const ConvLayer& c, const LayerParams& p, const Tensor& in, const Tensor& grad_out,
                   Tensor* grad_in, LayerParams* pg) {
  const int H = static_cast<int>(in.dim(1)), W = static_cast<int>(in.dim(2));
  const int Ho = static_cast<int>(grad_out.dim(1)), Wo = static_cast<int>(grad_out.dim(2));
  const double* w = p.weight.data().data();
  const double* x = in.data().data();
  const double* g = grad_out.data().data();
  double* gx = grad_in ? grad_in->data().data() : nullptr;
  double* gw = pg ? pg->weight.data().data() : nullptr;
  for (int o = 0; o < c.out_channels; ++o) {
    const double* go = g + static_cast<std::size_t>(o) * Ho * Wo;
    if (pg) {
      double bsum = 0.0;
      for (int i = 0; i < Ho * Wo; ++i) bsum += go[i];
      pg->bias[o] += bsum;
    }
    for (int ci = 0; ci < c.in_channels; ++ci) {
      const std::size_t koff = (static_cast<std::size_t>(o) * c.in_channels + ci) * c.kernel_h * c.kernel_w;
      const double* xc = x + static_cast<std::size_t>(ci) * H * W;
      double* gxc = gx ? gx + static_cast<std::size_t>(ci) * H * W : nullptr;
      for (int ky = 0; ky < c.kernel_h; ++ky) {
        for (int kx = 0; kx < c.kernel_w; ++kx) {
          const double wv = w[koff + ky * c.kernel_w + kx];
          double wacc = 0.0;
          for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy * c.stride - c.pad + ky;
            if (iy < 0 || iy >= H) continue;
            const double* grow = go + static_cast<std::size_t>(oy) * Wo;
            for (int ox = 0; ox < Wo; ++ox) {
              const int ix = ox * c.stride - c.pad + kx;
              if (ix < 0 || ix >= W) continue;
              const std::size_t xi = static_cast<std::size_t>(iy) * W + ix;
              wacc += grow[ox] * xc[xi];
              if (gxc) gxc[xi] += grow[ox] * wv;
            }
          }
          if (gw) gw[koff + ky * c.kernel_w + kx] += wacc;
        }
      }
    }
  }
}

Tensor pool_forward(const MaxPoolLayer& m, const Tensor& in, std::vector<std::uint32_t>& argmax) {
  const int C = static_cast<int>(in.dim(0)), H = static_cast<int>(in.dim(1)), W = static_cast<int>(in.dim(2));
  const int Ho = (H - m.window) / m.stride + 1, Wo = (W - m.window) / m.stride + 1;
  Tensor out({static_cast<std::size_t>(C), static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)});
  argmax.assign(out.size(), 0);
  std::size_t o = 0;
  for (int c = 0; c < C; ++c) {
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        std::uint32_t best_i = 0;
        for (int ky = 0; ky < m.window; ++ky) {
          for (int kx = 0; kx < m.window; ++kx) {
            const std::size_t i = (static_cast<std::size_t>(c) * H + oy * m.stride + ky) * W + ox * m.stride + kx;
            if (in[i] > best) {
              best = in[i];
              best_i = static_cast<std::uint32_t>(i);
            }
          }
        }
        out[o] = best;
        argmax[o] = best_i;
      }
    }
  }
  return out;
}

Tensor fc_forward(const LayerParams& p, const Tensor& in) {
  const std::size_t out_dims = p.weight.dim(0), in_dims = p.weight.dim(1);
  Tensor out({out_dims});
  const double* w = p.weight.data().data();
  for (std::size_t o = 0; o < out_dims; ++o) {
    double s = p.bias[o];
    const double* row = w + o * in_dims;
    for (std::size_t i = 0; i < in_dims; ++i) s += row[i] * in[i];
    out[o] = s;
  }
  return out;
}

// Gate used at the m5/m6/m7 sites: either ReLU thresholding (captured mask) or an imposed mask.
Tensor apply_gate(const Tensor& pre, const Tensor* imposed, Tensor& mask_out) {
  Tensor out(pre.shape());
  mask_out = Tensor(pre.shape());
  for (std::size_t i = 0; i < pre.size(); ++i) {
    const bool open = imposed ? (*imposed)[i] != 0.0 : pre[i] > 0.0;
    mask_out[i] = open ? 1.0 : 0.0;
    out[i] = open ? pre[i] : 0.0;
  }
  return out;
}

Tensor broadcast_m5(const Tensor& mask, const Shape& pool5_shape) {
  if (mask.shape() == pool5_shape) return mask;
  const bool spatial = (mask.rank() == 3 && mask.dim(0) == 1 && mask.dim(1) == pool5_shape[1] &&
                        mask.dim(2) == pool5_shape[2]) ||
                       (mask.rank() == 2 && mask.dim(0) == pool5_shape[1] && mask.dim(1) == pool5_shape[2]);
  check(spatial, "m5 override shape " + shape_string(mask.shape()) + " does not match pool5 output " +
                     shape_string(pool5_shape));
  Tensor full(pool5_shape);
  const std::size_t plane = pool5_shape[1] * pool5_shape[2];
  for (std::size_t c = 0; c < pool5_shape[0]; ++c)
    for (std::size_t i = 0; i < plane; ++i) full[c * plane + i] = mask[i];
  return full;
}

ForwardTrace forward_impl(const NetworkWeights& weights, const NetworkSpec& spec, const Tensor& image,
                          const MaskSet* overrides, std::size_t stop_after, std::mt19937_64* dropout_rng) {
  const Topology topo = spec.topology();
  check(weights.layers.size() == spec.layers.size(), "weights do not match the network spec layer count");
  check(image.shape() == spec.input,
        "input image shape " + shape_string(image.shape()) + " does not match network input " + shape_string(spec.input));

  std::array<const Tensor*, 3> imposed{nullptr, nullptr, nullptr};
  Tensor m5_full;
  if (overrides) {
    for (int s = 0; s < 3; ++s) {
      if (!overrides->overridden[s]) continue;
      const Tensor& m = overrides->masks[s];
      check(!m.empty(), "override flagged for m" + std::to_string(s + 5) + " but no mask given");
      check(is_binary(m), "override mask m" + std::to_string(s + 5) + " must be binary");
      if (s == 0) {
        m5_full = broadcast_m5(m, topo.output_shapes[topo.pool5]);
        imposed[0] = &m5_full;
      } else {
        const std::size_t layer = topo.relu[s - 1];
        check(m.size() == shape_size(topo.output_shapes[layer]),
              "override mask m" + std::to_string(s + 5) + " has " + std::to_string(m.size()) + " entries, " +
                  layer_label(layer, spec.layers[layer]) + " has " +
                  std::to_string(shape_size(topo.output_shapes[layer])));
        imposed[s] = &m;
      }
    }
  }

  const std::size_t last = std::min(stop_after, spec.layers.size() - 1);
  ForwardTrace trace;
  trace.input = image;
  trace.activations.reserve(last + 1);
  trace.pool_argmax.resize(spec.layers.size());
  trace.dropout_masks.resize(spec.layers.size());

  for (std::size_t i = 0; i <= last; ++i) {
    const Tensor& in = i == 0 ? image : trace.activations[i - 1];
    const LayerParams& p = weights.layers[i];
    Tensor out = std::visit(
        overloaded{
            [&](const ConvLayer& c) { return conv_forward(c, p, in); },
            [&](const ReluLayer&) {
              for (int s = 1; s < 3; ++s) {
                if (i != topo.relu[s - 1]) continue;
                Tensor mask;
                Tensor o = apply_gate(in, imposed[s], mask);
                trace.masks.masks[s] = std::move(mask);
                trace.masks.overridden[s] = imposed[s] != nullptr;
                return o;
              }
              Tensor o(in.shape());
              for (std::size_t k = 0; k < in.size(); ++k) o[k] = in[k] > 0.0 ? in[k] : 0.0;
              return o;
            },
            [&](const MaxPoolLayer& m) {
              Tensor o = pool_forward(m, in, trace.pool_argmax[i]);
              if (i != topo.pool5) return o;
              Tensor mask;
              trace.pool5_pre_gate = o;
              Tensor gated = apply_gate(o, imposed[0], mask);
              trace.masks.masks[0] = std::move(mask);
              trace.masks.overridden[0] = imposed[0] != nullptr;
              return gated;
            },
            [&](const FcLayer&) { return fc_forward(p, in); },
            [&](const DropoutLayer& d) {
              if (!dropout_rng || d.rate == 0.0) return in;
              std::bernoulli_distribution keep(1.0 - d.rate);
              Tensor mask(in.shape());
              Tensor o(in.shape());
              const double scale = 1.0 / (1.0 - d.rate);
              for (std::size_t k = 0; k < in.size(); ++k) {
                mask[k] = keep(*dropout_rng) ? scale : 0.0;
                o[k] = in[k] * mask[k];
              }
              trace.dropout_masks[i] = std::move(mask);
              return o;
            },
        },
        spec.layers[i]);
    trace.activations.push_back(std::move(out));
  }
  if (last == spec.layers.size() - 1) trace.logits = trace.activations.back();
  return trace;
}

Tensor backward_impl(const ForwardTrace& trace, const NetworkWeights& weights, const NetworkSpec& spec,
                     const Tensor& output_gradient, std::size_t from_layer, NetworkWeights* grads,
                     bool need_input_grad) {
  const Topology topo = spec.topology();
  if (from_layer == kAllLayers) from_layer = spec.layers.size() - 1;
  check(from_layer < trace.computed_layers(),
        "backward from layer " + std::to_string(from_layer) + " but the trace stops at layer " +
            std::to_string(trace.computed_layers()) + " layers");
  check(weights.layers.size() == spec.layers.size(), "trace/weights inconsistency: layer count");
  check(output_gradient.size() == trace.activations[from_layer].size(),
        "output gradient has " + std::to_string(output_gradient.size()) + " entries, " +
            layer_label(from_layer, spec.layers[from_layer]) + " output has " +
            std::to_string(trace.activations[from_layer].size()));

  Tensor g = output_gradient.reshaped(trace.activations[from_layer].shape());
  for (std::size_t ii = from_layer + 1; ii-- > 0;) {
    const std::size_t i = ii;
    const Tensor& in = i == 0 ? trace.input : trace.activations[i - 1];
    const LayerParams& p = weights.layers[i];
    LayerParams* pg = grads ? &grads->layers[i] : nullptr;
    std::visit(overloaded{
                   [&](const ConvLayer& c) {
                     const bool want_input = i > 0 || need_input_grad;
                     Tensor gin = want_input ? Tensor(in.shape()) : Tensor();
                     conv_backward(c, p, in, g, want_input ? &gin : nullptr, pg);
                     g = std::move(gin);
                   },
                   [&](const ReluLayer&) {
                     for (int s = 1; s < 3; ++s) {
                       if (i != topo.relu[s - 1]) continue;
                       const Tensor& mask = trace.masks.masks[s];
                       for (std::size_t k = 0; k < g.size(); ++k)
                         if (mask[k] == 0.0) g[k] = 0.0;
                       return;
                     }
                     for (std::size_t k = 0; k < g.size(); ++k)
                       if (!(in[k] > 0.0)) g[k] = 0.0;
                   },
                   [&](const MaxPoolLayer&) {
                     if (i == topo.pool5) {
                       const Tensor& mask = trace.masks.masks[0];
                       for (std::size_t k = 0; k < g.size(); ++k)
                         if (mask[k] == 0.0) g[k] = 0.0;
                     }
                     Tensor gin(in.shape());
                     const auto& am = trace.pool_argmax[i];
                     for (std::size_t k = 0; k < g.size(); ++k) gin[am[k]] += g[k];
                     g = std::move(gin);
                   },
                   [&](const FcLayer& f) {
                     const std::size_t out_dims = static_cast<std::size_t>(f.out_dims);
                     const std::size_t in_dims = static_cast<std::size_t>(f.in_dims);
                     const double* w = p.weight.data().data();
                     if (pg) {
                       double* gw = pg->weight.data().data();
                       for (std::size_t o = 0; o < out_dims; ++o) {
                         if (g[o] == 0.0) continue;
                         pg->bias[o] += g[o];
                         for (std::size_t k = 0; k < in_dims; ++k) gw[o * in_dims + k] += g[o] * in[k];
                       }
                     }
                     Tensor gin(in.shape());
                     for (std::size_t o = 0; o < out_dims; ++o) {
                       const double go = g[o];
                       if (go == 0.0) continue;
                       const double* row = w + o * in_dims;
                       for (std::size_t k = 0; k < in_dims; ++k) gin[k] += go * row[k];
                     }
                     g = std::move(gin);
                   },
                   [&](const DropoutLayer&) {
                     const Tensor& mask = trace.dropout_masks[i];
                     if (mask.empty()) return;
                     for (std::size_t k = 0; k < g.size(); ++k) g[k] *= mask[k];
                   },
               },
               spec.layers[i]);
  }
  return g;
}

}  // namespace

std::string layer_name(const Layer& layer) {
  return std::visit(overloaded{
                        [](const ConvLayer&) { return std::string("conv"); },
                        [](const ReluLayer&) { return std::string("relu"); },
                        [](const MaxPoolLayer&) { return std::string("maxpool"); },
                        [](const FcLayer&) { return std::string("fc"); },
                        [](const DropoutLayer&) { return std::string("dropout"); },
                    },
                    layer);
}

std::vector<Shape> NetworkSpec::layer_shapes() const {
  check(input.size() == 3 && shape_size(input) > 0, "network input must be (C, H, W), got " + shape_string(input));
  check(!layers.empty(), "network has no layers");
  std::vector<Shape> shapes;
  Shape cur = input;
  std::vector<std::size_t> fcs;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string where = layer_label(i, layers[i]);
    const bool after_fc = !fcs.empty();
    std::visit(overloaded{
                   [&](const ConvLayer& c) {
                     check(!after_fc, where + ": convolution after a fully-connected layer");
                     check(cur.size() == 3, where + ": expects a (C, H, W) input");
                     check(c.kernel_h > 0 && c.kernel_w > 0 && c.stride > 0 && c.pad >= 0 && c.out_channels > 0,
                           where + ": invalid conv parameters");
                     check(static_cast<std::size_t>(c.in_channels) == cur[0],
                           where + ": in_channels " + std::to_string(c.in_channels) + " but input has " +
                               std::to_string(cur[0]) + " channels");
                     const long ho = (static_cast<long>(cur[1]) + 2 * c.pad - c.kernel_h) / c.stride + 1;
                     const long wo = (static_cast<long>(cur[2]) + 2 * c.pad - c.kernel_w) / c.stride + 1;
                     check(static_cast<long>(cur[1]) + 2 * c.pad >= c.kernel_h &&
                               static_cast<long>(cur[2]) + 2 * c.pad >= c.kernel_w && ho > 0 && wo > 0,
                           where + ": kernel larger than padded input " + shape_string(cur));
                     cur = {static_cast<std::size_t>(c.out_channels), static_cast<std::size_t>(ho),
                            static_cast<std::size_t>(wo)};
                   },
                   [&](const ReluLayer&) {},
                   [&](const MaxPoolLayer& m) {
                     check(!after_fc, where + ": pooling after a fully-connected layer");
                     check(cur.size() == 3, where + ": expects a (C, H, W) input");
                     check(m.window > 0 && m.stride > 0, where + ": invalid pool parameters");
                     check(cur[1] >= static_cast<std::size_t>(m.window) && cur[2] >= static_cast<std::size_t>(m.window),
                           where + ": window larger than input " + shape_string(cur));
                     cur = {cur[0], (cur[1] - m.window) / m.stride + 1, (cur[2] - m.window) / m.stride + 1};
                   },
                   [&](const FcLayer& f) {
                     check(f.in_dims > 0 && f.out_dims > 0, where + ": invalid fc dimensions");
                     check(shape_size(cur) == static_cast<std::size_t>(f.in_dims),
                           where + ": in_dims " + std::to_string(f.in_dims) + " but input " + shape_string(cur) +
                               " has " + std::to_string(shape_size(cur)) + " values");
                     fcs.push_back(i);
                     cur = {static_cast<std::size_t>(f.out_dims)};
                   },
                   [&](const DropoutLayer& d) {
                     check(d.rate >= 0.0 && d.rate < 1.0, where + ": dropout rate must be in [0, 1)");
                   },
               },
               layers[i]);
    shapes.push_back(cur);
  }
  return shapes;
}

Topology NetworkSpec::topology() const {
  check(class_count > 0, "class_count must be positive");
  Topology topo;
  topo.output_shapes = layer_shapes();
  std::vector<std::size_t> fcs;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (std::holds_alternative<FcLayer>(layers[i])) fcs.push_back(i);
  check(fcs.size() == 3, "network must end in exactly three fully-connected layers, found " +
                             std::to_string(fcs.size()));
  check(fcs[2] == layers.size() - 1, "the last layer must be fc8");
  check(fcs[0] > 0 && std::holds_alternative<MaxPoolLayer>(layers[fcs[0] - 1]),
        "the layer feeding fc6 must be a max-pool (pool5)");
  for (std::size_t k = 0; k < 2; ++k) {
    const std::size_t r = fcs[k] + 1;
    check(std::holds_alternative<ReluLayer>(layers[r]),
          "fc" + std::to_string(k + 6) + " must be followed by a ReLU");
    for (std::size_t j = r + 1; j < fcs[k + 1]; ++j)
      check(std::holds_alternative<DropoutLayer>(layers[j]),
            layer_label(j, layers[j]) + ": only dropout may sit between fc ReLUs and the next fc");
    topo.relu[k] = r;
  }
  for (std::size_t j = 0; j < fcs[0]; ++j)
    check(!std::holds_alternative<DropoutLayer>(layers[j]), layer_label(j, layers[j]) + ": dropout before fc6");
  check(topo.output_shapes.back()[0] == static_cast<std::size_t>(class_count),
        "fc8 output " + std::to_string(topo.output_shapes.back()[0]) + " does not match class_count " +
            std::to_string(class_count));
  topo.pool5 = fcs[0] - 1;
  topo.fc = {fcs[0], fcs[1], fcs[2]};
  return topo;
}

NetworkSpec toy_spec(int input_size, int class_count, int conv1_channels, int conv2_channels, int fc_dims) {
  NetworkSpec spec;
  spec.input = {3, static_cast<std::size_t>(input_size), static_cast<std::size_t>(input_size)};
  spec.class_count = class_count;
  const int s1 = input_size - 2;    // conv 3x3 valid
  const int p1 = (s1 - 2) / 2 + 1;  // pool 2/2
  const int s2 = p1 - 2;            // conv 3x3 valid
  const int p2 = (s2 - 2) / 2 + 1;  // pool 2/2
  spec.layers = {
      ConvLayer{3, 3, 1, 0, 3, conv1_channels},
      ReluLayer{},
      MaxPoolLayer{2, 2},
      ConvLayer{3, 3, 1, 0, conv1_channels, conv2_channels},
      ReluLayer{},
      MaxPoolLayer{2, 2},
      FcLayer{conv2_channels * p2 * p2, fc_dims},
      ReluLayer{},
      DropoutLayer{0.5},
      FcLayer{fc_dims, fc_dims},
      ReluLayer{},
      DropoutLayer{0.5},
      FcLayer{fc_dims, class_count},
  };
  return spec;
}

NetworkWeights init_weights(const NetworkSpec& spec, std::uint64_t seed) {
  const Topology topo = spec.topology();
  (void)topo;
  std::mt19937_64 rng(seed);
  NetworkWeights w;
  w.layers.resize(spec.layers.size());
  const std::size_t channels = spec.input[0];
  w.input_stats.mean.assign(channels, 0.0);
  w.input_stats.std.assign(channels, 1.0);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    auto fill_uniform = [&](Tensor& t, std::size_t fan_in) {
      std::uniform_real_distribution<double> u(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
      for (double& v : t.data()) v = u(rng);
    };
    if (const auto* c = std::get_if<ConvLayer>(&spec.layers[i])) {
      w.layers[i].weight = Tensor({static_cast<std::size_t>(c->out_channels), static_cast<std::size_t>(c->in_channels),
                                   static_cast<std::size_t>(c->kernel_h), static_cast<std::size_t>(c->kernel_w)});
      w.layers[i].bias = Tensor({static_cast<std::size_t>(c->out_channels)});
      fill_uniform(w.layers[i].weight, static_cast<std::size_t>(c->in_channels * c->kernel_h * c->kernel_w));
    } else if (const auto* f = std::get_if<FcLayer>(&spec.layers[i])) {
      w.layers[i].weight = Tensor({static_cast<std::size_t>(f->out_dims), static_cast<std::size_t>(f->in_dims)});
      w.layers[i].bias = Tensor({static_cast<std::size_t>(f->out_dims)});
      fill_uniform(w.layers[i].weight, static_cast<std::size_t>(f->in_dims));
    }
  }
  return w;
}

void validate_weights(const NetworkSpec& spec, const NetworkWeights& weights) {
  spec.topology();
  check(weights.layers.size() == spec.layers.size(), "weights have " + std::to_string(weights.layers.size()) +
                                                         " layers, spec has " + std::to_string(spec.layers.size()));
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerParams& p = weights.layers[i];
    const std::string where = layer_label(i, spec.layers[i]);
    Shape ws, bs;
    if (const auto* c = std::get_if<ConvLayer>(&spec.layers[i])) {
      ws = {static_cast<std::size_t>(c->out_channels), static_cast<std::size_t>(c->in_channels),
            static_cast<std::size_t>(c->kernel_h), static_cast<std::size_t>(c->kernel_w)};
      bs = {static_cast<std::size_t>(c->out_channels)};
    } else if (const auto* f = std::get_if<FcLayer>(&spec.layers[i])) {
      ws = {static_cast<std::size_t>(f->out_dims), static_cast<std::size_t>(f->in_dims)};
      bs = {static_cast<std::size_t>(f->out_dims)};
    }
    check(p.weight.shape() == ws, where + ": weight shape " + shape_string(p.weight.shape()) + ", expected " +
                                      shape_string(ws));
    check(p.bias.shape() == bs, where + ": bias shape " + shape_string(p.bias.shape()) + ", expected " +
                                    shape_string(bs));
  }
  check(weights.input_stats.mean.size() == spec.input[0] && weights.input_stats.std.size() == spec.input[0],
        "input statistics must have one entry per input channel");
}

MaskSet& MaskSet::impose(MaskSite site, Tensor mask) {
  check(is_binary(mask), "mask m" + std::to_string(index(site) + 5) + " must be binary");
  masks[index(site)] = std::move(mask);
  overridden[index(site)] = true;
  return *this;
}

const Tensor& ForwardTrace::layer_output(std::size_t layer) const {
  check(layer < activations.size(), "layer " + std::to_string(layer) + " was not computed");
  return activations[layer];
}

ForwardTrace forward(const NetworkWeights& weights, const NetworkSpec& spec, const Tensor& image,
                     const MaskSet* overrides, std::size_t stop_after) {
  return forward_impl(weights, spec, image, overrides, stop_after, nullptr);
}

ForwardTrace forward_train(const NetworkWeights& weights, const NetworkSpec& spec, const Tensor& image,
                           std::mt19937_64& rng) {
  return forward_impl(weights, spec, image, nullptr, kAllLayers, &rng);
}

Tensor backward_to_input(const ForwardTrace& trace, const NetworkWeights& weights, const NetworkSpec& spec,
                         const Tensor& output_gradient, std::size_t from_layer) {
  return backward_impl(trace, weights, spec, output_gradient, from_layer, nullptr, true);
}

void accumulate_param_gradients(const ForwardTrace& trace, const NetworkWeights& weights, const NetworkSpec& spec,
                                const Tensor& output_gradient, NetworkWeights& grads) {
  backward_impl(trace, weights, spec, output_gradient, kAllLayers, &grads, false);
}

NetworkWeights zeros_like(const NetworkWeights& weights) {
  NetworkWeights z;
  z.input_stats = weights.input_stats;
  z.layers.resize(weights.layers.size());
  for (std::size_t i = 0; i < weights.layers.size(); ++i) {
    if (!weights.layers[i].weight.empty()) z.layers[i].weight = Tensor(weights.layers[i].weight.shape());
    if (!weights.layers[i].bias.empty()) z.layers[i].bias = Tensor(weights.layers[i].bias.shape());
  }
  return z;
}

PixelRect receptive_field(const NetworkSpec& spec, std::size_t layer_index, int row, int col) {
  const std::vector<Shape> shapes = spec.layer_shapes();
  check(layer_index < spec.layers.size(), "receptive_field: no layer " + std::to_string(layer_index));
  for (std::size_t i = 0; i <= layer_index; ++i)
    check(!std::holds_alternative<FcLayer>(spec.layers[i]) && !std::holds_alternative<DropoutLayer>(spec.layers[i]),
          "receptive_field: layer " + std::to_string(layer_index) + " is past the last pool layer");
  const Shape& out = shapes[layer_index];
  check(row >= 0 && col >= 0 && static_cast<std::size_t>(row) < out[1] && static_cast<std::size_t>(col) < out[2],
        "receptive_field: position (" + std::to_string(row) + ", " + std::to_string(col) + ") outside layer grid " +
            shape_string(out));
  long r0 = row, r1 = row, c0 = col, c1 = col;
  for (std::size_t ii = layer_index + 1; ii-- > 0;) {
    if (const auto* c = std::get_if<ConvLayer>(&spec.layers[ii])) {
      r0 = r0 * c->stride - c->pad;
      r1 = r1 * c->stride - c->pad + c->kernel_h - 1;
      c0 = c0 * c->stride - c->pad;
      c1 = c1 * c->stride - c->pad + c->kernel_w - 1;
    } else if (const auto* m = std::get_if<MaxPoolLayer>(&spec.layers[ii])) {
      r0 = r0 * m->stride;
      r1 = r1 * m->stride + m->window - 1;
      c0 = c0 * m->stride;
      c1 = c1 * m->stride + m->window - 1;
    }
  }
  const long H = static_cast<long>(spec.input[1]), W = static_cast<long>(spec.input[2]);
  r0 = std::max(r0, 0L);
  c0 = std::max(c0, 0L);
  r1 = std::min(r1, H - 1);
  c1 = std::min(c1, W - 1);
  return {static_cast<int>(r0), static_cast<int>(c0), static_cast<int>(r1 - r0 + 1), static_cast<int>(c1 - c0 + 1)};
}

}  // namespace npath
