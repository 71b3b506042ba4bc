#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <variant>
#include <vector>

#include "npath/tensor.hpp"

namespace npath {

struct ConvLayer {
  int kernel_h = 3;
  int kernel_w = 3;
  int stride = 1;
  int pad = 0;
  int in_channels = 1;
  int out_channels = 1;
};
struct ReluLayer {};
struct MaxPoolLayer {
  int window = 2;
  int stride = 2;
};
struct FcLayer {
  int in_dims = 1;
  int out_dims = 1;
};
/// Active only during training; identity at inference.
struct DropoutLayer {
  double rate = 0.5;
};

using Layer = std::variant<ConvLayer, ReluLayer, MaxPoolLayer, FcLayer, DropoutLayer>;

std::string layer_name(const Layer& layer);

/// Indices of the structural landmarks every analysed network must have: the last pool (the m5
/// gate sits on its output), the three fully-connected layers and the two ReLUs after fc6/fc7.
struct Topology {
  std::vector<Shape> output_shapes;  // one per layer
  std::size_t pool5 = 0;
  std::array<std::size_t, 3> fc{};    // fc6, fc7, fc8
  std::array<std::size_t, 2> relu{};  // after fc6, after fc7
};

struct NetworkSpec {
  Shape input;  // (C, H, W)
  std::vector<Layer> layers;
  int class_count = 2;

  /// Output shape of every layer. Throws ValidationError naming the first inconsistent layer.
  std::vector<Shape> layer_shapes() const;
  /// Validates the layer chain and returns its landmarks. Throws ValidationError naming the
  /// first inconsistent layer.
  Topology topology() const;
};

/// conv3-relu-pool2, conv3-relu-pool2, fc6-relu-dropout, fc7-relu-dropout, fc8. A 32x32 input
/// gives a 6x6 pool5 grid with a 10x10 receptive field per unit at stride 4.
NetworkSpec toy_spec(int input_size = 32, int class_count = 4, int conv1_channels = 8,
                     int conv2_channels = 16, int fc_dims = 64);

/// Per-channel statistics used to whiten network inputs.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
};

struct LayerParams {
  Tensor weight;  // conv: (out, in, kh, kw); fc: (out, in)
  Tensor bias;    // (out)
};

struct NetworkWeights {
  std::vector<LayerParams> layers;  // empty params for parameter-free layers
  ChannelStats input_stats;         // whitening the network was trained under
};

/// He-uniform weights, bound sqrt(6 / fan_in), and zero biases. Deterministic per seed.
NetworkWeights init_weights(const NetworkSpec& spec, std::uint64_t seed);
void validate_weights(const NetworkSpec& spec, const NetworkWeights& weights);

enum class MaskSite : int { m5 = 0, m6 = 1, m7 = 2 };

/// Binary ReLU masks on the pool5 output and the fc6/fc7 outputs. A mask flagged as overridden
/// replaces ReLU thresholding at its site: the linear pre-activation is gated by it directly.
struct MaskSet {
  std::array<Tensor, 3> masks;
  std::array<bool, 3> overridden{};

  MaskSet& impose(MaskSite site, Tensor mask);
  bool has(MaskSite site) const { return !masks[index(site)].empty(); }
  bool is_overridden(MaskSite site) const { return overridden[index(site)]; }
  const Tensor& get(MaskSite site) const { return masks[index(site)]; }

  static int index(MaskSite site) { return static_cast<int>(site); }
};

struct ForwardTrace {
  Tensor input;
  std::vector<Tensor> activations;  // output of each computed layer; pool5 entry is post-gate
  Tensor pool5_pre_gate;
  MaskSet masks;
  Tensor logits;  // empty when the pass stopped before fc8
  std::vector<std::vector<std::uint32_t>> pool_argmax;
  std::vector<Tensor> dropout_masks;  // filled only by training passes

  std::size_t computed_layers() const { return activations.size(); }
  const Tensor& layer_output(std::size_t layer) const;
};

inline constexpr std::size_t kAllLayers = static_cast<std::size_t>(-1);

/// Forward pass with optional mask overrides. `stop_after` limits the pass to layers [0, stop_after].
ForwardTrace forward(const NetworkWeights& weights, const NetworkSpec& spec, const Tensor& image,
                     const MaskSet* overrides = nullptr, std::size_t stop_after = kAllLayers);

/// Training pass: dropout layers draw inverted-dropout masks from `rng`.
ForwardTrace forward_train(const NetworkWeights& weights, const NetworkSpec& spec, const Tensor& image,
                           std::mt19937_64& rng);

/// dE/dI given dE/d(output of `from_layer`), reusing the masks recorded in the trace.
Tensor backward_to_input(const ForwardTrace& trace, const NetworkWeights& weights, const NetworkSpec& spec,
                         const Tensor& output_gradient, std::size_t from_layer = kAllLayers);

/// Accumulates parameter gradients into `grads` (same layout as weights). Used by training.
void accumulate_param_gradients(const ForwardTrace& trace, const NetworkWeights& weights,
                                const NetworkSpec& spec, const Tensor& output_gradient, NetworkWeights& grads);

NetworkWeights zeros_like(const NetworkWeights& weights);

struct PixelRect {
  int row0 = 0;
  int col0 = 0;
  int rows = 0;
  int cols = 0;
  bool operator==(const PixelRect&) const = default;
};

/// Input pixels feeding unit (row, col) of layer `layer_index`, clipped to the image.
PixelRect receptive_field(const NetworkSpec& spec, std::size_t layer_index, int row, int col);

}  // namespace npath
