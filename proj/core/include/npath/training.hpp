#pragma once

#include <cstdint>
#include <filesystem>

#include "npath/image_io.hpp"
#include "npath/network.hpp"

namespace npath {

struct TrainParams {
  double learning_rate = 0.005;
  int epochs = 10;
  int batch_size = 16;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
};

/// Seeded initial weights with whitening statistics taken from the dataset.
NetworkWeights initial_weights(const NetworkSpec& spec, const Dataset& data, const TrainParams& params);

/// Minibatch SGD with momentum on softmax cross-entropy. Inputs are whitened with the dataset
/// statistics, which are stored in the returned weights. Bit-reproducible for a fixed seed.
NetworkWeights train_toy(const NetworkSpec& spec, const Dataset& data, const TrainParams& params);

/// Whitened forward pass of a raw [0, 1] image; returns the predicted class.
int predict(const NetworkSpec& spec, const NetworkWeights& weights, const Tensor& raw_image);
double accuracy(const NetworkSpec& spec, const NetworkWeights& weights, const Dataset& data);

/// "NPSW" weight files: version, endianness tag, layer descriptors, input statistics, then every
/// parameter tensor in layer order.
inline constexpr std::uint16_t kWeightsVersion = 1;
void save_weights(const std::filesystem::path& path, const NetworkSpec& spec, const NetworkWeights& weights);
struct LoadedNetwork {
  NetworkSpec spec;
  NetworkWeights weights;
};
LoadedNetwork load_weights(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_weights(const NetworkSpec& spec, const NetworkWeights& weights);
LoadedNetwork decode_weights(std::vector<std::uint8_t> bytes, const std::string& origin);

}  // namespace npath
