#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "npath/network.hpp"
#include "npath/tensor.hpp"

namespace npath {

/// Reads a binary P6 pixmap into a (3, H, W) tensor with values in [0, 1].
Tensor read_ppm(const std::filesystem::path& path);
/// Writes a (3, H, W) tensor as P6, clipping to [0, 1] and rounding to 8 bits.
void write_ppm(const std::filesystem::path& path, const Tensor& image);

/// P5 graymaps carry binary masks: nonzero pixels map to 1. Shape (H, W).
Tensor read_pgm_mask(const std::filesystem::path& path);
void write_pgm_mask(const std::filesystem::path& path, const Tensor& mask);

struct LabeledImage {
  std::string name;
  Tensor image;  // (3, H, W) in [0, 1]
  int label = 0;
};

struct Dataset {
  std::vector<LabeledImage> items;
  int class_count = 0;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  std::vector<Tensor> images() const;
  Dataset of_class(int label) const;
};

/// A dataset directory holds P6 images plus `labels.txt` with one "<file> <label>" line per image.
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);

/// Per-channel mean and (population) standard deviation over every pixel of every image.
ChannelStats dataset_stats(const std::vector<Tensor>& images);
/// Whole-image per-channel mean and standard deviation.
ChannelStats image_stats(const Tensor& image);

}  // namespace npath
