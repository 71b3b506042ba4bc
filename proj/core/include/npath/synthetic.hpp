#pragma once

#include <cstdint>
#include <vector>

#include "npath/image_io.hpp"

namespace npath {

/// Toy scenes: a class-specific ground ("context") under a sky, with a class-specific object
/// drawn in one of several styles (colour and scale). Stands in for a natural image dataset.
struct SceneConfig {
  int image_size = 32;
  int classes = 4;
  int per_class = 60;
  int styles = 3;
  double noise = 0.02;
  std::uint64_t seed = 7;
};

struct SceneSample {
  Tensor image;        // (3, S, S) in [0, 1]
  Tensor object_mask;  // (S, S), 1 on the object
  int label = 0;
  int style = 0;
};

std::vector<SceneSample> make_scene_samples(const SceneConfig& config);
Dataset make_scenes(const SceneConfig& config);

/// Two linearly separable classes (bright left half vs bright right half) of size x size images.
Dataset make_separable(int per_class, int size, std::uint64_t seed);

}  // namespace npath
