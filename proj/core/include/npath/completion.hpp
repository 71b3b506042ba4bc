#pragma once

#include <vector>

#include "npath/inversion.hpp"
#include "npath/network.hpp"
#include "npath/patch_prior.hpp"

namespace npath {

/// Classes ranked by logit after replacing the editable pixels of a raw image with the dataset mean.
/// `mask` is (H, W) with 1 = editable (masked out for prediction).
std::vector<int> predict_context_class(const Tensor& raw_image, const Tensor& mask, const NetworkWeights& weights,
                                       const NetworkSpec& spec);

/// Raw image with the editable region filled by the dataset mean.
Tensor mean_fill(const Tensor& raw_image, const Tensor& mask, const NetworkWeights& weights);

struct CompletionResult {
  Tensor image;  // raw [0, 1]; bit-identical to the input outside the mask
  InversionResult run;
};

/// Class-objective optimization restricted to the editable pixels, with `pathway` overrides
/// (typically a topic m7). The editable region starts at the dataset mean plus seeded noise.
CompletionResult complete(const Tensor& raw_image, const Tensor& mask, int target_class, const MaskSet& pathway,
                          const NetworkWeights& weights, const NetworkSpec& spec, const InversionConfig& config,
                          const PatchDatabase* db = nullptr);

struct SaliencyMask {
  Tensor mask;  // (H, W) binary
  bool zero_gradient = false;
};

/// Pixels whose max-over-channels |gradient| lies strictly above the given percentile (before any
/// morphology). All-zero gradients give an empty mask.
Tensor threshold_saliency(const Tensor& gradient, double percentile);

/// Thresholds per-pixel max-over-channels |gradient| at the given percentile, fills enclosed holes
/// (4-connected border flood fill) and drops components smaller than min_region pixels.
SaliencyMask saliency_mask_from_gradient(const Tensor& gradient, double percentile, int min_region);
/// Same, for the gradient of logit t w.r.t. a raw image (taken in whitened space).
SaliencyMask saliency_mask(const Tensor& raw_image, int target_class, const NetworkWeights& weights,
                           const NetworkSpec& spec, double percentile, int min_region);

Tensor fill_holes(const Tensor& mask);
Tensor remove_small_components(const Tensor& mask, int min_region);

}  // namespace npath
