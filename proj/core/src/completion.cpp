#include "npath/completion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace npath {
namespace {

void check_mask(const Tensor& mask, const Tensor& image) {
  check(mask.rank() == 2 && image.rank() == 3 && mask.dim(0) == image.dim(1) && mask.dim(1) == image.dim(2),
        "pixel mask must be (H, W) matching the image");
  for (double v : mask.data()) check(v == 0.0 || v == 1.0, "pixel mask must be binary");
}

// 4-connected components of pixels equal to `value`; returns component id per pixel (-1 elsewhere).
std::vector<int> label_components(const Tensor& mask, double value, std::vector<int>& sizes) {
  const int H = static_cast<int>(mask.dim(0)), W = static_cast<int>(mask.dim(1));
  std::vector<int> label(mask.size(), -1);
  std::vector<int> stack;
  sizes.clear();
  for (int start = 0; start < H * W; ++start) {
    if (mask[start] != value || label[start] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    sizes.push_back(0);
    stack.push_back(start);
    label[start] = id;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      ++sizes[id];
      const int y = p / W, x = p % W;
      const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& n : nb) {
        if (n[0] < 0 || n[0] >= H || n[1] < 0 || n[1] >= W) continue;
        const int q = n[0] * W + n[1];
        if (mask[q] == value && label[q] < 0) {
          label[q] = id;
          stack.push_back(q);
        }
      }
    }
  }
  return label;
}

}  // namespace

Tensor mean_fill(const Tensor& raw_image, const Tensor& mask, const NetworkWeights& weights) {
  check_mask(mask, raw_image);
  check(weights.input_stats.mean.size() == raw_image.dim(0), "mean_fill: channel count mismatch");
  Tensor out = raw_image;
  const std::size_t plane = mask.size();
  for (std::size_t c = 0; c < raw_image.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i)
      if (mask[i] != 0.0) out[c * plane + i] = weights.input_stats.mean[c];
  return out;
}

std::vector<int> predict_context_class(const Tensor& raw_image, const Tensor& mask, const NetworkWeights& weights,
                                       const NetworkSpec& spec) {
  const Tensor filled = mean_fill(raw_image, mask, weights);
  const ForwardTrace t = forward(weights, spec, whiten(filled, weights.input_stats));
  std::vector<int> order(t.logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return t.logits[a] > t.logits[b]; });
  return order;
}

CompletionResult complete(const Tensor& raw_image, const Tensor& mask, int target_class, const MaskSet& pathway,
                          const NetworkWeights& weights, const NetworkSpec& spec, const InversionConfig& config,
                          const PatchDatabase* db) {
  check_mask(mask, raw_image);
  check(std::any_of(mask.data().begin(), mask.data().end(), [](double v) { return v != 0.0; }),
        "complete: the mask has no editable pixels");
  config.validate();
  CompletionResult out;
  out.image = raw_image;
  if (config.iterations == 0) return out;

  Tensor start = whiten(raw_image, weights.input_stats);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> noise(0.0, config.init_noise);
  const std::size_t plane = mask.size();
  for (std::size_t c = 0; c < start.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i)
      if (mask[i] != 0.0) start[c * plane + i] = noise(rng);

  InversionConfig run_config = config;
  run_config.init_mode = InitMode::given_image;
  InversionOptions options;
  options.given_image = &start;
  options.editable_mask = &mask;
  out.run = invert(ClassObjective{target_class, pathway}, weights, spec, run_config, db, options);

  const Tensor filled = to_display(out.run.image, weights.input_stats);
  for (std::size_t c = 0; c < raw_image.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i)
      if (mask[i] != 0.0) out.image[c * plane + i] = filled[c * plane + i];
  return out;
}

Tensor fill_holes(const Tensor& mask) {
  check(mask.rank() == 2, "fill_holes expects an (H, W) mask");
  const int H = static_cast<int>(mask.dim(0)), W = static_cast<int>(mask.dim(1));
  std::vector<int> sizes;
  const std::vector<int> label = label_components(mask, 0.0, sizes);
  std::vector<bool> touches_border(sizes.size(), false);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if ((y == 0 || x == 0 || y == H - 1 || x == W - 1) && label[y * W + x] >= 0)
        touches_border[label[y * W + x]] = true;
  Tensor out = mask;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (label[i] >= 0 && !touches_border[label[i]]) out[i] = 1.0;
  return out;
}

Tensor remove_small_components(const Tensor& mask, int min_region) {
  check(mask.rank() == 2, "remove_small_components expects an (H, W) mask");
  std::vector<int> sizes;
  const std::vector<int> label = label_components(mask, 1.0, sizes);
  Tensor out = mask;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (label[i] >= 0 && sizes[label[i]] < min_region) out[i] = 0.0;
  return out;
}

Tensor threshold_saliency(const Tensor& gradient, double percentile) {
  check(gradient.rank() == 3, "saliency_mask: gradient must be (C, H, W)");
  check(percentile > 0.0 && percentile < 100.0, "saliency_mask: percentile must be in (0, 100)");
  const std::size_t H = gradient.dim(1), W = gradient.dim(2), plane = H * W;
  Tensor saliency({H, W});
  for (std::size_t c = 0; c < gradient.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i) saliency[i] = std::max(saliency[i], std::abs(gradient[c * plane + i]));
  Tensor mask({H, W});
  std::vector<double> sorted(saliency.data().begin(), saliency.data().end());
  const auto rank = static_cast<std::size_t>(std::floor(percentile / 100.0 * static_cast<double>(plane - 1)));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank), sorted.end());
  const double threshold = sorted[rank];
  for (std::size_t i = 0; i < plane; ++i) mask[i] = saliency[i] > threshold ? 1.0 : 0.0;
  return mask;
}

SaliencyMask saliency_mask_from_gradient(const Tensor& gradient, double percentile, int min_region) {
  check(min_region >= 0, "saliency_mask: min_region must be >= 0");
  SaliencyMask out{threshold_saliency(gradient, percentile), false};
  out.zero_gradient = std::all_of(gradient.data().begin(), gradient.data().end(), [](double v) { return v == 0.0; });
  if (out.zero_gradient) return out;
  out.mask = remove_small_components(fill_holes(out.mask), min_region);
  return out;
}

SaliencyMask saliency_mask(const Tensor& raw_image, int target_class, const NetworkWeights& weights,
                           const NetworkSpec& spec, double percentile, int min_region) {
  const EnergyGrad g = data_score_class(whiten(raw_image, weights.input_stats), weights, spec, target_class);
  return saliency_mask_from_gradient(g.gradient, percentile, min_region);
}

}  // namespace npath
