#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "npath/network.hpp"
#include "npath/tensor.hpp"

namespace npath {

/// Standard deviations below this are clamped when normalizing.
inline constexpr double kStdEpsilon = 1e-6;

struct PatchProvenance {
  std::uint32_t image_id = 0;
  std::uint16_t row = 0;
  std::uint16_t col = 0;
  bool operator==(const PatchProvenance&) const = default;
};

/// Normalized natural patches, optionally paired with the pool5 feature of the unit whose
/// receptive field they were cropped from. Immutable once built.
class PatchDatabase {
 public:
  PatchDatabase(int channels, int patch_size, int feature_dim);

  void add(std::span<const double> feature, std::span<const double> patch, PatchProvenance provenance);

  std::size_t size() const { return provenance_.size(); }
  bool empty() const { return provenance_.empty(); }
  int channels() const { return channels_; }
  int patch_size() const { return patch_size_; }
  int feature_dim() const { return feature_dim_; }
  std::size_t patch_dims() const { return static_cast<std::size_t>(channels_) * patch_size_ * patch_size_; }

  std::span<const double> patch(std::size_t i) const;
  std::span<const double> feature(std::size_t i) const;
  const PatchProvenance& provenance(std::size_t i) const { return provenance_[i]; }

  PatchDatabase subset(std::span<const std::size_t> indices) const;

 private:
  int channels_;
  int patch_size_;
  int feature_dim_;
  std::vector<double> features_;
  std::vector<double> patches_;
  std::vector<PatchProvenance> provenance_;
};

struct PatchMatch {
  int row = 0;  // top-left corner of the patch in the image
  int col = 0;
  std::uint32_t index = 0;  // database entry
  double distance = 0.0;    // squared L2 between normalized patches
};

struct NearestNeighborField {
  int patch_size = 0;
  std::vector<PatchMatch> matches;
};

/// (patch - mean) / std per channel; std below kStdEpsilon is clamped and reported via `clamped`.
Tensor normalize_patch(const Tensor& patch, const ChannelStats& image_stats, bool* clamped = nullptr);
/// Whole-image normalization: every pixel standardized with the image's own channel statistics.
Tensor normalize_image(const Tensor& image, bool* clamped = nullptr);

/// Top-left offsets 0, stride, 2*stride, ... with the patch fully inside [0, extent).
std::vector<int> grid_positions(int extent, int patch_size, int stride);
/// round(rf * 67 / 195): the centre-crop ratio used for the inversion database.
int default_patch_size(int receptive_field_size);
/// Side length of the pool5 receptive field (interior units).
int pool5_receptive_field_size(const NetworkSpec& spec);
/// Top-left corner of the centred patch_size crop of the receptive field of pool5 unit (row, col).
std::pair<int, int> pool5_crop_origin(const NetworkSpec& spec, int row, int col, int patch_size);

/// Pairs every pool5 location of every image with the normalized centre crop of its receptive
/// field, then uniformly subsamples to `capacity` entries (seeded). Images are raw [0, 1] RGB.
PatchDatabase build_database(const std::vector<Tensor>& images, const NetworkWeights& weights,
                             const NetworkSpec& spec, int patch_size, std::size_t capacity, std::uint64_t seed);

/// Dense stride-grid sampling of normalized patches, no features (class-visualization prior).
PatchDatabase build_class_database(const std::vector<Tensor>& images, int patch_size, int stride);

enum class MatchMethod { brute_force, accelerated };

/// Exact nearest normalized patch for every grid location of `estimate` (ties: lowest index).
/// The estimate is normalized by its own whole-image statistics.
NearestNeighborField match(const PatchDatabase& db, const Tensor& estimate, int stride,
                           MatchMethod method = MatchMethod::accelerated);

/// k nearest database entries to each pool5 location of `pool5_feature`, compared as
/// cosine-normalized vectors. Result entries are placed at the receptive-field centre crops.
NearestNeighborField retrieve_by_feature(const PatchDatabase& db, const Tensor& pool5_feature,
                                         const NetworkSpec& spec, int k);

/// Distinct database entries referenced by a field, in ascending order.
std::vector<std::size_t> referenced_entries(const NearestNeighborField& field);

/// Averages de-normalized matched patches (overlap counting); uncovered pixels get the mean.
Tensor warp_visualization(const NearestNeighborField& field, const PatchDatabase& db, const Shape& output_shape,
                          const ChannelStats& target_stats);

inline constexpr std::uint16_t kPatchDbVersion = 1;
void save_patch_database(const std::filesystem::path& path, const PatchDatabase& db);
PatchDatabase load_patch_database(const std::filesystem::path& path);

}  // namespace npath
