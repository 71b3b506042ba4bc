#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <variant>
#include <vector>

#include "npath/network.hpp"
#include "npath/patch_prior.hpp"

namespace npath {

/// Per-channel standardization with dataset statistics (std clamped at kStdEpsilon).
Tensor whiten(const Tensor& image, const ChannelStats& stats, bool* clamped = nullptr);
/// Exact inverse of whiten for unclamped statistics.
Tensor unwhiten(const Tensor& image, const ChannelStats& stats);
/// unwhiten and clip to the [0, 1] display range.
Tensor to_display(const Tensor& whitened, const ChannelStats& stats);

struct EnergyGrad {
  double energy = 0.0;
  Tensor gradient;
};

/// ||Phi_k(I) - phi0||^2 / ||phi0||^2 and its image gradient. `image` is in whitened space.
EnergyGrad data_energy_inversion(const Tensor& image, const NetworkWeights& weights, const NetworkSpec& spec,
                                 std::size_t layer, const Tensor& phi0);

/// Logit t under optional mask overrides, and d(logit_t)/dI.
EnergyGrad data_score_class(const Tensor& image, const NetworkWeights& weights, const NetworkSpec& spec,
                            int target_class, const MaskSet* overrides = nullptr);

enum class InitMode { mean, mean_noise, given_image, channel_shuffled };

struct InversionConfig {
  double r_alpha = 1e-5;
  double r_beta = 1e-4;
  double r_gamma = 0.0;
  double step_size = 0.5;
  double momentum = 0.9;
  double step_growth = 1.05;  // step multiplier after every accepted move
  int iterations = 500;
  int rematch_interval = 20;
  std::uint64_t seed = 1;
  InitMode init_mode = InitMode::mean_noise;
  double init_noise = 0.1;
  std::array<int, 3> channel_permutation{1, 2, 0};
  int patch_stride = 0;  // 0: half the database patch size

  void validate() const;
};

struct RegularizerBreakdown {
  double alpha = 0.0;  // ||I||^2
  double beta = 0.0;   // ||grad I||^2
  double gamma = 0.0;  // sum_p ||I~_p - D~_p||^2 (unweighted)
};

/// Weighted sum of the three prior terms with its gradient. The matched patches D_p are held
/// fixed; the gradient flows through the whole-image normalization of I~_p.
EnergyGrad regularizer(const Tensor& image, const InversionConfig& config, const PatchDatabase* db,
                       const NearestNeighborField* field, RegularizerBreakdown* breakdown = nullptr);

/// Unweighted patch term only.
double patch_energy(const Tensor& image, const PatchDatabase& db, const NearestNeighborField& field);

struct FeatureObjective {
  std::size_t layer = 0;
  Tensor phi0;
};
struct ClassObjective {
  int target_class = 0;
  MaskSet overrides;
};
using Objective = std::variant<FeatureObjective, ClassObjective>;

struct EnergyRecord {
  double data_energy = 0.0;  // feature: relative squared feature error; class: -logit_t
  double reg_energy = 0.0;
};

struct RematchEvent {
  int iteration = 0;
  double patch_energy_before = 0.0;
  double patch_energy_after = 0.0;
};

struct InversionResult {
  Tensor image;  // whitened space
  std::vector<EnergyRecord> energy_trace;
  double final_feature_error = 0.0;  // feature objective: final data energy; class objective: 0
  bool feature_objective = false;
  std::optional<NearestNeighborField> nn_field;
  std::vector<RematchEvent> rematches;
};

/// Optional pixel mask (H, W): only pixels with a 1 may change; the rest stay at their initial value.
struct InversionOptions {
  const Tensor* given_image = nullptr;    // whitened; for given_image / channel_shuffled init
  const Tensor* editable_mask = nullptr;  // (H, W) binary
};

Tensor initial_image(const InversionConfig& config, const Shape& shape, const Tensor* given_image);

/// Gradient descent with momentum. A move that raises the energy is rejected, the step halved and
/// the velocity cleared; accepted moves grow the step by step_growth. Patches are re-matched every
/// rematch_interval iterations when r_gamma > 0. Class objectives
/// minimize -logit_t + R(I).
InversionResult invert(const Objective& objective, const NetworkWeights& weights, const NetworkSpec& spec,
                       const InversionConfig& config, const PatchDatabase* db, const InversionOptions& options = {});

/// Mean over images of the per-image channel statistics of their whitened versions.
ChannelStats typical_whitened_stats(const std::vector<Tensor>& raw_images, const ChannelStats& whitening);

struct RetrievalInit {
  Tensor image;  // whitened
  NearestNeighborField field;
};

/// k nearest database entries per pool5 location of phi0, warped into an image with `typical` statistics.
RetrievalInit retrieval_init(const PatchDatabase& db, const Tensor& phi0, const NetworkSpec& spec,
                             const ChannelStats& typical, int k);

struct PriorInversion {
  RetrievalInit init;
  InversionResult run;
};

/// Pool5 feature inversion started from retrieval_init, with the patch term restricted to the
/// retrieved entries. Uses config.r_gamma as given.
PriorInversion invert_with_prior(const Tensor& phi0, const NetworkWeights& weights, const NetworkSpec& spec,
                                 const InversionConfig& config, const PatchDatabase& db, const ChannelStats& typical,
                                 int k);

/// ||original - estimate|| / ||original||.
double relative_l2(const Tensor& original, const Tensor& estimate);

/// CSV with header iteration,data_energy,reg_energy,feature_error. feature_error repeats the data
/// energy for feature objectives and is left empty for class objectives.
void write_energy_csv(std::ostream& out, const InversionResult& result);

}  // namespace npath
