#include "npath/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>

#include "npath/image_io.hpp"

namespace npath {
namespace {

constexpr double kDivergenceLimit = 1e12;

std::size_t plane_of(const Tensor& image) { return image.dim(1) * image.dim(2); }

void add_patch_gradient(const Tensor& image, const PatchDatabase& db, const NearestNeighborField& field,
                        double weight, double& energy, Tensor* gradient) {
  check(field.patch_size == db.patch_size(), "regularizer: field and database patch sizes differ");
  const std::size_t C = image.dim(0), W = image.dim(2);
  const std::size_t plane = plane_of(image);
  const int p = db.patch_size();
  const ChannelStats stats = image_stats(image);
  std::vector<double> sd(C);
  std::vector<bool> clamped(C);
  for (std::size_t c = 0; c < C; ++c) {
    clamped[c] = !(stats.std[c] >= kStdEpsilon);
    sd[c] = clamped[c] ? kStdEpsilon : stats.std[c];
  }
  Tensor z(image.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < plane; ++i) z[c * plane + i] = (image[c * plane + i] - stats.mean[c]) / sd[c];

  Tensor gz(image.shape());
  double e = 0.0;
  for (const auto& m : field.matches) {
    check(m.index < db.size(), "regularizer: field index out of range");
    check(m.row >= 0 && m.col >= 0 && m.row + p <= static_cast<int>(image.dim(1)) &&
              m.col + p <= static_cast<int>(W),
          "regularizer: field location outside the image");
    const auto target = db.patch(m.index);
    std::size_t k = 0;
    for (std::size_t c = 0; c < C; ++c)
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x, ++k) {
          const std::size_t i = c * plane + static_cast<std::size_t>(m.row + y) * W + m.col + x;
          const double d = z[i] - target[k];
          e += d * d;
          gz[i] += 2.0 * d;
        }
  }
  energy += weight * e;
  if (!gradient) return;
  // Backward through z = (I - mean) / std with whole-image channel statistics.
  for (std::size_t c = 0; c < C; ++c) {
    double mean_g = 0.0, mean_gz = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      mean_g += gz[c * plane + i];
      mean_gz += gz[c * plane + i] * z[c * plane + i];
    }
    mean_g /= static_cast<double>(plane);
    mean_gz /= static_cast<double>(plane);
    if (clamped[c]) mean_gz = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t j = c * plane + i;
      (*gradient)[j] += weight * (gz[j] - mean_g - z[j] * mean_gz) / sd[c];
    }
  }
}

struct Evaluation {
  double total = 0.0;
  EnergyRecord record;
  Tensor gradient;
};

class Problem {
 public:
  Problem(const Objective& objective, const NetworkWeights& weights, const NetworkSpec& spec,
          const InversionConfig& config, const PatchDatabase* db)
      : objective_(objective), weights_(weights), spec_(spec), config_(config), db_(db) {}

  Evaluation evaluate(const Tensor& x, const NearestNeighborField* field) const {
    Evaluation ev;
    EnergyGrad data;
    if (const auto* f = std::get_if<FeatureObjective>(&objective_)) {
      data = data_energy_inversion(x, weights_, spec_, f->layer, f->phi0);
      ev.record.data_energy = data.energy;
    } else {
      const auto& c = std::get<ClassObjective>(objective_);
      data = data_score_class(x, weights_, spec_, c.target_class, &c.overrides);
      data.energy = -data.energy;
      data.gradient *= -1.0;
      ev.record.data_energy = data.energy;
    }
    EnergyGrad reg = regularizer(x, config_, db_, field);
    ev.record.reg_energy = reg.energy;
    ev.total = data.energy + reg.energy;
    ev.gradient = std::move(data.gradient);
    ev.gradient += reg.gradient;
    if (!std::isfinite(ev.total) || std::abs(ev.total) > kDivergenceLimit || !ev.gradient.all_finite())
      throw DivergenceError("inversion diverged: energy " + std::to_string(ev.total));
    return ev;
  }

 private:
  const Objective& objective_;
  const NetworkWeights& weights_;
  const NetworkSpec& spec_;
  const InversionConfig& config_;
  const PatchDatabase* db_;
};

}  // namespace

Tensor whiten(const Tensor& image, const ChannelStats& stats, bool* clamped) {
  return normalize_patch(image, stats, clamped);
}

Tensor unwhiten(const Tensor& image, const ChannelStats& stats) {
  check(image.rank() >= 1 && image.dim(0) == stats.mean.size() && stats.std.size() == stats.mean.size(),
        "unwhiten: channel count mismatch");
  const std::size_t C = image.dim(0), plane = image.size() / C;
  Tensor out(image.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const double sd = stats.std[c] >= kStdEpsilon ? stats.std[c] : kStdEpsilon;
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = image[c * plane + i] * sd + stats.mean[c];
  }
  return out;
}

Tensor to_display(const Tensor& whitened, const ChannelStats& stats) {
  Tensor out = unwhiten(whitened, stats);
  for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

EnergyGrad data_energy_inversion(const Tensor& image, const NetworkWeights& weights, const NetworkSpec& spec,
                                 std::size_t layer, const Tensor& phi0) {
  check(layer < spec.layers.size(), "data_energy_inversion: layer " + std::to_string(layer) + " out of range");
  const double norm2 = squared_norm(phi0);
  check(norm2 > 0.0, "data_energy_inversion: target feature has zero norm");
  const ForwardTrace trace = forward(weights, spec, image, nullptr, layer);
  const Tensor& phi = trace.activations[layer];
  check(phi.size() == phi0.size(), "data_energy_inversion: target feature has " + std::to_string(phi0.size()) +
                                       " values, layer " + std::to_string(layer) + " produces " +
                                       std::to_string(phi.size()));
  Tensor g(phi.shape());
  double e = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    const double d = phi[i] - phi0[i];
    e += d * d;
    g[i] = 2.0 * d / norm2;
  }
  return {e / norm2, backward_to_input(trace, weights, spec, g, layer)};
}

EnergyGrad data_score_class(const Tensor& image, const NetworkWeights& weights, const NetworkSpec& spec,
                            int target_class, const MaskSet* overrides) {
  check(target_class >= 0 && target_class < spec.class_count,
        "data_score_class: class " + std::to_string(target_class) + " out of range");
  const ForwardTrace trace = forward(weights, spec, image, overrides);
  Tensor onehot(trace.logits.shape());
  onehot[static_cast<std::size_t>(target_class)] = 1.0;
  return {trace.logits[static_cast<std::size_t>(target_class)], backward_to_input(trace, weights, spec, onehot)};
}

void InversionConfig::validate() const {
  for (double w : {r_alpha, r_beta, r_gamma})
    check(std::isfinite(w) && w >= 0.0, "inversion config: regularizer weights must be finite and >= 0");
  check(std::isfinite(step_size) && step_size > 0.0, "inversion config: step_size must be positive");
  check(momentum >= 0.0 && momentum < 1.0, "inversion config: momentum must be in [0, 1)");
  check(std::isfinite(step_growth) && step_growth >= 1.0, "inversion config: step_growth must be >= 1");
  check(iterations >= 0, "inversion config: iterations must be >= 0");
  check(rematch_interval >= 1, "inversion config: rematch_interval must be >= 1");
  check(init_noise >= 0.0, "inversion config: init_noise must be >= 0");
  check(patch_stride >= 0, "inversion config: patch_stride must be >= 0");
  auto perm = channel_permutation;
  std::sort(perm.begin(), perm.end());
  check(perm == std::array<int, 3>{0, 1, 2}, "inversion config: channel_permutation must permute {0, 1, 2}");
}

double patch_energy(const Tensor& image, const PatchDatabase& db, const NearestNeighborField& field) {
  double e = 0.0;
  add_patch_gradient(image, db, field, 1.0, e, nullptr);
  return e;
}

EnergyGrad regularizer(const Tensor& image, const InversionConfig& config, const PatchDatabase* db,
                       const NearestNeighborField* field, RegularizerBreakdown* breakdown) {
  check(image.rank() == 3, "regularizer: expects a (C, H, W) image");
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  EnergyGrad out{0.0, Tensor(image.shape())};
  RegularizerBreakdown parts;
  for (std::size_t i = 0; i < image.size(); ++i) {
    parts.alpha += image[i] * image[i];
    out.gradient[i] += config.r_alpha * 2.0 * image[i];
  }
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        if (x + 1 < W) {
          const double d = image.at(c, y, x + 1) - image.at(c, y, x);
          parts.beta += d * d;
          out.gradient.at(c, y, x + 1) += config.r_beta * 2.0 * d;
          out.gradient.at(c, y, x) -= config.r_beta * 2.0 * d;
        }
        if (y + 1 < H) {
          const double d = image.at(c, y + 1, x) - image.at(c, y, x);
          parts.beta += d * d;
          out.gradient.at(c, y + 1, x) += config.r_beta * 2.0 * d;
          out.gradient.at(c, y, x) -= config.r_beta * 2.0 * d;
        }
      }
  out.energy = config.r_alpha * parts.alpha + config.r_beta * parts.beta;
  if (config.r_gamma > 0.0) {
    check(db != nullptr && field != nullptr, "regularizer: r_gamma > 0 requires a patch database and a field");
    double e = 0.0;
    add_patch_gradient(image, *db, *field, 1.0, e, nullptr);
    parts.gamma = e;
    double weighted = 0.0;
    add_patch_gradient(image, *db, *field, config.r_gamma, weighted, &out.gradient);
    out.energy += weighted;
  }
  if (breakdown) *breakdown = parts;
  return out;
}

Tensor initial_image(const InversionConfig& config, const Shape& shape, const Tensor* given_image) {
  switch (config.init_mode) {
    case InitMode::mean:
      return Tensor(shape);
    case InitMode::mean_noise: {
      Tensor img(shape);
      std::mt19937_64 rng(config.seed);
      std::normal_distribution<double> n(0.0, config.init_noise);
      for (double& v : img.data()) v = n(rng);
      return img;
    }
    case InitMode::given_image:
      check(given_image != nullptr, "initial_image: given_image init requires an image");
      require_same_shape(*given_image, Tensor(shape), "initial_image");
      return *given_image;
    case InitMode::channel_shuffled: {
      check(given_image != nullptr, "initial_image: channel_shuffled init requires an image");
      require_same_shape(*given_image, Tensor(shape), "initial_image");
      check(shape[0] == 3, "initial_image: channel shuffling needs 3 channels");
      Tensor img(shape);
      const std::size_t plane = shape[1] * shape[2];
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = static_cast<std::size_t>(config.channel_permutation[c]);
        std::copy_n(given_image->data().begin() + static_cast<std::ptrdiff_t>(src * plane), plane,
                    img.data().begin() + static_cast<std::ptrdiff_t>(c * plane));
      }
      return img;
    }
  }
  fail("initial_image: unknown init mode");
}

InversionResult invert(const Objective& objective, const NetworkWeights& weights, const NetworkSpec& spec,
                       const InversionConfig& config, const PatchDatabase* db, const InversionOptions& options) {
  config.validate();
  validate_weights(spec, weights);
  if (const auto* c = std::get_if<ClassObjective>(&objective))
    check(c->target_class >= 0 && c->target_class < spec.class_count, "invert: class out of range");
  if (config.r_gamma > 0.0) {
    check(db != nullptr && !db->empty(), "invert: r_gamma > 0 requires a non-empty patch database");
    check(db->channels() == static_cast<int>(spec.input[0]), "invert: database channel count mismatch");
  }
  const Tensor* mask = options.editable_mask;
  if (mask)
    check(mask->rank() == 2 && mask->dim(0) == spec.input[1] && mask->dim(1) == spec.input[2],
          "invert: editable mask must be (H, W) of the network input");

  InversionResult result;
  Tensor x = initial_image(config, spec.input, options.given_image);
  const Tensor anchor = x;
  const std::size_t plane = spec.input[1] * spec.input[2];
  auto project = [&](Tensor& t, const Tensor* fixed) {
    if (!mask) return;
    for (std::size_t c = 0; c < spec.input[0]; ++c)
      for (std::size_t i = 0; i < plane; ++i)
        if ((*mask)[i] == 0.0) t[c * plane + i] = fixed ? (*fixed)[c * plane + i] : 0.0;
  };

  const int stride = config.patch_stride > 0 ? config.patch_stride
                                             : (db ? std::max(1, db->patch_size() / 2) : 1);
  std::optional<NearestNeighborField> field;
  if (config.r_gamma > 0.0) field = match(*db, x, stride);

  const Problem problem(objective, weights, spec, config, db);
  Evaluation cur = problem.evaluate(x, field ? &*field : nullptr);
  Tensor velocity(spec.input);
  double step = config.step_size;
  for (int it = 0; it < config.iterations; ++it) {
    if (field && it > 0 && it % config.rematch_interval == 0) {
      RematchEvent ev{it, patch_energy(x, *db, *field), 0.0};
      field = match(*db, x, stride);
      ev.patch_energy_after = patch_energy(x, *db, *field);
      result.rematches.push_back(ev);
      cur = problem.evaluate(x, &*field);
    }
    for (std::size_t i = 0; i < x.size(); ++i) velocity[i] = config.momentum * velocity[i] - step * cur.gradient[i];
    project(velocity, nullptr);
    Tensor candidate = x + velocity;
    project(candidate, &anchor);
    Evaluation next = problem.evaluate(candidate, field ? &*field : nullptr);
    if (next.total <= cur.total) {
      x = std::move(candidate);
      cur = std::move(next);
      step *= config.step_growth;
    } else {
      step *= 0.5;
      velocity.fill(0.0);
    }
    result.energy_trace.push_back(cur.record);
  }
  result.feature_objective = std::holds_alternative<FeatureObjective>(objective);
  result.final_feature_error = result.feature_objective ? cur.record.data_energy : 0.0;
  result.image = std::move(x);
  result.nn_field = std::move(field);
  return result;
}

ChannelStats typical_whitened_stats(const std::vector<Tensor>& raw_images, const ChannelStats& whitening) {
  check(!raw_images.empty(), "typical_whitened_stats: no images");
  const std::size_t C = whitening.mean.size();
  ChannelStats out{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  for (const Tensor& img : raw_images) {
    const ChannelStats s = image_stats(whiten(img, whitening));
    for (std::size_t c = 0; c < C; ++c) {
      out.mean[c] += s.mean[c];
      out.std[c] += s.std[c];
    }
  }
  const double n = static_cast<double>(raw_images.size());
  for (std::size_t c = 0; c < C; ++c) {
    out.mean[c] /= n;
    out.std[c] /= n;
  }
  return out;
}

RetrievalInit retrieval_init(const PatchDatabase& db, const Tensor& phi0, const NetworkSpec& spec,
                             const ChannelStats& typical, int k) {
  RetrievalInit out;
  out.field = retrieve_by_feature(db, phi0, spec, k);
  out.image = warp_visualization(out.field, db, spec.input, typical);
  return out;
}

PriorInversion invert_with_prior(const Tensor& phi0, const NetworkWeights& weights, const NetworkSpec& spec,
                                 const InversionConfig& config, const PatchDatabase& db, const ChannelStats& typical,
                                 int k) {
  PriorInversion out;
  out.init = retrieval_init(db, phi0, spec, typical, k);
  const PatchDatabase retrieved = db.subset(referenced_entries(out.init.field));
  InversionConfig c = config;
  c.init_mode = InitMode::given_image;
  out.run = invert(FeatureObjective{spec.topology().pool5, phi0}, weights, spec, c, &retrieved,
                   {&out.init.image, nullptr});
  return out;
}

double relative_l2(const Tensor& original, const Tensor& estimate) {
  require_same_shape(original, estimate, "relative_l2");
  const double n = l2_norm(original);
  check(n > 0.0, "relative_l2: original image is all zero");
  return l2_norm(original - estimate) / n;
}

void write_energy_csv(std::ostream& out, const InversionResult& result) {
  out << "iteration,data_energy,reg_energy,feature_error\n";
  char buf[160];
  for (std::size_t i = 0; i < result.energy_trace.size(); ++i) {
    const auto& r = result.energy_trace[i];
    if (result.feature_objective)
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", i, r.data_energy, r.reg_energy, r.data_energy);
    else
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,\n", i, r.data_energy, r.reg_energy);
    out << buf;
  }
}

}  // namespace npath
