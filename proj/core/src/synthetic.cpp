#include "npath/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

namespace npath {
namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, 4> kGround{{{0.25, 0.55, 0.20}, {0.85, 0.75, 0.45}, {0.88, 0.90, 0.94}, {0.15, 0.35, 0.70}}};
constexpr std::array<std::array<Rgb, 3>, 4> kObject{{
    {{{0.90, 0.45, 0.10}, {0.95, 0.85, 0.20}, {0.60, 0.15, 0.10}}},
    {{{0.55, 0.30, 0.15}, {0.20, 0.20, 0.25}, {0.80, 0.20, 0.30}}},
    {{{0.15, 0.45, 0.20}, {0.35, 0.25, 0.55}, {0.10, 0.10, 0.10}}},
    {{{0.95, 0.95, 0.95}, {0.90, 0.60, 0.20}, {0.40, 0.75, 0.35}}},
}};
constexpr std::array<double, 3> kScale{0.55, 0.8, 1.05};

Rgb palette_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 0.9);
  return {u(rng), u(rng), u(rng)};
}

// Signed inside-ness of a class shape at offset (dx, dy) from its centre, radius r.
bool inside_shape(int shape, double dx, double dy, double r) {
  switch (shape % 4) {
    case 0:
      return dx * dx + dy * dy <= r * r;
    case 1:
      return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case 2:
      return dy <= 0.8 * r && dy >= -r + 2.0 * std::abs(dx);
    default:
      return std::abs(dx) + std::abs(dy) <= 1.1 * r;
  }
}

}  // namespace

std::vector<SceneSample> make_scene_samples(const SceneConfig& config) {
  check(config.image_size >= 8 && config.classes > 0 && config.per_class > 0 && config.styles > 0,
        "make_scenes: invalid configuration");
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int S = config.image_size;
  const auto s = static_cast<std::size_t>(S);

  std::vector<Rgb> ground(static_cast<std::size_t>(config.classes));
  std::vector<std::vector<Rgb>> object(static_cast<std::size_t>(config.classes));
  for (int k = 0; k < config.classes; ++k) {
    ground[k] = k < 4 ? kGround[k] : palette_color(rng);
    for (int st = 0; st < config.styles; ++st)
      object[k].push_back(k < 4 && st < 3 ? kObject[k][st] : palette_color(rng));
  }

  std::vector<SceneSample> out;
  for (int k = 0; k < config.classes; ++k) {
    for (int n = 0; n < config.per_class; ++n) {
      SceneSample sample;
      sample.label = k;
      sample.style = n % config.styles;
      sample.image = Tensor({3, s, s});
      sample.object_mask = Tensor({s, s});
      const double horizon = S * (0.35 + 0.25 * u01(rng));
      const Rgb sky{0.45 + 0.1 * u01(rng), 0.65 + 0.1 * u01(rng), 0.90 + 0.08 * u01(rng)};
      Rgb g = ground[k];
      for (double& v : g) v = std::clamp(v + 0.06 * gauss(rng), 0.0, 1.0);
      const double freq = 0.6 + 0.6 * u01(rng), phase = 6.28 * u01(rng), tilt = 0.5 * gauss(rng);
      const Rgb oc = object[k][static_cast<std::size_t>(sample.style)];
      const double radius = S * 0.22 * kScale[static_cast<std::size_t>(sample.style) % 3] * (0.9 + 0.2 * u01(rng));
      const double cx = S * (0.3 + 0.4 * u01(rng)), cy = S * (0.35 + 0.3 * u01(rng));
      const double shade = 0.25 * gauss(rng);
      for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
          Rgb px;
          if (y < horizon) {
            const double t = y / horizon;
            for (int c = 0; c < 3; ++c) px[c] = sky[c] * (1.0 - 0.25 * t) + 0.2 * t;
          } else {
            const double tex = 0.07 * std::sin(freq * (y + tilt * x) + phase);
            for (int c = 0; c < 3; ++c) px[c] = g[c] + tex;
          }
          const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
          if (inside_shape(k, dx, dy, radius)) {
            const double light = 1.0 + shade * dx / std::max(radius, 1.0) - 0.15 * dy / std::max(radius, 1.0);
            for (int c = 0; c < 3; ++c) px[c] = oc[c] * light;
            sample.object_mask[static_cast<std::size_t>(y) * s + x] = 1.0;
          }
          for (int c = 0; c < 3; ++c)
            sample.image.at(c, y, x) = std::clamp(px[c] + config.noise * gauss(rng), 0.0, 1.0);
        }
      }
      out.push_back(std::move(sample));
    }
  }
  return out;
}

Dataset make_scenes(const SceneConfig& config) {
  Dataset d;
  d.class_count = config.classes;
  int id = 0;
  for (auto& s : make_scene_samples(config)) {
    char name[32];
    std::snprintf(name, sizeof name, "img%05d.ppm", id++);
    d.items.push_back({name, std::move(s.image), s.label});
  }
  return d;
}

Dataset make_separable(int per_class, int size, std::uint64_t seed) {
  check(per_class > 0 && size >= 2, "make_separable: invalid configuration");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  Dataset d;
  d.class_count = 2;
  const auto s = static_cast<std::size_t>(size);
  int id = 0;
  for (int n = 0; n < per_class; ++n) {
    for (int label = 0; label < 2; ++label) {
      Tensor img({3, s, s});
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < s; ++y)
          for (std::size_t x = 0; x < s; ++x) {
            const bool left = x < s / 2;
            const double base = (left == (label == 0)) ? 0.8 : 0.2;
            img.at(c, y, x) = std::clamp(base + noise(rng), 0.0, 1.0);
          }
      char name[32];
      std::snprintf(name, sizeof name, "sep%05d.ppm", id++);
      d.items.push_back({name, std::move(img), label});
    }
  }
  return d;
}

}  // namespace npath
