#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "npath/training.hpp"

namespace npath::testing {

NetworkSpec small_spec() {
  NetworkSpec spec;
  spec.input = {3, 12, 12};
  spec.class_count = 3;
  spec.layers = {
      ConvLayer{3, 3, 1, 1, 3, 4},
      ReluLayer{},
      MaxPoolLayer{2, 2},
      ConvLayer{3, 3, 1, 1, 4, 5},
      ReluLayer{},
      MaxPoolLayer{2, 2},
      FcLayer{45, 10},
      ReluLayer{},
      DropoutLayer{0.5},
      FcLayer{10, 10},
      ReluLayer{},
      DropoutLayer{0.5},
      FcLayer{10, 3},
  };
  return spec;
}

NetworkWeights random_weights(const NetworkSpec& spec, std::uint64_t seed, double scale) {
  NetworkWeights w = init_weights(spec, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& p : w.layers) {
    for (double& v : p.weight.data()) v = u(rng);
    for (double& v : p.bias.data()) v = u(rng);
  }
  return w;
}

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  Tensor t(shape);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

Tensor random_binary(const Shape& shape, std::uint64_t seed, double p_one) {
  Tensor t(shape);
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(p_one);
  for (double& v : t.data()) v = b(rng) ? 1.0 : 0.0;
  return t;
}

std::vector<double> central_differences(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                        const std::vector<std::size_t>& coords, double h) {
  std::vector<std::size_t> idx = coords;
  if (idx.empty()) {
    idx.resize(x.size());
    std::iota(idx.begin(), idx.end(), 0);
  }
  std::vector<double> out;
  out.reserve(idx.size());
  Tensor probe = x;
  for (std::size_t i : idx) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    out.push_back((fp - fm) / (2.0 * h));
  }
  return out;
}

double gradient_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric, double floor) {
  double scale = floor, worst = 0.0;
  for (double v : numeric) scale = std::max(scale, std::abs(v));
  for (double v : analytic) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < analytic.size(); ++i) worst = std::max(worst, std::abs(analytic[i] - numeric[i]));
  return worst / scale;
}

double check_gradient(const std::function<double(const Tensor&)>& f, const Tensor& analytic_gradient, const Tensor& x,
                      const std::vector<std::size_t>& coords, double h) {
  std::vector<std::size_t> idx = coords;
  if (idx.empty()) {
    idx.resize(x.size());
    std::iota(idx.begin(), idx.end(), 0);
  }
  std::vector<double> a;
  for (std::size_t i : idx) a.push_back(analytic_gradient[i]);
  return gradient_relative_error(a, central_differences(f, x, idx, h));
}

std::vector<std::size_t> sample_coords(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> all(n), out;
  std::iota(all.begin(), all.end(), 0);
  std::mt19937_64 rng(seed);
  std::sample(all.begin(), all.end(), std::back_inserter(out), std::min(n, count), rng);
  return out;
}

Eigen::VectorXd dense_chain_logits(const NetworkWeights& weights, const NetworkSpec& spec, const Tensor& pool5) {
  const Topology topo = spec.topology();
  Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(pool5.data().data(), static_cast<Eigen::Index>(pool5.size()));
  for (std::size_t layer : topo.fc) {
    const LayerParams& p = weights.layers[layer];
    const auto rows = static_cast<Eigen::Index>(p.weight.dim(0)), cols = static_cast<Eigen::Index>(p.weight.dim(1));
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W(p.weight.data().data(),
                                                                                              rows, cols);
    Eigen::Map<const Eigen::VectorXd> b(p.bias.data().data(), rows);
    v = W * v + b;
  }
  return v;
}

NearestNeighborField brute_force_match(const PatchDatabase& db, const Tensor& estimate, int stride) {
  const Tensor n = normalize_image(estimate);
  const int p = db.patch_size();
  NearestNeighborField field;
  field.patch_size = p;
  for (int r : grid_positions(static_cast<int>(estimate.dim(1)), p, stride)) {
    for (int c : grid_positions(static_cast<int>(estimate.dim(2)), p, stride)) {
      std::vector<double> q;
      for (std::size_t ch = 0; ch < estimate.dim(0); ++ch)
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x) q.push_back(n.at(ch, r + y, c + x));
      PatchMatch best{r, c, 0, INFINITY};
      for (std::size_t i = 0; i < db.size(); ++i) {
        const auto e = db.patch(i);
        double d = 0.0;
        for (std::size_t k = 0; k < q.size(); ++k) d += (q[k] - e[k]) * (q[k] - e[k]);
        if (d < best.distance) best = {r, c, static_cast<std::uint32_t>(i), d};
      }
      field.matches.push_back(best);
    }
  }
  return field;
}

const ReferenceSetup& reference_setup() {
  static const ReferenceSetup setup = [] {
    ReferenceSetup r;
    r.spec = toy_spec();
    SceneConfig train;
    train.per_class = 60;
    train.seed = 7;
    r.train = make_scenes(train);
    SceneConfig val = train;
    val.per_class = 5;
    val.seed = 99;
    r.val = make_scenes(val);
    r.weights = train_toy(r.spec, r.train, TrainParams{});
    return r;
  }();
  return setup;
}

}  // namespace npath::testing
