#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "npath/network.hpp"
#include "npath/patch_prior.hpp"
#include "npath/synthetic.hpp"

namespace npath::testing {

/// 3x12x12 input, padded convs, 3x3 pool5 grid, fc 10-10-3. Small enough for full finite differences.
NetworkSpec small_spec();

/// Uniform weights and biases in [-scale, scale]; inputs stats mean 0, std 1.
NetworkWeights random_weights(const NetworkSpec& spec, std::uint64_t seed, double scale = 0.5);

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);
Tensor random_binary(const Shape& shape, std::uint64_t seed, double p_one = 0.5);

/// Central differences of f at x over the given coordinates (all coordinates when empty).
std::vector<double> central_differences(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                        const std::vector<std::size_t>& coords, double h);

/// max_i |a_i - b_i| / max(max_i |b_i|, floor): worst coordinate error scaled by the gradient magnitude.
double gradient_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                               double floor = 1e-12);

/// Compares an analytic gradient with central differences on `coords` (all when empty).
double check_gradient(const std::function<double(const Tensor&)>& f, const Tensor& analytic_gradient, const Tensor& x,
                      const std::vector<std::size_t>& coords = {}, double h = 1e-6);

std::vector<std::size_t> sample_coords(std::size_t n, std::size_t count, std::uint64_t seed);

/// Logits from a pool5 vector with the fc6/fc7 gates fully open: W8 (W7 (W6 p + b6) + b7) + b8,
/// evaluated as a dense Eigen matrix chain.
Eigen::VectorXd dense_chain_logits(const NetworkWeights& weights, const NetworkSpec& spec, const Tensor& pool5);

/// Reference nearest neighbour: plain loops over every entry, ties to the lowest index.
NearestNeighborField brute_force_match(const PatchDatabase& db, const Tensor& estimate, int stride);

/// The desk-scale reference setup: toy net trained with default parameters on scene seed 7
/// (60 per class); validation scenes from seed 99 (5 per class). Trained once per process.
struct ReferenceSetup {
  NetworkSpec spec;
  NetworkWeights weights;
  Dataset train;
  Dataset val;
};
const ReferenceSetup& reference_setup();

}  // namespace npath::testing
