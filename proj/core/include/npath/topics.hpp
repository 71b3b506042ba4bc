#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "npath/network.hpp"

namespace npath {

/// Non-negative factorization V ~= coefficients * basis of one class's fc7 features.
struct TopicModel {
  Eigen::MatrixXd basis;         // topics x fc7 dims
  Eigen::MatrixXd coefficients;  // images x topics
  int class_id = -1;
  double reconstruction_error = 0.0;  // ||V - coefficients * basis||_F
  std::vector<double> objective_trace;  // squared Frobenius error after each update

  int topics() const { return static_cast<int>(basis.rows()); }
};

/// Post-ReLU fc7 vectors, one row per image. Inputs are whitened network inputs.
Eigen::MatrixXd extract_fc7(const std::vector<Tensor>& inputs, const NetworkWeights& weights, const NetworkSpec& spec);

/// Lee-Seung multiplicative updates on the Frobenius objective from a seeded uniform init.
TopicModel nmf(const Eigen::MatrixXd& V, int rank, int iterations, std::uint64_t seed);

/// fc8 as a dense affine map; `with_bias = false` zeroes the bias.
struct LinearHead {
  Eigen::MatrixXd weight;  // classes x fc7 dims
  Eigen::VectorXd bias;
};
LinearHead fc8_head(const NetworkWeights& weights, const NetworkSpec& spec, bool with_bias = true);

enum class ConeReading {
  scaled_combination,  // lambda * ((1 - alpha) f1 + alpha f2)
  literal,             // lambda * (1 - alpha) f1 + alpha f2
};

struct ConePoint {
  Eigen::VectorXd feature;
  int predicted_class = 0;
};

ConePoint cone_membership(const Eigen::VectorXd& f1, const Eigen::VectorXd& f2, double lambda, double alpha,
                          const LinearHead& head, ConeReading reading = ConeReading::scaled_combination);

int argmax(const Eigen::VectorXd& v);

/// Row-normalized coefficients; all-zero rows become uniform.
Eigen::MatrixXd topic_probabilities(const TopicModel& model);
/// scores(topic, attribute) = sum of topic probabilities over images carrying that attribute.
/// Images with a negative label are unlabeled and skipped.
Eigen::MatrixXd score_topics(const TopicModel& model, const std::vector<int>& labels, int attribute_count);

struct RankedItem {
  std::size_t id = 0;
  double score = 0.0;  // distance to the query, lower is closer
};

enum class RetrievalMode { knn_fc7, topic_projection };

/// Non-negative least-squares coefficient of `v` on a single basis vector: max(0, <v,b> / <b,b>).
double topic_projection(const Eigen::VectorXd& v, const Eigen::VectorXd& basis_vector);

/// Ranks collection rows by distance to the query (ties by id).
std::vector<RankedItem> retrieve(const Eigen::VectorXd& query, const Eigen::MatrixXd& collection, RetrievalMode mode,
                                 const TopicModel* model = nullptr, int topic = 0);

inline constexpr std::uint16_t kTopicModelVersion = 1;
void save_topic_model(const std::filesystem::path& path, const TopicModel& model);
TopicModel load_topic_model(const std::filesystem::path& path);

}  // namespace npath
