#include "npath/topics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "npath/binary_io.hpp"

namespace npath {
namespace {

constexpr double kDenominatorFloor = 1e-300;

double frobenius2(const Eigen::MatrixXd& V, const Eigen::MatrixXd& H, const Eigen::MatrixXd& B) {
  return (V - H * B).squaredNorm();
}

void write_matrix(ByteWriter& w, const Eigen::MatrixXd& m) {
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f64(m(r, c));
}

Eigen::MatrixXd read_matrix(ByteReader& r) {
  const std::uint32_t rows = r.u32(), cols = r.u32();
  check(rows < (1u << 24) && cols < (1u << 24), r.origin() + ": implausible matrix size");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.f64();
  return m;
}

}  // namespace

Eigen::MatrixXd extract_fc7(const std::vector<Tensor>& inputs, const NetworkWeights& weights, const NetworkSpec& spec) {
  check(!inputs.empty(), "extract_fc7: empty image set");
  const Topology topo = spec.topology();
  const std::size_t relu7 = topo.relu[1];
  const std::size_t dims = topo.output_shapes[relu7][0];
  Eigen::MatrixXd out(static_cast<Eigen::Index>(inputs.size()), static_cast<Eigen::Index>(dims));
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const ForwardTrace t = forward(weights, spec, inputs[i], nullptr, relu7);
    const Tensor& f = t.activations[relu7];
    for (std::size_t k = 0; k < dims; ++k) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = f[k];
  }
  return out;
}

TopicModel nmf(const Eigen::MatrixXd& V, int rank, int iterations, std::uint64_t seed) {
  check(V.rows() > 0 && V.cols() > 0, "nmf: empty matrix");
  check((V.array() >= 0.0).all(), "nmf: input matrix has negative entries");
  check(rank > 0 && rank <= std::min(V.rows(), V.cols()), "nmf: rank must be in [1, min(rows, cols)]");
  check(iterations >= 0, "nmf: iterations must be >= 0");
  std::mt19937_64 rng(seed);
  // Scale the init so that H * B has roughly the magnitude of V.
  const double scale = std::sqrt(std::max(V.mean(), 1e-12) / rank);
  std::uniform_real_distribution<double> u(0.5 * scale, 1.5 * scale);
  Eigen::MatrixXd H(V.rows(), rank), B(rank, V.cols());
  for (Eigen::Index i = 0; i < H.size(); ++i) H.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < B.size(); ++i) B.data()[i] = u(rng);

  TopicModel model;
  model.objective_trace.reserve(static_cast<std::size_t>(iterations));
  for (int it = 0; it < iterations; ++it) {
    const Eigen::MatrixXd Bnum = H.transpose() * V;
    const Eigen::MatrixXd Bden = (H.transpose() * H) * B;
    B = B.cwiseProduct(Bnum.cwiseQuotient(Bden.cwiseMax(kDenominatorFloor)));
    const Eigen::MatrixXd Hnum = V * B.transpose();
    const Eigen::MatrixXd Hden = H * (B * B.transpose());
    H = H.cwiseProduct(Hnum.cwiseQuotient(Hden.cwiseMax(kDenominatorFloor)));
    model.objective_trace.push_back(frobenius2(V, H, B));
  }
  model.basis = std::move(B);
  model.coefficients = std::move(H);
  model.reconstruction_error = std::sqrt(frobenius2(V, model.coefficients, model.basis));
  return model;
}

LinearHead fc8_head(const NetworkWeights& weights, const NetworkSpec& spec, bool with_bias) {
  const Topology topo = spec.topology();
  const LayerParams& p = weights.layers[topo.fc[2]];
  LinearHead head;
  head.weight.resize(static_cast<Eigen::Index>(p.weight.dim(0)), static_cast<Eigen::Index>(p.weight.dim(1)));
  for (Eigen::Index r = 0; r < head.weight.rows(); ++r)
    for (Eigen::Index c = 0; c < head.weight.cols(); ++c)
      head.weight(r, c) = p.weight[static_cast<std::size_t>(r * head.weight.cols() + c)];
  head.bias = Eigen::VectorXd::Zero(head.weight.rows());
  if (with_bias)
    for (Eigen::Index r = 0; r < head.bias.size(); ++r) head.bias(r) = p.bias[static_cast<std::size_t>(r)];
  return head;
}

int argmax(const Eigen::VectorXd& v) {
  Eigen::Index i = 0;
  v.maxCoeff(&i);
  return static_cast<int>(i);
}

ConePoint cone_membership(const Eigen::VectorXd& f1, const Eigen::VectorXd& f2, double lambda, double alpha,
                          const LinearHead& head, ConeReading reading) {
  check(lambda > 0.0, "cone_membership: lambda must be positive");
  check(alpha >= 0.0 && alpha <= 1.0, "cone_membership: alpha must be in [0, 1]");
  check(f1.size() == f2.size() && f1.size() == head.weight.cols(), "cone_membership: feature dimension mismatch");
  ConePoint p;
  p.feature = reading == ConeReading::scaled_combination ? Eigen::VectorXd(lambda * ((1.0 - alpha) * f1 + alpha * f2))
                                                         : Eigen::VectorXd(lambda * (1.0 - alpha) * f1 + alpha * f2);
  p.predicted_class = argmax(head.weight * p.feature + head.bias);
  return p;
}

Eigen::MatrixXd topic_probabilities(const TopicModel& model) {
  Eigen::MatrixXd p = model.coefficients;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double s = p.row(i).sum();
    if (s > 0.0)
      p.row(i) /= s;
    else
      p.row(i).setConstant(1.0 / static_cast<double>(p.cols()));
  }
  return p;
}

Eigen::MatrixXd score_topics(const TopicModel& model, const std::vector<int>& labels, int attribute_count) {
  check(static_cast<Eigen::Index>(labels.size()) == model.coefficients.rows(),
        "score_topics: one label per image required");
  check(attribute_count > 0, "score_topics: attribute_count must be positive");
  const Eigen::MatrixXd p = topic_probabilities(model);
  Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(p.cols(), attribute_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    check(labels[i] < attribute_count, "score_topics: label out of range");
    scores.col(labels[i]) += p.row(static_cast<Eigen::Index>(i)).transpose();
  }
  return scores;
}

double topic_projection(const Eigen::VectorXd& v, const Eigen::VectorXd& basis_vector) {
  const double bb = basis_vector.squaredNorm();
  check(bb > 0.0, "topic_projection: zero basis vector");
  return std::max(0.0, v.dot(basis_vector) / bb);
}

std::vector<RankedItem> retrieve(const Eigen::VectorXd& query, const Eigen::MatrixXd& collection, RetrievalMode mode,
                                 const TopicModel* model, int topic) {
  check(collection.rows() > 0, "retrieve: empty collection");
  check(query.size() == collection.cols(), "retrieve: query dimension mismatch");
  std::vector<RankedItem> ranked(static_cast<std::size_t>(collection.rows()));
  if (mode == RetrievalMode::knn_fc7) {
    for (Eigen::Index i = 0; i < collection.rows(); ++i)
      ranked[static_cast<std::size_t>(i)] = {static_cast<std::size_t>(i),
                                             (collection.row(i).transpose() - query).norm()};
  } else {
    check(model != nullptr, "retrieve: topic mode needs a fitted topic model");
    check(topic >= 0 && topic < model->topics(), "retrieve: topic index out of range");
    check(model->basis.cols() == query.size(), "retrieve: topic model dimension mismatch");
    const Eigen::VectorXd b = model->basis.row(topic).transpose();
    const double q = topic_projection(query, b);
    for (Eigen::Index i = 0; i < collection.rows(); ++i)
      ranked[static_cast<std::size_t>(i)] = {static_cast<std::size_t>(i),
                                             std::abs(q - topic_projection(collection.row(i).transpose(), b))};
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedItem& a, const RankedItem& b) { return a.score < b.score; });
  return ranked;
}

void save_topic_model(const std::filesystem::path& path, const TopicModel& model) {
  ByteWriter w;
  w.magic("NPTM");
  w.u16(kTopicModelVersion);
  w.u32(static_cast<std::uint32_t>(model.class_id + 1));
  w.f64(model.reconstruction_error);
  write_matrix(w, model.basis);
  write_matrix(w, model.coefficients);
  w.save(path);
}

TopicModel load_topic_model(const std::filesystem::path& path) {
  ByteReader r = ByteReader::open(path);
  r.expect_magic("NPTM");
  const std::uint16_t version = r.u16();
  check(version == kTopicModelVersion, path.string() + ": unsupported topic model version " + std::to_string(version));
  TopicModel m;
  m.class_id = static_cast<int>(r.u32()) - 1;
  m.reconstruction_error = r.f64();
  m.basis = read_matrix(r);
  m.coefficients = read_matrix(r);
  r.expect_end();
  check(m.basis.rows() == m.coefficients.cols(), path.string() + ": basis/coefficient topic counts differ");
  return m;
}

}  // namespace npath
