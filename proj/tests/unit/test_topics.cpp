#include <doctest.h>

#include <filesystem>
#include <random>

#include "npath/inversion.hpp"
#include "npath/topics.hpp"
#include "support.hpp"

using namespace npath;
using namespace npath::testing;

namespace {

Eigen::MatrixXd random_nonnegative(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

LinearHead identity_head() {
  return {Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2)};
}

}  // namespace

TEST_CASE("fc7 extraction") {
  const NetworkSpec spec = small_spec();
  NetworkWeights w = random_weights(spec, 3);
  const Tensor a = random_tensor(spec.input, 1), b = random_tensor(spec.input, 2);
  const Eigen::MatrixXd f = extract_fc7({a, b, a}, w, spec);
  CHECK(f.rows() == 3);
  CHECK(f.cols() == 10);
  CHECK(f.row(0) == f.row(2));
  CHECK((f.array() >= 0.0).all());

  w.layers[spec.topology().fc[1]].bias.fill(-1e3);
  CHECK(extract_fc7({a}, w, spec).isZero(0.0));
  CHECK_THROWS_AS(extract_fc7({}, w, spec), ValidationError);

  const ReferenceSetup& ref = reference_setup();
  std::vector<Tensor> inputs;
  for (const auto& item : ref.val.items) inputs.push_back(whiten(item.image, ref.weights.input_stats));
  CHECK((extract_fc7(inputs, ref.weights, ref.spec).array() >= 0.0).all());
}

TEST_CASE("nmf recovers exactly factorable matrices") {
  Eigen::MatrixXd diag(2, 2);
  diag << 4, 0, 0, 9;
  CHECK(nmf(diag, 2, 5000, 1).reconstruction_error < 1e-6);
  Eigen::MatrixXd outer(2, 2);
  outer << 1, 2, 2, 4;
  CHECK(nmf(outer, 1, 500, 1).reconstruction_error < 1e-6);
}

TEST_CASE("nmf objective never increases and factors stay non-negative") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Eigen::MatrixXd V = random_nonnegative(50, 20, seed);
    const TopicModel m = nmf(V, 5, 300, seed);
    REQUIRE(m.objective_trace.size() == 300);
    for (std::size_t i = 1; i < m.objective_trace.size(); ++i) CHECK(m.objective_trace[i] <= m.objective_trace[i - 1]);
    CHECK((m.basis.array() >= 0.0).all());
    CHECK((m.coefficients.array() >= 0.0).all());
    CHECK(m.reconstruction_error == doctest::Approx(std::sqrt(m.objective_trace.back())).epsilon(1e-12));
  }
}

TEST_CASE("nmf is seeded and validates its input") {
  const Eigen::MatrixXd V = random_nonnegative(8, 6, 3);
  CHECK(nmf(V, 3, 50, 9).basis == nmf(V, 3, 50, 9).basis);
  CHECK(nmf(V, 3, 50, 9).basis != nmf(V, 3, 50, 10).basis);
  Eigen::MatrixXd neg = V;
  neg(2, 2) = -0.1;
  CHECK_THROWS_AS(nmf(neg, 2, 10, 1), ValidationError);
  CHECK_THROWS_AS(nmf(V, 7, 10, 1), ValidationError);
  CHECK_THROWS_AS(nmf(V, 0, 10, 1), ValidationError);
}

TEST_CASE("cone membership examples") {
  const Eigen::Vector2d f1(2, 1), f2(3, 1);
  const ConePoint mid = cone_membership(f1, f2, 1.0, 0.5, identity_head());
  CHECK(mid.feature.isApprox(Eigen::Vector2d(2.5, 1.0)));
  CHECK(mid.predicted_class == 0);
  for (double lambda : {0.01, 1.0, 250.0}) {
    const ConePoint p = cone_membership(f1, f2, lambda, 0.0, identity_head());
    CHECK(p.feature.isApprox(lambda * f1));
    CHECK(p.predicted_class == 0);
  }
  const ConePoint lit = cone_membership(f1, f2, 2.0, 0.5, identity_head(), ConeReading::literal);
  CHECK(lit.feature.isApprox(Eigen::Vector2d(2.0 * 0.5 * 2 + 0.5 * 3, 2.0 * 0.5 * 1 + 0.5 * 1)));
  CHECK_THROWS_AS(cone_membership(f1, f2, 0.0, 0.5, identity_head()), ValidationError);
  CHECK_THROWS_AS(cone_membership(f1, f2, 1.0, 1.5, identity_head()), ValidationError);
}

TEST_CASE("cone invariant on the trained toy net") {
  const ReferenceSetup& ref = reference_setup();
  std::vector<Tensor> inputs;
  for (const auto& item : ref.val.items) inputs.push_back(whiten(item.image, ref.weights.input_stats));
  const Eigen::MatrixXd F = extract_fc7(inputs, ref.weights, ref.spec);
  const LinearHead free = fc8_head(ref.weights, ref.spec, false);
  const LinearHead biased = fc8_head(ref.weights, ref.spec, true);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> alpha(0.0, 1.0), log_lambda(-3.0, 3.0);
  int pairs = 0;
  for (Eigen::Index i = 0; i < F.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < F.rows(); ++j) {
      const Eigen::VectorXd f1 = F.row(i).transpose(), f2 = F.row(j).transpose();
      const int t = argmax(free.weight * f1);
      if (argmax(free.weight * f2) != t) continue;
      ++pairs;
      for (int s = 0; s < 50; ++s) {
        const double a = alpha(rng);
        CHECK(cone_membership(f1, f2, std::pow(10.0, log_lambda(rng)), a, free).predicted_class == t);
      }
      const int tb = argmax(biased.weight * f1 + biased.bias);
      if (argmax(biased.weight * f2 + biased.bias) == tb)
        CHECK(cone_membership(f1, f2, 1.0, alpha(rng), biased).predicted_class == tb);
    }
  }
  CHECK(pairs > 0);
}

TEST_CASE("topic scoring") {
  TopicModel one;
  one.coefficients = Eigen::MatrixXd(1, 2);
  one.coefficients << 2, 2;
  one.basis = Eigen::MatrixXd::Ones(2, 3);
  CHECK(topic_probabilities(one).isApprox(Eigen::RowVector2d(0.5, 0.5)));
  one.coefficients.setZero();
  CHECK(topic_probabilities(one).isApprox(Eigen::RowVector2d(0.5, 0.5)));

  TopicModel m;
  m.coefficients = random_nonnegative(30, 4, 5);
  m.coefficients.row(3).setZero();
  m.basis = random_nonnegative(4, 6, 6);
  std::vector<int> labels(30);
  for (int i = 0; i < 30; ++i) labels[static_cast<std::size_t>(i)] = i % 4 - 1;  // -1 is unlabeled
  const Eigen::MatrixXd scores = score_topics(m, labels, 3);
  CHECK(scores.rows() == 4);
  CHECK(scores.cols() == 3);
  for (int a = 0; a < 3; ++a) {
    const auto count = static_cast<double>(std::count(labels.begin(), labels.end(), a));
    CHECK(scores.col(a).sum() == doctest::Approx(count).epsilon(1e-12));
  }
  CHECK(scores.sum() == doctest::Approx(22.0).epsilon(1e-12));
  CHECK_THROWS_AS(score_topics(m, std::vector<int>(29, 0), 3), ValidationError);
  CHECK_THROWS_AS(score_topics(m, std::vector<int>(30, 3), 3), ValidationError);
}

TEST_CASE("retrieval rankings") {
  const Eigen::MatrixXd C = random_nonnegative(12, 5, 7);
  const auto self = retrieve(C.row(4).transpose(), C, RetrievalMode::knn_fc7);
  CHECK(self.front().id == 4);
  CHECK(self.front().score == 0.0);
  for (std::size_t i = 1; i < self.size(); ++i) CHECK(self[i - 1].score <= self[i].score);

  TopicModel m;
  m.basis = Eigen::MatrixXd::Zero(2, 5);
  m.basis(1, 3) = 1.0;
  m.coefficients = Eigen::MatrixXd::Ones(12, 2);
  const Eigen::VectorXd q = random_nonnegative(5, 1, 8);
  const auto ranked = retrieve(q, C, RetrievalMode::topic_projection, &m, 1);
  for (const auto& r : ranked) CHECK(r.score == doctest::Approx(std::abs(q(3) - C(static_cast<Eigen::Index>(r.id), 3))).epsilon(1e-15));
  for (std::size_t i = 1; i < ranked.size(); ++i) CHECK(ranked[i - 1].score <= ranked[i].score);

  const Eigen::MatrixXd single = C.topRows(1);
  CHECK(retrieve(q, single, RetrievalMode::knn_fc7).front().id == 0);
  CHECK(retrieve(q, single, RetrievalMode::topic_projection, &m, 1).front().id == 0);
  CHECK_THROWS_AS(retrieve(q, Eigen::MatrixXd(0, 5), RetrievalMode::knn_fc7), ValidationError);
  CHECK_THROWS_AS(retrieve(q, C, RetrievalMode::topic_projection), ValidationError);
  CHECK_THROWS_AS(retrieve(q, C, RetrievalMode::topic_projection, &m, 2), ValidationError);

  CHECK(topic_projection(Eigen::Vector2d(3, 4), Eigen::Vector2d(0, 2)) == 2.0);
  CHECK(topic_projection(Eigen::Vector2d(-3, 0), Eigen::Vector2d(1, 0)) == 0.0);
}

TEST_CASE("topic model files round trip") {
  TopicModel m = nmf(random_nonnegative(10, 6, 1), 3, 20, 1);
  m.class_id = 2;
  const auto dir = std::filesystem::temp_directory_path() / "npath_unit";
  std::filesystem::create_directories(dir);
  save_topic_model(dir / "m.nptm", m);
  const TopicModel back = load_topic_model(dir / "m.nptm");
  CHECK(back.class_id == 2);
  CHECK(back.basis == m.basis);
  CHECK(back.coefficients == m.coefficients);
  CHECK(back.reconstruction_error == m.reconstruction_error);
  CHECK_THROWS_AS(load_topic_model(dir / "missing.nptm"), ValidationError);
}
