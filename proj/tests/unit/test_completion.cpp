#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>

#include "npath/completion.hpp"
#include "npath/pathways.hpp"
#include "npath/topics.hpp"
#include "support.hpp"

using namespace npath;
using namespace npath::testing;

namespace {

Tensor box_mask(std::size_t size, std::size_t r0, std::size_t c0, std::size_t extent) {
  Tensor m({size, size});
  for (std::size_t r = r0; r < r0 + extent; ++r)
    for (std::size_t c = c0; c < c0 + extent; ++c) m.at(r, c) = 1.0;
  return m;
}

double ones(const Tensor& m) {
  double n = 0;
  for (double v : m.data()) n += v;
  return n;
}

double logit(const ReferenceSetup& ref, const Tensor& raw, int t) {
  return forward(ref.weights, ref.spec, whiten(raw, ref.weights.input_stats)).logits[static_cast<std::size_t>(t)];
}

}  // namespace

TEST_CASE("context prediction") {
  const ReferenceSetup& ref = reference_setup();
  const Tensor& img = ref.val.items[3].image;
  const auto plain = forward(ref.weights, ref.spec, whiten(img, ref.weights.input_stats)).logits;
  const auto ranked = predict_context_class(img, Tensor({32, 32}), ref.weights, ref.spec);
  for (std::size_t i = 1; i < ranked.size(); ++i)
    CHECK(plain[static_cast<std::size_t>(ranked[i - 1])] >= plain[static_cast<std::size_t>(ranked[i])]);

  const Tensor all({32, 32}, 1.0);
  Tensor mean_image({3, 32, 32});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 1024; ++i) mean_image[c * 1024 + i] = ref.weights.input_stats.mean[c];
  CHECK(predict_context_class(img, all, ref.weights, ref.spec) ==
        predict_context_class(mean_image, Tensor({32, 32}), ref.weights, ref.spec));

  CHECK_THROWS_AS(predict_context_class(img, Tensor({31, 32}), ref.weights, ref.spec), ValidationError);
  CHECK_THROWS_AS(predict_context_class(img, Tensor({32, 32}, 0.5), ref.weights, ref.spec), ValidationError);
}

TEST_CASE("scene context predicts the class with the object masked out") {
  const ReferenceSetup& ref = reference_setup();
  SceneConfig held_out;
  held_out.per_class = 10;
  held_out.seed = 555;
  const auto samples = make_scene_samples(held_out);
  int top3 = 0;
  for (const auto& s : samples) {
    const auto ranked = predict_context_class(s.image, s.object_mask, ref.weights, ref.spec);
    top3 += std::find(ranked.begin(), ranked.begin() + 3, s.label) != ranked.begin() + 3;
  }
  CHECK(top3 >= 0.8 * static_cast<double>(samples.size()));
}

TEST_CASE("completion touches only the editable region") {
  const ReferenceSetup& ref = reference_setup();
  const Tensor& img = ref.val.items[1].image;
  const Tensor mask = box_mask(32, 8, 10, 12);
  InversionConfig c;
  c.iterations = 0;
  CHECK(complete(img, mask, 2, {}, ref.weights, ref.spec, c).image.bit_equal(img));

  c.iterations = 60;
  const CompletionResult r = complete(img, mask, 2, {}, ref.weights, ref.spec, c);
  bool changed = false;
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t i = 0; i < 1024; ++i) {
      const std::size_t k = ch * 1024 + i;
      if (mask[i] == 0.0) {
        CHECK(std::bit_cast<std::uint64_t>(r.image[k]) == std::bit_cast<std::uint64_t>(img[k]));
      } else {
        changed |= r.image[k] != img[k];
      }
    }
  CHECK(changed);
  CHECK(r.run.energy_trace.size() == 60);

  CHECK_THROWS_AS(complete(img, Tensor({32, 32}), 0, {}, ref.weights, ref.spec, c), ValidationError);
}

TEST_CASE("completion raises the class score over the mean fill") {
  const ReferenceSetup& ref = reference_setup();
  InversionConfig c;
  c.iterations = 100;
  int better = 0, runs = 0;
  for (std::size_t i = 0; i < ref.val.size(); i += 4) {
    const Tensor& img = ref.val.items[i].image;
    const Tensor mask = box_mask(32, 10, 10, 12);
    const int t = (ref.val.items[i].label + 1) % ref.spec.class_count;
    const CompletionResult r = complete(img, mask, t, {}, ref.weights, ref.spec, c);
    better += logit(ref, r.image, t) > logit(ref, mean_fill(img, mask, ref.weights), t);
    ++runs;
  }
  CHECK(better == runs);
}

TEST_CASE("smoothed class score rises over a topic-guided completion") {
  const ReferenceSetup& ref = reference_setup();
  const int t = 1;
  std::vector<Tensor> inputs;
  for (const auto& it : ref.train.of_class(t).items) inputs.push_back(whiten(it.image, ref.weights.input_stats));
  const TopicModel m = nmf(extract_fc7(inputs, ref.weights, ref.spec), 6, 200, 1);
  const Eigen::VectorXd b = m.basis.row(0).transpose();
  const MaskSet pathway = topic_mask(std::vector<double>(b.data(), b.data() + b.size()));
  InversionConfig c;
  c.iterations = 120;
  const CompletionResult r =
      complete(ref.val.items[0].image, box_mask(32, 6, 6, 16), t, pathway, ref.weights, ref.spec, c);
  std::vector<double> smooth;
  const auto& trace = r.run.energy_trace;
  for (std::size_t i = 10; i <= trace.size(); ++i) {
    double s = 0.0;
    for (std::size_t k = i - 10; k < i; ++k) s -= trace[k].data_energy;
    smooth.push_back(s / 10.0);
  }
  for (std::size_t i = 1; i < smooth.size(); ++i) CHECK(smooth[i] >= smooth[i - 1]);
}

TEST_CASE("hole filling and small components") {
  Tensor ring({5, 5});
  for (std::size_t r = 1; r <= 3; ++r)
    for (std::size_t c = 1; c <= 3; ++c) ring.at(r, c) = 1.0;
  ring.at(2, 2) = 0.0;
  CHECK(fill_holes(ring).at(2, 2) == 1.0);
  CHECK(ones(fill_holes(ring)) == 9.0);

  Tensor open = ring;
  open.at(1, 2) = 0.0;
  CHECK(fill_holes(open).at(2, 2) == 0.0);
  CHECK(fill_holes(open).bit_equal(open));

  Tensor specks({6, 6});
  specks.at(0, 0) = 1.0;
  for (std::size_t r = 3; r < 6; ++r)
    for (std::size_t c = 3; c < 6; ++c) specks.at(r, c) = 1.0;
  const Tensor kept = remove_small_components(specks, 2);
  CHECK(kept.at(0, 0) == 0.0);
  CHECK(ones(kept) == 9.0);
}

TEST_CASE("saliency thresholds") {
  const SaliencyMask zero = saliency_mask_from_gradient(Tensor({3, 8, 8}), 95.0, 1);
  CHECK(zero.zero_gradient);
  CHECK(ones(zero.mask) == 0.0);

  const Tensor g = random_tensor({3, 100, 100}, 12);
  const double density = ones(threshold_saliency(g, 99.0)) / 10000.0;
  CHECK(density >= 0.005);
  CHECK(density <= 0.015);

  Tensor blob({3, 9, 9});
  for (std::size_t r = 2; r <= 6; ++r)
    for (std::size_t c = 2; c <= 6; ++c) blob.at(1, r, c) = 1.0;
  blob.at(1, 4, 4) = 0.0;
  const SaliencyMask filled = saliency_mask_from_gradient(blob, 50.0, 1);
  CHECK(filled.mask.at(4, 4) == 1.0);
  CHECK(ones(filled.mask) == 25.0);

  const SaliencyMask base = saliency_mask_from_gradient(g, 90.0, 3);
  for (double scale : {1e-6, 0.5, 7.0, 1e6})
    CHECK(saliency_mask_from_gradient(g * scale, 90.0, 3).mask.bit_equal(base.mask));

  CHECK_THROWS_AS(threshold_saliency(g, 0.0), ValidationError);
  CHECK_THROWS_AS(threshold_saliency(g, 100.0), ValidationError);
}

TEST_CASE("saliency on the trained toy net lands on the image") {
  const ReferenceSetup& ref = reference_setup();
  const auto& item = ref.val.items[2];
  const SaliencyMask m = saliency_mask(item.image, item.label, ref.weights, ref.spec, 95.0, 10);
  CHECK_FALSE(m.zero_gradient);
  CHECK(m.mask.shape() == Shape{32, 32});
  CHECK(ones(m.mask) > 0.0);
}
