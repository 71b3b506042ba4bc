#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "npath/binary_io.hpp"
#include "npath/image_io.hpp"
#include "npath/inversion.hpp"
#include "npath/patch_prior.hpp"
#include "support.hpp"

using namespace npath;
using namespace npath::testing;
namespace fs = std::filesystem;

namespace {

PatchDatabase random_db(std::size_t n, int patch, std::uint64_t seed) {
  PatchDatabase db(3, patch, 0);
  const std::size_t dims = 3u * patch * patch;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor t = random_tensor({dims}, seed + i, -2.0, 2.0);
    db.add({}, t.data(), {static_cast<std::uint32_t>(i), 0, 0});
  }
  return db;
}

}  // namespace

TEST_CASE("normalize_patch examples") {
  const Tensor p({1, 1, 2}, std::vector<double>{12.0, 8.0});
  CHECK(normalize_patch(p, {{10.0}, {2.0}}).values() == std::vector<double>{1.0, -1.0});
  CHECK(normalize_patch(p, {{0.0}, {1.0}}).values() == p.values());
  bool clamped = false;
  const Tensor constant({3, 4, 4}, 0.7);
  const Tensor n = normalize_image(constant, &clamped);
  CHECK(clamped);
  for (double v : n.data()) CHECK(std::abs(v) < 1e-9);
  CHECK_THROWS_AS(normalize_patch(p, {{0.0, 1.0}, {1.0, 1.0}}), ValidationError);
}

TEST_CASE("whole-image normalization is invariant to positive affine maps") {
  const Tensor img = random_tensor({3, 10, 10}, 3, 0.0, 1.0);
  const Tensor moved = img * 2.5 + Tensor(img.shape(), 0.3);
  const Tensor a = normalize_image(img), b = normalize_image(moved);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  const ChannelStats s = image_stats(a);
  for (int c = 0; c < 3; ++c) {
    CHECK(s.mean[static_cast<std::size_t>(c)] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(s.std[static_cast<std::size_t>(c)] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("patch geometry helpers") {
  CHECK(grid_positions(8, 4, 4) == std::vector<int>{0, 4});
  CHECK(grid_positions(8, 4, 2) == std::vector<int>{0, 2, 4});
  CHECK(grid_positions(3, 4, 1).empty());
  CHECK(default_patch_size(195) == 67);
  const NetworkSpec toy = toy_spec();
  CHECK(pool5_receptive_field_size(toy) == 10);
  CHECK(default_patch_size(10) == 3);
  const auto [r, c] = pool5_crop_origin(toy, 1, 2, 3);
  const PixelRect rf = receptive_field(toy, toy.topology().pool5, 1, 2);
  CHECK(r == rf.row0 + 5 - 1);
  CHECK(c == rf.col0 + 5 - 1);
}

TEST_CASE("class database sampling counts") {
  const Tensor img = random_tensor({3, 8, 8}, 1, 0.0, 1.0);
  CHECK(build_class_database({img}, 4, 4).size() == 4);
  CHECK(build_class_database({img}, 4, 1).size() == 25);
  const PatchDatabase twice = build_class_database({img, img}, 4, 4);
  CHECK(twice.size() == 8);
  CHECK(std::equal(twice.patch(0).begin(), twice.patch(0).end(), twice.patch(4).begin()));
  CHECK(twice.provenance(5) == PatchProvenance{1, 0, 4});
  CHECK(twice.feature_dim() == 0);
  CHECK_THROWS_AS(build_class_database({}, 4, 4), ValidationError);
}

TEST_CASE("feature database pairs every pool5 location with a normalized crop") {
  const NetworkSpec spec = toy_spec();
  const NetworkWeights w = random_weights(spec, 2, 0.2);
  const Tensor img = random_tensor(spec.input, 3, 0.0, 1.0);
  const PatchDatabase db = build_database({img}, w, spec, 3, 1000, 1);
  REQUIRE(db.size() == 36);
  CHECK(db.feature_dim() == 16);
  const Tensor input = whiten(img, w.input_stats);
  const Tensor f = forward(w, spec, input, nullptr, spec.topology().pool5).activations[spec.topology().pool5];
  const Tensor n = normalize_image(input);
  for (std::size_t i = 0; i < db.size(); ++i) {
    const auto& prov = db.provenance(i);
    CHECK(prov.image_id == 0);
    const int r = static_cast<int>(i) / 6, c = static_cast<int>(i) % 6;
    const auto [row, col] = pool5_crop_origin(spec, r, c, 3);
    CHECK(prov.row == row);
    CHECK(prov.col == col);
    CHECK(db.feature(i)[5] == f.at(5, static_cast<std::size_t>(r), static_cast<std::size_t>(c)));
    CHECK(db.patch(i)[4] == n.at(0, static_cast<std::size_t>(row + 1), static_cast<std::size_t>(col + 1)));
  }
  const PatchDatabase small = build_database({img, img}, w, spec, 3, 10, 7);
  const PatchDatabase again = build_database({img, img}, w, spec, 3, 10, 7);
  CHECK(small.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(small.provenance(i) == again.provenance(i));
  CHECK_THROWS_AS(build_database({}, w, spec, 3, 10, 1), ValidationError);
  CHECK_THROWS_AS(build_database({img}, w, spec, 10, 10, 1), ValidationError);
  CHECK_THROWS_AS(build_database({img}, w, spec, 3, 0, 1), ValidationError);
}

TEST_CASE("matching an image against its own patches") {
  const Tensor img = random_tensor({3, 12, 12}, 9, 0.0, 1.0);
  const PatchDatabase db = build_class_database({img}, 4, 2);
  for (auto method : {MatchMethod::brute_force, MatchMethod::accelerated}) {
    const NearestNeighborField f = match(db, img, 2, method);
    REQUIRE(f.matches.size() == db.size());
    for (std::size_t i = 0; i < f.matches.size(); ++i) {
      CHECK(f.matches[i].distance == 0.0);
      CHECK(f.matches[i].index == i);
    }
  }
  // Duplicate entries: ties go to the lowest index.
  const PatchDatabase dup = build_class_database({img, img}, 4, 2);
  const NearestNeighborField f = match(dup, img, 2);
  for (std::size_t i = 0; i < f.matches.size(); ++i) CHECK(f.matches[i].index == i);
}

TEST_CASE("single-entry and empty databases") {
  const Tensor img = random_tensor({3, 8, 8}, 4);
  const PatchDatabase one = random_db(1, 4, 10);
  for (const auto& m : match(one, img, 2).matches) CHECK(m.index == 0);
  CHECK_THROWS_AS(match(PatchDatabase(3, 4, 0), img, 2), ValidationError);
  CHECK_THROWS_AS(match(one, random_tensor({1, 8, 8}, 1), 2), ValidationError);
}

TEST_CASE("accelerated matching equals the brute-force oracle") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const PatchDatabase db = random_db(100, 4, seed * 1000);
    const Tensor img = random_tensor({3, 32, 32}, seed);
    const NearestNeighborField ref = brute_force_match(db, img, 2);
    for (auto method : {MatchMethod::brute_force, MatchMethod::accelerated}) {
      const NearestNeighborField got = match(db, img, 2, method);
      REQUIRE(got.matches.size() == ref.matches.size());
      for (std::size_t i = 0; i < ref.matches.size(); ++i) {
        CHECK(got.matches[i].index == ref.matches[i].index);
        CHECK(got.matches[i].row == ref.matches[i].row);
        CHECK(got.matches[i].col == ref.matches[i].col);
        CHECK(got.matches[i].distance == doctest::Approx(ref.matches[i].distance).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("warp visualization") {
  SUBCASE("constant patches give a constant image") {
    PatchDatabase db(3, 2, 0);
    db.add({}, std::vector<double>(12, 0.25), {});
    NearestNeighborField f{2, {}};
    for (int r : {0, 2})
      for (int c : {0, 2}) f.matches.push_back({r, c, 0, 0.0});
    const Tensor out = warp_visualization(f, db, {3, 4, 4}, {{0, 0, 0}, {1, 1, 1}});
    for (double v : out.data()) CHECK(v == 0.25);
  }
  SUBCASE("non-overlapping tiles are copied exactly") {
    const Tensor img = random_tensor({3, 8, 8}, 5);
    const Tensor n = normalize_image(img);
    const PatchDatabase db = build_class_database({img}, 4, 4);
    const NearestNeighborField f = match(db, img, 4);
    const Tensor out = warp_visualization(f, db, img.shape(), {{0, 0, 0}, {1, 1, 1}});
    CHECK(out.values() == n.values());
  }
  SUBCASE("stride-1 self matches reconstruct the normalized image") {
    const Tensor img = random_tensor({3, 10, 10}, 6);
    const PatchDatabase db = build_class_database({img}, 3, 1);
    const NearestNeighborField f = match(db, img, 1);
    const ChannelStats s = image_stats(img);
    const Tensor out = warp_visualization(f, db, img.shape(), s);
    CHECK(l2_norm(out - img) < 1e-6);
  }
  SUBCASE("uncovered pixels take the target mean") {
    PatchDatabase db(3, 2, 0);
    db.add({}, std::vector<double>(12, 1.0), {});
    NearestNeighborField f{2, {{0, 0, 0, 0.0}}};
    const Tensor out = warp_visualization(f, db, {3, 3, 3}, {{0.5, 0.5, 0.5}, {2, 2, 2}});
    CHECK(out.at(0, 0, 0) == 2.5);
    CHECK(out.at(1, 2, 2) == 0.5);
    NearestNeighborField outside{2, {{2, 2, 0, 0.0}}};
    CHECK_THROWS_AS(warp_visualization(outside, db, {3, 3, 3}, {{0, 0, 0}, {1, 1, 1}}), ValidationError);
  }
}

TEST_CASE("feature retrieval finds the entry with the same direction") {
  const NetworkSpec spec = toy_spec();
  const NetworkWeights w = random_weights(spec, 12, 0.2);
  const Tensor a = random_tensor(spec.input, 13, 0.0, 1.0), b = random_tensor(spec.input, 14, 0.0, 1.0);
  const PatchDatabase db = build_database({a, b}, w, spec, 3, 1000, 1);
  const std::size_t pool5 = spec.topology().pool5;
  Tensor f = forward(w, spec, whiten(b, w.input_stats), nullptr, pool5).activations[pool5];
  f *= 3.0;  // cosine normalization ignores the scale
  const NearestNeighborField field = retrieve_by_feature(db, f, spec, 2);
  REQUIRE(field.matches.size() == 72);
  for (std::size_t loc = 0; loc < 36; ++loc) {
    const PatchMatch& best = field.matches[2 * loc];
    CHECK(best.distance <= field.matches[2 * loc + 1].distance);
    const double d = best.distance;
    CHECK(d < 1e-12);
  }
  CHECK_THROWS_AS(retrieve_by_feature(db, f, spec, 0), ValidationError);
  CHECK_THROWS_AS(retrieve_by_feature(build_class_database({a}, 3, 3), f, spec, 1), ValidationError);
  const auto refs = referenced_entries(field);
  CHECK(std::is_sorted(refs.begin(), refs.end()));
  CHECK(std::adjacent_find(refs.begin(), refs.end()) == refs.end());
}

TEST_CASE("patch database files round trip and reject corruption") {
  const NetworkSpec spec = toy_spec();
  const NetworkWeights w = random_weights(spec, 21, 0.2);
  const PatchDatabase db = build_database({random_tensor(spec.input, 22, 0.0, 1.0)}, w, spec, 3, 20, 3);
  const fs::path dir = fs::temp_directory_path() / "npath_unit";
  fs::create_directories(dir);
  const fs::path path = dir / "db.nppd";
  save_patch_database(path, db);
  const PatchDatabase back = load_patch_database(path);
  REQUIRE(back.size() == db.size());
  for (std::size_t i = 0; i < db.size(); ++i) {
    CHECK(back.provenance(i) == db.provenance(i));
    CHECK(std::equal(db.patch(i).begin(), db.patch(i).end(), back.patch(i).begin()));
    CHECK(std::equal(db.feature(i).begin(), db.feature(i).end(), back.feature(i).begin()));
  }
  auto bytes = read_file(path);
  bytes.resize(bytes.size() - 3);
  write_file(dir / "cut.nppd", bytes);
  CHECK_THROWS_AS(load_patch_database(dir / "cut.nppd"), ValidationError);
  bytes = read_file(path);
  bytes[1] = 'Q';
  write_file(dir / "magic.nppd", bytes);
  CHECK_THROWS_AS(load_patch_database(dir / "magic.nppd"), ValidationError);
  bytes = read_file(path);
  bytes[4] = 7;
  write_file(dir / "version.nppd", bytes);
  CHECK_THROWS_AS(load_patch_database(dir / "version.nppd"), ValidationError);
}
