#include "npath/patch_prior.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "npath/binary_io.hpp"
#include "npath/image_io.hpp"
#include "npath/inversion.hpp"

namespace npath {
namespace {

void copy_patch(const Tensor& normalized, int row, int col, int p, std::vector<double>& out) {
  const std::size_t C = normalized.dim(0);
  out.resize(C * p * p);
  std::size_t k = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (int y = 0; y < p; ++y)
      for (int x = 0; x < p; ++x) out[k++] = normalized.at(c, row + y, col + x);
}

bool better(double d, std::uint32_t i, double best_d, std::uint32_t best_i) {
  return d < best_d || (d == best_d && i < best_i);
}

double full_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Distances |q|^2 + |d|^2 - 2 q.d for a block of queries at once. The expanded form can be off by a
// few ulps of the norms, so every entry within `slack` of the block minimum is re-scored with
// full_distance and the exact winner kept.
void search_block(const PatchDatabase& db, const Eigen::Map<const RowMatrix>& D, const Eigen::VectorXd& d_norms,
                  double max_d_norm, const RowMatrix& Q, std::vector<PatchMatch>& out) {
  const Eigen::MatrixXd Gt = D * Q.transpose();  // entries x queries, one contiguous column per query
  const std::size_t dims = static_cast<std::size_t>(Q.cols());
  for (Eigen::Index qi = 0; qi < Q.rows(); ++qi) {
    const double q_norm = Q.row(qi).squaredNorm();
    const Eigen::ArrayXd approx = d_norms.array() - 2.0 * Gt.col(qi).array();
    const double lowest = approx.minCoeff() + q_norm;
    const double slack = 1e-9 * (q_norm + max_d_norm) + 1e-12;
    const std::span<const double> query(Q.row(qi).data(), dims);
    std::uint32_t best_i = 0;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < approx.size(); ++i) {
      if (approx[i] + q_norm > lowest + slack) continue;
      const double d = full_distance(query, db.patch(static_cast<std::size_t>(i)));
      if (better(d, static_cast<std::uint32_t>(i), best, best_i)) {
        best = d;
        best_i = static_cast<std::uint32_t>(i);
      }
    }
    out.push_back({0, 0, best_i, best});
  }
}

PatchMatch search_brute_force(const PatchDatabase& db, std::span<const double> query) {
  std::uint32_t best_i = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < db.size(); ++i) {
    const double d = full_distance(query, db.patch(i));
    if (d < best) {
      best = d;
      best_i = static_cast<std::uint32_t>(i);
    }
  }
  return {0, 0, best_i, best};
}

std::vector<double> cosine_normalized(std::span<const double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  std::vector<double> out(v.begin(), v.end());
  if (n > 0.0) {
    const double inv = 1.0 / std::sqrt(n);
    for (double& x : out) x *= inv;
  }
  return out;
}

}  // namespace

PatchDatabase::PatchDatabase(int channels, int patch_size, int feature_dim)
    : channels_(channels), patch_size_(patch_size), feature_dim_(feature_dim) {
  check(channels > 0 && patch_size > 0 && feature_dim >= 0, "invalid patch database dimensions");
}

void PatchDatabase::add(std::span<const double> feature, std::span<const double> patch, PatchProvenance provenance) {
  check(feature.size() == static_cast<std::size_t>(feature_dim_), "patch database: feature dimension mismatch");
  check(patch.size() == patch_dims(), "patch database: patch size mismatch");
  features_.insert(features_.end(), feature.begin(), feature.end());
  patches_.insert(patches_.end(), patch.begin(), patch.end());
  provenance_.push_back(provenance);
}

std::span<const double> PatchDatabase::patch(std::size_t i) const {
  return std::span<const double>(patches_).subspan(i * patch_dims(), patch_dims());
}

std::span<const double> PatchDatabase::feature(std::size_t i) const {
  return std::span<const double>(features_).subspan(i * feature_dim_, feature_dim_);
}

PatchDatabase PatchDatabase::subset(std::span<const std::size_t> indices) const {
  PatchDatabase out(channels_, patch_size_, feature_dim_);
  for (auto i : indices) {
    check(i < size(), "patch database subset index out of range");
    out.add(feature(i), patch(i), provenance(i));
  }
  return out;
}

Tensor normalize_patch(const Tensor& patch, const ChannelStats& image_stats, bool* clamped) {
  check(patch.rank() >= 1 && patch.dim(0) == image_stats.mean.size() && image_stats.std.size() == image_stats.mean.size(),
        "normalize_patch: channel count mismatch");
  const std::size_t C = patch.dim(0);
  const std::size_t plane = patch.size() / C;
  Tensor out(patch.shape());
  bool any_clamped = false;
  for (std::size_t c = 0; c < C; ++c) {
    double sd = image_stats.std[c];
    if (!(sd >= kStdEpsilon)) {
      sd = kStdEpsilon;
      any_clamped = true;
    }
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = (patch[c * plane + i] - image_stats.mean[c]) / sd;
  }
  if (clamped) *clamped = any_clamped;
  return out;
}

Tensor normalize_image(const Tensor& image, bool* clamped) {
  return normalize_patch(image, image_stats(image), clamped);
}

std::vector<int> grid_positions(int extent, int patch_size, int stride) {
  check(patch_size > 0 && stride > 0, "grid_positions: patch size and stride must be positive");
  std::vector<int> out;
  for (int p = 0; p + patch_size <= extent; p += stride) out.push_back(p);
  return out;
}

int default_patch_size(int receptive_field_size) {
  return std::max(1, static_cast<int>(std::lround(receptive_field_size * 67.0 / 195.0)));
}

int pool5_receptive_field_size(const NetworkSpec& spec) {
  const Topology topo = spec.topology();
  const Shape& s = topo.output_shapes[topo.pool5];
  const PixelRect rf = receptive_field(spec, topo.pool5, static_cast<int>(s[1] / 2), static_cast<int>(s[2] / 2));
  return std::min(rf.rows, rf.cols);
}

std::pair<int, int> pool5_crop_origin(const NetworkSpec& spec, int row, int col, int patch_size) {
  const Topology topo = spec.topology();
  const PixelRect rf = receptive_field(spec, topo.pool5, row, col);
  const int H = static_cast<int>(spec.input[1]), W = static_cast<int>(spec.input[2]);
  check(patch_size <= H && patch_size <= W, "patch size larger than the image");
  const int r = std::clamp(rf.row0 + rf.rows / 2 - patch_size / 2, 0, H - patch_size);
  const int c = std::clamp(rf.col0 + rf.cols / 2 - patch_size / 2, 0, W - patch_size);
  return {r, c};
}

PatchDatabase build_database(const std::vector<Tensor>& images, const NetworkWeights& weights,
                             const NetworkSpec& spec, int patch_size, std::size_t capacity, std::uint64_t seed) {
  check(!images.empty(), "build_database: empty dataset");
  check(capacity > 0, "build_database: capacity must be positive");
  const Topology topo = spec.topology();
  check(patch_size > 0 && patch_size < pool5_receptive_field_size(spec),
        "build_database: patch size must be smaller than the pool5 receptive field (" +
            std::to_string(pool5_receptive_field_size(spec)) + ")");
  const Shape& p5 = topo.output_shapes[topo.pool5];
  const int channels = static_cast<int>(spec.input[0]);
  PatchDatabase all(channels, patch_size, static_cast<int>(p5[0]));
  std::vector<double> feature(p5[0]), patch;
  for (std::size_t id = 0; id < images.size(); ++id) {
    const Tensor input = whiten(images[id], weights.input_stats);
    const ForwardTrace t = forward(weights, spec, input, nullptr, topo.pool5);
    const Tensor& f = t.activations[topo.pool5];
    const Tensor normalized = normalize_image(input);
    for (std::size_t r = 0; r < p5[1]; ++r) {
      for (std::size_t c = 0; c < p5[2]; ++c) {
        for (std::size_t k = 0; k < p5[0]; ++k) feature[k] = f.at(k, r, c);
        const auto [row, col] = pool5_crop_origin(spec, static_cast<int>(r), static_cast<int>(c), patch_size);
        copy_patch(normalized, row, col, patch_size, patch);
        all.add(feature, patch,
                {static_cast<std::uint32_t>(id), static_cast<std::uint16_t>(row), static_cast<std::uint16_t>(col)});
      }
    }
  }
  if (all.size() <= capacity) return all;
  std::vector<std::size_t> idx(all.size()), chosen;
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::sample(idx.begin(), idx.end(), std::back_inserter(chosen), capacity, rng);
  return all.subset(chosen);
}

PatchDatabase build_class_database(const std::vector<Tensor>& images, int patch_size, int stride) {
  check(!images.empty(), "build_class_database: empty class set");
  const int channels = static_cast<int>(images.front().dim(0));
  PatchDatabase db(channels, patch_size, 0);
  std::vector<double> patch;
  for (std::size_t id = 0; id < images.size(); ++id) {
    const Tensor& img = images[id];
    check(img.rank() == 3 && static_cast<int>(img.dim(0)) == channels, "build_class_database: inconsistent images");
    const Tensor normalized = normalize_image(img);
    for (int r : grid_positions(static_cast<int>(img.dim(1)), patch_size, stride))
      for (int c : grid_positions(static_cast<int>(img.dim(2)), patch_size, stride)) {
        copy_patch(normalized, r, c, patch_size, patch);
        db.add({}, patch, {static_cast<std::uint32_t>(id), static_cast<std::uint16_t>(r), static_cast<std::uint16_t>(c)});
      }
  }
  return db;
}

NearestNeighborField match(const PatchDatabase& db, const Tensor& estimate, int stride, MatchMethod method) {
  check(!db.empty(), "match: empty patch database");
  check(estimate.rank() == 3 && static_cast<int>(estimate.dim(0)) == db.channels(),
        "match: estimate channels do not match the database");
  const int p = db.patch_size();
  const Tensor normalized = normalize_image(estimate);
  const auto rows = grid_positions(static_cast<int>(estimate.dim(1)), p, stride);
  const auto cols = grid_positions(static_cast<int>(estimate.dim(2)), p, stride);
  check(!rows.empty() && !cols.empty(), "match: estimate smaller than the database patch size");
  NearestNeighborField field;
  field.patch_size = p;
  field.matches.reserve(rows.size() * cols.size());
  std::vector<double> query;
  if (method == MatchMethod::brute_force) {
    for (int r : rows)
      for (int c : cols) {
        copy_patch(normalized, r, c, p, query);
        PatchMatch m = search_brute_force(db, query);
        m.row = r;
        m.col = c;
        field.matches.push_back(m);
      }
    return field;
  }
  const std::size_t dims = db.patch_dims();
  const Eigen::Map<const RowMatrix> D(db.patch(0).data(), static_cast<Eigen::Index>(db.size()),
                                      static_cast<Eigen::Index>(dims));
  const Eigen::VectorXd d_norms = D.rowwise().squaredNorm();
  const double max_d_norm = d_norms.maxCoeff();
  std::vector<std::pair<int, int>> sites;
  for (int r : rows)
    for (int c : cols) sites.emplace_back(r, c);
  constexpr std::size_t kBlock = 32;
  std::vector<PatchMatch> found;
  found.reserve(sites.size());
  for (std::size_t start = 0; start < sites.size(); start += kBlock) {
    const std::size_t n = std::min(kBlock, sites.size() - start);
    RowMatrix Q(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dims));
    for (std::size_t k = 0; k < n; ++k) {
      copy_patch(normalized, sites[start + k].first, sites[start + k].second, p, query);
      std::copy(query.begin(), query.end(), Q.row(static_cast<Eigen::Index>(k)).data());
    }
    search_block(db, D, d_norms, max_d_norm, Q, found);
  }
  for (std::size_t k = 0; k < sites.size(); ++k) {
    found[k].row = sites[k].first;
    found[k].col = sites[k].second;
    field.matches.push_back(found[k]);
  }
  return field;
}

NearestNeighborField retrieve_by_feature(const PatchDatabase& db, const Tensor& pool5_feature,
                                         const NetworkSpec& spec, int k) {
  check(!db.empty(), "retrieve_by_feature: empty patch database");
  check(k > 0, "retrieve_by_feature: k must be positive");
  const Topology topo = spec.topology();
  const Shape& p5 = topo.output_shapes[topo.pool5];
  check(pool5_feature.shape() == p5, "retrieve_by_feature: feature shape " + shape_string(pool5_feature.shape()) +
                                         " is not the pool5 shape " + shape_string(p5));
  check(db.feature_dim() == static_cast<int>(p5[0]), "retrieve_by_feature: database has no matching pool5 features");
  std::vector<std::vector<double>> entries(db.size());
  for (std::size_t i = 0; i < db.size(); ++i) entries[i] = cosine_normalized(db.feature(i));
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), db.size());

  NearestNeighborField field;
  field.patch_size = db.patch_size();
  std::vector<double> q(p5[0]);
  std::vector<std::pair<double, std::uint32_t>> scored(db.size());
  for (std::size_t r = 0; r < p5[1]; ++r) {
    for (std::size_t c = 0; c < p5[2]; ++c) {
      for (std::size_t ch = 0; ch < p5[0]; ++ch) q[ch] = pool5_feature.at(ch, r, c);
      const auto qn = cosine_normalized(q);
      for (std::size_t i = 0; i < db.size(); ++i) scored[i] = {full_distance(qn, entries[i]), static_cast<std::uint32_t>(i)};
      std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(kk), scored.end());
      const auto [row, col] = pool5_crop_origin(spec, static_cast<int>(r), static_cast<int>(c), db.patch_size());
      for (std::size_t j = 0; j < kk; ++j) field.matches.push_back({row, col, scored[j].second, scored[j].first});
    }
  }
  return field;
}

std::vector<std::size_t> referenced_entries(const NearestNeighborField& field) {
  std::vector<std::size_t> out;
  for (const auto& m : field.matches) out.push_back(m.index);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Tensor warp_visualization(const NearestNeighborField& field, const PatchDatabase& db, const Shape& output_shape,
                          const ChannelStats& target_stats) {
  check(output_shape.size() == 3 && static_cast<int>(output_shape[0]) == db.channels(),
        "warp_visualization: output shape must be (C, H, W) with the database channel count");
  check(target_stats.mean.size() == output_shape[0] && target_stats.std.size() == output_shape[0],
        "warp_visualization: statistics channel count mismatch");
  check(field.patch_size == db.patch_size(), "warp_visualization: field and database patch sizes differ");
  const int p = db.patch_size();
  const int H = static_cast<int>(output_shape[1]), W = static_cast<int>(output_shape[2]);
  Tensor sum(output_shape), count({output_shape[1], output_shape[2]});
  for (const auto& m : field.matches) {
    check(m.row >= 0 && m.col >= 0 && m.row + p <= H && m.col + p <= W, "warp_visualization: match outside the output");
    check(m.index < db.size(), "warp_visualization: match index out of range");
    const auto patch = db.patch(m.index);
    std::size_t k = 0;
    for (std::size_t c = 0; c < output_shape[0]; ++c)
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          sum.at(c, m.row + y, m.col + x) += patch[k++] * target_stats.std[c] + target_stats.mean[c];
    for (int y = 0; y < p; ++y)
      for (int x = 0; x < p; ++x) count[static_cast<std::size_t>(m.row + y) * W + m.col + x] += 1.0;
  }
  Tensor out(output_shape);
  for (std::size_t c = 0; c < output_shape[0]; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double n = count[static_cast<std::size_t>(y) * W + x];
        out.at(c, y, x) = n > 0.0 ? sum.at(c, y, x) / n : target_stats.mean[c];
      }
  return out;
}

void save_patch_database(const std::filesystem::path& path, const PatchDatabase& db) {
  ByteWriter w;
  w.magic("NPPD");
  w.u16(kPatchDbVersion);
  w.u32(static_cast<std::uint32_t>(db.size()));
  w.u32(static_cast<std::uint32_t>(db.feature_dim()));
  w.u32(static_cast<std::uint32_t>(db.patch_size()));
  w.u32(static_cast<std::uint32_t>(db.channels()));
  for (std::size_t i = 0; i < db.size(); ++i) {
    w.f64s(db.feature(i));
    w.f64s(db.patch(i));
    w.u32(db.provenance(i).image_id);
    w.u16(db.provenance(i).row);
    w.u16(db.provenance(i).col);
  }
  w.save(path);
}

PatchDatabase load_patch_database(const std::filesystem::path& path) {
  ByteReader r = ByteReader::open(path);
  r.expect_magic("NPPD");
  const std::uint16_t version = r.u16();
  check(version == kPatchDbVersion, path.string() + ": unsupported patch database version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  const std::uint32_t feature_dim = r.u32();
  const std::uint32_t patch_size = r.u32();
  const std::uint32_t channels = r.u32();
  check(feature_dim < (1u << 20) && patch_size > 0 && patch_size < 4096 && channels > 0 && channels < 64,
        path.string() + ": implausible patch database header");
  PatchDatabase db(static_cast<int>(channels), static_cast<int>(patch_size), static_cast<int>(feature_dim));
  std::vector<double> feature(feature_dim), patch(db.patch_dims());
  for (std::uint32_t i = 0; i < count; ++i) {
    r.f64s(feature);
    r.f64s(patch);
    PatchProvenance prov;
    prov.image_id = r.u32();
    prov.row = r.u16();
    prov.col = r.u16();
    db.add(feature, patch, prov);
  }
  r.expect_end();
  return db;
}

}  // namespace npath
