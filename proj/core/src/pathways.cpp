#include "npath/pathways.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include "npath/binary_io.hpp"

namespace npath {
namespace {

std::array<bool, 3> sites_for(HashLevel level) {
  switch (level) {
    case HashLevel::m7:
      return {false, false, true};
    case HashLevel::m6_7:
      return {false, true, true};
    case HashLevel::m5_7:
      return {true, true, true};
  }
  fail("unknown hash level");
}

std::vector<std::uint8_t> pack_bits(const Tensor& mask) {
  std::vector<std::uint8_t> out((mask.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] != 0.0) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  return out;
}

}  // namespace

SpatialMask parse_window(const std::string& text, int grid_rows, int grid_cols) {
  std::vector<int> v;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      v.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      fail("window spec \"" + text + "\": expected integers r0,c0,k");
    }
  }
  check(v.size() == 3 || v.size() == 4, "window spec \"" + text + "\": expected r0,c0,k or r0,c0,kr,kc");
  return {grid_rows, grid_cols, v[0], v[1], v[2], v.size() == 4 ? v[3] : v[2]};
}

MaskSet spatial_mask_to_maskset(const SpatialMask& w, int channels) {
  check(channels > 0 && w.grid_rows > 0 && w.grid_cols > 0, "spatial mask: invalid grid");
  check(w.k_rows > 0 && w.k_cols > 0 && w.row0 >= 0 && w.col0 >= 0 && w.row0 + w.k_rows <= w.grid_rows &&
            w.col0 + w.k_cols <= w.grid_cols,
        "spatial mask: window (" + std::to_string(w.row0) + ", " + std::to_string(w.col0) + ", " +
            std::to_string(w.k_rows) + "x" + std::to_string(w.k_cols) + ") outside the " +
            std::to_string(w.grid_rows) + "x" + std::to_string(w.grid_cols) + " grid");
  Tensor m5({static_cast<std::size_t>(channels), static_cast<std::size_t>(w.grid_rows),
             static_cast<std::size_t>(w.grid_cols)});
  for (int c = 0; c < channels; ++c)
    for (int r = w.row0; r < w.row0 + w.k_rows; ++r)
      for (int k = w.col0; k < w.col0 + w.k_cols; ++k) m5.at(c, r, k) = 1.0;
  MaskSet ms;
  ms.impose(MaskSite::m5, std::move(m5));
  return ms;
}

MaskSet sample_dropout_maskset(std::uint64_t seed, double rate, std::size_t fc6_units, std::size_t fc7_units) {
  check(rate > 0.0 && rate < 1.0, "dropout rate must lie in (0, 1)");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  Tensor m6({fc6_units}), m7({fc7_units});
  for (double& v : m6.data()) v = keep(rng) ? 1.0 : 0.0;
  for (double& v : m7.data()) v = keep(rng) ? 1.0 : 0.0;
  MaskSet ms;
  ms.impose(MaskSite::m6, std::move(m6));
  ms.impose(MaskSite::m7, std::move(m7));
  return ms;
}

MaskSet sample_dropout_maskset(std::uint64_t seed, double rate, const NetworkSpec& spec) {
  const Topology topo = spec.topology();
  return sample_dropout_maskset(seed, rate, topo.output_shapes[topo.relu[0]][0], topo.output_shapes[topo.relu[1]][0]);
}

std::string to_string(HashLevel level) {
  switch (level) {
    case HashLevel::m7:
      return "m7";
    case HashLevel::m6_7:
      return "m6-7";
    case HashLevel::m5_7:
      return "m5-7";
  }
  return "?";
}

HashLevel parse_hash_level(const std::string& text) {
  if (text == "m7") return HashLevel::m7;
  if (text == "m6-7") return HashLevel::m6_7;
  if (text == "m5-7") return HashLevel::m5_7;
  fail("unknown hash level \"" + text + "\" (expected m7, m6-7 or m5-7)");
}

HashCode capture_hash(const Tensor& image, const NetworkWeights& weights, const NetworkSpec& spec, HashLevel level) {
  const ForwardTrace t = forward(weights, spec, image);
  HashCode h;
  h.level = level;
  const auto sites = sites_for(level);
  for (int s = 0; s < 3; ++s)
    if (sites[s]) h.masks.impose(static_cast<MaskSite>(s), t.masks.masks[s]);
  return h;
}

SubstitutedNetwork substituted_weights(const NetworkWeights& weights, const NetworkSpec& spec, const HashCode& hash) {
  const Topology topo = spec.topology();
  validate_weights(spec, weights);
  const auto sites = sites_for(hash.level);
  for (int s = 0; s < 3; ++s)
    check(!sites[s] || hash.masks.is_overridden(static_cast<MaskSite>(s)),
          "hash code of level " + to_string(hash.level) + " lacks mask m" + std::to_string(s + 5));

  SubstitutedNetwork out{weights, {}};
  LayerParams& fc6 = out.weights.layers[topo.fc[0]];
  LayerParams& fc7 = out.weights.layers[topo.fc[1]];
  const std::size_t n6 = fc6.weight.dim(0), n5 = fc6.weight.dim(1), n7 = fc7.weight.dim(0);

  const Tensor& m7 = hash.masks.get(MaskSite::m7);
  check(m7.size() == n7, "substituted_weights: m7 has " + std::to_string(m7.size()) + " entries, W7 has " +
                             std::to_string(n7) + " rows");
  for (std::size_t r = 0; r < n7; ++r) {
    if (m7[r] != 0.0) continue;
    for (std::size_t k = 0; k < n6; ++k) fc7.weight[r * n6 + k] = 0.0;
    fc7.bias[r] = 0.0;
  }
  if (sites[1]) {
    const Tensor& m6 = hash.masks.get(MaskSite::m6);
    check(m6.size() == n6, "substituted_weights: m6 has " + std::to_string(m6.size()) + " entries, W7 has " +
                               std::to_string(n6) + " columns");
    for (std::size_t k = 0; k < n6; ++k) {
      if (m6[k] != 0.0) continue;
      for (std::size_t r = 0; r < n7; ++r) fc7.weight[r * n6 + k] = 0.0;
    }
    if (sites[0]) {
      for (std::size_t r = 0; r < n6; ++r) {
        if (m6[r] != 0.0) continue;
        for (std::size_t k = 0; k < n5; ++k) fc6.weight[r * n5 + k] = 0.0;
        fc6.bias[r] = 0.0;
      }
      Tensor m5 = hash.masks.get(MaskSite::m5);
      const Shape& p5 = topo.output_shapes[topo.pool5];
      if (m5.size() != n5) {
        check(m5.size() == p5[1] * p5[2], "substituted_weights: m5 does not match the pool5 grid");
        Tensor full(p5);
        const std::size_t plane = p5[1] * p5[2];
        for (std::size_t c = 0; c < p5[0]; ++c)
          for (std::size_t i = 0; i < plane; ++i) full[c * plane + i] = m5[i];
        m5 = std::move(full);
      }
      for (std::size_t k = 0; k < n5; ++k) {
        if (m5[k] != 0.0) continue;
        for (std::size_t r = 0; r < n6; ++r) fc6.weight[r * n5 + k] = 0.0;
      }
    }
  }
  if (sites[0]) out.linear_sites.impose(MaskSite::m5, Tensor(topo.output_shapes[topo.pool5], 1.0));
  if (sites[1]) out.linear_sites.impose(MaskSite::m6, Tensor({n6}, 1.0));
  out.linear_sites.impose(MaskSite::m7, Tensor({n7}, 1.0));
  return out;
}

ForwardTrace forward_substituted(const SubstitutedNetwork& net, const NetworkSpec& spec, const Tensor& image) {
  return forward(net.weights, spec, image, &net.linear_sites);
}

MaskSet topic_mask(const std::vector<double>& basis, double tau) {
  check(!basis.empty(), "topic_mask: empty basis vector");
  check(tau >= 0.0 && tau < 1.0, "topic_mask: tau must be in [0, 1)");
  double mx = 0.0;
  for (double v : basis) {
    check(v >= 0.0, "topic_mask: basis vector must be non-negative");
    mx = std::max(mx, v);
  }
  check(mx > 0.0, "topic_mask: all-zero basis vector");
  Tensor m7({basis.size()});
  for (std::size_t j = 0; j < basis.size(); ++j) m7[j] = basis[j] > tau * mx ? 1.0 : 0.0;
  MaskSet ms;
  ms.impose(MaskSite::m7, std::move(m7));
  return ms;
}

std::vector<std::uint8_t> hash_signature(const HashCode& hash) {
  std::vector<std::uint8_t> sig{static_cast<std::uint8_t>(hash.level)};
  for (int s = 0; s < 3; ++s) {
    if (!hash.masks.overridden[s]) continue;
    const auto bits = pack_bits(hash.masks.masks[s]);
    sig.insert(sig.end(), bits.begin(), bits.end());
  }
  return sig;
}

void save_hash(const std::filesystem::path& path, const HashCode& hash) {
  ByteWriter w;
  w.magic("NPHC");
  w.u16(kHashVersion);
  w.u8(static_cast<std::uint8_t>(hash.level));
  const auto sites = sites_for(hash.level);
  for (int s = 0; s < 3; ++s) {
    if (!sites[s]) continue;
    const Tensor& m = hash.masks.masks[s];
    check(!m.empty(), "save_hash: missing mask m" + std::to_string(s + 5));
    w.u32(static_cast<std::uint32_t>(m.rank()));
    for (auto d : m.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (auto b : pack_bits(m)) w.u8(b);
  }
  w.save(path);
}

HashCode load_hash(const std::filesystem::path& path) {
  ByteReader r = ByteReader::open(path);
  r.expect_magic("NPHC");
  const std::uint16_t version = r.u16();
  check(version == kHashVersion, path.string() + ": unsupported hash code version " + std::to_string(version));
  const std::uint8_t tag = r.u8();
  check(tag >= 1 && tag <= 3, path.string() + ": unknown hash level tag");
  HashCode h;
  h.level = static_cast<HashLevel>(tag);
  const auto sites = sites_for(h.level);
  for (int s = 0; s < 3; ++s) {
    if (!sites[s]) continue;
    const std::uint32_t rank = r.u32();
    check(rank >= 1 && rank <= 3, path.string() + ": implausible mask rank");
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u32();
      check(d > 0 && d < (1u << 24), path.string() + ": implausible mask dimension");
    }
    Tensor m(shape);
    std::vector<std::uint8_t> bits((m.size() + 7) / 8);
    for (auto& b : bits) b = r.u8();
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = (bits[i / 8] >> (i % 8)) & 1u ? 1.0 : 0.0;
    h.masks.impose(static_cast<MaskSite>(s), std::move(m));
  }
  r.expect_end();
  return h;
}

}  // namespace npath
