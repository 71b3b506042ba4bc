#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "npath/network.hpp"

namespace npath {

/// Open k_rows x k_cols window of the pool5 grid; everything else is switched off.
struct SpatialMask {
  int grid_rows = 6;
  int grid_cols = 6;
  int row0 = 0;
  int col0 = 0;
  int k_rows = 1;
  int k_cols = 1;
};

/// Parses the inline window syntax "r0,c0,k" (square) or "r0,c0,kr,kc".
SpatialMask parse_window(const std::string& text, int grid_rows, int grid_cols);

/// m5 = 1 on the window across all channels; m6/m7 left to the network.
MaskSet spatial_mask_to_maskset(const SpatialMask& window, int channels);

/// m6, m7 drawn i.i.d. Bernoulli(1 - rate); rate must lie in (0, 1).
MaskSet sample_dropout_maskset(std::uint64_t seed, double rate, std::size_t fc6_units, std::size_t fc7_units);
MaskSet sample_dropout_maskset(std::uint64_t seed, double rate, const NetworkSpec& spec);

enum class HashLevel : std::uint8_t { m7 = 1, m6_7 = 2, m5_7 = 3 };
std::string to_string(HashLevel level);
HashLevel parse_hash_level(const std::string& text);

/// Binary code of an image: its captured ReLU masks, imposed at the sites named by the level.
struct HashCode {
  HashLevel level = HashLevel::m7;
  MaskSet masks;
};

/// `image` is a network input (whitened).
HashCode capture_hash(const Tensor& image, const NetworkWeights& weights, const NetworkSpec& spec, HashLevel level);

/// fc weights with the hash masks folded in as diagonal scalings, plus the gate sites that become
/// linear because their mask now lives inside the weights:
///   m7:   (m7 W7, W6)            m6-7: (m7 W7 m6, W6)            m5-7: (m7 W7 m6, m6 W6 m5)
/// Biases on masked output rows are masked too.
struct SubstitutedNetwork {
  NetworkWeights weights;
  MaskSet linear_sites;  // all-ones overrides
};

SubstitutedNetwork substituted_weights(const NetworkWeights& weights, const NetworkSpec& spec, const HashCode& hash);
ForwardTrace forward_substituted(const SubstitutedNetwork& net, const NetworkSpec& spec, const Tensor& image);

/// m7 = 1 where basis[j] > tau * max(basis).
MaskSet topic_mask(const std::vector<double>& basis, double tau = 0.1);

/// "NPHC": version, level tag, then each imposed mask as shape + LSB-first packed bits.
inline constexpr std::uint16_t kHashVersion = 1;
void save_hash(const std::filesystem::path& path, const HashCode& hash);
HashCode load_hash(const std::filesystem::path& path);
/// Concatenated bits of the imposed masks; equal codes give equal signatures.
std::vector<std::uint8_t> hash_signature(const HashCode& hash);

}  // namespace npath
