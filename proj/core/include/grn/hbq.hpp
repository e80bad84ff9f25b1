#pragma once

// Hierarchical binary quantization.
//
// A bounded scalar F in (-1, 1) is encoded by M coarse-to-fine binary
// decisions. Round i compares F against the running bucket center
//
//     c_1 = 0,   c_{i+1} = c_i + delta(q_i) * 2^-i,   delta(0) = -1, delta(1) = +1
//
// and emits q_i = [F > c_i] (ties go to 0). The reconstruction is
//
//     F_hat = sum_i delta(q_i) * 2^-i
//
// so |F - F_hat| <= 2^-M, with equality only when F sits exactly on a
// bucket boundary. Truncating the sum after m rounds reconstructs the
// coarser level-m approximation.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "grn/numerics.hpp"

namespace grn::hbq {

inline constexpr int kMaxRounds = 16;

// Token-grid extents [1+T, H/16, W/16, C].
struct Grid {
  std::uint32_t frames = 1;
  std::uint32_t height = 1;
  std::uint32_t width = 1;
  std::uint32_t channels = 1;

  std::size_t positions() const noexcept {
    return std::size_t{frames} * height * width;
  }
  std::size_t elements() const noexcept { return positions() * channels; }
  std::vector<std::size_t> shape() const {
    return {frames, height, width, channels};
  }
  void validate() const;

  friend bool operator==(const Grid&, const Grid&) = default;
};

Grid grid_of(std::span<const std::size_t> shape);

// M rounds of binary labels per grid element, stored element-major with the
// round index innermost: bits[e * rounds + (i - 1)] holds q_i of element e.
struct BitPlanes {
  Grid grid;
  int rounds = 1;
  std::vector<std::uint8_t> bits;

  BitPlanes() = default;
  BitPlanes(Grid g, int m);

  std::uint8_t bit(std::size_t element, int round_index) const {
    return bits[element * static_cast<std::size_t>(rounds) +
                static_cast<std::size_t>(round_index)];
  }
  void validate() const;

  friend bool operator==(const BitPlanes&, const BitPlanes&) = default;
};

// Packed integer index per grid element, q_1 as the most significant bit.
struct IndexMap {
  Grid grid;
  int rounds = 1;
  std::vector<std::uint16_t> values;

  void validate() const;
  friend bool operator==(const IndexMap&, const IndexMap&) = default;
};

// Flat bit form: per position, channel-major C*M bits (flat = c*M + i - 1).
struct BitMap {
  Grid grid;
  int rounds = 1;
  std::vector<std::uint8_t> values;

  std::size_t bits_per_position() const noexcept {
    return std::size_t{grid.channels} * static_cast<std::size_t>(rounds);
  }
  void validate() const;
  friend bool operator==(const BitMap&, const BitMap&) = default;
};

// tanh squashing into the open interval; saturated outputs are pulled to
// +-(1 - 2^-20).
template <typename T>
BasicTensor<T> bound_features(const BasicTensor<T>& raw);

inline constexpr double kSaturationMargin = 0x1.0p-20;

// Features must be rank-4 [1+T, H, W, C] with every |F| < 1.
template <typename T>
BitPlanes quantize(const BasicTensor<T>& features, int rounds);

template <typename T>
BasicTensor<T> dequantize(const BitPlanes& planes);

// Reconstruction from the first `rounds_used` rounds only.
template <typename T>
BasicTensor<T> dequantize_truncated(const BitPlanes& planes, int rounds_used);

// Straight-through combination of a continuous feature and its quantized
// value: forward yields the quantized value, backward passes the upstream
// gradient to the continuous input unchanged.
template <typename T>
struct StraightThrough {
  static BasicTensor<T> forward(const BasicTensor<T>& features,
                                const BasicTensor<T>& quantized);
  static BasicTensor<T> backward(const BasicTensor<T>& upstream);
};

template <typename T>
BasicTensor<T> ste_combine(const BasicTensor<T>& features,
                           const BasicTensor<T>& quantized) {
  return StraightThrough<T>::forward(features, quantized);
}

IndexMap pack_indices(const BitPlanes& planes);
BitPlanes unpack_indices(const IndexMap& indices, int rounds);

BitMap flatten_bits(const BitPlanes& planes);
BitPlanes unflatten_bits(const BitMap& bits, std::uint32_t channels, int rounds);

// Binary blob: "HBQPLANE" magic, version byte, M byte, four little-endian
// u32 extents, then M*E bits packed LSB-first, plane-major. See
// docs/formats.md.
inline constexpr char kBlobMagic[8] = {'H', 'B', 'Q', 'P', 'L', 'A', 'N', 'E'};
inline constexpr std::uint8_t kBlobVersion = 1;
inline constexpr std::size_t kBlobHeaderBytes = 8 + 1 + 1 + 4 * 4;

std::vector<std::uint8_t> serialize(const BitPlanes& planes);
inline std::vector<std::uint8_t> serialize(const IndexMap& indices) {
  return serialize(unpack_indices(indices, indices.rounds));
}
BitPlanes deserialize(std::span<const std::uint8_t> blob);

void write_blob(const std::filesystem::path& path, const BitPlanes& planes);
BitPlanes read_blob(const std::filesystem::path& path);

}  // namespace grn::hbq
