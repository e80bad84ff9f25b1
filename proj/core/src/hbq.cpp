#include "grn/hbq.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

namespace grn::hbq {

namespace {

void check_rounds(int rounds) {
  if (rounds < 1 || rounds > kMaxRounds) {
    throw ParameterError("HBQ rounds must lie in [1, " +
                         std::to_string(kMaxRounds) + "], got " +
                         std::to_string(rounds));
  }
}

template <typename T>
constexpr T delta(std::uint8_t q) {
  return q ? T{1} : T{-1};
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= std::uint32_t{in[at + b]} << (8 * b);
  return v;
}

}  // namespace

void Grid::validate() const {
  if (frames == 0 || height == 0 || width == 0 || channels == 0) {
    throw ParameterError("grid extents must all be >= 1");
  }
}

Grid grid_of(std::span<const std::size_t> shape) {
  if (shape.size() != 4) {
    throw ParameterError("feature tensors must be rank 4 [1+T, H, W, C], got rank " +
                         std::to_string(shape.size()));
  }
  for (std::size_t e : shape) {
    if (e == 0 || e > std::numeric_limits<std::uint32_t>::max()) {
      throw ParameterError("feature extent out of range");
    }
  }
  return Grid{static_cast<std::uint32_t>(shape[0]),
              static_cast<std::uint32_t>(shape[1]),
              static_cast<std::uint32_t>(shape[2]),
              static_cast<std::uint32_t>(shape[3])};
}

BitPlanes::BitPlanes(Grid g, int m) : grid(g), rounds(m) {
  grid.validate();
  check_rounds(m);
  bits.assign(grid.elements() * static_cast<std::size_t>(m), 0);
}

void BitPlanes::validate() const {
  grid.validate();
  check_rounds(rounds);
  if (bits.size() != grid.elements() * static_cast<std::size_t>(rounds)) {
    throw ParameterError("bit-plane count does not match grid and rounds");
  }
  for (std::uint8_t b : bits) {
    if (b > 1) throw DomainError("bit-plane values must be 0 or 1");
  }
}

void IndexMap::validate() const {
  grid.validate();
  check_rounds(rounds);
  if (values.size() != grid.elements()) {
    throw ParameterError("index map length does not match grid");
  }
  const std::uint32_t limit = 1u << rounds;
  for (std::uint16_t v : values) {
    if (v >= limit) {
      throw DomainError("index " + std::to_string(v) + " >= 2^M = " +
                        std::to_string(limit));
    }
  }
}

void BitMap::validate() const {
  grid.validate();
  check_rounds(rounds);
  if (values.size() != grid.positions() * bits_per_position()) {
    throw ParameterError("bit map length does not match grid * C * M");
  }
  for (std::uint8_t b : values) {
    if (b > 1) throw DomainError("bit map values must be 0 or 1");
  }
}

template <typename T>
BasicTensor<T> bound_features(const BasicTensor<T>& raw) {
  BasicTensor<T> out = raw;
  const T edge = static_cast<T>(1.0 - kSaturationMargin);
  for (T& v : out.values()) {
    if (!std::isfinite(v)) throw NumericError("bound_features: non-finite input");
    const T y = std::tanh(v);
    v = std::abs(y) >= T{1} ? std::copysign(edge, y) : y;
  }
  return out;
}

template <typename T>
BitPlanes quantize(const BasicTensor<T>& features, int rounds) {
  check_rounds(rounds);
  BitPlanes planes(grid_of(features.shape()), rounds);
  const auto m = static_cast<std::size_t>(rounds);
  for (std::size_t e = 0; e < features.size(); ++e) {
    const T f = features[e];
    if (!(std::abs(f) < T{1})) {
      throw DomainError("quantize: |F| must be < 1 (got " + std::to_string(f) +
                        " at element " + std::to_string(e) + ")");
    }
    T center = 0;
    T step = T{0.5};
    for (std::size_t i = 0; i < m; ++i) {
      const std::uint8_t q = f > center ? 1 : 0;
      planes.bits[e * m + i] = q;
      center += delta<T>(q) * step;
      step *= T{0.5};
    }
  }
  return planes;
}

template <typename T>
BasicTensor<T> dequantize_truncated(const BitPlanes& planes, int rounds_used) {
  if (rounds_used < 1 || rounds_used > planes.rounds) {
    throw ParameterError("truncation depth " + std::to_string(rounds_used) +
                         " outside [1, " + std::to_string(planes.rounds) + "]");
  }
  BasicTensor<T> out(planes.grid.shape());
  const auto m = static_cast<std::size_t>(planes.rounds);
  for (std::size_t e = 0; e < out.size(); ++e) {
    T value = 0;
    T step = T{0.5};
    for (int i = 0; i < rounds_used; ++i) {
      value += delta<T>(planes.bits[e * m + static_cast<std::size_t>(i)]) * step;
      step *= T{0.5};
    }
    out[e] = value;
  }
  return out;
}

template <typename T>
BasicTensor<T> dequantize(const BitPlanes& planes) {
  return dequantize_truncated<T>(planes, planes.rounds);
}

template <typename T>
BasicTensor<T> StraightThrough<T>::forward(const BasicTensor<T>& features,
                                           const BasicTensor<T>& quantized) {
  if (features.shape() != quantized.shape()) {
    throw ParameterError("ste_combine: feature and quantized shapes differ");
  }
  // F + stop_gradient(F_hat - F) evaluates to F_hat.
  return quantized;
}

template <typename T>
BasicTensor<T> StraightThrough<T>::backward(const BasicTensor<T>& upstream) {
  return upstream;
}

template Tensor bound_features<float>(const Tensor&);
template TensorD bound_features<double>(const TensorD&);
template BitPlanes quantize<float>(const Tensor&, int);
template BitPlanes quantize<double>(const TensorD&, int);
template Tensor dequantize<float>(const BitPlanes&);
template TensorD dequantize<double>(const BitPlanes&);
template Tensor dequantize_truncated<float>(const BitPlanes&, int);
template TensorD dequantize_truncated<double>(const BitPlanes&, int);
template struct StraightThrough<float>;
template struct StraightThrough<double>;

IndexMap pack_indices(const BitPlanes& planes) {
  check_rounds(planes.rounds);
  IndexMap out{planes.grid, planes.rounds, {}};
  const auto m = static_cast<std::size_t>(planes.rounds);
  out.values.resize(planes.grid.elements());
  for (std::size_t e = 0; e < out.values.size(); ++e) {
    std::uint32_t index = 0;
    for (std::size_t i = 0; i < m; ++i) index = (index << 1) | planes.bits[e * m + i];
    out.values[e] = static_cast<std::uint16_t>(index);
  }
  return out;
}

BitPlanes unpack_indices(const IndexMap& indices, int rounds) {
  BitPlanes out(indices.grid, rounds);
  if (indices.values.size() != indices.grid.elements()) {
    throw ParameterError("index map length does not match grid");
  }
  const auto m = static_cast<std::size_t>(rounds);
  const std::uint32_t limit = 1u << rounds;
  for (std::size_t e = 0; e < indices.values.size(); ++e) {
    const std::uint32_t v = indices.values[e];
    if (v >= limit) {
      throw DomainError("unpack_indices: value " + std::to_string(v) +
                        " >= 2^M = " + std::to_string(limit));
    }
    for (std::size_t i = 0; i < m; ++i) {
      out.bits[e * m + i] = static_cast<std::uint8_t>((v >> (m - 1 - i)) & 1u);
    }
  }
  return out;
}

BitMap flatten_bits(const BitPlanes& planes) {
  planes.validate();
  // Element-major planes with the round innermost already are the
  // channel-major per-position layout.
  return BitMap{planes.grid, planes.rounds, planes.bits};
}

BitPlanes unflatten_bits(const BitMap& bits, std::uint32_t channels, int rounds) {
  check_rounds(rounds);
  if (channels != bits.grid.channels || rounds != bits.rounds) {
    throw ParameterError("unflatten_bits: requested C=" + std::to_string(channels) +
                         ", M=" + std::to_string(rounds) +
                         " but bit map carries C=" +
                         std::to_string(bits.grid.channels) +
                         ", M=" + std::to_string(bits.rounds));
  }
  BitPlanes out(bits.grid, rounds);
  if (bits.values.size() != out.bits.size()) {
    throw ParameterError("unflatten_bits: flattened length " +
                         std::to_string(bits.values.size()) + " != positions*C*M " +
                         std::to_string(out.bits.size()));
  }
  out.bits = bits.values;
  out.validate();
  return out;
}

std::vector<std::uint8_t> serialize(const BitPlanes& planes) {
  planes.validate();
  const std::size_t elements = planes.grid.elements();
  const auto m = static_cast<std::size_t>(planes.rounds);
  std::vector<std::uint8_t> out(std::begin(kBlobMagic), std::end(kBlobMagic));
  out.push_back(kBlobVersion);
  out.push_back(static_cast<std::uint8_t>(planes.rounds));
  put_u32(out, planes.grid.frames);
  put_u32(out, planes.grid.height);
  put_u32(out, planes.grid.width);
  put_u32(out, planes.grid.channels);
  const std::size_t total_bits = m * elements;
  const std::size_t header = out.size();
  out.resize(header + (total_bits + 7) / 8, 0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t e = 0; e < elements; ++e) {
      const std::size_t k = i * elements + e;
      if (planes.bits[e * m + i]) {
        out[header + k / 8] |= static_cast<std::uint8_t>(1u << (k % 8));
      }
    }
  }
  return out;
}

BitPlanes deserialize(std::span<const std::uint8_t> blob) {
  if (blob.size() < kBlobHeaderBytes) {
    throw ParseError("HBQ blob truncated inside header", blob.size());
  }
  for (std::size_t i = 0; i < 8; ++i) {
    if (blob[i] != static_cast<std::uint8_t>(kBlobMagic[i])) {
      throw ParseError("bad HBQ blob magic", i);
    }
  }
  if (blob[8] != kBlobVersion) {
    throw ParseError("unsupported HBQ blob version " + std::to_string(blob[8]), 8);
  }
  const int rounds = blob[9];
  if (rounds < 1 || rounds > kMaxRounds) {
    throw ParseError("HBQ blob rounds out of range: " + std::to_string(rounds), 9);
  }
  Grid grid{get_u32(blob, 10), get_u32(blob, 14), get_u32(blob, 18),
            get_u32(blob, 22)};
  if (grid.frames == 0 || grid.height == 0 || grid.width == 0 ||
      grid.channels == 0) {
    throw ParseError("HBQ blob has a zero extent", 10);
  }
  const std::size_t elements = grid.elements();
  const auto m = static_cast<std::size_t>(rounds);
  const std::size_t payload = (m * elements + 7) / 8;
  if (blob.size() < kBlobHeaderBytes + payload) {
    throw ParseError("HBQ blob truncated: expected " +
                         std::to_string(kBlobHeaderBytes + payload) + " bytes",
                     blob.size());
  }
  if (blob.size() > kBlobHeaderBytes + payload) {
    throw ParseError("trailing bytes after HBQ payload", kBlobHeaderBytes + payload);
  }
  BitPlanes planes(grid, rounds);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t e = 0; e < elements; ++e) {
      const std::size_t k = i * elements + e;
      planes.bits[e * m + i] =
          static_cast<std::uint8_t>((blob[kBlobHeaderBytes + k / 8] >> (k % 8)) & 1u);
    }
  }
  return planes;
}

void write_blob(const std::filesystem::path& path, const BitPlanes& planes) {
  const auto bytes = serialize(planes);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

BitPlanes read_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return deserialize(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.detail(), e.offset());
  }
}

}  // namespace grn::hbq
