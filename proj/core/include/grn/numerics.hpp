#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

#include "grn/errors.hpp"

namespace grn {

// Dense row-major tensor. Model tensors use float; oracles and gradient
// checks use double.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(std::vector<std::size_t> shape, T fill = T{0});
  BasicTensor(std::vector<std::size_t> shape, std::vector<T> data);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  // Extent of the innermost axis; 1 for a rank-0 tensor.
  std::size_t last_extent() const noexcept {
    return shape_.empty() ? 1 : shape_.back();
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  bool all_finite() const noexcept;

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

std::size_t shape_product(std::span<const std::size_t> shape);

// Deterministic 64-bit generator with explicit stream splitting.
//
// split(stream) derives a child generator from the construction seed and the
// stream id only, so a consumer's stream does not depend on how much
// randomness other consumers have drawn.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();
  // Uniform double in [0, 1) with 53 bits of resolution.
  double uniform();
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  double normal();

  Rng split(std::uint64_t stream) const;

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next_u64(); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t mix64(std::uint64_t x);

// Named stream ids so each consumer of a global seed draws from its own
// split.
namespace streams {
inline constexpr std::uint64_t data = 0x10;
inline constexpr std::uint64_t init = 0x20;
inline constexpr std::uint64_t train = 0x30;
inline constexpr std::uint64_t sample = 0x40;
inline constexpr std::uint64_t eval = 0x50;
}  // namespace streams

// i.i.d. samples in [0, 1).
Tensor uniform(Rng& rng, std::vector<std::size_t> shape);

// Softmax over the last axis at the given temperature; throws
// ParameterError for temperature <= 0.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits, double temperature = 1.0);

// In-place softmax of a single row, accumulated in double.
template <typename T>
void softmax_row(std::span<const T> logits, double temperature,
                 std::span<T> out);

// Mean negative log-likelihood in nats. logits is [N, K] (or any shape
// whose last axis is K), targets has one entry per row.
template <typename T>
double cross_entropy(const BasicTensor<T>& logits,
                     std::span<const std::uint32_t> targets);

// Scalar objective with analytic gradient. When `grad` is non-empty the
// callee writes d f / d x into it.
using GradFunction =
    std::function<double(std::span<const double> x, std::span<double> grad)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares the analytic gradient of f at x with central differences,
// component by component. eps must lie in [1e-6, 1e-3].
GradCheckReport grad_check_report(const GradFunction& f,
                                  std::span<const double> x, double eps);

inline double grad_check(const GradFunction& f, std::span<const double> x,
                         double eps) {
  return grad_check_report(f, x, eps).max_relative_error;
}

// Worker cap from GRN_LAB_THREADS, defaulting to hardware concurrency.
unsigned worker_count();

// Runs body(i) for i in [0, n) across at most `workers` threads. Each index
// is executed exactly once; the call returns after all complete and
// rethrows the first exception raised by any body.
void parallel_for(std::size_t n, unsigned workers,
                  const std::function<void(std::size_t)>& body);

}  // namespace grn
