#include "grn/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>

namespace grn {

std::size_t shape_product(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

template <typename T>
BasicTensor<T>::BasicTensor(std::vector<std::size_t> shape, T fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {
  for (std::size_t e : shape_) {
    if (e == 0) throw ParameterError("tensor extents must be positive");
  }
}

template <typename T>
BasicTensor<T>::BasicTensor(std::vector<std::size_t> shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t e : shape_) {
    if (e == 0) throw ParameterError("tensor extents must be positive");
  }
  if (shape_product(shape_) != data_.size()) {
    throw ParameterError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape product " +
                         std::to_string(shape_product(shape_)));
  }
}

template <typename T>
std::size_t BasicTensor<T>::extent(std::size_t axis) const {
  if (axis >= shape_.size()) throw IndexError("tensor axis out of range");
  return shape_[axis];
}

template <typename T>
bool BasicTensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](T v) { return std::isfinite(v); });
}

template class BasicTensor<float>;
template class BasicTensor<double>;

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ParameterError("Rng::below requires n > 0");
  // Lemire's multiply-shift with rejection for an exact uniform draw.
  std::uint64_t x = engine_();
  __uint128_t m = static_cast<__uint128_t>(x) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      x = engine_();
      m = static_cast<__uint128_t>(x) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double Rng::normal() { return normal_(engine_); }

Rng Rng::split(std::uint64_t stream) const {
  return Rng(mix64(seed_ ^ mix64(stream * 0xd1b54a32d192ed03ULL + 1)));
}

Tensor uniform(Rng& rng, std::vector<std::size_t> shape) {
  Tensor out(std::move(shape));
  for (float& v : out.values()) {
    // Rounding a double just below 1 to float can yield 1.0f; redraw.
    float f;
    do {
      f = static_cast<float>(rng.uniform());
    } while (f >= 1.0f);
    v = f;
  }
  return out;
}

template <typename T>
void softmax_row(std::span<const T> logits, double temperature,
                 std::span<T> out) {
  if (!(temperature > 0.0)) {
    throw ParameterError("softmax temperature must be positive");
  }
  double peak = -std::numeric_limits<double>::infinity();
  for (T v : logits) peak = std::max(peak, static_cast<double>(v));
  double total = 0.0;
  thread_local std::vector<double> scratch;
  scratch.resize(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) {
    scratch[j] = std::exp((static_cast<double>(logits[j]) - peak) / temperature);
    total += scratch[j];
  }
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = static_cast<T>(scratch[j] / total);
  }
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits, double temperature) {
  if (!(temperature > 0.0)) {
    throw ParameterError("softmax temperature must be positive");
  }
  BasicTensor<T> out = logits;
  const std::size_t k = logits.last_extent();
  const std::size_t rows = logits.size() / k;
  for (std::size_t r = 0; r < rows; ++r) {
    softmax_row<T>(logits.data().subspan(r * k, k), temperature,
                   out.data().subspan(r * k, k));
  }
  return out;
}

template <typename T>
double cross_entropy(const BasicTensor<T>& logits,
                     std::span<const std::uint32_t> targets) {
  const std::size_t k = logits.last_extent();
  const std::size_t rows = logits.size() / k;
  if (targets.size() != rows) {
    throw ParameterError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(rows) + " rows");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= k) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[r]) +
                       " out of range for K=" + std::to_string(k));
    }
    auto row = logits.data().subspan(r * k, k);
    double peak = -std::numeric_limits<double>::infinity();
    for (T v : row) peak = std::max(peak, static_cast<double>(v));
    double sum = 0.0;
    for (T v : row) sum += std::exp(static_cast<double>(v) - peak);
    total += std::log(sum) + peak - static_cast<double>(row[targets[r]]);
  }
  return total / static_cast<double>(rows);
}

template void softmax_row<float>(std::span<const float>, double,
                                 std::span<float>);
template void softmax_row<double>(std::span<const double>, double,
                                  std::span<double>);
template Tensor softmax<float>(const Tensor&, double);
template TensorD softmax<double>(const TensorD&, double);
template double cross_entropy<float>(const Tensor&,
                                     std::span<const std::uint32_t>);
template double cross_entropy<double>(const TensorD&,
                                      std::span<const std::uint32_t>);

GradCheckReport grad_check_report(const GradFunction& f,
                                  std::span<const double> x, double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) {
    throw ParameterError("grad_check eps must lie in [1e-6, 1e-3]");
  }
  std::vector<double> point(x.begin(), x.end());
  std::vector<double> analytic(x.size(), 0.0);
  const double f0 = f(point, analytic);
  if (!std::isfinite(f0)) throw NumericError("grad_check: f(x) is not finite");

  GradCheckReport report;
  const std::span<double> no_grad;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + eps;
    const double plus = f(point, no_grad);
    point[i] = saved - eps;
    const double minus = f(point, no_grad);
    point[i] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericError("grad_check: f is not finite near component " +
                         std::to_string(i));
    }
    const double numeric = (plus - minus) / (2.0 * eps);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (i == 0 || rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_index = i;
      report.analytic = a;
      report.numeric = numeric;
    }
  }
  return report;
}

unsigned worker_count() {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("GRN_LAB_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap > 0) {
      return std::min(hw, static_cast<unsigned>(cap));
    }
  }
  return hw;
}

void parallel_for(std::size_t n, unsigned workers,
                  const std::function<void(std::size_t)>& body) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace grn
