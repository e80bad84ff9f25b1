#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "grn/hbq.hpp"
#include "grn/numerics.hpp"

namespace grn {

enum class Layout : std::uint8_t { index, bit };

const char* to_string(Layout layout);

// Discrete map over [positions, channels] tokens with `categories` values
// per token: K = 2^M with channels = C for the index layout, K = 2 with
// channels = C*M for the bit layout.
struct TokenMap {
  Layout layout = Layout::index;
  std::uint32_t categories = 2;
  std::size_t positions = 0;
  std::size_t channels = 0;
  std::vector<std::uint16_t> values;

  TokenMap() = default;
  TokenMap(Layout l, std::uint32_t k, std::size_t n_pos, std::size_t c_eff,
           std::uint16_t fill = 0);

  std::size_t size() const noexcept { return values.size(); }
  std::uint16_t& operator[](std::size_t i) noexcept { return values[i]; }
  std::uint16_t operator[](std::size_t i) const noexcept { return values[i]; }

  bool same_extents(const TokenMap& other) const noexcept {
    return layout == other.layout && categories == other.categories &&
           positions == other.positions && channels == other.channels;
  }
  void validate() const;

  friend bool operator==(const TokenMap&, const TokenMap&) = default;
};

TokenMap to_token_map(const hbq::IndexMap& indices);
TokenMap to_token_map(const hbq::BitMap& bits);
// Index or bit view of bit planes, depending on `layout`.
TokenMap to_token_map(const hbq::BitPlanes& planes, Layout layout);
hbq::BitPlanes to_bit_planes(const TokenMap& tokens, const hbq::Grid& grid,
                             int rounds);

// Uniform random map: every token independent and uniform over [0, K).
TokenMap random_token_map(Layout layout, std::uint32_t categories,
                          std::size_t positions, std::size_t channels, Rng& rng);

struct SelectionMap {
  std::size_t positions = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> values;

  SelectionMap() = default;
  SelectionMap(std::size_t n_pos, std::size_t c_eff, bool fill = false)
      : positions(n_pos), channels(c_eff), values(n_pos * c_eff, fill ? 1 : 0) {}

  std::size_t size() const noexcept { return values.size(); }
  std::size_t count() const noexcept;
  // The accumulation statistic l: fraction of ones.
  double ones_fraction() const noexcept;

  friend bool operator==(const SelectionMap&, const SelectionMap&) = default;
};

// S[i] = u_i < l with fresh uniforms per call.
SelectionMap make_selection_map(std::size_t positions, std::size_t channels,
                                double ratio, Rng& rng);

// out[i] = drawn[i] where selected, random[i] elsewhere.
TokenMap compose_state(const SelectionMap& selection, const TokenMap& drawn,
                       const TokenMap& random);

// Normalized mean entropy of probs [N, C_eff, K] (any shape whose last axis
// is K): average over distributions of -sum p log2 p / log2 K, in [0, 1].
template <typename T>
double mean_entropy(const BasicTensor<T>& probs);

// Uniform ratio for 0-based step t of a T-step run: (t + 1) / T.
double fixed_schedule(int step, int total_steps);

struct ScheduleConfig {
  int t0 = 5;
  int alpha = 50;
  double k = 600.0;
  double b = -547.2;
  int t_min = 20;
  int t_max = 50;

  void validate() const;
};

struct StepPlan {
  int total = 0;        // T = t0 + D, within [t_min, t_max]
  int denominator = 0;  // D = clamp(round(k*H + b), t_min - t0, t_max - t0)
};

StepPlan adaptive_total_steps(double entropy, const ScheduleConfig& cfg);

// Entropy-guided ratio for 1-based step t given the frozen denominator.
// Exactly 1 at t = t0 + D.
double adaptive_ratio(int step, const StepPlan& plan, const ScheduleConfig& cfg);
double adaptive_ratio(int step, double entropy, const ScheduleConfig& cfg);

struct TransitionCounts {
  std::size_t filled = 0;
  std::size_t kept = 0;
  std::size_t refined = 0;
  std::size_t erased = 0;
  std::size_t blank = 0;

  std::size_t total() const noexcept {
    return filled + kept + refined + erased + blank;
  }
  friend bool operator==(const TransitionCounts&, const TransitionCounts&) = default;
};

TransitionCounts classify_transitions(const SelectionMap& current,
                                      const SelectionMap& next,
                                      const TokenMap& current_tokens,
                                      const TokenMap& next_tokens);

// Per-trajectory refinement state. Y_rand is fixed at construction.
class RefineState {
 public:
  RefineState(TokenMap random_map);

  int step() const noexcept { return step_; }
  const TokenMap& drawing() const noexcept { return drawing_; }
  const TokenMap& random_map() const noexcept { return random_; }
  const SelectionMap& selection() const noexcept { return selection_; }
  double ratio() const noexcept { return ratio_; }
  const std::vector<double>& entropy_trace() const noexcept { return entropy_; }

  // Moves to the next step with the scheduled ratio, its selection and the
  // drawing it selects from; returns the transition counts relative to the
  // previous step. Throws ParameterError if the ratio would decrease.
  TransitionCounts advance(double ratio, SelectionMap selection, TokenMap drawing);
  void record_entropy(double h) { entropy_.push_back(h); }

  TokenMap composed() const { return compose_state(selection_, drawing_, random_); }

 private:
  int step_ = 0;
  TokenMap random_;
  TokenMap drawing_;
  SelectionMap selection_;
  double ratio_ = 0.0;
  std::vector<double> entropy_;
};

}  // namespace grn
