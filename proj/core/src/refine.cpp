#include "grn/refine.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace grn {

const char* to_string(Layout layout) {
  return layout == Layout::index ? "ind" : "bit";
}

TokenMap::TokenMap(Layout l, std::uint32_t k, std::size_t n_pos,
                   std::size_t c_eff, std::uint16_t fill)
    : layout(l), categories(k), positions(n_pos), channels(c_eff),
      values(n_pos * c_eff, fill) {}

void TokenMap::validate() const {
  if (categories < 2) throw ParameterError("token map needs K >= 2");
  if (layout == Layout::bit && categories != 2) {
    throw ParameterError("bit-layout token maps must have K = 2");
  }
  if (values.size() != positions * channels) {
    throw ParameterError("token map length does not match positions * channels");
  }
  for (std::uint16_t v : values) {
    if (v >= categories) {
      throw DomainError("token value " + std::to_string(v) + " >= K = " +
                        std::to_string(categories));
    }
  }
}

TokenMap to_token_map(const hbq::IndexMap& indices) {
  TokenMap out(Layout::index, 1u << indices.rounds, indices.grid.positions(),
               indices.grid.channels);
  out.values = indices.values;
  return out;
}

TokenMap to_token_map(const hbq::BitMap& bits) {
  TokenMap out(Layout::bit, 2, bits.grid.positions(), bits.bits_per_position());
  out.values.assign(bits.values.begin(), bits.values.end());
  return out;
}

TokenMap to_token_map(const hbq::BitPlanes& planes, Layout layout) {
  return layout == Layout::index ? to_token_map(hbq::pack_indices(planes))
                                 : to_token_map(hbq::flatten_bits(planes));
}

hbq::BitPlanes to_bit_planes(const TokenMap& tokens, const hbq::Grid& grid,
                             int rounds) {
  if (tokens.positions != grid.positions()) {
    throw ParameterError("token map positions do not match the grid");
  }
  if (tokens.layout == Layout::index) {
    if (tokens.channels != grid.channels || tokens.categories != (1u << rounds)) {
      throw ParameterError("index token map does not match grid channels / 2^M");
    }
    hbq::IndexMap indices{grid, rounds, tokens.values};
    return hbq::unpack_indices(indices, rounds);
  }
  hbq::BitMap bits{grid, rounds, {}};
  if (tokens.channels != bits.bits_per_position()) {
    throw ParameterError("bit token map does not match grid channels * M");
  }
  bits.values.assign(tokens.values.begin(), tokens.values.end());
  return hbq::unflatten_bits(bits, grid.channels, rounds);
}

TokenMap random_token_map(Layout layout, std::uint32_t categories,
                          std::size_t positions, std::size_t channels, Rng& rng) {
  TokenMap out(layout, categories, positions, channels);
  for (auto& v : out.values) v = static_cast<std::uint16_t>(rng.below(categories));
  return out;
}

std::size_t SelectionMap::count() const noexcept {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), 1));
}

double SelectionMap::ones_fraction() const noexcept {
  return values.empty() ? 0.0
                        : static_cast<double>(count()) /
                              static_cast<double>(values.size());
}

SelectionMap make_selection_map(std::size_t positions, std::size_t channels,
                                double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw ParameterError("selection ratio must lie in [0, 1], got " +
                         std::to_string(ratio));
  }
  SelectionMap out(positions, channels);
  for (auto& v : out.values) v = rng.uniform() < ratio ? 1 : 0;
  return out;
}

TokenMap compose_state(const SelectionMap& selection, const TokenMap& drawn,
                       const TokenMap& random) {
  if (!drawn.same_extents(random)) {
    throw ParameterError("compose_state: drawing and random map differ in layout or extents");
  }
  if (selection.positions != drawn.positions || selection.channels != drawn.channels) {
    throw ParameterError("compose_state: selection extents do not match token map");
  }
  TokenMap out = random;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    if (selection.values[i]) out.values[i] = drawn.values[i];
  }
  return out;
}

template <typename T>
double mean_entropy(const BasicTensor<T>& probs) {
  const std::size_t k = probs.last_extent();
  if (k < 2) throw ParameterError("mean_entropy needs K >= 2");
  const std::size_t rows = probs.size() / k;
  const double norm = std::log2(static_cast<double>(k));
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double h = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = probs[r * k + j];
      if (p < 0.0) {
        throw DomainError("mean_entropy: negative probability at distribution " +
                          std::to_string(r));
      }
      if (p > 0.0) h -= p * std::log2(p);
    }
    total += h;
  }
  return std::clamp(total / (static_cast<double>(rows) * norm), 0.0, 1.0);
}

template double mean_entropy<float>(const Tensor&);
template double mean_entropy<double>(const TensorD&);

double fixed_schedule(int step, int total_steps) {
  if (total_steps < 1) throw ParameterError("fixed schedule needs T >= 1");
  if (step < 0 || step >= total_steps) {
    throw ParameterError("fixed schedule step " + std::to_string(step) +
                         " outside [0, " + std::to_string(total_steps) + ")");
  }
  return static_cast<double>(step + 1) / static_cast<double>(total_steps);
}

void ScheduleConfig::validate() const {
  if (t0 < 1) throw ParameterError("schedule t0 must be >= 1");
  if (!(t0 < t_min)) {
    throw ParameterError("schedule requires t0 < t_min (t0=" + std::to_string(t0) +
                         ", t_min=" + std::to_string(t_min) + ")");
  }
  if (t_min > t_max) {
    throw ParameterError("schedule requires t_min <= t_max (t_min=" +
                         std::to_string(t_min) + ", t_max=" + std::to_string(t_max) + ")");
  }
  if (alpha < t_max) {
    throw ParameterError("schedule requires alpha >= t_max (alpha=" +
                         std::to_string(alpha) + ", t_max=" + std::to_string(t_max) + ")");
  }
  if (!std::isfinite(k) || !std::isfinite(b)) {
    throw ParameterError("schedule k and b must be finite");
  }
}

StepPlan adaptive_total_steps(double entropy, const ScheduleConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(entropy)) throw NumericError("adaptive schedule: entropy is not finite");
  const double raw = std::round(cfg.k * entropy + cfg.b);
  const double lo = cfg.t_min - cfg.t0;
  const double hi = cfg.t_max - cfg.t0;
  const int d = static_cast<int>(std::clamp(raw, lo, hi));
  return StepPlan{cfg.t0 + d, d};
}

double adaptive_ratio(int step, const StepPlan& plan, const ScheduleConfig& cfg) {
  if (step < 0 || step > cfg.t0 + plan.denominator) {
    throw ParameterError("adaptive schedule step " + std::to_string(step) +
                         " beyond trajectory end " +
                         std::to_string(cfg.t0 + plan.denominator));
  }
  if (step <= cfg.t0) return static_cast<double>(step) / cfg.alpha;
  // t0/a + ((a - t0)/a) * (t - t0)/D over the common denominator a*D, so the
  // terminal step evaluates to exactly 1.
  const std::int64_t d = plan.denominator;
  const std::int64_t num = std::int64_t{cfg.t0} * d +
                           std::int64_t{cfg.alpha - cfg.t0} * (step - cfg.t0);
  const std::int64_t den = std::int64_t{cfg.alpha} * d;
  if (num >= den) return 1.0;
  return std::clamp(static_cast<double>(num) / static_cast<double>(den), 0.0, 1.0);
}

double adaptive_ratio(int step, double entropy, const ScheduleConfig& cfg) {
  return adaptive_ratio(step, adaptive_total_steps(entropy, cfg), cfg);
}

TransitionCounts classify_transitions(const SelectionMap& current,
                                      const SelectionMap& next,
                                      const TokenMap& current_tokens,
                                      const TokenMap& next_tokens) {
  const std::size_t n = current.size();
  if (next.size() != n || current_tokens.size() != n || next_tokens.size() != n) {
    throw ParameterError("classify_transitions: extent mismatch");
  }
  TransitionCounts c;
  for (std::size_t i = 0; i < n; ++i) {
    const bool was = current.values[i] != 0;
    const bool is = next.values[i] != 0;
    if (!was && is) {
      ++c.filled;
    } else if (was && is) {
      if (current_tokens.values[i] == next_tokens.values[i]) {
        ++c.kept;
      } else {
        ++c.refined;
      }
    } else if (was) {
      ++c.erased;
    } else {
      ++c.blank;
    }
  }
  return c;
}

RefineState::RefineState(TokenMap random_map)
    : random_(std::move(random_map)),
      drawing_(random_),
      selection_(random_.positions, random_.channels) {}

TransitionCounts RefineState::advance(double ratio, SelectionMap selection,
                                      TokenMap drawing) {
  if (ratio < ratio_) {
    throw ParameterError("accumulation ratio must be non-decreasing");
  }
  const TransitionCounts counts =
      classify_transitions(selection_, selection, drawing_, drawing);
  selection_ = std::move(selection);
  drawing_ = std::move(drawing);
  ratio_ = ratio;
  ++step_;
  return counts;
}

}  // namespace grn
