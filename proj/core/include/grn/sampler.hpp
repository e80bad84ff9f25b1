#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grn/numerics.hpp"
#include "grn/predictor.hpp"
#include "grn/refine.hpp"
#include "grn/trainer.hpp"

namespace grn {

enum class SampleMode : std::uint8_t { refine, mask };
enum class SelectionRule : std::uint8_t { random, confidence };
enum class ScheduleKind : std::uint8_t { fixed, adaptive };

const char* to_string(SampleMode m);
const char* to_string(SelectionRule s);
const char* to_string(ScheduleKind s);

struct SampleConfig {
  SampleMode mode = SampleMode::refine;
  SelectionRule selection = SelectionRule::random;
  ScheduleKind schedule = ScheduleKind::fixed;
  int steps = 50;  // fixed schedule only
  ScheduleConfig adaptive;
  double cfg_scale = 1.0;
  double cfg_start = 0.0;  // CFG on iff conditional and l_t >= cfg_start
  double temperature = 1.0;
  Layout variant = Layout::index;
  TargetMode target_mode = TargetMode::absolute;

  void validate() const;
  friend bool operator==(const SampleConfig&, const SampleConfig&) = default;
};

// Named decoding presets: "ind-B", "bit-B", "ind-L", "bit-L".
SampleConfig sample_preset(std::string_view name);
std::vector<std::string> sample_preset_names();

struct StepRecord {
  int step = 0;  // 1-based
  double ratio = 0.0;
  double entropy = 0.0;  // normalized mean entropy of this step's prediction
  TransitionCounts transitions;
  bool cfg_active = false;
  int forward_passes = 0;
};

struct SampleTrace {
  std::vector<StepRecord> steps;
  TokenMap final_tokens;
  int total_steps = 0;
  std::optional<double> frozen_entropy;  // adaptive schedule only
};

struct SampleResult {
  TokenMap tokens;
  SampleTrace trace;
};

// Refinement loop. Dispatches to sample_mask_mode when cfg.mode == mask.
SampleResult sample(const PredictorParams& params, Condition cond,
                    const SampleConfig& cfg, Rng& rng);

// Committed tokens are frozen; only newly selected tokens take fresh
// predictions, so no token is ever erased or refined.
SampleResult sample_mask_mode(const PredictorParams& params, Condition cond,
                              const SampleConfig& cfg, Rng& rng);

// Marks the ceil(l*N) tokens whose sampled values are most probable
// (confidence[i] = p(Y_pred[i])). Ties go to the lowest flat index.
SelectionMap select_by_confidence(std::span<const double> confidence,
                                  std::size_t positions, std::size_t channels,
                                  double ratio);

// Probability of each sampled token under softmax(logits / temperature).
std::vector<double> token_confidence(const Tensor& logits, const TokenMap& tokens,
                                     double temperature);

// F XOR flips, both bit layout.
TokenMap relative_bit_decode(const TokenMap& input, const TokenMap& flips);

// Stream of the `occurrence`-th trajectory for `cond` in a batch.
Rng trajectory_rng(std::uint64_t seed, Condition cond, std::size_t occurrence);

// Independent trajectories; each result depends only on (seed, its cond,
// how many earlier entries share that cond).
std::vector<SampleResult> batch_sample(const PredictorParams& params,
                                       std::span<const Condition> conds,
                                       const SampleConfig& cfg, std::uint64_t seed);

inline constexpr const char* kTraceHeader =
    "step,l_t,H_t,filled,kept,refined,erased,blank,cfg_active";

void write_trace_csv(const std::filesystem::path& path, const SampleTrace& trace);
std::string trace_summary_json(const SampleTrace& trace,
                               std::optional<double> accuracy = std::nullopt);

}  // namespace grn
