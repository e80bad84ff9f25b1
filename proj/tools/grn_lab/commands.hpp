#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "config.hpp"

namespace grn::lab {

// Same initialization and training path as the train command.
PredictorParams train_model(const ExperimentConfig& cfg, std::span<const LabeledMap> maps,
                            const TrainingHooks& hooks = {});

struct MatchResult {
  double accuracy = 0.0;
  std::size_t record = 0;  // index into refs
};
// Best token match of `sample` against the records of class `label`.
MatchResult nearest_record(const TokenMap& sample, std::span<const LabeledMap> refs,
                           std::uint32_t label);

// class-major list of conditions: samples_per_class copies of each class.
std::vector<Condition> eval_conditions(const ExperimentConfig& cfg);

struct SampleStats {
  double accuracy = 0.0;  // mean nearest-record accuracy
  double mean_steps = 0.0;
  std::size_t erased_or_refined = 0;
};
SampleStats score_samples(std::span<const SampleResult> results,
                          std::span<const Condition> conds, std::span<const LabeledMap> refs);

struct QuantizeDemoOptions {
  int rounds = 8;
  int samples = 100000;
  bool truncate = false;
  std::uint64_t seed = 0;
};
// CSV m,max_abs_error,mean_abs_error on `out`.
void quantize_demo(const QuantizeDemoOptions& opt, std::ostream& out);

struct ScheduleOptions {
  ScheduleConfig schedule;
  std::optional<double> entropy;
  bool sweep = false;
};
void schedule_table(const ScheduleOptions& opt, std::ostream& out);

void cmd_quantize_demo(const QuantizeDemoOptions& opt,
                       const std::optional<std::filesystem::path>& out_dir);
void cmd_build_data(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);

struct SampleOverrides {
  std::optional<std::filesystem::path> checkpoint;
  std::optional<ScheduleKind> schedule;
  std::optional<int> steps;
};
void cmd_sample(ExperimentConfig cfg, const SampleOverrides& o);
void cmd_eval(ExperimentConfig cfg, const SampleOverrides& o,
              const std::optional<std::filesystem::path>& reference);

enum class AblationSuite { mask, confidence, relbits };
AblationSuite suite_from_string(const std::string& s);
void cmd_ablate(const ExperimentConfig& cfg, const SampleOverrides& o, AblationSuite suite);

void cmd_schedule(const ScheduleOptions& opt,
                  const std::optional<std::filesystem::path>& out_dir);

// Maps library errors onto process exit codes: 2 config, 3 numeric, 4 I/O.
int exit_code_for(const std::exception& e);

}  // namespace grn::lab
