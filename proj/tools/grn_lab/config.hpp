#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "grn/predictor.hpp"
#include "grn/sampler.hpp"
#include "grn/synthdata.hpp"
#include "grn/trainer.hpp"

namespace grn::lab {

struct EvalSettings {
  int samples_per_class = 4;
  int seeds = 5;  // ablation repeats
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "runs/default";
  DatasetSpec dataset;
  PredictorConfig predictor;
  TrainConfig train;
  SampleConfig sample;
  EvalSettings eval;

  // Cross-field checks; throws ConfigError naming both sides of a conflict.
  void validate() const;
};

// Predictor extents implied by a dataset grid and a variant.
PredictorConfig derived_predictor(const DatasetSpec& data, Layout variant,
                                  const PredictorConfig& shape);

// Parses JSON text. Missing predictor extents are derived from the dataset;
// extents that are present must agree with it.
// A seed override replaces the top-level seed before defaults are derived
// from it.
ExperimentConfig parse_config(const std::string& text,
                              std::optional<std::uint64_t> seed_override = std::nullopt);
ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<std::uint64_t> seed_override = std::nullopt);
std::string config_json(const ExperimentConfig& cfg);

}  // namespace grn::lab
