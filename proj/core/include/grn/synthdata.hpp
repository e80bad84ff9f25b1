#pragma once

// Class-conditional synthetic feature maps, quantized into ground-truth
// token maps and stored as a manifest plus one HBQ blob per record.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "grn/hbq.hpp"
#include "grn/numerics.hpp"
#include "grn/refine.hpp"
#include "grn/trainer.hpp"

namespace grn {

// deterministic: one smooth field per class, no noise.
// bumps / gradients: Gaussian bumps or linear ramps plus noise_sigma noise.
// mixed: bumps plus ramps blended toward sigma-scaled noise with weight
// {0, 0.5, 1}[c % 3], so one class in three is noise only.
enum class Family : std::uint8_t { deterministic, bumps, gradients, mixed };

const char* to_string(Family f);
Family family_from_string(const std::string& name);

struct DatasetSpec {
  std::uint32_t n_classes = 10;
  std::uint32_t maps_per_class = 1;
  hbq::Grid grid{1, 8, 8, 4};
  int rounds = 2;
  double noise_sigma = 0.0;
  Family family = Family::deterministic;
  std::uint64_t seed = 0;

  void validate() const;
  // Noise scale applied to class `class_id`.
  double class_noise(std::uint32_t class_id) const;
  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

std::string dataset_spec_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const std::string& text);

// Noise-free class field before bounding; deterministic per (seed, class).
// Prototypes are re-keyed until every pair of classes differs in at least
// 10% of tokens at M = 4.
TensorD class_field(std::uint32_t class_id, const DatasetSpec& spec);

// Bounded feature map of one sample; noise is drawn from `rng`.
TensorD generate_feature_map(std::uint32_t class_id, const DatasetSpec& spec, Rng& rng);
// Same, keyed by sample index: deterministic per (seed, class, index).
TensorD generate_feature_map(std::uint32_t class_id, std::uint32_t index,
                             const DatasetSpec& spec);

struct Record {
  std::uint32_t label = 0;
  std::uint32_t index = 0;
  hbq::BitPlanes planes;
  friend bool operator==(const Record&, const Record&) = default;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<Record> records;
  // Normalized mean per-token marginal entropy of each class's index tokens.
  std::vector<double> class_entropy;

  std::vector<LabeledMap> token_maps(Layout layout) const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

Dataset build_dataset(const DatasetSpec& spec);

// Mean over token slots of the normalized entropy of the empirical value
// distribution across `maps`.
double marginal_entropy(const std::vector<const TokenMap*>& maps);

inline constexpr int kManifestVersion = 1;

void save_dataset(const std::filesystem::path& dir, const Dataset& data);
// Throws ParseError (with byte offset) on a malformed blob and IoError on a
// checksum mismatch or missing file.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace grn
