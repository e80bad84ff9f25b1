#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grn/numerics.hpp"
#include "grn/predictor.hpp"
#include "grn/refine.hpp"

namespace grn {

// absolute: predict Y_gt. relative: predict the flip mask (F_t != Y_gt),
// bit variant only.
enum class TargetMode : std::uint8_t { absolute, relative };

const char* to_string(TargetMode mode);

struct TrainConfig {
  Layout variant = Layout::index;
  TargetMode target_mode = TargetMode::absolute;
  int steps = 2000;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double cond_drop = 0.1;
  std::uint64_t seed = 0;
  int eval_every = 500;
  bool clip_gradients = true;
  double clip_norm = 1.0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// One ground-truth token map and its class label.
struct LabeledMap {
  TokenMap tokens;
  std::uint32_t label = 0;
};

// l_t ~ Uniform[0, 1).
double sample_lt(Rng& rng);

struct TrainingInput {
  TokenMap input;          // F_t
  SelectionMap selection;  // S_t
  TokenMap random;         // Y_rand
};

// Draws Y_rand, then S_t = rand_like(Y_gt) < l_t, then composes F_t.
TrainingInput make_training_input(const TokenMap& target, double ratio, Rng& rng);

// Flip mask (input != target) as a bit-layout map.
TokenMap relative_target(const TokenMap& input, const TokenMap& target);

// Adaptive-moment optimizer with constant learning rate and no weight decay.
class Adam {
 public:
  Adam(std::size_t size, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);

  void update(std::span<float> params, std::span<const double> grad);
  std::int64_t steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<double> m_, v_;
};

struct StepStats {
  double loss = 0.0;  // mean over batch of the per-map token-mean loss
  double grad_norm = 0.0;
  std::size_t null_conditions = 0;
};

class Trainer {
 public:
  Trainer(PredictorParams params, TrainConfig cfg);

  // One optimizer update on the batch: per element a fresh l_t, Y_rand and
  // S_t, condition dropped to NULL with probability cond_drop. Throws
  // NumericError on a non-finite loss.
  StepStats step(std::span<const LabeledMap> batch, Rng& rng);

  const PredictorParams& params() const noexcept { return params_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  std::int64_t steps_taken() const noexcept { return adam_.steps(); }

 private:
  PredictorParams params_;
  TrainConfig cfg_;
  Adam adam_;
  unsigned workers_;
};

// Batch indices into `records`: class uniform over the labels present, then
// a record uniform within the class.
std::vector<std::size_t> draw_batch(std::span<const LabeledMap> records,
                                    std::size_t batch_size, Rng& rng);

struct TrainingProgress {
  int step = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
  double tokens_per_sec = 0.0;
  double wallclock_s = 0.0;
};

struct TrainingHooks {
  std::function<void(const TrainingProgress&)> on_step;
  // Called every eval_every steps and after the final step.
  std::function<void(int step, const PredictorParams&)> on_checkpoint;
};

struct TrainingRun {
  PredictorParams params;
  std::vector<double> losses;
};

TrainingRun train(PredictorParams init, std::span<const LabeledMap> records,
                  const TrainConfig& cfg, const TrainingHooks& hooks = {});

// Append-only CSV: step,loss_nats,lr,tokens_per_sec,wallclock_s.
class TrainingLog {
 public:
  explicit TrainingLog(const std::filesystem::path& path);
  void append(const TrainingProgress& p);

 private:
  std::filesystem::path path_;
};

inline constexpr const char* kTrainingLogHeader =
    "step,loss_nats,lr,tokens_per_sec,wallclock_s";

std::string train_config_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

struct TrainingCheckpoint {
  PredictorParams params;
  TrainConfig train;
};

void save_training_checkpoint(const std::filesystem::path& path,
                              const PredictorParams& params, const TrainConfig& cfg);
TrainingCheckpoint load_training_checkpoint(
    const std::filesystem::path& path,
    const std::optional<PredictorConfig>& expected = std::nullopt);

}  // namespace grn
