#include "grn/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

namespace grn {

const char* to_string(TargetMode mode) {
  return mode == TargetMode::absolute ? "absolute" : "relative";
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ParameterError("learning rate must be > 0");
  if (!(cond_drop >= 0.0 && cond_drop <= 1.0)) {
    throw ParameterError("condition-drop probability must lie in [0, 1]");
  }
  if (steps < 0) throw ParameterError("training steps must be >= 0");
  if (batch_size < 1) throw ParameterError("batch size must be >= 1");
  if (eval_every < 1) throw ParameterError("eval cadence must be >= 1");
  if (target_mode == TargetMode::relative && variant != Layout::bit) {
    throw ParameterError("relative targets require the bit variant");
  }
  if (clip_gradients && !(clip_norm > 0.0)) {
    throw ParameterError("gradient clip norm must be > 0");
  }
}

double sample_lt(Rng& rng) { return rng.uniform(); }

TrainingInput make_training_input(const TokenMap& target, double ratio, Rng& rng) {
  TokenMap random = random_token_map(target.layout, target.categories,
                                     target.positions, target.channels, rng);
  SelectionMap selection = make_selection_map(target.positions, target.channels, ratio, rng);
  TokenMap input = compose_state(selection, target, random);
  return TrainingInput{std::move(input), std::move(selection), std::move(random)};
}

TokenMap relative_target(const TokenMap& input, const TokenMap& target) {
  if (!input.same_extents(target) || input.layout != Layout::bit) {
    throw ParameterError("relative targets need matching bit-layout maps");
  }
  TokenMap flips(Layout::bit, 2, target.positions, target.channels);
  for (std::size_t i = 0; i < flips.size(); ++i) {
    flips.values[i] = input.values[i] != target.values[i] ? 1 : 0;
  }
  return flips;
}

Adam::Adam(std::size_t size, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0),
      v_(size, 0.0) {}

void Adam::update(std::span<float> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw ParameterError("Adam: parameter/gradient size mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double step = lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    params[i] = static_cast<float>(params[i] - step);
  }
}

Trainer::Trainer(PredictorParams params, TrainConfig cfg)
    : params_(std::move(params)),
      cfg_(cfg),
      adam_(params_.flat().size(), cfg.learning_rate),
      workers_(worker_count()) {
  cfg_.validate();
  const auto& pc = params_.config();
  const int expected_k = cfg_.target_mode == TargetMode::relative ? 2 : pc.categories;
  if (cfg_.variant == Layout::bit && pc.categories != 2) {
    throw ParameterError("bit variant requires a predictor with K = 2");
  }
  if (pc.categories != expected_k) {
    throw ParameterError("predictor K does not match the training target");
  }
}

StepStats Trainer::step(std::span<const LabeledMap> batch, Rng& rng) {
  if (batch.empty()) throw ParameterError("training batch must be nonempty");
  const std::size_t n = batch.size();
  const std::uint64_t step_key = rng.next_u64();
  const std::size_t size = params_.flat().size();

  std::vector<std::vector<float>> grads(n);
  std::vector<double> losses(n, 0.0);
  std::vector<std::uint8_t> dropped(n, 0);
  parallel_for(n, workers_, [&](std::size_t m) {
    Rng member(mix64(step_key ^ mix64(m + 1)));
    const LabeledMap& example = batch[m];
    const double ratio = sample_lt(member);
    TrainingInput ti = make_training_input(example.tokens, ratio, member);
    Condition cond = example.label;
    if (member.uniform() < cfg_.cond_drop) {
      cond = std::nullopt;
      dropped[m] = 1;
    }
    grads[m].assign(size, 0.0f);
    if (cfg_.target_mode == TargetMode::relative) {
      const TokenMap flips = relative_target(ti.input, example.tokens);
      losses[m] = Predictor<float>::backward(params_, ti.input, cond, flips, grads[m]);
    } else {
      losses[m] = Predictor<float>::backward(params_, ti.input, cond, example.tokens, grads[m]);
    }
  });

  StepStats stats;
  std::vector<double> total(size, 0.0);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t m = 0; m < n; ++m) {
    stats.loss += losses[m] * inv;
    stats.null_conditions += dropped[m];
    for (std::size_t i = 0; i < size; ++i) total[i] += static_cast<double>(grads[m][i]) * inv;
  }
  if (!std::isfinite(stats.loss)) {
    throw NumericError("non-finite training loss at optimizer step " +
                       std::to_string(adam_.steps() + 1));
  }
  double sq = 0.0;
  for (double g : total) sq += g * g;
  stats.grad_norm = std::sqrt(sq);
  if (!std::isfinite(stats.grad_norm)) {
    throw NumericError("non-finite gradient norm at optimizer step " +
                       std::to_string(adam_.steps() + 1));
  }
  if (cfg_.clip_gradients && stats.grad_norm > cfg_.clip_norm) {
    const double s = cfg_.clip_norm / stats.grad_norm;
    for (double& g : total) g *= s;
  }
  adam_.update(params_.flat(), total);
  return stats;
}

std::vector<std::size_t> draw_batch(std::span<const LabeledMap> records,
                                    std::size_t batch_size, Rng& rng) {
  if (records.empty()) throw ParameterError("cannot draw a batch from an empty dataset");
  std::map<std::uint32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) by_class[records[i].label].push_back(i);
  std::vector<const std::vector<std::size_t>*> classes;
  for (const auto& [label, idx] : by_class) classes.push_back(&idx);
  std::vector<std::size_t> out(batch_size);
  for (auto& o : out) {
    const auto& members = *classes[rng.below(classes.size())];
    o = members[rng.below(members.size())];
  }
  return out;
}

TrainingRun train(PredictorParams init, std::span<const LabeledMap> records,
                  const TrainConfig& cfg, const TrainingHooks& hooks) {
  Trainer trainer(std::move(init), cfg);
  Rng rng = Rng(cfg.seed).split(streams::train);
  TrainingRun run;
  run.losses.reserve(static_cast<std::size_t>(cfg.steps));
  const auto start = std::chrono::steady_clock::now();
  std::vector<LabeledMap> batch;
  for (int s = 1; s <= cfg.steps; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    batch.clear();
    for (std::size_t i : draw_batch(records, static_cast<std::size_t>(cfg.batch_size), rng)) {
      batch.push_back(records[i]);
    }
    const StepStats stats = trainer.step(batch, rng);
    run.losses.push_back(stats.loss);
    const auto t1 = std::chrono::steady_clock::now();
    if (hooks.on_step) {
      const double dt = std::chrono::duration<double>(t1 - t0).count();
      double tokens = 0.0;
      for (const auto& b : batch) tokens += static_cast<double>(b.tokens.size());
      hooks.on_step(TrainingProgress{s, stats.loss, cfg.learning_rate,
                                     dt > 0.0 ? tokens / dt : 0.0,
                                     std::chrono::duration<double>(t1 - start).count()});
    }
    if (hooks.on_checkpoint && (s % cfg.eval_every == 0 || s == cfg.steps)) {
      hooks.on_checkpoint(s, trainer.params());
    }
  }
  if (cfg.steps == 0 && hooks.on_checkpoint) hooks.on_checkpoint(0, trainer.params());
  run.params = trainer.params();
  return run;
}

TrainingLog::TrainingLog(const std::filesystem::path& path) : path_(path) {
  const bool fresh = !std::filesystem::exists(path_) || std::filesystem::file_size(path_) == 0;
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot open training log " + path_.string());
  if (fresh) out << kTrainingLogHeader << '\n';
}

void TrainingLog::append(const TrainingProgress& p) {
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot append to training log " + path_.string());
  char line[256];
  std::snprintf(line, sizeof(line), "%d,%.9g,%.6g,%.1f,%.3f\n", p.step, p.loss,
                p.learning_rate, p.tokens_per_sec, p.wallclock_s);
  out << line;
}

std::string train_config_json(const TrainConfig& cfg) {
  nlohmann::json j = {
      {"variant", to_string(cfg.variant)},
      {"target_mode", to_string(cfg.target_mode)},
      {"steps", cfg.steps},
      {"batch_size", cfg.batch_size},
      {"learning_rate", cfg.learning_rate},
      {"cond_drop", cfg.cond_drop},
      {"seed", cfg.seed},
      {"eval_every", cfg.eval_every},
      {"clip_gradients", cfg.clip_gradients},
      {"clip_norm", cfg.clip_norm},
  };
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    TrainConfig cfg;
    const std::string variant = j.at("variant").get<std::string>();
    if (variant == "ind") {
      cfg.variant = Layout::index;
    } else if (variant == "bit") {
      cfg.variant = Layout::bit;
    } else {
      throw ConfigError("unknown variant '" + variant + "'");
    }
    const std::string mode = j.at("target_mode").get<std::string>();
    if (mode == "absolute") {
      cfg.target_mode = TargetMode::absolute;
    } else if (mode == "relative") {
      cfg.target_mode = TargetMode::relative;
    } else {
      throw ConfigError("unknown target_mode '" + mode + "'");
    }
    cfg.steps = j.at("steps").get<int>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.cond_drop = j.at("cond_drop").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.eval_every = j.at("eval_every").get<int>();
    cfg.clip_gradients = j.at("clip_gradients").get<bool>();
    cfg.clip_norm = j.at("clip_norm").get<double>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
}

void save_training_checkpoint(const std::filesystem::path& path,
                              const PredictorParams& params, const TrainConfig& cfg) {
  save_checkpoint(path, params, train_config_json(cfg));
}

TrainingCheckpoint load_training_checkpoint(const std::filesystem::path& path,
                                            const std::optional<PredictorConfig>& expected) {
  Checkpoint c = load_checkpoint(path, expected);
  return TrainingCheckpoint{std::move(c.params), train_config_from_json(c.metadata_json)};
}

}  // namespace grn
