#include "grn/sampler.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

namespace grn {

const char* to_string(SampleMode m) { return m == SampleMode::refine ? "refine" : "mask"; }
const char* to_string(SelectionRule s) {
  return s == SelectionRule::random ? "random" : "confidence";
}
const char* to_string(ScheduleKind s) { return s == ScheduleKind::fixed ? "fixed" : "adaptive"; }

void SampleConfig::validate() const {
  if (schedule == ScheduleKind::fixed && steps < 1) {
    throw ParameterError("fixed schedule needs steps >= 1");
  }
  if (schedule == ScheduleKind::adaptive) adaptive.validate();
  if (!(cfg_start >= 0.0 && cfg_start <= 1.0)) {
    throw ParameterError("CFG interval start must lie in [0, 1]");
  }
  if (!std::isfinite(cfg_scale)) throw ParameterError("CFG scale must be finite");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ParameterError("sampling temperature must be positive");
  }
  if (target_mode == TargetMode::relative && variant != Layout::bit) {
    throw ParameterError("relative decoding requires the bit variant");
  }
}

SampleConfig sample_preset(std::string_view name) {
  SampleConfig c;
  auto set = [&](Layout v, double scale, double start, double tau) {
    c.variant = v;
    c.cfg_scale = scale;
    c.cfg_start = start;
    c.temperature = tau;
  };
  if (name == "ind-B") {
    set(Layout::index, 2.4, 0.40, 1.33);
  } else if (name == "bit-B") {
    set(Layout::bit, 2.4, 0.44, 1.23);
  } else if (name == "ind-L") {
    set(Layout::index, 2.0, 0.40, 1.30);
  } else if (name == "bit-L") {
    set(Layout::bit, 1.9, 0.45, 1.20);
  } else {
    throw ParameterError("unknown sampling preset '" + std::string(name) + "'");
  }
  return c;
}

std::vector<std::string> sample_preset_names() { return {"ind-B", "bit-B", "ind-L", "bit-L"}; }

SelectionMap select_by_confidence(std::span<const double> confidence, std::size_t positions,
                                  std::size_t channels, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ParameterError("selection ratio outside [0, 1]");
  const std::size_t n = positions * channels;
  if (confidence.size() != n) throw ParameterError("confidence size does not match the map");
  // The guard keeps l*N that is an integer up to rounding from rounding up.
  const auto k = static_cast<std::size_t>(
      std::min<double>(static_cast<double>(n), std::ceil(ratio * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return confidence[a] > confidence[b]; });
  SelectionMap s(positions, channels);
  for (std::size_t i = 0; i < k; ++i) s.values[order[i]] = 1;
  return s;
}

std::vector<double> token_confidence(const Tensor& logits, const TokenMap& tokens,
                                     double temperature) {
  const std::size_t k = logits.last_extent();
  if (logits.size() != tokens.size() * k) {
    throw ParameterError("token_confidence: logits do not match the token map");
  }
  std::vector<double> out(tokens.size());
  std::vector<float> row(k);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    softmax_row<float>(logits.data().subspan(i * k, k), temperature, row);
    out[i] = row[tokens.values[i]];
  }
  return out;
}

TokenMap relative_bit_decode(const TokenMap& input, const TokenMap& flips) {
  if (input.layout != Layout::bit || flips.layout != Layout::bit ||
      !input.same_extents(flips)) {
    throw ParameterError("relative decoding needs two bit-layout maps of equal extents");
  }
  TokenMap out = input;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.values[i] = static_cast<std::uint16_t>(input.values[i] ^ (flips.values[i] & 1u));
  }
  return out;
}

namespace {

struct Prediction {
  Tensor logits;
  bool cfg_active = false;
  int passes = 0;
};

Prediction predict(const PredictorParams& params, const TokenMap& input, Condition cond,
                   double ratio, const SampleConfig& cfg) {
  Prediction p;
  p.cfg_active = cond.has_value() && ratio >= cfg.cfg_start;
  if (p.cfg_active) {
    const Tensor c = Predictor<float>::forward(params, input, cond);
    const Tensor u = Predictor<float>::forward(params, input, std::nullopt);
    p.logits = apply_cfg(c, u, cfg.cfg_scale);
    p.passes = 2;
  } else {
    p.logits = Predictor<float>::forward(params, input, cond);
    p.passes = 1;
  }
  if (!p.logits.all_finite()) throw NumericError("predictor produced non-finite logits");
  return p;
}

void check_inputs(const PredictorParams& params, Condition cond, const SampleConfig& cfg) {
  cfg.validate();
  if (!params.all_finite()) throw NumericError("predictor parameters contain NaN or Inf");
  const auto& pc = params.config();
  if (cond && *cond >= static_cast<std::uint32_t>(pc.n_classes)) {
    throw IndexError("condition " + std::to_string(*cond) + " out of range");
  }
  const int k = cfg.target_mode == TargetMode::relative || cfg.variant == Layout::bit
                    ? 2
                    : pc.categories;
  if (pc.categories != k) throw ParameterError("predictor K does not match the sampling variant");
}

class Schedule {
 public:
  explicit Schedule(const SampleConfig& cfg) : cfg_(cfg) {}

  double ratio(int step) const {
    if (cfg_.schedule == ScheduleKind::fixed) {
      return static_cast<double>(step) / static_cast<double>(cfg_.steps);
    }
    if (plan_) return adaptive_ratio(step, *plan_, cfg_.adaptive);
    return static_cast<double>(step) / cfg_.adaptive.alpha;
  }

  // The step-t0 prediction is the distribution the schedule is frozen from.
  void observe(int step, double entropy, SampleTrace& trace) {
    if (cfg_.schedule == ScheduleKind::adaptive && step == cfg_.adaptive.t0) {
      plan_ = adaptive_total_steps(entropy, cfg_.adaptive);
      trace.frozen_entropy = entropy;
    }
  }

 private:
  const SampleConfig& cfg_;
  std::optional<StepPlan> plan_;
};

double prediction_entropy(const Tensor& logits) { return mean_entropy(softmax(logits, 1.0)); }

TokenMap draw(const Prediction& p, const TokenMap& input, const SampleConfig& cfg, Rng& rng,
              TokenMap* raw) {
  TokenMap sampled = sample_tokens(p.logits, cfg.temperature, rng, cfg.variant);
  if (raw) *raw = sampled;
  if (cfg.target_mode == TargetMode::relative) return relative_bit_decode(input, sampled);
  return sampled;
}

}  // namespace

SampleResult sample(const PredictorParams& params, Condition cond, const SampleConfig& cfg,
                    Rng& rng) {
  if (cfg.mode == SampleMode::mask) return sample_mask_mode(params, cond, cfg, rng);
  check_inputs(params, cond, cfg);
  const auto& pc = params.config();
  const auto n_pos = static_cast<std::size_t>(pc.n_pos);
  const auto c_eff = static_cast<std::size_t>(pc.c_eff);

  TokenMap y_rand = random_token_map(cfg.variant, static_cast<std::uint32_t>(pc.categories),
                                     n_pos, c_eff, rng);
  TokenMap y_pred = y_rand;
  RefineState state(y_rand);
  std::vector<double> confidence(y_rand.size(), 1.0 / pc.categories);
  Schedule schedule(cfg);
  SampleTrace trace;

  double ratio = 0.0;
  for (int t = 1; ratio < 1.0; ++t) {
    ratio = schedule.ratio(t);
    SelectionMap s = cfg.selection == SelectionRule::random
                         ? make_selection_map(n_pos, c_eff, ratio, rng)
                         : select_by_confidence(confidence, n_pos, c_eff, ratio);
    const TokenMap input = compose_state(s, y_pred, y_rand);
    StepRecord rec;
    rec.step = t;
    rec.ratio = ratio;
    rec.transitions = state.advance(ratio, std::move(s), y_pred);

    const Prediction p = predict(params, input, cond, ratio, cfg);
    rec.cfg_active = p.cfg_active;
    rec.forward_passes = p.passes;
    rec.entropy = prediction_entropy(p.logits);
    state.record_entropy(rec.entropy);
    schedule.observe(t, rec.entropy, trace);

    TokenMap raw;
    y_pred = draw(p, input, cfg, rng, &raw);
    if (cfg.selection == SelectionRule::confidence) {
      confidence = token_confidence(p.logits, raw, cfg.temperature);
    }
    trace.steps.push_back(rec);
  }
  trace.total_steps = static_cast<int>(trace.steps.size());
  trace.final_tokens = y_pred;
  return SampleResult{std::move(y_pred), std::move(trace)};
}

SampleResult sample_mask_mode(const PredictorParams& params, Condition cond,
                              const SampleConfig& cfg, Rng& rng) {
  check_inputs(params, cond, cfg);
  const auto& pc = params.config();
  const auto n_pos = static_cast<std::size_t>(pc.n_pos);
  const auto c_eff = static_cast<std::size_t>(pc.c_eff);

  TokenMap y_rand = random_token_map(cfg.variant, static_cast<std::uint32_t>(pc.categories),
                                     n_pos, c_eff, rng);
  TokenMap committed_values = y_rand;
  SelectionMap committed(n_pos, c_eff);
  RefineState state(y_rand);
  Schedule schedule(cfg);
  SampleTrace trace;
  const std::size_t n = y_rand.size();

  double ratio = 0.0;
  for (int t = 1; ratio < 1.0; ++t) {
    const double previous = ratio;
    ratio = schedule.ratio(t);
    const TokenMap input = compose_state(committed, committed_values, y_rand);

    StepRecord rec;
    rec.step = t;
    rec.ratio = ratio;
    const Prediction p = predict(params, input, cond, ratio, cfg);
    rec.cfg_active = p.cfg_active;
    rec.forward_passes = p.passes;
    rec.entropy = prediction_entropy(p.logits);
    state.record_entropy(rec.entropy);
    schedule.observe(t, rec.entropy, trace);

    TokenMap raw;
    const TokenMap fresh = draw(p, input, cfg, rng, &raw);

    SelectionMap grown = committed;
    if (cfg.selection == SelectionRule::random) {
      const double q = ratio >= 1.0 ? 1.0 : (ratio - previous) / (1.0 - previous);
      for (std::size_t i = 0; i < n; ++i) {
        if (!grown.values[i] && rng.uniform() < q) grown.values[i] = 1;
      }
    } else {
      const auto target = static_cast<std::size_t>(
          std::min<double>(static_cast<double>(n), std::ceil(ratio * static_cast<double>(n) - 1e-9)));
      const std::size_t have = committed.count();
      std::vector<double> conf = token_confidence(p.logits, raw, cfg.temperature);
      for (std::size_t i = 0; i < n; ++i) {
        if (committed.values[i]) conf[i] = -1.0;
      }
      if (target > have) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });
        for (std::size_t i = 0; i < target - have; ++i) grown.values[order[i]] = 1;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (grown.values[i] && !committed.values[i]) committed_values.values[i] = fresh.values[i];
    }
    committed = grown;
    rec.transitions = state.advance(ratio, committed, committed_values);
    trace.steps.push_back(rec);
  }
  trace.total_steps = static_cast<int>(trace.steps.size());
  trace.final_tokens = committed_values;
  return SampleResult{std::move(committed_values), std::move(trace)};
}

Rng trajectory_rng(std::uint64_t seed, Condition cond, std::size_t occurrence) {
  const std::uint64_t label = cond ? std::uint64_t{*cond} + 1 : 0;
  return Rng(seed).split(streams::sample).split(mix64(label) ^ mix64(occurrence + 0x9e37));
}

std::vector<SampleResult> batch_sample(const PredictorParams& params,
                                       std::span<const Condition> conds,
                                       const SampleConfig& cfg, std::uint64_t seed) {
  std::vector<std::size_t> occurrence(conds.size());
  std::map<std::int64_t, std::size_t> seen;
  for (std::size_t i = 0; i < conds.size(); ++i) {
    const std::int64_t key = conds[i] ? static_cast<std::int64_t>(*conds[i]) : -1;
    occurrence[i] = seen[key]++;
  }
  std::vector<SampleResult> out(conds.size());
  parallel_for(conds.size(), worker_count(), [&](std::size_t i) {
    Rng rng = trajectory_rng(seed, conds[i], occurrence[i]);
    out[i] = sample(params, conds[i], cfg, rng);
  });
  return out;
}

void write_trace_csv(const std::filesystem::path& path, const SampleTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write trace " + path.string());
  out << kTraceHeader << '\n';
  char line[256];
  for (const auto& r : trace.steps) {
    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%zu,%zu,%zu,%zu,%zu,%d\n", r.step, r.ratio,
                  r.entropy, r.transitions.filled, r.transitions.kept, r.transitions.refined,
                  r.transitions.erased, r.transitions.blank, r.cfg_active ? 1 : 0);
    out << line;
  }
  if (!out) throw IoError("failed writing trace " + path.string());
}

std::string trace_summary_json(const SampleTrace& trace, std::optional<double> accuracy) {
  TransitionCounts sum;
  int passes = 0;
  for (const auto& r : trace.steps) {
    sum.filled += r.transitions.filled;
    sum.kept += r.transitions.kept;
    sum.refined += r.transitions.refined;
    sum.erased += r.transitions.erased;
    sum.blank += r.transitions.blank;
    passes += r.forward_passes;
  }
  nlohmann::json j = {
      {"total_steps", trace.total_steps},
      {"forward_passes", passes},
      {"final_entropy", trace.steps.empty() ? 0.0 : trace.steps.back().entropy},
      {"transitions",
       {{"filled", sum.filled},
        {"kept", sum.kept},
        {"refined", sum.refined},
        {"erased", sum.erased},
        {"blank", sum.blank}}},
  };
  j["frozen_entropy"] = trace.frozen_entropy ? nlohmann::json(*trace.frozen_entropy) : nlohmann::json();
  if (accuracy) j["token_accuracy"] = *accuracy;
  return j.dump(2);
}

}  // namespace grn
