#include "config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace grn::lab {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& where, std::set<std::string> allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown field " + where + "." + key);
  }
}

template <typename T>
T field(const json& obj, const std::string& where, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("field " + where + "." + key + " has the wrong type");
  }
}

Layout parse_layout(const std::string& s, const std::string& where) {
  if (s == "ind") return Layout::index;
  if (s == "bit") return Layout::bit;
  throw ConfigError(where + " must be \"ind\" or \"bit\" (got \"" + s + "\")");
}

TargetMode parse_target(const std::string& s) {
  if (s == "absolute") return TargetMode::absolute;
  if (s == "relative") return TargetMode::relative;
  throw ConfigError("train.target_mode must be \"absolute\" or \"relative\"");
}

void conflict(const std::string& a, long long va, const std::string& b, long long vb) {
  std::ostringstream os;
  os << a << " = " << va << " conflicts with " << b << " = " << vb;
  throw ConfigError(os.str());
}

// Re-raises library contract violations as configuration errors.
template <typename F>
void as_config(const std::string& where, F&& check) {
  try {
    check();
  } catch (const ParameterError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

PredictorConfig derived_predictor(const DatasetSpec& data, Layout variant,
                                  const PredictorConfig& shape) {
  PredictorConfig p = shape;
  p.n_pos = static_cast<int>(data.grid.positions());
  p.c_eff = static_cast<int>(variant == Layout::bit ? data.grid.channels * data.rounds
                                                    : data.grid.channels);
  p.categories = variant == Layout::bit ? 2 : (1 << data.rounds);
  p.n_classes = static_cast<int>(data.n_classes);
  return p;
}

void ExperimentConfig::validate() const {
  as_config("dataset", [&] { dataset.validate(); });
  as_config("predictor", [&] { predictor.validate(); });
  as_config("train", [&] { train.validate(); });
  as_config("sample", [&] { sample.validate(); });
  // --schedule adaptive can switch it on after loading
  as_config("schedule", [&] { sample.adaptive.validate(); });

  const PredictorConfig want = derived_predictor(dataset, train.variant, predictor);
  if (predictor.n_pos != want.n_pos) {
    conflict("predictor.n_pos", predictor.n_pos, "dataset.grid positions", want.n_pos);
  }
  if (predictor.c_eff != want.c_eff) {
    conflict("predictor.c_eff", predictor.c_eff,
             std::string("dataset.grid.channels") +
                 (train.variant == Layout::bit ? " * dataset.rounds" : ""),
             want.c_eff);
  }
  if (predictor.categories != want.categories) {
    throw ConfigError("predictor.categories = " + std::to_string(predictor.categories) +
                      " conflicts with train.variant = " + to_string(train.variant) +
                      " at dataset.rounds = " + std::to_string(dataset.rounds));
  }
  if (predictor.n_classes != want.n_classes) {
    conflict("predictor.n_classes", predictor.n_classes, "dataset.n_classes", want.n_classes);
  }
  if (sample.variant != train.variant) {
    throw ConfigError(std::string("sample.variant = ") + to_string(sample.variant) +
                      " conflicts with train.variant = " + to_string(train.variant));
  }
  if (sample.target_mode != train.target_mode) {
    throw ConfigError(std::string("sample.target_mode = ") + to_string(sample.target_mode) +
                      " conflicts with train.target_mode = " + to_string(train.target_mode));
  }
  if (eval.samples_per_class < 1) throw ConfigError("eval.samples_per_class must be >= 1");
  if (eval.seeds < 1) throw ConfigError("eval.seeds must be >= 1");
}

ExperimentConfig parse_config(const std::string& text,
                              std::optional<std::uint64_t> seed_override) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, "config",
             {"seed", "out_dir", "dataset", "predictor", "train", "sample", "schedule", "eval"});
  if (seed_override) root["seed"] = *seed_override;
  ExperimentConfig c;
  c.seed = field<std::uint64_t>(root, "config", "seed", 0);
  c.out_dir = field<std::string>(root, "config", "out_dir", c.out_dir.string());

  const json empty = json::object();
  const json& d = root.contains("dataset") ? root["dataset"] : empty;
  check_keys(d, "dataset",
             {"n_classes", "maps_per_class", "grid", "rounds", "noise_sigma", "family", "seed"});
  c.dataset.n_classes = field<std::uint32_t>(d, "dataset", "n_classes", c.dataset.n_classes);
  c.dataset.maps_per_class =
      field<std::uint32_t>(d, "dataset", "maps_per_class", c.dataset.maps_per_class);
  if (d.contains("grid")) {
    const json& g = d["grid"];
    check_keys(g, "dataset.grid", {"frames", "height", "width", "channels"});
    c.dataset.grid.frames = field<std::uint32_t>(g, "dataset.grid", "frames", 1);
    c.dataset.grid.height = field<std::uint32_t>(g, "dataset.grid", "height", 8);
    c.dataset.grid.width = field<std::uint32_t>(g, "dataset.grid", "width", 8);
    c.dataset.grid.channels = field<std::uint32_t>(g, "dataset.grid", "channels", 4);
  }
  c.dataset.rounds = field<int>(d, "dataset", "rounds", c.dataset.rounds);
  c.dataset.noise_sigma = field<double>(d, "dataset", "noise_sigma", c.dataset.noise_sigma);
  c.dataset.family =
      family_from_string(field<std::string>(d, "dataset", "family", "deterministic"));
  c.dataset.seed = field<std::uint64_t>(d, "dataset", "seed", c.seed);

  const json& t = root.contains("train") ? root["train"] : empty;
  check_keys(t, "train",
             {"variant", "target_mode", "steps", "batch_size", "learning_rate", "cond_drop",
              "eval_every", "clip_gradients", "clip_norm"});
  c.train.variant = parse_layout(field<std::string>(t, "train", "variant", "ind"), "train.variant");
  c.train.target_mode = parse_target(field<std::string>(t, "train", "target_mode", "absolute"));
  c.train.steps = field<int>(t, "train", "steps", c.train.steps);
  c.train.batch_size = field<int>(t, "train", "batch_size", c.train.batch_size);
  c.train.learning_rate = field<double>(t, "train", "learning_rate", c.train.learning_rate);
  c.train.cond_drop = field<double>(t, "train", "cond_drop", c.train.cond_drop);
  c.train.eval_every = field<int>(t, "train", "eval_every", c.train.eval_every);
  c.train.clip_gradients = field<bool>(t, "train", "clip_gradients", c.train.clip_gradients);
  c.train.clip_norm = field<double>(t, "train", "clip_norm", c.train.clip_norm);
  c.train.seed = c.seed;

  const json& p = root.contains("predictor") ? root["predictor"] : empty;
  check_keys(p, "predictor",
             {"depth", "hidden", "heads", "ffn_hidden", "n_pos", "c_eff", "categories",
              "n_classes"});
  PredictorConfig shape;
  shape.depth = field<int>(p, "predictor", "depth", shape.depth);
  shape.hidden = field<int>(p, "predictor", "hidden", shape.hidden);
  shape.heads = field<int>(p, "predictor", "heads", shape.heads);
  shape.ffn_hidden = field<int>(p, "predictor", "ffn_hidden", shape.ffn_hidden);
  c.predictor = derived_predictor(c.dataset, c.train.variant, shape);
  c.predictor.n_pos = field<int>(p, "predictor", "n_pos", c.predictor.n_pos);
  c.predictor.c_eff = field<int>(p, "predictor", "c_eff", c.predictor.c_eff);
  c.predictor.categories = field<int>(p, "predictor", "categories", c.predictor.categories);
  c.predictor.n_classes = field<int>(p, "predictor", "n_classes", c.predictor.n_classes);

  const json& s = root.contains("sample") ? root["sample"] : empty;
  check_keys(s, "sample",
             {"preset", "mode", "selection", "schedule", "steps", "cfg_scale", "cfg_start",
              "temperature", "variant", "target_mode"});
  if (s.contains("preset")) {
    try {
      c.sample = sample_preset(field<std::string>(s, "sample", "preset", ""));
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("sample.preset: ") + e.what());
    }
  }
  const std::string mode = field<std::string>(s, "sample", "mode", to_string(c.sample.mode));
  if (mode == "refine") {
    c.sample.mode = SampleMode::refine;
  } else if (mode == "mask") {
    c.sample.mode = SampleMode::mask;
  } else {
    throw ConfigError("sample.mode must be \"refine\" or \"mask\"");
  }
  const std::string sel =
      field<std::string>(s, "sample", "selection", to_string(c.sample.selection));
  if (sel == "random") {
    c.sample.selection = SelectionRule::random;
  } else if (sel == "confidence") {
    c.sample.selection = SelectionRule::confidence;
  } else {
    throw ConfigError("sample.selection must be \"random\" or \"confidence\"");
  }
  const std::string sched =
      field<std::string>(s, "sample", "schedule", to_string(c.sample.schedule));
  if (sched == "fixed") {
    c.sample.schedule = ScheduleKind::fixed;
  } else if (sched == "adaptive") {
    c.sample.schedule = ScheduleKind::adaptive;
  } else {
    throw ConfigError("sample.schedule must be \"fixed\" or \"adaptive\"");
  }
  c.sample.steps = field<int>(s, "sample", "steps", c.sample.steps);
  c.sample.cfg_scale = field<double>(s, "sample", "cfg_scale", c.sample.cfg_scale);
  c.sample.cfg_start = field<double>(s, "sample", "cfg_start", c.sample.cfg_start);
  c.sample.temperature = field<double>(s, "sample", "temperature", c.sample.temperature);
  c.sample.variant = s.contains("variant")
                         ? parse_layout(field<std::string>(s, "sample", "variant", ""),
                                        "sample.variant")
                         : c.train.variant;
  c.sample.target_mode =
      s.contains("target_mode")
          ? parse_target(field<std::string>(s, "sample", "target_mode", ""))
          : c.train.target_mode;

  const json& sc = root.contains("schedule") ? root["schedule"] : empty;
  check_keys(sc, "schedule", {"t0", "alpha", "k", "b", "t_min", "t_max"});
  ScheduleConfig& a = c.sample.adaptive;
  a.t0 = field<int>(sc, "schedule", "t0", a.t0);
  a.alpha = field<int>(sc, "schedule", "alpha", a.alpha);
  a.k = field<double>(sc, "schedule", "k", a.k);
  a.b = field<double>(sc, "schedule", "b", a.b);
  a.t_min = field<int>(sc, "schedule", "t_min", a.t_min);
  a.t_max = field<int>(sc, "schedule", "t_max", a.t_max);

  const json& e = root.contains("eval") ? root["eval"] : empty;
  check_keys(e, "eval", {"samples_per_class", "seeds"});
  c.eval.samples_per_class = field<int>(e, "eval", "samples_per_class", c.eval.samples_per_class);
  c.eval.seeds = field<int>(e, "eval", "seeds", c.eval.seeds);

  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), seed_override);
}

std::string config_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir.generic_string();
  j["dataset"] = json::parse(dataset_spec_json(c.dataset));
  j["predictor"] = {{"depth", c.predictor.depth},           {"hidden", c.predictor.hidden},
                    {"heads", c.predictor.heads},           {"ffn_hidden", c.predictor.ffn_hidden},
                    {"n_pos", c.predictor.n_pos},           {"c_eff", c.predictor.c_eff},
                    {"categories", c.predictor.categories}, {"n_classes", c.predictor.n_classes}};
  json t = json::parse(train_config_json(c.train));
  t.erase("seed");
  j["train"] = t;
  j["sample"] = {{"mode", to_string(c.sample.mode)},
                 {"selection", to_string(c.sample.selection)},
                 {"schedule", to_string(c.sample.schedule)},
                 {"steps", c.sample.steps},
                 {"cfg_scale", c.sample.cfg_scale},
                 {"cfg_start", c.sample.cfg_start},
                 {"temperature", c.sample.temperature},
                 {"variant", to_string(c.sample.variant)},
                 {"target_mode", to_string(c.sample.target_mode)}};
  const ScheduleConfig& a = c.sample.adaptive;
  j["schedule"] = {{"t0", a.t0}, {"alpha", a.alpha}, {"k", a.k},
                   {"b", a.b},   {"t_min", a.t_min}, {"t_max", a.t_max}};
  j["eval"] = {{"samples_per_class", c.eval.samples_per_class}, {"seeds", c.eval.seeds}};
  return j.dump(2);
}

}  // namespace grn::lab
