#include "commands.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "grn/hbq.hpp"

namespace grn::lab {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

fs::path default_checkpoint(const ExperimentConfig& cfg, const SampleOverrides& o) {
  return o.checkpoint ? *o.checkpoint : cfg.out_dir / "model.grnckpt";
}

void apply_overrides(ExperimentConfig& cfg, const SampleOverrides& o) {
  if (o.schedule) cfg.sample.schedule = *o.schedule;
  if (o.steps) cfg.sample.steps = *o.steps;
  try {
    cfg.sample.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("sample: ") + e.what());
  }
}

PredictorParams load_params(const ExperimentConfig& cfg, const fs::path& path) {
  return load_training_checkpoint(path, cfg.predictor).params;
}

std::string cond_label(Condition c) { return c ? std::to_string(*c) : "null"; }

// Occurrence index of each condition within the list.
std::vector<std::size_t> occurrences(std::span<const Condition> conds) {
  std::map<std::int64_t, std::size_t> seen;
  std::vector<std::size_t> out;
  for (const auto& c : conds) out.push_back(seen[c ? static_cast<std::int64_t>(*c) : -1]++);
  return out;
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

struct ArmResult {
  std::string name;
  std::vector<double> accuracy;  // per seed
  double steps = 0.0;
  std::size_t erased_or_refined = 0;
};

ArmResult run_arm(const std::string& name, const PredictorParams& params,
                  const ExperimentConfig& cfg, const SampleConfig& sc,
                  std::span<const LabeledMap> refs) {
  ArmResult arm{name, {}, 0.0, 0};
  const std::vector<Condition> conds = eval_conditions(cfg);
  for (int s = 0; s < cfg.eval.seeds; ++s) {
    const auto results = batch_sample(params, conds, sc, cfg.seed + static_cast<std::uint64_t>(s));
    const SampleStats st = score_samples(results, conds, refs);
    arm.accuracy.push_back(st.accuracy);
    arm.steps += st.mean_steps / cfg.eval.seeds;
    arm.erased_or_refined += st.erased_or_refined;
  }
  return arm;
}

void write_ablation(const ExperimentConfig& cfg, const std::string& suite,
                    const std::vector<ArmResult>& arms) {
  ensure_dir(cfg.out_dir);
  std::ostringstream csv;
  csv << "mode,accuracy_mean,accuracy_std,mean_steps,erased_or_refined\n";
  json j;
  j["suite"] = suite;
  j["seeds"] = cfg.eval.seeds;
  j["samples_per_class"] = cfg.eval.samples_per_class;
  j["arms"] = json::array();
  for (const auto& a : arms) {
    double mean = 0;
    for (double x : a.accuracy) mean += x / static_cast<double>(a.accuracy.size());
    csv << a.name << ',' << fmt("%.6f", mean) << ',' << fmt("%.6f", stddev(a.accuracy)) << ','
        << fmt("%.3f", a.steps) << ',' << a.erased_or_refined << '\n';
    j["arms"].push_back({{"mode", a.name},
                         {"accuracy_mean", mean},
                         {"accuracy_std", stddev(a.accuracy)},
                         {"accuracy_per_seed", a.accuracy},
                         {"mean_steps", a.steps},
                         {"erased_or_refined", a.erased_or_refined}});
  }
  write_text(cfg.out_dir / ("ablate_" + suite + ".csv"), csv.str());
  write_text(cfg.out_dir / ("ablate_" + suite + ".json"), j.dump(2) + "\n");
  std::cout << csv.str();
}

}  // namespace

PredictorParams train_model(const ExperimentConfig& cfg, std::span<const LabeledMap> maps,
                            const TrainingHooks& hooks) {
  Rng init = Rng(cfg.seed).split(streams::init);
  return train(init_params(cfg.predictor, init), maps, cfg.train, hooks).params;
}

MatchResult nearest_record(const TokenMap& sample, std::span<const LabeledMap> refs,
                           std::uint32_t label) {
  MatchResult best;
  bool found = false;
  for (std::size_t r = 0; r < refs.size(); ++r) {
    if (refs[r].label != label) continue;
    const TokenMap& ref = refs[r].tokens;
    if (!ref.same_extents(sample)) throw ParameterError("reference map extents differ from sample");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) hits += ref.values[i] == sample.values[i];
    const double acc = static_cast<double>(hits) / static_cast<double>(ref.size());
    if (!found || acc > best.accuracy) best = {acc, r};
    found = true;
  }
  if (!found) throw IndexError("no reference records for class " + std::to_string(label));
  return best;
}

std::vector<Condition> eval_conditions(const ExperimentConfig& cfg) {
  std::vector<Condition> conds;
  for (std::uint32_t c = 0; c < cfg.dataset.n_classes; ++c) {
    for (int i = 0; i < cfg.eval.samples_per_class; ++i) conds.emplace_back(c);
  }
  return conds;
}

SampleStats score_samples(std::span<const SampleResult> results, std::span<const Condition> conds,
                          std::span<const LabeledMap> refs) {
  SampleStats st;
  if (results.empty()) return st;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (conds[i]) st.accuracy += nearest_record(results[i].tokens, refs, *conds[i]).accuracy;
    st.mean_steps += results[i].trace.total_steps;
    for (const auto& r : results[i].trace.steps) {
      st.erased_or_refined += r.transitions.erased + r.transitions.refined;
    }
  }
  st.accuracy /= static_cast<double>(results.size());
  st.mean_steps /= static_cast<double>(results.size());
  return st;
}

void quantize_demo(const QuantizeDemoOptions& opt, std::ostream& out) {
  if (opt.rounds < 1 || opt.rounds > hbq::kMaxRounds) {
    throw ParameterError("--m must lie in [1, " + std::to_string(hbq::kMaxRounds) + "]");
  }
  if (opt.samples < 1) throw ParameterError("--samples must be >= 1");
  Rng rng = Rng(opt.seed).split(streams::eval);
  TensorD f({1, 1, static_cast<std::size_t>(opt.samples), 1});
  for (double& v : f.values()) {
    do {
      v = 2.0 * rng.uniform() - 1.0;
    } while (v <= -1.0);
  }
  const hbq::BitPlanes full = hbq::quantize(f, opt.rounds);
  out << "m,max_abs_error,mean_abs_error\n";
  for (int m = 1; m <= opt.rounds; ++m) {
    const TensorD rec = opt.truncate ? hbq::dequantize_truncated<double>(full, m)
                                     : hbq::dequantize<double>(hbq::quantize(f, m));
    double max_err = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double e = std::abs(f[i] - rec[i]);
      max_err = std::max(max_err, e);
      sum += e;
    }
    out << m << ',' << fmt("%.9g", max_err) << ',' << fmt("%.9g", sum / f.size()) << '\n';
  }
}

void schedule_table(const ScheduleOptions& opt, std::ostream& out) {
  try {
    opt.schedule.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
  if (opt.sweep) {
    out << "h,d,total_steps\n";
    for (int i = 0; i <= 20; ++i) {
      const double h = i * 0.05;
      const StepPlan plan = adaptive_total_steps(h, opt.schedule);
      out << fmt("%.2f", h) << ',' << plan.denominator << ',' << plan.total << '\n';
    }
    return;
  }
  if (!opt.entropy) throw ConfigError("schedule needs --h <H> or --sweep");
  const double h = *opt.entropy;
  if (!(h >= 0.0 && h <= 1.0)) throw ConfigError("--h must lie in [0, 1]");
  const StepPlan plan = adaptive_total_steps(h, opt.schedule);
  out << "h,d,total_steps,step,l_t\n";
  for (int t = 1; t <= plan.total; ++t) {
    out << fmt("%.6g", h) << ',' << plan.denominator << ',' << plan.total << ',' << t << ','
        << fmt("%.9g", adaptive_ratio(t, plan, opt.schedule)) << '\n';
  }
}

void cmd_quantize_demo(const QuantizeDemoOptions& opt, const std::optional<fs::path>& out_dir) {
  std::ostringstream csv;
  quantize_demo(opt, csv);
  std::cout << csv.str();
  if (out_dir) {
    ensure_dir(*out_dir);
    write_text(*out_dir / "quantize_demo.csv", csv.str());
  }
}

void cmd_schedule(const ScheduleOptions& opt, const std::optional<fs::path>& out_dir) {
  std::ostringstream csv;
  schedule_table(opt, csv);
  std::cout << csv.str();
  if (out_dir) {
    ensure_dir(*out_dir);
    write_text(*out_dir / "schedule.csv", csv.str());
  }
}

void cmd_build_data(const ExperimentConfig& cfg) {
  const Dataset data = build_dataset(cfg.dataset);
  save_dataset(cfg.out_dir / "data", data);
  std::cout << "wrote " << data.records.size() << " records to "
            << (cfg.out_dir / "data").string() << "\n";
}

void cmd_train(const ExperimentConfig& cfg) {
  ensure_dir(cfg.out_dir / "checkpoints");
  const Dataset data = build_dataset(cfg.dataset);
  const auto maps = data.token_maps(cfg.train.variant);
  const fs::path log_path = cfg.out_dir / "train_log.csv";
  fs::remove(log_path);
  TrainingLog log(log_path);
  double first_loss = 0.0, last_loss = 0.0;
  TrainingHooks hooks;
  hooks.on_step = [&](const TrainingProgress& p) {
    if (p.step == 1) first_loss = p.loss;
    last_loss = p.loss;
    log.append(p);
  };
  hooks.on_checkpoint = [&](int step, const PredictorParams& params) {
    char name[64];
    std::snprintf(name, sizeof(name), "step_%06d.grnckpt", step);
    save_training_checkpoint(cfg.out_dir / "checkpoints" / name, params, cfg.train);
  };
  const PredictorParams params = train_model(cfg, maps, hooks);
  save_training_checkpoint(cfg.out_dir / "model.grnckpt", params, cfg.train);
  write_text(cfg.out_dir / "config.json", config_json(cfg) + "\n");
  const json summary = {{"steps", cfg.train.steps},
                        {"initial_loss", first_loss},
                        {"final_loss", last_loss},
                        {"parameter_count", cfg.predictor.parameter_count()},
                        {"variant", to_string(cfg.train.variant)},
                        {"target_mode", to_string(cfg.train.target_mode)}};
  write_text(cfg.out_dir / "train_summary.json", summary.dump(2) + "\n");
  std::cout << "trained " << cfg.train.steps << " steps, final loss " << fmt("%.4f", last_loss)
            << "\n";
}

void cmd_sample(ExperimentConfig cfg, const SampleOverrides& o) {
  apply_overrides(cfg, o);
  const PredictorParams params = load_params(cfg, default_checkpoint(cfg, o));
  const auto conds = eval_conditions(cfg);
  const auto results = batch_sample(params, conds, cfg.sample, cfg.seed);
  const auto occ = occurrences(conds);
  ensure_dir(cfg.out_dir / "samples");
  ensure_dir(cfg.out_dir / "traces");
  json list = json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const std::string stem = cond_label(conds[i]) + "_" + std::to_string(occ[i]);
    const hbq::BitPlanes planes =
        to_bit_planes(results[i].tokens, cfg.dataset.grid, cfg.dataset.rounds);
    hbq::write_blob(cfg.out_dir / "samples" / (stem + ".hbq"), planes);
    write_trace_csv(cfg.out_dir / "traces" / (stem + ".csv"), results[i].trace);
    list.push_back({{"class", cond_label(conds[i])},
                    {"index", occ[i]},
                    {"total_steps", results[i].trace.total_steps},
                    {"sample", "samples/" + stem + ".hbq"},
                    {"trace", "traces/" + stem + ".csv"},
                    {"summary", json::parse(trace_summary_json(results[i].trace))}});
  }
  const json summary = {{"schedule", to_string(cfg.sample.schedule)},
                        {"mode", to_string(cfg.sample.mode)},
                        {"selection", to_string(cfg.sample.selection)},
                        {"samples", list}};
  write_text(cfg.out_dir / "sample_summary.json", summary.dump(2) + "\n");
  std::cout << "wrote " << results.size() << " samples to " << cfg.out_dir.string() << "\n";
}

void cmd_eval(ExperimentConfig cfg, const SampleOverrides& o,
              const std::optional<fs::path>& reference) {
  apply_overrides(cfg, o);
  const PredictorParams params = load_params(cfg, default_checkpoint(cfg, o));
  const auto conds = eval_conditions(cfg);
  const auto results = batch_sample(params, conds, cfg.sample, cfg.seed);

  std::optional<Dataset> ref;
  std::vector<LabeledMap> refs;
  if (reference) {
    ref = load_dataset(*reference);
    if (ref->spec.grid != cfg.dataset.grid || ref->spec.rounds != cfg.dataset.rounds ||
        ref->spec.n_classes != cfg.dataset.n_classes) {
      throw ConfigError("reference dataset grid/rounds/n_classes differ from dataset.* in config");
    }
    refs = ref->token_maps(cfg.sample.variant);
  }

  struct ClassStats {
    double acc = 0, exact = 0, mse = 0, steps = 0, entropy = 0;
    int n = 0;
    std::map<int, int> hist;
  };
  std::vector<ClassStats> per(cfg.dataset.n_classes);
  for (std::size_t i = 0; i < results.size(); ++i) {
    ClassStats& cs = per[*conds[i]];
    const auto& tr = results[i].trace;
    cs.n++;
    cs.steps += tr.total_steps;
    cs.hist[tr.total_steps]++;
    double h = 0;
    for (const auto& s : tr.steps) h += s.entropy / static_cast<double>(tr.steps.size());
    cs.entropy += tr.frozen_entropy ? *tr.frozen_entropy : h;
    if (ref) {
      const MatchResult m = nearest_record(results[i].tokens, refs, *conds[i]);
      cs.acc += m.accuracy;
      cs.exact += m.accuracy == 1.0 ? 1.0 : 0.0;
      const TensorD a = hbq::dequantize<double>(
          to_bit_planes(results[i].tokens, cfg.dataset.grid, cfg.dataset.rounds));
      const TensorD b = hbq::dequantize<double>(ref->records[m.record].planes);
      double mse = 0;
      for (std::size_t k = 0; k < a.size(); ++k) mse += (a[k] - b[k]) * (a[k] - b[k]);
      cs.mse += mse / static_cast<double>(a.size());
    }
  }

  json classes = json::array();
  std::ostringstream hist_csv;
  hist_csv << "class,steps,count\n";
  double acc = 0, exact = 0, mse = 0, steps = 0;
  int total = 0;
  for (std::uint32_t c = 0; c < per.size(); ++c) {
    const ClassStats& cs = per[c];
    json jc = {{"class", c},
               {"samples", cs.n},
               {"mean_steps", cs.steps / cs.n},
               {"mean_entropy", cs.entropy / cs.n}};
    json hist = json::object();
    for (auto [k, v] : cs.hist) {
      hist[std::to_string(k)] = v;
      hist_csv << c << ',' << k << ',' << v << '\n';
    }
    jc["step_histogram"] = hist;
    if (ref) {
      jc["token_accuracy"] = cs.acc / cs.n;
      jc["exact_recovery_rate"] = cs.exact / cs.n;
      jc["reconstruction_mse"] = cs.mse / cs.n;
    }
    classes.push_back(jc);
    acc += cs.acc;
    exact += cs.exact;
    mse += cs.mse;
    steps += cs.steps;
    total += cs.n;
  }
  json j = {{"samples", total}, {"mean_steps", steps / total}, {"classes", classes}};
  if (ref) {
    j["token_accuracy"] = acc / total;
    j["exact_recovery_rate"] = exact / total;
    j["reconstruction_mse"] = mse / total;
  }
  ensure_dir(cfg.out_dir);
  write_text(cfg.out_dir / "eval.json", j.dump(2) + "\n");
  write_text(cfg.out_dir / "eval_steps.csv", hist_csv.str());
  std::cout << j.dump(2) << "\n";
}

AblationSuite suite_from_string(const std::string& s) {
  if (s == "mask") return AblationSuite::mask;
  if (s == "confidence") return AblationSuite::confidence;
  if (s == "relbits") return AblationSuite::relbits;
  throw ConfigError("--suite must be one of mask, confidence, relbits");
}

void cmd_ablate(const ExperimentConfig& base, const SampleOverrides& o, AblationSuite suite) {
  ExperimentConfig cfg = base;
  apply_overrides(cfg, o);
  const Dataset data = build_dataset(cfg.dataset);
  if (suite == AblationSuite::relbits) {
    std::vector<ArmResult> arms;
    for (TargetMode mode : {TargetMode::absolute, TargetMode::relative}) {
      ExperimentConfig c = cfg;
      c.train.variant = c.sample.variant = Layout::bit;
      c.train.target_mode = c.sample.target_mode = mode;
      c.predictor = derived_predictor(c.dataset, Layout::bit, c.predictor);
      c.validate();
      const auto maps = data.token_maps(Layout::bit);
      const PredictorParams params = train_model(c, maps);
      arms.push_back(run_arm(to_string(mode), params, c, c.sample, maps));
    }
    write_ablation(cfg, "relbits", arms);
    return;
  }
  const PredictorParams params = load_params(cfg, default_checkpoint(cfg, o));
  const auto refs = data.token_maps(cfg.sample.variant);
  SampleConfig baseline = cfg.sample;
  baseline.mode = SampleMode::refine;
  baseline.selection = SelectionRule::random;
  SampleConfig variant = baseline;
  std::string a = "refine", b = "mask", name = "mask";
  if (suite == AblationSuite::mask) {
    variant.mode = SampleMode::mask;
  } else {
    variant.selection = SelectionRule::confidence;
    a = "random";
    b = "confidence";
    name = "confidence";
  }
  write_ablation(cfg, name,
                 {run_arm(a, params, cfg, baseline, refs), run_arm(b, params, cfg, variant, refs)});
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParameterError*>(&e) ||
      dynamic_cast<const DomainError*>(&e) || dynamic_cast<const IndexError*>(&e)) {
    return 2;
  }
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  if (dynamic_cast<const IoError*>(&e)) return 4;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return 4;
  return 1;
}

}  // namespace grn::lab
