#include <CLI11.hpp>

#include <iostream>

#include "commands.hpp"

namespace fs = std::filesystem;
using namespace grn;
using namespace grn::lab;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Common& c, bool need_config) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config (JSON)");
  if (need_config) opt->required();
  cmd->add_option("--seed", c.seed, "global seed (overrides the config)");
  cmd->add_option("--out", c.out, "output directory (overrides the config)");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = load_config(c.config, c.seed);
  if (c.out) cfg.out_dir = *c.out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grn-lab: generative refinement toy lab"};
  app.require_subcommand(1);

  Common common;

  QuantizeDemoOptions qd;
  auto* quant = app.add_subcommand("quantize-demo", "HBQ reconstruction error per round");
  quant->add_option("--m", qd.rounds, "rounds")->check(CLI::Range(1, hbq::kMaxRounds));
  quant->add_option("--samples", qd.samples, "uniform samples in (-1, 1)")
      ->check(CLI::PositiveNumber);
  quant->add_flag("--truncate", qd.truncate, "quantize once at M and truncate");
  add_common(quant, common, false);

  auto* build = app.add_subcommand("build-data", "generate and save a synthetic dataset");
  add_common(build, common, true);
  auto* trn = app.add_subcommand("train", "train a predictor");
  add_common(trn, common, true);

  SampleOverrides so;
  std::optional<std::string> checkpoint, schedule_kind, reference;
  std::string suite;
  auto add_sampling = [&](CLI::App* cmd) {
    add_common(cmd, common, true);
    cmd->add_option("--checkpoint", checkpoint, "model checkpoint (default <out>/model.grnckpt)");
    cmd->add_option("--schedule", schedule_kind, "fixed or adaptive")
        ->check(CLI::IsMember({"fixed", "adaptive"}));
    cmd->add_option("--steps", so.steps, "steps of the fixed schedule")->check(CLI::PositiveNumber);
  };
  auto* smp = app.add_subcommand("sample", "draw samples and traces");
  add_sampling(smp);
  auto* evl = app.add_subcommand("eval", "sample and score against a reference dataset");
  add_sampling(evl);
  evl->add_option("--reference", reference, "reference dataset directory");
  auto* abl = app.add_subcommand("ablate", "paired ablation runs");
  add_sampling(abl);
  abl->add_option("--suite", suite, "mask, confidence or relbits")
      ->required()
      ->check(CLI::IsMember({"mask", "confidence", "relbits"}));

  ScheduleOptions sched;
  std::optional<double> h;
  auto* sch = app.add_subcommand("schedule", "tabulate the entropy-guided schedule");
  // --h is the entropy, so help keeps only its long form here.
  sch->set_help_flag("--help", "Print this help message and exit");
  sch->add_option("--k", sched.schedule.k, "entropy slope");
  sch->add_option("--b", sched.schedule.b, "bias");
  sch->add_option("--tmin", sched.schedule.t_min, "minimum total steps");
  sch->add_option("--tmax", sched.schedule.t_max, "maximum total steps");
  sch->add_option("--t0", sched.schedule.t0, "warm-up steps");
  sch->add_option("--alpha", sched.schedule.alpha, "warm-up denominator");
  auto* hopt = sch->add_option("--h", h, "mean normalized entropy");
  auto* sweep = sch->add_flag("--sweep", sched.sweep, "tabulate T over H = 0, 0.05, ..., 1");
  hopt->excludes(sweep);
  add_common(sch, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const std::optional<fs::path> out =
        common.out ? std::optional<fs::path>(*common.out) : std::nullopt;
    if (checkpoint) so.checkpoint = fs::path(*checkpoint);
    if (schedule_kind) {
      so.schedule = *schedule_kind == "fixed" ? ScheduleKind::fixed : ScheduleKind::adaptive;
    }
    if (*quant) {
      qd.seed = common.seed.value_or(0);
      cmd_quantize_demo(qd, out);
    } else if (*build) {
      cmd_build_data(resolve(common));
    } else if (*trn) {
      cmd_train(resolve(common));
    } else if (*smp) {
      cmd_sample(resolve(common), so);
    } else if (*evl) {
      std::optional<fs::path> ref = reference ? std::optional<fs::path>(*reference) : std::nullopt;
      cmd_eval(resolve(common), so, ref);
    } else if (*abl) {
      cmd_ablate(resolve(common), so, suite_from_string(suite));
    } else if (*sch) {
      sched.entropy = h;
      cmd_schedule(sched, out);
    }
  } catch (const std::exception& e) {
    std::cerr << "grn-lab: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
