#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "commands.hpp"

using namespace grn;
using namespace grn::lab;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kSource = GRN_SOURCE_DIR;
const std::string kBin = GRN_LAB_BIN;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

int run(const std::string& args) {
  const std::string cmd = kBin + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string conflict_message(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

const char* kBase = R"({
  "dataset": {"n_classes": 3, "grid": {"frames": 1, "height": 4, "width": 4, "channels": 2},
              "rounds": 2},
  "predictor": {"depth": 1, "hidden": 16, "heads": 2, "ffn_hidden": 32 %s}
  %s
})";

std::string with(const std::string& predictor_extra, const std::string& root_extra = "") {
  char buf[1024];
  std::snprintf(buf, sizeof(buf), kBase, predictor_extra.c_str(), root_extra.c_str());
  return buf;
}

}  // namespace

TEST(Config, DerivesPredictorShapeFromDataset) {
  const auto c = parse_config(with(""));
  EXPECT_EQ(c.predictor.n_pos, 16);
  EXPECT_EQ(c.predictor.c_eff, 2);
  EXPECT_EQ(c.predictor.categories, 4);
  EXPECT_EQ(c.predictor.n_classes, 3);
  const auto b = parse_config(with("", R"(, "train": {"variant": "bit"})"));
  EXPECT_EQ(b.predictor.c_eff, 4);
  EXPECT_EQ(b.predictor.categories, 2);
  EXPECT_EQ(b.sample.variant, Layout::bit);
}

TEST(Config, ConflictsNameBothFields) {
  auto both = [](const std::string& msg, const std::string& a, const std::string& b) {
    EXPECT_NE(msg.find(a), std::string::npos) << msg;
    EXPECT_NE(msg.find(b), std::string::npos) << msg;
  };
  both(conflict_message(with(R"(, "c_eff": 3)")), "predictor.c_eff", "dataset.grid.channels");
  both(conflict_message(with(R"(, "n_pos": 10)")), "predictor.n_pos", "dataset.grid");
  both(conflict_message(with(R"(, "categories": 8)")), "predictor.categories", "train.variant");
  both(conflict_message(with(R"(, "n_classes": 5)")), "predictor.n_classes", "dataset.n_classes");
  both(conflict_message(with("", R"(, "sample": {"variant": "bit"})")), "sample.variant",
       "train.variant");
  both(conflict_message(with("", R"(, "train": {"variant": "bit"}, "sample": {"target_mode": "relative"})")),
       "sample.target_mode", "train.target_mode");
}

TEST(Config, RejectsUnknownFieldsAndBadValues) {
  EXPECT_THROW(parse_config(with("", R"(, "colour": 1)")), ConfigError);
  EXPECT_THROW(parse_config(with(R"(, "width": 3)")), ConfigError);
  EXPECT_THROW(parse_config("{ not json"), ConfigError);
  EXPECT_THROW(parse_config(with("", R"(, "train": {"learning_rate": -1})")), ConfigError);
  EXPECT_THROW(parse_config(with("", R"(, "sample": {"preset": "huge"})")), ConfigError);
  EXPECT_THROW(parse_config(with("", R"(, "schedule": {"t0": 30})")), ConfigError);
  EXPECT_THROW(parse_config(with("", R"(, "train": {"steps": "many"})")), ConfigError);
}

TEST(Config, SeedOverrideAndPreset) {
  const auto c = parse_config(with("", R"(, "seed": 3, "sample": {"preset": "ind-B"})"), 11);
  EXPECT_EQ(c.seed, 11u);
  EXPECT_EQ(c.train.seed, 11u);
  EXPECT_EQ(c.dataset.seed, 11u);
  EXPECT_DOUBLE_EQ(c.sample.cfg_scale, 2.4);
  EXPECT_DOUBLE_EQ(c.sample.temperature, 1.33);
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"overfit.json", "mixed.json", "relbits.json", "smoke.json"}) {
    EXPECT_NO_THROW(load_config(kSource / "configs" / name)) << name;
  }
  EXPECT_THROW(load_config(kSource / "configs" / "absent.json"), IoError);
}

TEST(Config, SerializedFormReparses) {
  const auto c = load_config(kSource / "configs" / "mixed.json");
  const auto text = config_json(c);
  EXPECT_EQ(config_json(parse_config(text)), text);
}

TEST(QuantizeDemo, RowsBoundedAndDecreasing) {
  for (bool truncate : {false, true}) {
    std::ostringstream out;
    quantize_demo({10, 20000, truncate, 3}, out);
    const auto ls = lines_of(out.str());
    ASSERT_EQ(ls.size(), 11u);
    EXPECT_EQ(ls[0], "m,max_abs_error,mean_abs_error");
    double prev_max = 2, prev_mean = 2;
    for (int m = 1; m <= 10; ++m) {
      int mm = 0;
      double mx = 0, mean = 0;
      ASSERT_EQ(std::sscanf(ls[static_cast<std::size_t>(m)].c_str(), "%d,%lf,%lf", &mm, &mx, &mean), 3);
      EXPECT_EQ(mm, m);
      EXPECT_LT(mx, std::ldexp(1.0, -m));
      EXPECT_LT(mx, prev_max);
      EXPECT_LT(mean, prev_mean);
      prev_max = mx;
      prev_mean = mean;
    }
  }
  std::ostringstream sink;
  EXPECT_THROW(quantize_demo({0, 10, false, 0}, sink), ParameterError);
}

TEST(ScheduleTable, DefaultConfigPoint) {
  ScheduleOptions opt;
  opt.schedule = {5, 50, 600.0, -547.2, 20, 50};
  opt.entropy = 0.9787;
  std::ostringstream out;
  schedule_table(opt, out);
  const auto ls = lines_of(out.str());
  ASSERT_EQ(ls.size(), 46u);
  EXPECT_EQ(ls[0], "h,d,total_steps,step,l_t");
  EXPECT_EQ(ls[1].substr(0, 14), "0.9787,40,45,1");
  EXPECT_EQ(ls[45], "0.9787,40,45,45,1");
}

TEST(ScheduleTable, SweepMonotoneWithinBounds) {
  ScheduleOptions opt;
  opt.schedule = {5, 50, 600.0, -547.2, 20, 50};
  opt.sweep = true;
  std::ostringstream out;
  schedule_table(opt, out);
  const auto ls = lines_of(out.str());
  ASSERT_EQ(ls.size(), 22u);
  int prev = 0;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    double h = 0;
    int d = 0, t = 0;
    ASSERT_EQ(std::sscanf(ls[i].c_str(), "%lf,%d,%d", &h, &d, &t), 3);
    EXPECT_GE(t, 20);
    EXPECT_LE(t, 50);
    EXPECT_GE(t, prev);
    prev = t;
  }
  EXPECT_EQ(prev, 50);
  ScheduleOptions none;
  std::ostringstream sink;
  EXPECT_THROW(schedule_table(none, sink), ConfigError);
}

TEST(Scoring, NearestRecordPicksBestOfClass) {
  TokenMap a(Layout::index, 4, 4, 1), b(Layout::index, 4, 4, 1), c(Layout::index, 4, 4, 1);
  a.values = {0, 0, 0, 0};
  b.values = {1, 1, 1, 0};
  c.values = {1, 1, 1, 1};
  std::vector<LabeledMap> refs{{a, 0}, {b, 0}, {c, 1}};
  TokenMap s(Layout::index, 4, 4, 1);
  s.values = {1, 1, 1, 1};
  const auto m = nearest_record(s, refs, 0);
  EXPECT_EQ(m.record, 1u);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.75);
  EXPECT_DOUBLE_EQ(nearest_record(s, refs, 1).accuracy, 1.0);
  EXPECT_THROW(nearest_record(s, refs, 2), IndexError);
}

TEST(ExitCodes, Mapping) {
  EXPECT_EQ(exit_code_for(ConfigError("x")), 2);
  EXPECT_EQ(exit_code_for(ParameterError("x")), 2);
  EXPECT_EQ(exit_code_for(NumericError("x")), 3);
  EXPECT_EQ(exit_code_for(IoError("x")), 4);
  EXPECT_EQ(exit_code_for(ParseError("x", 1)), 4);
  EXPECT_EQ(exit_code_for(std::runtime_error("x")), 1);
}

TEST(Cli, ExitCodesForBadInvocations) {
  const fs::path dir = fs::temp_directory_path() / "grn_cli_codes";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << R"({"predictor": {"c_eff": 99}})";
  EXPECT_EQ(run("train --config " + (dir / "bad.json").string()), 2);
  EXPECT_EQ(run("train --config " + (dir / "missing.json").string()), 4);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("quantize-demo --m 40"), 2);
  EXPECT_EQ(run("schedule --h 0.5"), 0);
  EXPECT_EQ(run("quantize-demo --m 3 --samples 100"), 0);
  // a sample request without any trained model is an I/O failure
  EXPECT_EQ(run("sample --config " + (kSource / "configs" / "smoke.json").string() + " --out " +
                (dir / "empty").string()),
            4);
  fs::remove_all(dir);
}

TEST(Cli, SmokePipeline) {
  const fs::path dir = fs::temp_directory_path() / "grn_cli_smoke";
  fs::remove_all(dir);
  const std::string common =
      " --config " + (kSource / "configs" / "smoke.json").string() + " --out " + dir.string();
  ASSERT_EQ(run("build-data" + common), 0);
  EXPECT_TRUE(fs::exists(dir / "data" / "manifest.json"));
  ASSERT_EQ(run("train" + common), 0);
  EXPECT_TRUE(fs::exists(dir / "model.grnckpt"));
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "step_000006.grnckpt"));
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "step_000012.grnckpt"));
  const auto log = lines_of(slurp(dir / "train_log.csv"));
  ASSERT_EQ(log.size(), 13u);
  EXPECT_EQ(log[0], kTrainingLogHeader);

  ASSERT_EQ(run("sample --schedule fixed --steps 50" + common), 0);
  const auto summary = json::parse(slurp(dir / "sample_summary.json"));
  ASSERT_EQ(summary["samples"].size(), 6u);
  for (const auto& s : summary["samples"]) {
    const auto trace = lines_of(slurp(dir / s["trace"].get<std::string>()));
    EXPECT_EQ(trace.size(), 51u);
    EXPECT_EQ(trace[0], kTraceHeader);
    EXPECT_NO_THROW(hbq::read_blob(dir / s["sample"].get<std::string>()));
  }

  ASSERT_EQ(run("eval" + common), 0);
  auto ev = json::parse(slurp(dir / "eval.json"));
  EXPECT_FALSE(ev.contains("token_accuracy"));
  EXPECT_FALSE(ev.contains("exact_recovery_rate"));
  EXPECT_FALSE(ev["classes"][0].contains("token_accuracy"));
  EXPECT_TRUE(ev["classes"][0].contains("step_histogram"));

  ASSERT_EQ(run("eval --reference " + (dir / "data").string() + common), 0);
  ev = json::parse(slurp(dir / "eval.json"));
  ASSERT_TRUE(ev.contains("token_accuracy"));
  EXPECT_GE(ev["token_accuracy"].get<double>(), 0.0);
  EXPECT_LE(ev["token_accuracy"].get<double>(), 1.0);
  EXPECT_TRUE(ev.contains("reconstruction_mse"));

  ASSERT_EQ(run("eval --schedule adaptive" + common), 0);
  ev = json::parse(slurp(dir / "eval.json"));
  for (const auto& c : ev["classes"]) {
    EXPECT_GE(c["mean_steps"].get<double>(), 4.0);
    EXPECT_LE(c["mean_steps"].get<double>(), 12.0);
  }

  ASSERT_EQ(run("ablate --suite mask" + common), 0);
  const auto csv = lines_of(slurp(dir / "ablate_mask.csv"));
  ASSERT_EQ(csv.size(), 3u);
  EXPECT_EQ(csv[0], "mode,accuracy_mean,accuracy_std,mean_steps,erased_or_refined");
  EXPECT_EQ(csv[2].substr(0, 5), "mask,");
  EXPECT_EQ(csv[2].substr(csv[2].rfind(',')), ",0");
  fs::remove_all(dir);
}
